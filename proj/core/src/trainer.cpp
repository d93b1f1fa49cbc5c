#include "ecnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ecnn::trainer {

namespace {
constexpr double kPi = std::numbers::pi;
}  // namespace

void TrainConfig::check() const {
  if (!(lr_max >= lr_min && lr_min > 0))
    throw ValueError("learning rates must satisfy lr_max >= lr_min > 0");
  if (epochs < 1) throw ValueError("epochs must be >= 1");
  if (patience < 1) throw ValueError("patience must be >= 1");
  if (batch_size < 1) throw ValueError("batch size must be >= 1");
}

double cosine_lr(int t, const TrainConfig& cfg) {
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(kPi * t / cfg.epochs));
}

template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  return ops::softmax_cross_entropy(logits, labels, static_cast<Tensor<T>*>(nullptr));
}

template <typename T>
Dataset<T> make_synth_dataset(int n, int num_classes, std::uint64_t seed) {
  if (n < 1 || num_classes < 2) throw ValueError("synth dataset needs n >= 1 and >= 2 classes");
  const int H = 16, W = 16, C = 3;
  Dataset<T> ds;
  ds.num_classes = num_classes;
  ds.images = Tensor<T>({n, C, H, W});
  ds.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    int cls = i % num_classes;
    ds.labels[static_cast<std::size_t>(i)] = cls;
    double theta = kPi * cls / num_classes;
    double freq = 2.0 * kPi * (1.5 + 0.75 * (cls % 3)) / W * rng.uniform(0.88, 1.12);
    double phase = rng.uniform(0.0, 2.0 * kPi);
    double shift = rng.uniform(-0.2, 0.2);
    double gain = rng.uniform(0.6, 1.4);
    double cx = std::cos(theta), sy = std::sin(theta);
    for (int ch = 0; ch < C; ++ch) {
      double amp = gain * (0.45 + 0.35 * std::cos(2.0 * kPi * cls / num_classes + 2.0 * kPi * ch / 3.0));
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double stripe = std::sin(freq * (x * cx + y * sy) + phase);
          double v = amp * stripe + shift + 0.8 * rng.normal(0.0, 1.0);
          ds.images.at4(i, ch, y, x) = static_cast<T>(v);
        }
    }
  }
  // shuffle sample order so batches mix classes
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  Dataset<T> out;
  out.num_classes = num_classes;
  out.images = Tensor<T>({n, C, H, W});
  out.labels.resize(static_cast<std::size_t>(n));
  std::int64_t stride = static_cast<std::int64_t>(C) * H * W;
  for (int i = 0; i < n; ++i) {
    int src = order[static_cast<std::size_t>(i)];
    std::copy_n(ds.images.ptr() + src * stride, stride, out.images.ptr() + i * stride);
    out.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(src)];
  }
  return out;
}

namespace {

template <typename T>
void gather_batch(const Dataset<T>& data, const std::vector<int>& idx, std::size_t begin, std::size_t end,
                  Tensor<T>& batch, std::vector<int>& labels) {
  const Shape& s = data.images.shape;
  std::int64_t stride = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  int bn = static_cast<int>(end - begin);
  batch = Tensor<T>({bn, s[1], s[2], s[3]});
  labels.resize(static_cast<std::size_t>(bn));
  for (int i = 0; i < bn; ++i) {
    int src = idx[begin + static_cast<std::size_t>(i)];
    std::copy_n(data.images.ptr() + src * stride, stride, batch.ptr() + i * stride);
    labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
  }
}

/// Adam / SGD-momentum state per parameter; frozen coordinates are excluded
/// from moment updates as well as parameter updates.
template <typename T>
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(ModelGraph<T>& model, const elastic::FreezeMask* mask, double lr) {
    ++t_;
    for (auto& [key, p] : model.registry()) {
      if (role_is_buffer(key.role)) continue;
      const std::vector<std::uint8_t>* frozen = nullptr;
      if (mask) {
        auto it = mask->frozen.find(key);
        if (it != mask->frozen.end()) frozen = &it->second;
      }
      const auto& g = *p.grad;
      if (cfg_.optim == Optim::Adam) {
        auto& [m, v] = adam_[key];
        if (m.size() != p.data.size()) {
          m.assign(p.data.size(), 0.0);
          v.assign(p.data.size(), 0.0);
        }
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < p.data.size(); ++i) {
          if (frozen && (*frozen)[i]) continue;
          double gi = static_cast<double>(g[i]);
          m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
          v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
          p.data[i] -= static_cast<T>(lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.adam_eps));
        }
      } else {
        auto& buf = sgd_[key];
        if (buf.size() != p.data.size()) buf.assign(p.data.size(), 0.0);
        for (std::size_t i = 0; i < p.data.size(); ++i) {
          if (frozen && (*frozen)[i]) continue;
          buf[i] = cfg_.momentum * buf[i] + static_cast<double>(g[i]);
          p.data[i] -= static_cast<T>(lr * buf[i]);
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::int64_t t_ = 0;
  std::map<ParamKey, std::pair<std::vector<double>, std::vector<double>>> adam_;
  std::map<ParamKey, std::vector<double>> sgd_;
};

template <typename T>
void zero_frozen_grads(ModelGraph<T>& model, const elastic::FreezeMask& mask) {
  for (auto& [key, p] : model.registry()) {
    if (role_is_buffer(key.role) || !p.grad) continue;
    auto it = mask.frozen.find(key);
    if (it == mask.frozen.end()) continue;
    for (std::size_t i = 0; i < p.grad->size(); ++i)
      if (it->second[i]) (*p.grad)[i] = T(0);
  }
}

template <typename T>
std::pair<double, double> eval_split(ModelGraph<T>& model, const Dataset<T>& data, const std::vector<int>& idx,
                                     int batch_size) {
  double loss_sum = 0;
  std::int64_t correct = 0;
  Tensor<T> batch;
  std::vector<int> labels;
  for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
    std::size_t e = std::min(idx.size(), b + static_cast<std::size_t>(batch_size));
    gather_batch(data, idx, b, e, batch, labels);
    Tensor<T> logits = model.forward(batch, Mode::Eval);
    loss_sum += static_cast<double>(ops::softmax_cross_entropy(logits, labels, static_cast<Tensor<T>*>(nullptr))) *
                static_cast<double>(e - b);
    std::vector<int> pred = ops::argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == labels[i]) ++correct;
  }
  double n = static_cast<double>(idx.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

}  // namespace

template <typename T>
History fit(ModelGraph<T>& model, const Dataset<T>& data, const TrainConfig& cfg, const elastic::FreezeMask* mask) {
  cfg.check();
  if (data.size() < 2) throw ValueError("dataset too small to split");
  Rng rng(cfg.seed);
  std::vector<int> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(idx.size() * cfg.val_fraction));
  std::vector<int> val_idx(idx.end() - static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::vector<int> train_idx(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(n_val));

  Optimizer<T> opt(cfg);
  History history;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  typename ModelGraph<T>::Registry best_registry;
  Tensor<T> batch;
  std::vector<int> labels;
  const BnStatFreeze* bn_freeze = mask ? &mask->bn_stats : nullptr;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cosine_lr(epoch, cfg);
    std::shuffle(train_idx.begin(), train_idx.end(), rng.engine());
    double loss_sum = 0;
    std::int64_t correct = 0;
    for (std::size_t b = 0; b < train_idx.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t e = std::min(train_idx.size(), b + static_cast<std::size_t>(cfg.batch_size));
      gather_batch(data, train_idx, b, e, batch, labels);
      Tape<T> tape;
      auto tf = model.forward_tape(tape, batch, Mode::Train, bn_freeze);
      auto loss = tp::cross_entropy(tape, tf.logits, labels);
      double lv = static_cast<double>(tape.value(loss).data[0]);
      if (!std::isfinite(lv)) throw DivergenceError("training diverged at epoch " + std::to_string(epoch), epoch);
      model.backward(tape, tf, loss);
      if (mask) zero_frozen_grads(model, *mask);
      opt.step(model, mask, lr);
      loss_sum += lv * static_cast<double>(e - b);
      std::vector<int> pred = ops::argmax_rows(tape.value(tf.logits));
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
    }
    EpochStats st;
    st.epoch = epoch;
    st.lr = lr;
    st.train_loss = loss_sum / static_cast<double>(train_idx.size());
    st.train_acc = static_cast<double>(correct) / static_cast<double>(train_idx.size());
    auto [vl, va] = eval_split(model, data, val_idx, cfg.batch_size);
    st.val_loss = vl;
    st.val_acc = va;
    history.push_back(st);
    if (vl < best_val) {
      best_val = vl;
      since_best = 0;
      best_registry = model.registry();
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  // keep the best-validation-loss weights, not wherever training wandered off
  if (!best_registry.empty()) model.registry() = std::move(best_registry);
  return history;
}

template <typename T>
double evaluate(ModelGraph<T>& model, const Dataset<T>& data, int batch_size) {
  std::vector<int> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return eval_split(model, data, idx, batch_size).second;
}

template <typename T>
std::vector<importance::LabeledBatch<T>> take_batches(const Dataset<T>& data, int count, int batch_size) {
  std::vector<importance::LabeledBatch<T>> out;
  std::vector<int> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  for (int b = 0; b < count; ++b) {
    std::size_t begin = static_cast<std::size_t>(b) * static_cast<std::size_t>(batch_size);
    if (begin >= idx.size()) break;
    std::size_t end = std::min(idx.size(), begin + static_cast<std::size_t>(batch_size));
    Tensor<T> batch;
    std::vector<int> labels;
    gather_batch(data, idx, begin, end, batch, labels);
    out.emplace_back(std::move(batch), std::move(labels));
  }
  return out;
}

#define ECNN_INSTANTIATE_TRAINER(T)                                                                      \
  template T cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);                                \
  template Dataset<T> make_synth_dataset<T>(int, int, std::uint64_t);                                    \
  template History fit<T>(ModelGraph<T>&, const Dataset<T>&, const TrainConfig&, const elastic::FreezeMask*); \
  template double evaluate<T>(ModelGraph<T>&, const Dataset<T>&, int);                                   \
  template std::vector<importance::LabeledBatch<T>> take_batches<T>(const Dataset<T>&, int, int);

ECNN_INSTANTIATE_TRAINER(float)
ECNN_INSTANTIATE_TRAINER(double)

}  // namespace ecnn::trainer
