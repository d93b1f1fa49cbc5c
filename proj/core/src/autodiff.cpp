#include "ecnn/autodiff.hpp"

#include <memory>

namespace ecnn {

template <typename T>
typename Tape<T>::Node& Tape<T>::node(NodeId id) {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
    throw ValueError("tape: node id " + std::to_string(id) + " not on this tape");
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
    throw ValueError("tape: node id " + std::to_string(id) + " not on this tape");
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
typename Tape<T>::NodeId Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

template <typename T>
typename Tape<T>::NodeId Tape<T>::record(Tensor<T> value, std::vector<NodeId> parents,
                                         std::function<void(Tape&, NodeId)> backprop) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  for (NodeId p : n.parents)
    if (node(p).requires_grad) n.requires_grad = true;
  if (n.requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

template <typename T>
std::vector<T>& Tape<T>::grad(NodeId id) {
  Node& n = node(id);
  if (n.grad.size() != n.value.data.size()) n.grad.assign(n.value.data.size(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(NodeId root) {
  if (nodes_.empty()) throw ValueError("tape: backward without a recorded forward pass");
  Node& r = node(root);
  if (r.value.numel() != 1)
    throw ShapeError("tape: backward root must be scalar, got " + shape_str(r.value.shape));
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), T(0));
  grad(root)[0] = T(1);
  for (NodeId id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backprop && !n.grad.empty()) n.backprop(*this, id);
  }
}

template class Tape<float>;
template class Tape<double>;

namespace tp {

namespace {
template <typename T>
Tensor<T> grad_tensor(Tape<T>& t, Id<T> id) {
  // view of the node's gradient with the node's shape, for kernel calls
  Tensor<T> g;
  g.shape = t.value(id).shape;
  g.data = t.grad(id);
  return g;
}

template <typename T>
void accumulate(Tape<T>& t, Id<T> id, const Tensor<T>& g) {
  auto& dst = t.grad(id);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.data[i];
}
}  // namespace

template <typename T>
Id<T> conv2d(Tape<T>& t, Id<T> x, Id<T> w, Id<T> bias, int stride, int pad) {
  const Tensor<T>* b = bias >= 0 ? &t.value(bias) : nullptr;
  Tensor<T> y = ops::conv2d_forward(t.value(x), t.value(w), b, stride, pad);
  std::vector<Id<T>> parents = {x, w};
  if (bias >= 0) parents.push_back(bias);
  return t.record(std::move(y), std::move(parents), [x, w, bias, stride, pad](Tape<T>& tt, Id<T> self) {
    Tensor<T> gy = grad_tensor(tt, self);
    Tensor<T> gx, gw, gb;
    bool need_x = tt.requires_grad(x), need_w = tt.requires_grad(w);
    bool need_b = bias >= 0 && tt.requires_grad(bias);
    if (need_x) gx = Tensor<T>(tt.value(x).shape);
    if (need_w) gw = Tensor<T>(tt.value(w).shape);
    if (need_b) gb = Tensor<T>(tt.value(bias).shape);
    ops::conv2d_backward(tt.value(x), tt.value(w), gy, need_x ? &gx : nullptr, need_w ? &gw : nullptr,
                         need_b ? &gb : nullptr, stride, pad);
    if (need_x) accumulate(tt, x, gx);
    if (need_w) accumulate(tt, w, gw);
    if (need_b) accumulate(tt, bias, gb);
  });
}

template <typename T>
Id<T> linear(Tape<T>& t, Id<T> x, Id<T> w, Id<T> bias) {
  const Tensor<T>* b = bias >= 0 ? &t.value(bias) : nullptr;
  Tensor<T> y = ops::linear_forward(t.value(x), t.value(w), b);
  std::vector<Id<T>> parents = {x, w};
  if (bias >= 0) parents.push_back(bias);
  return t.record(std::move(y), std::move(parents), [x, w, bias](Tape<T>& tt, Id<T> self) {
    Tensor<T> gy = grad_tensor(tt, self);
    Tensor<T> gx, gw, gb;
    bool need_x = tt.requires_grad(x), need_w = tt.requires_grad(w);
    bool need_b = bias >= 0 && tt.requires_grad(bias);
    if (need_x) gx = Tensor<T>(tt.value(x).shape);
    if (need_w) gw = Tensor<T>(tt.value(w).shape);
    if (need_b) gb = Tensor<T>(tt.value(bias).shape);
    ops::linear_backward(tt.value(x), tt.value(w), gy, need_x ? &gx : nullptr, need_w ? &gw : nullptr,
                         need_b ? &gb : nullptr);
    if (need_x) accumulate(tt, x, gx);
    if (need_w) accumulate(tt, w, gw);
    if (need_b) accumulate(tt, bias, gb);
  });
}

template <typename T>
Id<T> relu(Tape<T>& t, Id<T> x) {
  return t.record(ops::relu_forward(t.value(x)), {x}, [x](Tape<T>& tt, Id<T> self) {
    if (!tt.requires_grad(x)) return;
    Tensor<T> gy = grad_tensor(tt, self);
    Tensor<T> gx(tt.value(x).shape);
    ops::relu_backward(tt.value(x), gy, gx);
    accumulate(tt, x, gx);
  });
}

template <typename T>
Id<T> add(Tape<T>& t, Id<T> a, Id<T> b) {
  return t.record(ops::add_forward(t.value(a), t.value(b)), {a, b}, [a, b](Tape<T>& tt, Id<T> self) {
    const auto& gy = tt.grad(self);
    if (tt.requires_grad(a)) {
      auto& ga = tt.grad(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    }
    if (tt.requires_grad(b)) {
      auto& gb = tt.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i];
    }
  });
}

template <typename T>
Id<T> maxpool2d(Tape<T>& t, Id<T> x, int k, int stride) {
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor<T> y = ops::maxpool2d_forward(t.value(x), k, stride, argmax.get());
  return t.record(std::move(y), {x}, [x, argmax](Tape<T>& tt, Id<T> self) {
    if (!tt.requires_grad(x)) return;
    Tensor<T> gy = grad_tensor(tt, self);
    Tensor<T> gx(tt.value(x).shape);
    ops::maxpool2d_backward(*argmax, gy, gx);
    accumulate(tt, x, gx);
  });
}

template <typename T>
Id<T> avgpool2d(Tape<T>& t, Id<T> x, int k, int stride) {
  return t.record(ops::avgpool2d_forward(t.value(x), k, stride), {x}, [x, k, stride](Tape<T>& tt, Id<T> self) {
    if (!tt.requires_grad(x)) return;
    Tensor<T> gy = grad_tensor(tt, self);
    Tensor<T> gx(tt.value(x).shape);
    ops::avgpool2d_backward(tt.value(x).shape, k, stride, gy, gx);
    accumulate(tt, x, gx);
  });
}

template <typename T>
Id<T> flatten(Tape<T>& t, Id<T> x) {
  return t.record(ops::flatten_forward(t.value(x)), {x}, [x](Tape<T>& tt, Id<T> self) {
    if (!tt.requires_grad(x)) return;
    const auto& gy = tt.grad(self);
    auto& gx = tt.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
Id<T> batchnorm2d(Tape<T>& t, Id<T> x, Id<T> gamma, Id<T> beta, Tensor<T> mean, Tensor<T> var, double eps,
                  std::vector<std::uint8_t> stats_from_batch) {
  auto mu = std::make_shared<Tensor<T>>(std::move(mean));
  auto sig = std::make_shared<Tensor<T>>(std::move(var));
  auto flags = std::make_shared<std::vector<std::uint8_t>>(std::move(stats_from_batch));
  Tensor<T> y = ops::batchnorm2d_forward(t.value(x), t.value(gamma), t.value(beta), *mu, *sig, eps);
  return t.record(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, mu, sig, eps, flags](Tape<T>& tt, Id<T> self) {
                    Tensor<T> gy = grad_tensor(tt, self);
                    Tensor<T> gx, gg, gb;
                    bool need_x = tt.requires_grad(x);
                    bool need_g = tt.requires_grad(gamma), need_b = tt.requires_grad(beta);
                    if (need_x) gx = Tensor<T>(tt.value(x).shape);
                    if (need_g) gg = Tensor<T>(tt.value(gamma).shape);
                    if (need_b) gb = Tensor<T>(tt.value(beta).shape);
                    ops::batchnorm2d_backward(tt.value(x), tt.value(gamma), *mu, *sig, eps, *flags, gy,
                                              need_x ? &gx : nullptr, need_g ? &gg : nullptr, need_b ? &gb : nullptr);
                    if (need_x) accumulate(tt, x, gx);
                    if (need_g) accumulate(tt, gamma, gg);
                    if (need_b) accumulate(tt, beta, gb);
                  });
}

template <typename T>
Id<T> cross_entropy(Tape<T>& t, Id<T> logits, std::vector<int> labels) {
  auto labels_ptr = std::make_shared<std::vector<int>>(std::move(labels));
  T loss = ops::softmax_cross_entropy(t.value(logits), *labels_ptr, static_cast<Tensor<T>*>(nullptr));
  return t.record(Tensor<T>::scalar(loss), {logits}, [logits, labels_ptr](Tape<T>& tt, Id<T> self) {
    if (!tt.requires_grad(logits)) return;
    Tensor<T> dl(tt.value(logits).shape);
    ops::softmax_cross_entropy(tt.value(logits), *labels_ptr, &dl);
    T g = tt.grad(self)[0];
    auto& gx = tt.grad(logits);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * dl.data[i];
  });
}

template <typename T>
Id<T> inner(Tape<T>& t, Id<T> x, Tensor<T> weights) {
  const Tensor<T>& v = t.value(x);
  if (v.numel() != weights.numel())
    throw ShapeError("inner: weights numel " + std::to_string(weights.numel()) + " != value numel " +
                     std::to_string(v.numel()));
  auto w = std::make_shared<Tensor<T>>(std::move(weights));
  T s = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) s += v.data[i] * w->data[i];
  return t.record(Tensor<T>::scalar(s), {x}, [x, w](Tape<T>& tt, Id<T> self) {
    if (!tt.requires_grad(x)) return;
    T g = tt.grad(self)[0];
    auto& gx = tt.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w->data[i];
  });
}

#define ECNN_INSTANTIATE_TP(T)                                                                \
  template Id<T> conv2d<T>(Tape<T>&, Id<T>, Id<T>, Id<T>, int, int);                         \
  template Id<T> linear<T>(Tape<T>&, Id<T>, Id<T>, Id<T>);                                   \
  template Id<T> relu<T>(Tape<T>&, Id<T>);                                                   \
  template Id<T> add<T>(Tape<T>&, Id<T>, Id<T>);                                             \
  template Id<T> maxpool2d<T>(Tape<T>&, Id<T>, int, int);                                    \
  template Id<T> avgpool2d<T>(Tape<T>&, Id<T>, int, int);                                    \
  template Id<T> flatten<T>(Tape<T>&, Id<T>);                                                \
  template Id<T> batchnorm2d<T>(Tape<T>&, Id<T>, Id<T>, Id<T>, Tensor<T>, Tensor<T>, double,        \
                                std::vector<std::uint8_t>);                                         \
  template Id<T> cross_entropy<T>(Tape<T>&, Id<T>, std::vector<int>);                        \
  template Id<T> inner<T>(Tape<T>&, Id<T>, Tensor<T>);

ECNN_INSTANTIATE_TP(float)
ECNN_INSTANTIATE_TP(double)

}  // namespace tp
}  // namespace ecnn
