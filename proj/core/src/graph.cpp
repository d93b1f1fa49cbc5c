#include "ecnn/graph.hpp"

#include <algorithm>

namespace ecnn {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::BatchNorm2d: return "batchnorm2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::AvgPool2d: return "avgpool2d";
    case LayerKind::Add: return "add";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Linear: return "linear";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& s) {
  for (LayerKind k : {LayerKind::Conv2d, LayerKind::BatchNorm2d, LayerKind::Relu, LayerKind::MaxPool2d,
                      LayerKind::AvgPool2d, LayerKind::Add, LayerKind::Flatten, LayerKind::Linear})
    if (s == kind_name(k)) return k;
  throw ValueError("unknown layer kind '" + s + "'");
}

const char* role_name(ParamRole r) {
  switch (r) {
    case ParamRole::Weight: return "weight";
    case ParamRole::Bias: return "bias";
    case ParamRole::Gamma: return "gamma";
    case ParamRole::Beta: return "beta";
    case ParamRole::RunningMean: return "running_mean";
    case ParamRole::RunningVar: return "running_var";
  }
  return "?";
}

ParamRole role_from_name(const std::string& s) {
  for (ParamRole r : {ParamRole::Weight, ParamRole::Bias, ParamRole::Gamma, ParamRole::Beta, ParamRole::RunningMean,
                      ParamRole::RunningVar})
    if (s == role_name(r)) return r;
  throw ValueError("unknown parameter role '" + s + "'");
}

bool role_is_buffer(ParamRole r) { return r == ParamRole::RunningMean || r == ParamRole::RunningVar; }

std::vector<int> identity_map(int n) {
  std::vector<int> m(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i)] = i;
  return m;
}

template <typename T>
int ModelGraph<T>::add_node(LayerNode n) {
  n.id = static_cast<int>(nodes_.size());
  if (n.name.empty()) n.name = "n" + std::to_string(n.id);
  for (int p : n.preds)
    if (p < 0 || p >= n.id)
      throw ValueError("node '" + n.name + "': predecessor " + std::to_string(p) + " not yet defined");
  nodes_.push_back(std::move(n));
  return nodes_.back().id;
}

template <typename T>
void ModelGraph<T>::set_output(int id) {
  node(id);
  output_ = id;
}

template <typename T>
LayerNode& ModelGraph<T>::node(int id) {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw ValueError("no node with id " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
const LayerNode& ModelGraph<T>::node(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw ValueError("no node with id " + std::to_string(id));
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
int ModelGraph<T>::node_by_name(const std::string& name) const {
  for (const auto& n : nodes_)
    if (n.name == name) return n.id;
  return -1;
}

template <typename T>
bool ModelGraph<T>::has_param(int node, ParamRole role) const {
  return registry_.count(ParamKey{node, role}) != 0;
}

template <typename T>
Tensor<T>& ModelGraph<T>::param(int node_id, ParamRole role) {
  auto it = registry_.find(ParamKey{node_id, role});
  if (it == registry_.end())
    throw ValueError("node '" + node(node_id).name + "' has no " + role_name(role) + " tensor");
  return it->second;
}

template <typename T>
const Tensor<T>& ModelGraph<T>::param(int node_id, ParamRole role) const {
  auto it = registry_.find(ParamKey{node_id, role});
  if (it == registry_.end())
    throw ValueError("node '" + node(node_id).name + "' has no " + role_name(role) + " tensor");
  return it->second;
}

template <typename T>
void ModelGraph<T>::set_param(int node, ParamRole role, Tensor<T> t) {
  registry_[ParamKey{node, role}] = std::move(t);
}

template <typename T>
std::vector<int>& ModelGraph<T>::origin(Slot s) {
  auto it = origin_.find(s);
  if (it == origin_.end())
    throw ValueError("node '" + node(s.node).name + "' has no origin map for dim " +
                     (s.dim == Dim::Out ? "out" : "in"));
  return it->second;
}

template <typename T>
const std::vector<int>& ModelGraph<T>::origin(Slot s) const {
  auto it = origin_.find(s);
  if (it == origin_.end())
    throw ValueError("node '" + node(s.node).name + "' has no origin map for dim " +
                     (s.dim == Dim::Out ? "out" : "in"));
  return it->second;
}

namespace {

template <typename T>
void bn_update_running(Tensor<T>& rmean, Tensor<T>& rvar, const Tensor<T>& mu, const Tensor<T>& var, std::int64_t m,
                       const std::vector<std::uint8_t>* frozen) {
  const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
  for (std::size_t c = 0; c < rmean.data.size(); ++c) {
    if (frozen && c < frozen->size() && (*frozen)[c]) continue;
    rmean.data[c] = static_cast<T>((1.0 - kBnMomentum) * rmean.data[c] + kBnMomentum * mu.data[c]);
    rvar.data[c] = static_cast<T>((1.0 - kBnMomentum) * rvar.data[c] + kBnMomentum * (unbias * var.data[c]));
  }
}

[[noreturn]] void rethrow_at(const LayerNode& n, const Error& e) {
  throw ShapeError("node '" + n.name + "' (id " + std::to_string(n.id) + "): " + e.what());
}

}  // namespace

template <typename T>
Tensor<T> ModelGraph<T>::forward(const Tensor<T>& batch, Mode mode, const BnStatFreeze* bn_freeze) {
  if (batch.ndim() != 4 || batch.shape[1] != input_shape[0] || batch.shape[2] != input_shape[1] ||
      batch.shape[3] != input_shape[2])
    throw ShapeError("forward: batch shape " + shape_str(batch.shape) + " does not match model input " +
                     shape_str(input_shape));
  if (output_ < 0) throw ValueError("forward: model has no output node");
  std::vector<Tensor<T>> acts(nodes_.size());
  for (const LayerNode& n : nodes_) {
    auto in = [&](int i) -> const Tensor<T>& { return n.preds.empty() ? batch : acts[static_cast<std::size_t>(n.preds[static_cast<std::size_t>(i)])]; };
    try {
      switch (n.kind) {
        case LayerKind::Conv2d: {
          const Tensor<T>* b = n.has_bias ? &param(n.id, ParamRole::Bias) : nullptr;
          acts[n.id] = ops::conv2d_forward(in(0), param(n.id, ParamRole::Weight), b, n.stride, n.pad);
          break;
        }
        case LayerKind::BatchNorm2d: {
          const Tensor<T>& x = in(0);
          const Tensor<T>& gamma = param(n.id, ParamRole::Gamma);
          const Tensor<T>& beta = param(n.id, ParamRole::Beta);
          if (mode == Mode::Train) {
            Tensor<T> mu, var;
            ops::batch_moments(x, mu, var);
            const std::vector<std::uint8_t>* frozen = nullptr;
            if (bn_freeze) {
              auto it = bn_freeze->find(n.id);
              if (it != bn_freeze->end()) frozen = &it->second;
            }
            // frozen-stat channels normalize by their pinned running stats
            if (frozen) {
              const Tensor<T>& rm = param(n.id, ParamRole::RunningMean);
              const Tensor<T>& rv = param(n.id, ParamRole::RunningVar);
              for (std::size_t c = 0; c < mu.data.size(); ++c)
                if (c < frozen->size() && (*frozen)[c]) {
                  mu.data[c] = rm.data[c];
                  var.data[c] = rv.data[c];
                }
            }
            acts[n.id] = ops::batchnorm2d_forward(x, gamma, beta, mu, var, kBnEps);
            std::int64_t m = static_cast<std::int64_t>(x.shape[0]) * x.shape[2] * x.shape[3];
            bn_update_running(param(n.id, ParamRole::RunningMean), param(n.id, ParamRole::RunningVar), mu, var, m,
                              frozen);
          } else {
            acts[n.id] = ops::batchnorm2d_forward(x, gamma, beta, param(n.id, ParamRole::RunningMean),
                                                  param(n.id, ParamRole::RunningVar), kBnEps);
          }
          break;
        }
        case LayerKind::Relu:
          acts[n.id] = ops::relu_forward(in(0));
          break;
        case LayerKind::MaxPool2d:
          acts[n.id] = ops::maxpool2d_forward(in(0), n.kernel, n.stride, nullptr);
          break;
        case LayerKind::AvgPool2d:
          acts[n.id] = ops::avgpool2d_forward(in(0), n.kernel, n.stride);
          break;
        case LayerKind::Add:
          acts[n.id] = ops::add_forward(in(0), in(1));
          break;
        case LayerKind::Flatten:
          acts[n.id] = ops::flatten_forward(in(0));
          break;
        case LayerKind::Linear: {
          const Tensor<T>* b = n.has_bias ? &param(n.id, ParamRole::Bias) : nullptr;
          acts[n.id] = ops::linear_forward(in(0), param(n.id, ParamRole::Weight), b);
          break;
        }
      }
    } catch (const ShapeError& e) {
      rethrow_at(n, e);
    }
  }
  return std::move(acts[static_cast<std::size_t>(output_)]);
}

template <typename T>
typename ModelGraph<T>::TapedForward ModelGraph<T>::forward_tape(Tape<T>& tape, const Tensor<T>& batch, Mode mode,
                                                                 const BnStatFreeze* bn_freeze) {
  if (batch.ndim() != 4 || batch.shape[1] != input_shape[0] || batch.shape[2] != input_shape[1] ||
      batch.shape[3] != input_shape[2])
    throw ShapeError("forward: batch shape " + shape_str(batch.shape) + " does not match model input " +
                     shape_str(input_shape));
  if (output_ < 0) throw ValueError("forward: model has no output node");
  TapedForward tf;
  auto leaf_of = [&](int node_id, ParamRole role) {
    ParamKey key{node_id, role};
    auto it = tf.params.find(key);
    if (it != tf.params.end()) return it->second;
    tp::Id<T> id = tape.leaf(param(node_id, role), /*requires_grad=*/true);
    tf.params.emplace(key, id);
    return id;
  };
  tp::Id<T> input = tape.leaf(batch, /*requires_grad=*/false);
  std::vector<tp::Id<T>> acts(nodes_.size(), -1);
  for (const LayerNode& n : nodes_) {
    auto in = [&](int i) { return n.preds.empty() ? input : acts[static_cast<std::size_t>(n.preds[static_cast<std::size_t>(i)])]; };
    try {
      switch (n.kind) {
        case LayerKind::Conv2d: {
          tp::Id<T> b = n.has_bias ? leaf_of(n.id, ParamRole::Bias) : -1;
          acts[n.id] = tp::conv2d(tape, in(0), leaf_of(n.id, ParamRole::Weight), b, n.stride, n.pad);
          break;
        }
        case LayerKind::BatchNorm2d: {
          tp::Id<T> x = in(0);
          Tensor<T> mu, var;
          std::vector<std::uint8_t> from_batch(static_cast<std::size_t>(n.out_channels), 0);
          if (mode == Mode::Train) {
            ops::batch_moments(tape.value(x), mu, var);
            std::fill(from_batch.begin(), from_batch.end(), 1);
            const std::vector<std::uint8_t>* frozen = nullptr;
            if (bn_freeze) {
              auto it = bn_freeze->find(n.id);
              if (it != bn_freeze->end()) frozen = &it->second;
            }
            if (frozen) {
              const Tensor<T>& rm = param(n.id, ParamRole::RunningMean);
              const Tensor<T>& rv = param(n.id, ParamRole::RunningVar);
              for (std::size_t c = 0; c < mu.data.size(); ++c)
                if (c < frozen->size() && (*frozen)[c]) {
                  mu.data[c] = rm.data[c];
                  var.data[c] = rv.data[c];
                  from_batch[c] = 0;
                }
            }
            const Tensor<T>& xv = tape.value(x);
            std::int64_t m = static_cast<std::int64_t>(xv.shape[0]) * xv.shape[2] * xv.shape[3];
            bn_update_running(param(n.id, ParamRole::RunningMean), param(n.id, ParamRole::RunningVar), mu, var, m,
                              frozen);
          } else {
            mu = param(n.id, ParamRole::RunningMean);
            var = param(n.id, ParamRole::RunningVar);
          }
          acts[n.id] = tp::batchnorm2d(tape, x, leaf_of(n.id, ParamRole::Gamma), leaf_of(n.id, ParamRole::Beta),
                                       std::move(mu), std::move(var), kBnEps, std::move(from_batch));
          break;
        }
        case LayerKind::Relu:
          acts[n.id] = tp::relu(tape, in(0));
          break;
        case LayerKind::MaxPool2d:
          acts[n.id] = tp::maxpool2d(tape, in(0), n.kernel, n.stride);
          break;
        case LayerKind::AvgPool2d:
          acts[n.id] = tp::avgpool2d(tape, in(0), n.kernel, n.stride);
          break;
        case LayerKind::Add:
          acts[n.id] = tp::add(tape, in(0), in(1));
          break;
        case LayerKind::Flatten:
          acts[n.id] = tp::flatten(tape, in(0));
          break;
        case LayerKind::Linear: {
          tp::Id<T> b = n.has_bias ? leaf_of(n.id, ParamRole::Bias) : -1;
          acts[n.id] = tp::linear(tape, in(0), leaf_of(n.id, ParamRole::Weight), b);
          break;
        }
      }
    } catch (const ShapeError& e) {
      rethrow_at(n, e);
    }
  }
  tf.logits = acts[static_cast<std::size_t>(output_)];
  return tf;
}

template <typename T>
void ModelGraph<T>::backward(Tape<T>& tape, const TapedForward& tf, tp::Id<T> loss) {
  tape.backward(loss);
  zero_grads();
  for (const auto& [key, id] : tf.params) {
    Tensor<T>& p = registry_.at(key);
    const auto& g = tape.grad(id);
    std::copy(g.begin(), g.end(), p.grad->begin());
  }
}

template <typename T>
void ModelGraph<T>::zero_grads() {
  for (auto& [key, t] : registry_) {
    if (role_is_buffer(key.role)) continue;
    t.ensure_grad();
    t.zero_grad();
  }
}

template <typename T>
std::int64_t ModelGraph<T>::count_params() const {
  std::int64_t n = 0;
  for (const auto& [key, t] : registry_)
    if (!role_is_buffer(key.role)) n += t.numel();
  return n;
}

template <typename T>
std::int64_t ModelGraph<T>::count_buffers() const {
  std::int64_t n = 0;
  for (const auto& [key, t] : registry_)
    if (role_is_buffer(key.role)) n += t.numel();
  return n;
}

template <typename T>
std::int64_t ModelGraph<T>::model_size_bytes() const {
  return 4 * (count_params() + count_buffers());
}

template <typename T>
std::vector<Shape> ModelGraph<T>::infer_shapes() const {
  if (input_shape.size() != 3) throw ShapeError("model input shape must be {C,H,W}, got " + shape_str(input_shape));
  std::vector<Shape> out(nodes_.size());
  for (const LayerNode& n : nodes_) {
    auto in = [&](int i) -> const Shape& {
      return n.preds.empty() ? input_shape : out[static_cast<std::size_t>(n.preds[static_cast<std::size_t>(i)])];
    };
    auto expect_3d = [&](const Shape& s) {
      if (s.size() != 3)
        throw ShapeError("node '" + n.name + "': expected a {C,H,W} input, got " + shape_str(s));
    };
    try {
      switch (n.kind) {
        case LayerKind::Conv2d: {
          const Shape& s = in(0);
          expect_3d(s);
          if (s[0] != n.in_channels)
            throw ShapeError("node '" + n.name + "': input channels " + std::to_string(s[0]) +
                             " != expected in-channels " + std::to_string(n.in_channels));
          int h = ops::pooled_extent(s[1], n.kernel, n.stride, n.pad, "conv2d");
          int w = ops::pooled_extent(s[2], n.kernel, n.stride, n.pad, "conv2d");
          out[n.id] = {n.out_channels, h, w};
          break;
        }
        case LayerKind::BatchNorm2d: {
          const Shape& s = in(0);
          expect_3d(s);
          if (s[0] != n.out_channels)
            throw ShapeError("node '" + n.name + "': input channels " + std::to_string(s[0]) +
                             " != batchnorm channels " + std::to_string(n.out_channels));
          out[n.id] = s;
          break;
        }
        case LayerKind::Relu:
          out[n.id] = in(0);
          break;
        case LayerKind::MaxPool2d:
        case LayerKind::AvgPool2d: {
          const Shape& s = in(0);
          expect_3d(s);
          int h = ops::pooled_extent(s[1], n.kernel, n.stride, 0, "pool2d");
          int w = ops::pooled_extent(s[2], n.kernel, n.stride, 0, "pool2d");
          out[n.id] = {s[0], h, w};
          break;
        }
        case LayerKind::Add: {
          const Shape& a = in(0);
          const Shape& b = in(1);
          if (!shape_eq(a, b))
            throw ShapeError("node '" + n.name + "': add inputs differ, " + shape_str(a) + " vs " + shape_str(b));
          out[n.id] = a;
          break;
        }
        case LayerKind::Flatten: {
          const Shape& s = in(0);
          expect_3d(s);
          out[n.id] = {s[0] * s[1] * s[2]};
          break;
        }
        case LayerKind::Linear: {
          const Shape& s = in(0);
          if (s.size() != 1)
            throw ShapeError("node '" + n.name + "': expected flat input, got " + shape_str(s));
          if (s[0] != n.in_channels)
            throw ShapeError("node '" + n.name + "': input features " + std::to_string(s[0]) +
                             " != expected in-features " + std::to_string(n.in_channels));
          out[n.id] = {n.out_channels};
          break;
        }
      }
    } catch (const ShapeError&) {
      throw;
    } catch (const Error& e) {
      rethrow_at(n, e);
    }
  }
  return out;
}

template <typename T>
void ModelGraph<T>::validate() const {
  if (output_ < 0) throw ShapeError("model has no output node");
  std::vector<char> consumed(nodes_.size(), 0);
  for (const LayerNode& n : nodes_) {
    std::size_t want = n.kind == LayerKind::Add ? 2 : 1;
    if (!n.preds.empty() && n.preds.size() != want)
      throw ShapeError("node '" + n.name + "': expected " + std::to_string(want) + " inputs, has " +
                       std::to_string(n.preds.size()));
    if (n.preds.empty() && n.kind == LayerKind::Add)
      throw ShapeError("node '" + n.name + "': add cannot read the graph input twice");
    for (int p : n.preds) consumed[static_cast<std::size_t>(p)] = 1;
  }
  for (const LayerNode& n : nodes_)
    if (!consumed[static_cast<std::size_t>(n.id)] && n.id != output_)
      throw ShapeError("node '" + n.name + "': dangling output (only the classifier may be a sink)");
  if (node(output_).kind != LayerKind::Linear)
    throw ShapeError("output node must be a linear classifier");

  auto check_vec = [&](const LayerNode& n, ParamRole r, int len) {
    const Tensor<T>& t = param(n.id, r);
    if (t.ndim() != 1 || t.shape[0] != len)
      throw ShapeError("node '" + n.name + "': " + role_name(r) + " shape " + shape_str(t.shape) + " != [" +
                       std::to_string(len) + "]");
  };
  for (const LayerNode& n : nodes_) {
    switch (n.kind) {
      case LayerKind::Conv2d: {
        const Tensor<T>& w = param(n.id, ParamRole::Weight);
        Shape want{n.out_channels, n.in_channels, n.kernel, n.kernel};
        if (!shape_eq(w.shape, want))
          throw ShapeError("node '" + n.name + "': weight shape " + shape_str(w.shape) + " != " + shape_str(want));
        if (n.has_bias) check_vec(n, ParamRole::Bias, n.out_channels);
        break;
      }
      case LayerKind::BatchNorm2d:
        check_vec(n, ParamRole::Gamma, n.out_channels);
        check_vec(n, ParamRole::Beta, n.out_channels);
        check_vec(n, ParamRole::RunningMean, n.out_channels);
        check_vec(n, ParamRole::RunningVar, n.out_channels);
        break;
      case LayerKind::Linear: {
        const Tensor<T>& w = param(n.id, ParamRole::Weight);
        Shape want{n.out_channels, n.in_channels};
        if (!shape_eq(w.shape, want))
          throw ShapeError("node '" + n.name + "': weight shape " + shape_str(w.shape) + " != " + shape_str(want));
        if (n.in_channels % n.in_factor != 0)
          throw ShapeError("node '" + n.name + "': in-factor " + std::to_string(n.in_factor) +
                           " does not divide in-features " + std::to_string(n.in_channels));
        if (n.has_bias) check_vec(n, ParamRole::Bias, n.out_channels);
        break;
      }
      default:
        break;
    }
  }
  for (const auto& [slot, map] : origin_) {
    const LayerNode& n = node(slot.node);
    int want = 0;
    if (n.kind == LayerKind::Linear && slot.dim == Dim::In)
      want = n.in_channels / n.in_factor;
    else
      want = slot.dim == Dim::Out ? n.out_channels : n.in_channels;
    if (static_cast<int>(map.size()) != want)
      throw ShapeError("node '" + n.name + "': origin map length " + std::to_string(map.size()) + " != " +
                       std::to_string(want));
    for (std::size_t i = 1; i < map.size(); ++i)
      if (map[i] <= map[i - 1])
        throw ShapeError("node '" + n.name + "': origin map not strictly increasing");
  }
  infer_shapes();
  if (node(output_).out_channels != num_classes)
    throw ShapeError("classifier emits " + std::to_string(node(output_).out_channels) + " classes, model declares " +
                     std::to_string(num_classes));
}

template <typename T>
std::uint64_t ModelGraph<T>::registry_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [key, t] : registry_) {
    int meta[2] = {key.node, static_cast<int>(key.role)};
    h = checksum_bytes(meta, sizeof(meta), h);
    h = checksum(t, h);
  }
  return h;
}

template <typename T>
bool models_bits_equal(const ModelGraph<T>& a, const ModelGraph<T>& b) {
  if (a.nodes().size() != b.nodes().size()) return false;
  for (std::size_t i = 0; i < a.nodes().size(); ++i) {
    const LayerNode &x = a.nodes()[i], &y = b.nodes()[i];
    if (x.kind != y.kind || x.name != y.name || x.preds != y.preds || x.in_channels != y.in_channels ||
        x.out_channels != y.out_channels || x.kernel != y.kernel || x.stride != y.stride || x.pad != y.pad ||
        x.has_bias != y.has_bias || x.in_factor != y.in_factor)
      return false;
  }
  if (a.input_shape != b.input_shape || a.num_classes != b.num_classes) return false;
  if (a.origin_maps() != b.origin_maps()) return false;
  if (a.registry().size() != b.registry().size()) return false;
  auto ia = a.registry().begin();
  auto ib = b.registry().begin();
  for (; ia != a.registry().end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (!bits_equal(ia->second, ib->second)) return false;
  }
  return true;
}

template class ModelGraph<float>;
template class ModelGraph<double>;
template bool models_bits_equal<float>(const ModelGraph<float>&, const ModelGraph<float>&);
template bool models_bits_equal<double>(const ModelGraph<double>&, const ModelGraph<double>&);

}  // namespace ecnn
