#ifndef ECNN_AUTODIFF_HPP
#define ECNN_AUTODIFF_HPP

#include <functional>
#include <vector>

#include "ecnn/ops.hpp"
#include "ecnn/tensor.hpp"

namespace ecnn {

/// Reverse-mode tape. Records one forward pass; creation order is a valid
/// topological order, so backward() is a single reverse sweep that visits each
/// node exactly once. A tape is confined to one thread per pass.
template <typename T>
class Tape {
 public:
  using NodeId = int;

  struct Node {
    Tensor<T> value;
    std::vector<T> grad;  // sized lazily on backward
    std::vector<NodeId> parents;
    std::function<void(Tape&, NodeId)> backprop;  // accumulates into parents
    bool requires_grad = false;
  };

  NodeId leaf(Tensor<T> value, bool requires_grad = false);
  const Tensor<T>& value(NodeId id) const { return node(id).value; }
  std::vector<T>& grad(NodeId id);
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. The root must
  /// be a scalar recorded on this tape.
  void backward(NodeId root);

  NodeId record(Tensor<T> value, std::vector<NodeId> parents, std::function<void(Tape&, NodeId)> backprop);

  Node& node(NodeId id);
  const Node& node(NodeId id) const;

 private:
  std::vector<Node> nodes_;
};

namespace tp {

template <typename T>
using Id = typename Tape<T>::NodeId;

template <typename T>
Id<T> conv2d(Tape<T>& t, Id<T> x, Id<T> w, Id<T> bias /* -1 = none */, int stride, int pad);

template <typename T>
Id<T> linear(Tape<T>& t, Id<T> x, Id<T> w, Id<T> bias /* -1 = none */);

template <typename T>
Id<T> relu(Tape<T>& t, Id<T> x);

template <typename T>
Id<T> add(Tape<T>& t, Id<T> a, Id<T> b);

template <typename T>
Id<T> maxpool2d(Tape<T>& t, Id<T> x, int k, int stride);

template <typename T>
Id<T> avgpool2d(Tape<T>& t, Id<T> x, int k, int stride);

template <typename T>
Id<T> flatten(Tape<T>& t, Id<T> x);

/// mean/var are plain tensors (per channel either batch stats or pinned
/// running stats, per stats_from_batch); no gradient flows into them.
template <typename T>
Id<T> batchnorm2d(Tape<T>& t, Id<T> x, Id<T> gamma, Id<T> beta, Tensor<T> mean, Tensor<T> var, double eps,
                  std::vector<std::uint8_t> stats_from_batch);

template <typename T>
Id<T> batchnorm2d(Tape<T>& t, Id<T> x, Id<T> gamma, Id<T> beta, Tensor<T> mean, Tensor<T> var, double eps,
                  bool stats_from_batch) {
  std::vector<std::uint8_t> flags(mean.data.size(), stats_from_batch ? 1 : 0);
  return batchnorm2d(t, x, gamma, beta, std::move(mean), std::move(var), eps, std::move(flags));
}

template <typename T>
Id<T> cross_entropy(Tape<T>& t, Id<T> logits, std::vector<int> labels);

/// Scalar projection sum(x * weights); handy for building test losses.
template <typename T>
Id<T> inner(Tape<T>& t, Id<T> x, Tensor<T> weights);

}  // namespace tp

}  // namespace ecnn

#endif
