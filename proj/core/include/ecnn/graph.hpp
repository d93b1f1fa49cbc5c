#ifndef ECNN_GRAPH_HPP
#define ECNN_GRAPH_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ecnn/autodiff.hpp"
#include "ecnn/tensor.hpp"

namespace ecnn {

enum class LayerKind : std::uint8_t { Conv2d, BatchNorm2d, Relu, MaxPool2d, AvgPool2d, Add, Flatten, Linear };

const char* kind_name(LayerKind k);
LayerKind kind_from_name(const std::string& s);

enum class ParamRole : std::uint8_t { Weight, Bias, Gamma, Beta, RunningMean, RunningVar };

const char* role_name(ParamRole r);
ParamRole role_from_name(const std::string& s);
bool role_is_buffer(ParamRole r);

// Batchnorm constants; the zoo uses these everywhere.
inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

struct LayerNode {
  int id = -1;
  std::string name;
  LayerKind kind = LayerKind::Relu;
  std::vector<int> preds;  // empty = reads the graph input
  int in_channels = 0;     // conv: in channels; linear: in features
  int out_channels = 0;    // conv: filters; linear: out features; bn: channels
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  bool has_bias = false;
  int in_factor = 1;  // linear only: weight columns per input channel
};

/// A prunable dimension of a layer. BatchNorm's single channel dim is Out.
enum class Dim : std::uint8_t { Out, In };

struct Slot {
  int node = -1;
  Dim dim = Dim::Out;
  auto operator<=>(const Slot&) const = default;
};

struct ParamKey {
  int node = -1;
  ParamRole role = ParamRole::Weight;
  auto operator<=>(const ParamKey&) const = default;
};

enum class Mode : std::uint8_t { Train, Eval };

/// Per-node frozen-statistics flags for batchnorm layers (1 = do not update
/// that channel's running stats during a training-mode forward).
using BnStatFreeze = std::map<int, std::vector<std::uint8_t>>;

/// DAG of typed layers plus the parameter/buffer registry and per-slot origin
/// maps (current channel index -> original-model channel index).
template <typename T>
class ModelGraph {
 public:
  using Registry = std::map<ParamKey, Tensor<T>>;

  int add_node(LayerNode n);
  void set_output(int id);
  int output() const { return output_; }

  const std::vector<LayerNode>& nodes() const { return nodes_; }
  LayerNode& node(int id);
  const LayerNode& node(int id) const;
  int node_by_name(const std::string& name) const;  // -1 if absent

  bool has_param(int node, ParamRole role) const;
  Tensor<T>& param(int node, ParamRole role);
  const Tensor<T>& param(int node, ParamRole role) const;
  void set_param(int node, ParamRole role, Tensor<T> t);
  Registry& registry() { return registry_; }
  const Registry& registry() const { return registry_; }

  std::vector<int>& origin(Slot s);
  const std::vector<int>& origin(Slot s) const;
  bool has_origin(Slot s) const { return origin_.count(s) != 0; }
  const std::map<Slot, std::vector<int>>& origin_maps() const { return origin_; }
  std::map<Slot, std::vector<int>>& origin_maps() { return origin_; }

  /// Kernel-only forward. Eval mode mutates nothing; train mode updates
  /// batchnorm running statistics only (skipping channels flagged in
  /// bn_freeze).
  Tensor<T> forward(const Tensor<T>& batch, Mode mode, const BnStatFreeze* bn_freeze = nullptr);

  /// Eval-mode forward on a shared, read-only model. Safe because the eval
  /// path touches no registry state.
  Tensor<T> forward_eval(const Tensor<T>& batch) const {
    return const_cast<ModelGraph*>(this)->forward(batch, Mode::Eval);
  }

  struct TapedForward {
    tp::Id<T> logits = -1;
    std::map<ParamKey, tp::Id<T>> params;
  };
  /// Records the forward pass on a tape with every parameter as a gradient
  /// leaf. Running-stat updates follow the same rules as forward().
  TapedForward forward_tape(Tape<T>& tape, const Tensor<T>& batch, Mode mode,
                            const BnStatFreeze* bn_freeze = nullptr);

  /// tape.backward(loss) + copy gradients into the registry's grad buffers.
  /// Parameters unreached by the loss end up with zero gradients.
  void backward(Tape<T>& tape, const TapedForward& tf, tp::Id<T> loss);
  void zero_grads();

  std::int64_t count_params() const;
  std::int64_t count_buffers() const;
  /// 4 * (count_params + count_buffers): the 32-bit storage model.
  std::int64_t model_size_bytes() const;

  /// Output shape (without the batch extent) per node; throws naming the node
  /// on any inconsistency.
  std::vector<Shape> infer_shapes() const;
  void validate() const;

  std::uint64_t registry_checksum() const;

  Shape input_shape;  // {C,H,W}
  int num_classes = 0;
  std::string arch_name;

 private:
  std::vector<LayerNode> nodes_;
  Registry registry_;
  std::map<Slot, std::vector<int>> origin_;
  int output_ = -1;
};

std::vector<int> identity_map(int n);

template <typename T>
bool models_bits_equal(const ModelGraph<T>& a, const ModelGraph<T>& b);

}  // namespace ecnn

#endif
