#ifndef ECNN_DEPGRAPH_HPP
#define ECNN_DEPGRAPH_HPP

#include <cstdint>
#include <set>
#include <vector>

#include "ecnn/graph.hpp"

namespace ecnn::depgraph {

enum class CouplingDim : std::uint8_t { OutChannels, InChannels, BnChannels };

const char* coupling_dim_name(CouplingDim d);
CouplingDim coupling_dim_from_name(const std::string& s);

/// One layer dimension that participates in a dependency group. `factor`
/// maps one channel to `factor` consecutive weight columns at the
/// conv->flatten->linear boundary; 1 everywhere else.
struct CouplingEntry {
  int node = -1;
  CouplingDim dim = CouplingDim::OutChannels;
  int factor = 1;
  auto operator<=>(const CouplingEntry&) const = default;
};

/// Layer dimensions that must be pruned with one shared channel index set.
struct DependencyGroup {
  std::vector<CouplingEntry> entries;
  int width = 0;
  bool prunable = true;
};

/// Discovers groups by forward shape-flow unification. Channel-preserving
/// nodes (relu, pools, flatten) are transparent; add nodes unify the groups of
/// both inputs. The graph-input group, the final classifier's out-channel
/// group, and the out-channel groups of `protected_nodes` come back with
/// prunable = false. Groups partition all slots; order is deterministic.
template <typename T>
std::vector<DependencyGroup> build_groups(const ModelGraph<T>& model, const std::set<int>& protected_nodes = {});

/// Drops the given current-coordinate channels from every entry of the group:
/// weights/biases/batchnorm tensors are sliced, node attrs updated, and origin
/// maps composed with the kept-index selection. Throws (mutating nothing) on
/// illegal drops.
template <typename T>
void apply_index_drop(ModelGraph<T>& model, const DependencyGroup& group, const std::vector<int>& drop);

/// Exact closed-form parameter/buffer delta of applying `drops` (parallel to
/// `groups`), accounting entry costs against running widths.
struct CostDelta {
  std::int64_t params = 0;
  std::int64_t buffers = 0;
};
template <typename T>
CostDelta analytic_drop_delta(const ModelGraph<T>& model, const std::vector<DependencyGroup>& groups,
                              const std::vector<std::vector<int>>& drops);

/// Tensor roles sliced for an entry of this kind/dim.
std::vector<ParamRole> entry_roles(LayerKind kind, CouplingDim dim, bool has_bias);

/// Logical [outer, channels, inner] view of `role` on `node` along `dim`.
struct ChannelAxis {
  std::int64_t outer = 1;
  std::int64_t channels = 1;
  std::int64_t inner = 1;
};
ChannelAxis channel_axis(const LayerNode& node, ParamRole role, CouplingDim dim);

/// Tensor shape after resizing the channel axis of `role` to n_channels
/// (other dims read from the node's current attrs).
Shape resized_channel_shape(const LayerNode& node, ParamRole role, CouplingDim dim, int n_channels);

/// Gathers `pick` channel blocks out of a [outer, channels, inner] view.
template <typename T>
Tensor<T> select_channels(const Tensor<T>& t, const ChannelAxis& ax, const std::vector<int>& pick, Shape new_shape);

/// Writes src (one block per `positions[i]`) into dst's channel axis.
template <typename T>
void scatter_channels(Tensor<T>& dst, const ChannelAxis& ax, const std::vector<int>& positions, const Tensor<T>& src);

/// Current width of the group as derived from the model's node attrs; throws
/// if entries disagree.
template <typename T>
int group_width(const ModelGraph<T>& model, const DependencyGroup& group);

template <typename T>
Slot entry_slot(const ModelGraph<T>& model, const CouplingEntry& e);

}  // namespace ecnn::depgraph

#endif
