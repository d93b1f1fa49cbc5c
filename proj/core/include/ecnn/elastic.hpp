#ifndef ECNN_ELASTIC_HPP
#define ECNN_ELASTIC_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ecnn/depgraph.hpp"
#include "ecnn/graph.hpp"
#include "ecnn/importance.hpp"

namespace ecnn::elastic {

/// Dropped-channel blocks of one coupling entry, cut from the pre-step
/// tensors (all other dims still at pre-step extents). Parallel arrays.
template <typename T>
struct SavedSlices {
  std::vector<ParamRole> roles;
  std::vector<Tensor<T>> tensors;
};

template <typename T>
struct RecordEntry {
  depgraph::CouplingEntry entry;
  SavedSlices<T> slices;
};

/// One group's share of a prune step. Indices are ORIGINAL-model coordinates,
/// which is what makes records composable across steps.
template <typename T>
struct RecordGroup {
  std::vector<RecordEntry<T>> entries;
  std::vector<int> dropped_original;
  std::vector<int> kept_original;
  int pre_width = 0;
};

template <typename T>
struct PruneRecord {
  int step = 0;
  std::vector<RecordGroup<T>> groups;
  std::uint64_t pre_checksum = 0;   // registry checksum before the step
  std::uint64_t post_checksum = 0;  // and of the untrained core right after
};

/// Per-parameter binary masks (1 = frozen/core) plus per-channel frozen-stat
/// flags for batchnorm. Parameters absent from `frozen` are fully trainable.
struct FreezeMask {
  std::map<ParamKey, std::vector<std::uint8_t>> frozen;
  BnStatFreeze bn_stats;

  bool fully_frozen(const ParamKey& key) const;
};

template <typename T>
struct LevelStack {
  std::vector<PruneRecord<T>> records;   // step 1..S
  std::vector<ModelGraph<T>> levels;     // 0..S, all materialized
  int current_level = 0;

  int depth() const { return static_cast<int>(records.size()); }
};

struct CostSummary {
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t bytes = 0;
};

/// Structurally removes the dropped channels from every group, recording
/// dropped original indices and the removed weight/buffer slices. The input
/// model is untouched; drops[i] pairs with groups[i].
template <typename T>
std::pair<ModelGraph<T>, PruneRecord<T>> hard_prune(const ModelGraph<T>& model,
                                                    const std::vector<depgraph::DependencyGroup>& groups,
                                                    const std::vector<std::vector<int>>& drops, int step = 1);

/// Zeroes dropped channels in place of removing them: conv/linear filter rows
/// and bias entries, batchnorm gamma/beta, and running stats reset to (0, 1).
/// Shapes are unchanged.
template <typename T>
ModelGraph<T> soft_prune(const ModelGraph<T>& model, const std::vector<depgraph::DependencyGroup>& groups,
                         const std::vector<std::vector<int>>& drops);

/// Detects all-zero channels of a soft-pruned model and builds the compact
/// model that drops them. Channels that look trained-to-zero rather than
/// soft-pruned (running stats not at reset values) are flagged on stderr and
/// treated as pruned.
template <typename T>
std::pair<ModelGraph<T>, PruneRecord<T>> extract_core(const ModelGraph<T>& soft,
                                                      const std::vector<depgraph::DependencyGroup>& groups,
                                                      int step = 1);

/// Inverse of one hard_prune step: kept channels keep the core's (possibly
/// fine-tuned) values at their original positions, dropped channels come back
/// with their saved pre-prune values, and the returned mask freezes every
/// core coordinate (including batchnorm statistics).
template <typename T>
std::pair<ModelGraph<T>, FreezeMask> rebuild(const ModelGraph<T>& core, const PruneRecord<T>& record);

/// True when slicing `full` at the record's kept positions reproduces `core`
/// bit for bit (parameters and batchnorm statistics).
template <typename T>
bool nested_core_equal(const ModelGraph<T>& full, const PruneRecord<T>& record, const ModelGraph<T>& core);

struct PipelineOptions {
  int steps = 1;
  double ratio = 0.2;
  importance::Method method = importance::Method::L2Global;
  importance::Scope scope = importance::Scope::Global;
  bool alternate_layers = false;  // prune only even-indexed prunable groups
  bool finetune_each_step = false;
  std::set<int> protected_nodes;
};

/// Prunes `steps` times at `ratio` per step, recording a PruneRecord per
/// level. `finetune` (optional) runs per step or only on the final core,
/// following finetune_each_step. `batches` feed gradient-based scorers.
template <typename T>
LevelStack<T> iterative_pipeline(const ModelGraph<T>& model, const PipelineOptions& opts,
                                 const std::vector<importance::LabeledBatch<T>>& batches = {},
                                 const std::function<void(ModelGraph<T>&)>& finetune = nullptr);

/// Rebuilds the top `k` records of the stack in reverse, replacing each
/// shallower level with the rebuilt (optionally fine-tuned) model.
/// `finetune`, when set, is called with the rebuilt model and its mask.
template <typename T>
void rebuild_levels(LevelStack<T>& stack, int k,
                    const std::function<void(ModelGraph<T>&, const FreezeMask&)>& finetune = nullptr);

/// Capacity view: level 0 = full model, level depth() = smallest core.
template <typename T>
const ModelGraph<T>& switch_capacity(const LevelStack<T>& stack, int level);

/// Params, conv/linear FLOPs (m_j * k^2 * m_{j-1} * w_j * h_j and out*in), and
/// the 4-byte storage size.
template <typename T>
CostSummary cost_report(const ModelGraph<T>& model);

/// Cost summary of every materialized level, index = level.
template <typename T>
std::vector<CostSummary> level_costs(const LevelStack<T>& stack);

}  // namespace ecnn::elastic

#endif
