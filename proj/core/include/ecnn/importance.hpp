#ifndef ECNN_IMPORTANCE_HPP
#define ECNN_IMPORTANCE_HPP

#include <string>
#include <vector>

#include "ecnn/depgraph.hpp"
#include "ecnn/graph.hpp"

namespace ecnn::importance {

enum class Method : std::uint8_t { L1, L2Global, Taylor, Hessian, Soft };
enum class Scope : std::uint8_t { Local, Global };

const char* method_name(Method m);
Method method_from_name(const std::string& s);
const char* scope_name(Scope s);
Scope scope_from_name(const std::string& s);
/// The scope each method is normally run with (l1 is local, the rest global).
Scope default_scope(Method m);

/// Per-channel saliency of one dependency group. Scores are finite and >= 0,
/// length equals the group width.
struct ImportanceVector {
  int group_index = -1;
  std::vector<double> scores;
  Method method = Method::L1;
  Scope scope = Scope::Local;
};

template <typename T>
using LabeledBatch = std::pair<Tensor<T>, std::vector<int>>;

/// Sum of |w| over each filter of the group's first conv out-channel entry.
template <typename T>
ImportanceVector l1_filter(const ModelGraph<T>& model, const depgraph::DependencyGroup& group, int group_index = -1);

/// Mean over group entries of the L2 norm of each channel's slice (conv/linear
/// weight slices, batchnorm gamma/beta pairs). all_entries=false restricts to
/// conv out-channel entries.
template <typename T>
ImportanceVector magnitude_l2(const ModelGraph<T>& model, const depgraph::DependencyGroup& group,
                              bool all_entries = true, int group_index = -1);

/// First-order criterion |sum(w * dL/dw)| per channel slice, mean over
/// entries; gradients from one cross-entropy forward/backward on the batch.
template <typename T>
ImportanceVector taylor(ModelGraph<T>& model, const Tensor<T>& batch, const std::vector<int>& labels,
                        const depgraph::DependencyGroup& group, int group_index = -1);

/// Empirical-Fisher diagonal surrogate: mean over batches of sum(grad^2) per
/// channel slice, min-max scaled to [0,1] within the group.
template <typename T>
ImportanceVector hessian_diag(ModelGraph<T>& model, const std::vector<LabeledBatch<T>>& batches,
                              const depgraph::DependencyGroup& group, int group_index = -1);

/// Turns score vectors into per-group sorted drop sets. Local scope drops
/// floor(width*ratio) lowest per group; global scope pools the per-group
/// mean-normalized scores and thresholds at the ratio quantile. Both keep at
/// least one channel per group; ties drop the lower channel index first.
/// Returned sets are parallel to `vectors`.
std::vector<std::vector<int>> rank_for_drop(const std::vector<ImportanceVector>& vectors, double ratio, Scope scope);

/// Bulk scorer used by the prune pipeline: scores groups[i] for each i in
/// `which`, sharing gradient passes across groups. Methods l2_global and soft
/// both rank by magnitude_l2.
template <typename T>
std::vector<ImportanceVector> score_groups(ModelGraph<T>& model, const std::vector<depgraph::DependencyGroup>& groups,
                                           const std::vector<std::size_t>& which, Method method,
                                           const std::vector<LabeledBatch<T>>& batches);

/// One cross-entropy forward/backward in eval mode; fills registry grads and
/// returns the loss.
template <typename T>
T compute_ce_grads(ModelGraph<T>& model, const Tensor<T>& batch, const std::vector<int>& labels);

}  // namespace ecnn::importance

#endif
