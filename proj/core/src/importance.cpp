#include "ecnn/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ecnn::importance {

using depgraph::ChannelAxis;
using depgraph::channel_axis;
using depgraph::CouplingDim;
using depgraph::CouplingEntry;
using depgraph::DependencyGroup;

const char* method_name(Method m) {
  switch (m) {
    case Method::L1: return "l1";
    case Method::L2Global: return "l2_global";
    case Method::Taylor: return "taylor";
    case Method::Hessian: return "hessian";
    case Method::Soft: return "soft";
  }
  return "?";
}

Method method_from_name(const std::string& s) {
  for (Method m : {Method::L1, Method::L2Global, Method::Taylor, Method::Hessian, Method::Soft})
    if (s == method_name(m)) return m;
  throw ValueError("unknown method '" + s + "'; known: l1 l2_global taylor hessian soft");
}

const char* scope_name(Scope s) { return s == Scope::Local ? "local" : "global"; }

Scope scope_from_name(const std::string& s) {
  if (s == "local") return Scope::Local;
  if (s == "global") return Scope::Global;
  throw ValueError("unknown scope '" + s + "'; known: local global");
}

Scope default_scope(Method m) { return m == Method::L1 ? Scope::Local : Scope::Global; }

namespace {

/// Parameter roles scored for an entry (buffers never carry importance).
std::vector<ParamRole> scored_roles(const LayerNode& n, CouplingDim dim, bool weights_only) {
  switch (dim) {
    case CouplingDim::OutChannels:
      if (!weights_only && n.has_bias) return {ParamRole::Weight, ParamRole::Bias};
      return {ParamRole::Weight};
    case CouplingDim::InChannels:
      return {ParamRole::Weight};
    case CouplingDim::BnChannels:
      return {ParamRole::Gamma, ParamRole::Beta};
  }
  return {};
}

/// Applies fn(value, grad) to every element of channel c's slice in entry e.
template <typename T, typename F>
void visit_channel(const ModelGraph<T>& model, const CouplingEntry& e, int c, bool weights_only, bool with_grads,
                   F&& fn) {
  const LayerNode& n = model.node(e.node);
  for (ParamRole role : scored_roles(n, e.dim, weights_only)) {
    const Tensor<T>& t = model.param(e.node, role);
    ChannelAxis ax = channel_axis(n, role, e.dim);
    const T* grads = nullptr;
    if (with_grads) {
      if (!t.grad) throw ValueError("node '" + n.name + "': no gradients; run a backward pass first");
      grads = t.grad->data();
    }
    for (std::int64_t o = 0; o < ax.outer; ++o) {
      std::int64_t base = (o * ax.channels + c) * ax.inner;
      for (std::int64_t i = 0; i < ax.inner; ++i)
        fn(static_cast<double>(t.data[static_cast<std::size_t>(base + i)]),
           grads ? static_cast<double>(grads[static_cast<std::size_t>(base + i)]) : 0.0);
    }
  }
}

void check_scores(const ImportanceVector& v) {
  for (double s : v.scores)
    if (!std::isfinite(s) || s < 0) throw ValueError("importance scores must be finite and nonnegative");
}

}  // namespace

template <typename T>
T compute_ce_grads(ModelGraph<T>& model, const Tensor<T>& batch, const std::vector<int>& labels) {
  Tape<T> tape;
  auto tf = model.forward_tape(tape, batch, Mode::Eval);
  auto loss = tp::cross_entropy(tape, tf.logits, labels);
  model.backward(tape, tf, loss);
  return tape.value(loss).data[0];
}

template <typename T>
ImportanceVector l1_filter(const ModelGraph<T>& model, const DependencyGroup& group, int group_index) {
  const CouplingEntry* designated = nullptr;
  for (const CouplingEntry& e : group.entries)
    if (e.dim == CouplingDim::OutChannels && model.node(e.node).kind == LayerKind::Conv2d) {
      designated = &e;
      break;
    }
  if (!designated) throw ValueError("l1_filter: group has no conv out-channel entry");
  int width = depgraph::group_width(model, group);
  ImportanceVector v;
  v.group_index = group_index;
  v.method = Method::L1;
  v.scope = Scope::Local;
  v.scores.resize(static_cast<std::size_t>(width), 0.0);
  for (int c = 0; c < width; ++c) {
    double s = 0;
    visit_channel(model, *designated, c, /*weights_only=*/true, /*with_grads=*/false,
                  [&](double w, double) { s += std::abs(w); });
    v.scores[static_cast<std::size_t>(c)] = s;
  }
  check_scores(v);
  return v;
}

template <typename T>
ImportanceVector magnitude_l2(const ModelGraph<T>& model, const DependencyGroup& group, bool all_entries,
                              int group_index) {
  std::vector<const CouplingEntry*> entries;
  for (const CouplingEntry& e : group.entries) {
    if (!all_entries &&
        !(e.dim == CouplingDim::OutChannels && model.node(e.node).kind == LayerKind::Conv2d))
      continue;
    entries.push_back(&e);
  }
  if (entries.empty()) throw ValueError("magnitude_l2: no scorable entries in group");
  int width = depgraph::group_width(model, group);
  ImportanceVector v;
  v.group_index = group_index;
  v.method = Method::L2Global;
  v.scope = Scope::Global;
  v.scores.assign(static_cast<std::size_t>(width), 0.0);
  for (int c = 0; c < width; ++c) {
    double sum = 0;
    for (const CouplingEntry* e : entries) {
      double sq = 0;
      visit_channel(model, *e, c, /*weights_only=*/true, /*with_grads=*/false,
                    [&](double w, double) { sq += w * w; });
      sum += std::sqrt(sq);
    }
    v.scores[static_cast<std::size_t>(c)] = sum / static_cast<double>(entries.size());
  }
  check_scores(v);
  return v;
}

namespace {

template <typename T>
std::vector<double> taylor_from_grads(const ModelGraph<T>& model, const DependencyGroup& group) {
  int width = depgraph::group_width(model, group);
  std::vector<double> scores(static_cast<std::size_t>(width), 0.0);
  for (int c = 0; c < width; ++c) {
    double sum = 0;
    for (const CouplingEntry& e : group.entries) {
      double s = 0;
      visit_channel(model, e, c, /*weights_only=*/false, /*with_grads=*/true, [&](double w, double g) { s += w * g; });
      sum += std::abs(s);
    }
    scores[static_cast<std::size_t>(c)] = sum / static_cast<double>(group.entries.size());
  }
  return scores;
}

template <typename T>
void fisher_accumulate(const ModelGraph<T>& model, const DependencyGroup& group, std::vector<double>& acc) {
  int width = depgraph::group_width(model, group);
  for (int c = 0; c < width; ++c) {
    double s = 0;
    for (const CouplingEntry& e : group.entries)
      visit_channel(model, e, c, /*weights_only=*/false, /*with_grads=*/true, [&](double, double g) { s += g * g; });
    acc[static_cast<std::size_t>(c)] += s;
  }
}

void minmax_scale(std::vector<double>& scores) {
  auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  double min = *lo, max = *hi;
  if (max <= min) {
    std::fill(scores.begin(), scores.end(), 0.0);
    return;
  }
  for (double& s : scores) s = (s - min) / (max - min);
}

}  // namespace

template <typename T>
ImportanceVector taylor(ModelGraph<T>& model, const Tensor<T>& batch, const std::vector<int>& labels,
                        const DependencyGroup& group, int group_index) {
  if (labels.empty()) throw ValueError("taylor: missing labels");
  compute_ce_grads(model, batch, labels);
  ImportanceVector v;
  v.group_index = group_index;
  v.method = Method::Taylor;
  v.scope = Scope::Global;
  v.scores = taylor_from_grads(model, group);
  check_scores(v);
  return v;
}

template <typename T>
ImportanceVector hessian_diag(ModelGraph<T>& model, const std::vector<LabeledBatch<T>>& batches,
                              const DependencyGroup& group, int group_index) {
  if (batches.empty()) throw ValueError("hessian_diag: empty batch list");
  int width = depgraph::group_width(model, group);
  std::vector<double> acc(static_cast<std::size_t>(width), 0.0);
  for (const auto& [x, y] : batches) {
    compute_ce_grads(model, x, y);
    fisher_accumulate(model, group, acc);
  }
  for (double& s : acc) s /= static_cast<double>(batches.size());
  minmax_scale(acc);
  ImportanceVector v;
  v.group_index = group_index;
  v.method = Method::Hessian;
  v.scope = Scope::Global;
  v.scores = std::move(acc);
  check_scores(v);
  return v;
}

std::vector<std::vector<int>> rank_for_drop(const std::vector<ImportanceVector>& vectors, double ratio, Scope scope) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ValueError("ratio must lie in [0,1), got " + std::to_string(ratio));
  std::vector<std::vector<int>> drops(vectors.size());
  if (ratio == 0.0) return drops;

  if (scope == Scope::Local) {
    for (std::size_t vi = 0; vi < vectors.size(); ++vi) {
      const auto& scores = vectors[vi].scores;
      int width = static_cast<int>(scores.size());
      int k = static_cast<int>(std::floor(width * ratio));
      k = std::min(k, width - 1);
      if (k <= 0) continue;
      std::vector<int> order(scores.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
      });
      drops[vi].assign(order.begin(), order.begin() + k);
      std::sort(drops[vi].begin(), drops[vi].end());
    }
    return drops;
  }

  // Global: normalize each group by its mean score, pool, threshold at the
  // ratio quantile, then clamp so every group keeps at least one channel.
  struct Cand {
    double score;
    int group;
    int channel;
  };
  std::vector<Cand> pool;
  std::size_t total = 0;
  for (std::size_t vi = 0; vi < vectors.size(); ++vi) {
    const auto& scores = vectors[vi].scores;
    double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / std::max<std::size_t>(scores.size(), 1);
    for (std::size_t c = 0; c < scores.size(); ++c)
      pool.push_back({mean > 0 ? scores[c] / mean : 0.0, static_cast<int>(vi), static_cast<int>(c)});
    total += scores.size();
  }
  std::sort(pool.begin(), pool.end(), [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.group != b.group) return a.group < b.group;
    return a.channel < b.channel;
  });
  std::size_t k = static_cast<std::size_t>(std::floor(static_cast<double>(total) * ratio));
  std::vector<std::vector<Cand>> chosen(vectors.size());
  for (std::size_t i = 0; i < k && i < pool.size(); ++i)
    chosen[static_cast<std::size_t>(pool[i].group)].push_back(pool[i]);
  for (std::size_t vi = 0; vi < vectors.size(); ++vi) {
    auto& sel = chosen[vi];
    if (!sel.empty() && sel.size() >= vectors[vi].scores.size()) sel.pop_back();  // keep >= 1
    for (const Cand& c : sel) drops[vi].push_back(c.channel);
    std::sort(drops[vi].begin(), drops[vi].end());
  }
  return drops;
}

template <typename T>
std::vector<ImportanceVector> score_groups(ModelGraph<T>& model, const std::vector<DependencyGroup>& groups,
                                           const std::vector<std::size_t>& which, Method method,
                                           const std::vector<LabeledBatch<T>>& batches) {
  std::vector<ImportanceVector> out;
  out.reserve(which.size());
  switch (method) {
    case Method::L1:
      for (std::size_t gi : which) out.push_back(l1_filter(model, groups[gi], static_cast<int>(gi)));
      break;
    case Method::L2Global:
    case Method::Soft:
      for (std::size_t gi : which) out.push_back(magnitude_l2(model, groups[gi], true, static_cast<int>(gi)));
      break;
    case Method::Taylor: {
      if (batches.empty()) throw ValueError("taylor: missing labels");
      compute_ce_grads(model, batches.front().first, batches.front().second);
      for (std::size_t gi : which) {
        ImportanceVector v;
        v.group_index = static_cast<int>(gi);
        v.method = Method::Taylor;
        v.scope = Scope::Global;
        v.scores = taylor_from_grads(model, groups[gi]);
        check_scores(v);
        out.push_back(std::move(v));
      }
      break;
    }
    case Method::Hessian: {
      if (batches.empty()) throw ValueError("hessian_diag: empty batch list");
      std::vector<std::vector<double>> acc(which.size());
      for (std::size_t i = 0; i < which.size(); ++i)
        acc[i].assign(static_cast<std::size_t>(depgraph::group_width(model, groups[which[i]])), 0.0);
      for (const auto& [x, y] : batches) {
        compute_ce_grads(model, x, y);
        for (std::size_t i = 0; i < which.size(); ++i) fisher_accumulate(model, groups[which[i]], acc[i]);
      }
      for (std::size_t i = 0; i < which.size(); ++i) {
        for (double& s : acc[i]) s /= static_cast<double>(batches.size());
        minmax_scale(acc[i]);
        ImportanceVector v;
        v.group_index = static_cast<int>(which[i]);
        v.method = Method::Hessian;
        v.scope = Scope::Global;
        v.scores = std::move(acc[i]);
        check_scores(v);
        out.push_back(std::move(v));
      }
      break;
    }
  }
  return out;
}

#define ECNN_INSTANTIATE_IMPORTANCE(T)                                                                              \
  template T compute_ce_grads<T>(ModelGraph<T>&, const Tensor<T>&, const std::vector<int>&);                        \
  template ImportanceVector l1_filter<T>(const ModelGraph<T>&, const depgraph::DependencyGroup&, int);              \
  template ImportanceVector magnitude_l2<T>(const ModelGraph<T>&, const depgraph::DependencyGroup&, bool, int);     \
  template ImportanceVector taylor<T>(ModelGraph<T>&, const Tensor<T>&, const std::vector<int>&,                    \
                                      const depgraph::DependencyGroup&, int);                                       \
  template ImportanceVector hessian_diag<T>(ModelGraph<T>&, const std::vector<LabeledBatch<T>>&,                    \
                                            const depgraph::DependencyGroup&, int);                                 \
  template std::vector<ImportanceVector> score_groups<T>(ModelGraph<T>&, const std::vector<depgraph::DependencyGroup>&, \
                                                         const std::vector<std::size_t>&, Method,                   \
                                                         const std::vector<LabeledBatch<T>>&);

ECNN_INSTANTIATE_IMPORTANCE(float)
ECNN_INSTANTIATE_IMPORTANCE(double)

}  // namespace ecnn::importance
