#include "ecnn/elastic.hpp"

#include <algorithm>
#include <cstdio>

namespace ecnn::elastic {

using depgraph::channel_axis;
using depgraph::ChannelAxis;
using depgraph::CouplingDim;
using depgraph::CouplingEntry;
using depgraph::DependencyGroup;
using depgraph::entry_roles;
using depgraph::entry_slot;
using depgraph::group_width;
using depgraph::resized_channel_shape;
using depgraph::scatter_channels;
using depgraph::select_channels;

bool FreezeMask::fully_frozen(const ParamKey& key) const {
  auto it = frozen.find(key);
  if (it == frozen.end()) return false;
  return std::all_of(it->second.begin(), it->second.end(), [](std::uint8_t b) { return b != 0; });
}

namespace {

void check_drop_sets(int width, const std::vector<int>& drop, bool prunable) {
  if (static_cast<int>(drop.size()) >= width)
    throw ValueError("cannot drop " + std::to_string(drop.size()) + " of " + std::to_string(width) + " channels");
  int prev = -1;
  for (int d : drop) {
    if (d < 0 || d >= width)
      throw ValueError("drop index " + std::to_string(d) + " out of range [0," + std::to_string(width) + ")");
    if (d <= prev) throw ValueError("drop indices must be sorted and duplicate-free");
    prev = d;
  }
  if (!drop.empty() && !prunable) throw ValueError("group is not prunable (protected or structurally fixed)");
}

template <typename T>
void validate_drops(const ModelGraph<T>& model, const std::vector<DependencyGroup>& groups,
                    const std::vector<std::vector<int>>& drops) {
  if (groups.size() != drops.size())
    throw ValueError(std::to_string(drops.size()) + " drop sets for " + std::to_string(groups.size()) + " groups");
  for (std::size_t i = 0; i < groups.size(); ++i)
    check_drop_sets(group_width(model, groups[i]), drops[i], groups[i].prunable);
}

std::vector<int> complement(int width, const std::vector<int>& drop) {
  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(width) - drop.size());
  std::size_t di = 0;
  for (int i = 0; i < width; ++i) {
    if (di < drop.size() && drop[di] == i) {
      ++di;
      continue;
    }
    keep.push_back(i);
  }
  return keep;
}

std::vector<int> pick(const std::vector<int>& origin, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(origin[static_cast<std::size_t>(i)]);
  return out;
}

/// Positions of `kept`/`dropped` originals inside the merged (pre-step)
/// ordering. Relies on origin maps being strictly increasing.
struct StepPositions {
  std::vector<int> merged;
  std::vector<int> kept_pos;
  std::vector<int> dropped_pos;
};

template <typename T>
StepPositions step_positions(const RecordGroup<T>& rg) {
  StepPositions sp;
  sp.merged.resize(rg.kept_original.size() + rg.dropped_original.size());
  std::merge(rg.kept_original.begin(), rg.kept_original.end(), rg.dropped_original.begin(), rg.dropped_original.end(),
             sp.merged.begin());
  for (std::size_t i = 1; i < sp.merged.size(); ++i)
    if (sp.merged[i] <= sp.merged[i - 1])
      throw ValueError("record has overlapping or unsorted original indices");
  if (static_cast<int>(sp.merged.size()) != rg.pre_width)
    throw ValueError("record widths inconsistent: kept " + std::to_string(rg.kept_original.size()) + " + dropped " +
                     std::to_string(rg.dropped_original.size()) + " != pre-step width " +
                     std::to_string(rg.pre_width));
  auto rank = [&](int v) {
    return static_cast<int>(std::lower_bound(sp.merged.begin(), sp.merged.end(), v) - sp.merged.begin());
  };
  for (int v : rg.kept_original) sp.kept_pos.push_back(rank(v));
  for (int v : rg.dropped_original) sp.dropped_pos.push_back(rank(v));
  return sp;
}

}  // namespace

template <typename T>
std::pair<ModelGraph<T>, PruneRecord<T>> hard_prune(const ModelGraph<T>& model,
                                                    const std::vector<DependencyGroup>& groups,
                                                    const std::vector<std::vector<int>>& drops, int step) {
  validate_drops(model, groups, drops);
  PruneRecord<T> rec;
  rec.step = step;
  rec.pre_checksum = model.registry_checksum();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (drops[gi].empty()) continue;
    const DependencyGroup& g = groups[gi];
    int width = group_width(model, g);
    RecordGroup<T> rg;
    rg.pre_width = width;
    const std::vector<int>& origin = model.origin(entry_slot(model, g.entries.front()));
    rg.dropped_original = pick(origin, drops[gi]);
    rg.kept_original = pick(origin, complement(width, drops[gi]));
    for (const CouplingEntry& e : g.entries) {
      RecordEntry<T> re;
      re.entry = e;
      const LayerNode& n = model.node(e.node);
      for (ParamRole role : entry_roles(n.kind, e.dim, n.has_bias)) {
        ChannelAxis ax = channel_axis(n, role, e.dim);
        re.slices.roles.push_back(role);
        re.slices.tensors.push_back(select_channels(
            model.param(e.node, role), ax, drops[gi],
            resized_channel_shape(n, role, e.dim, static_cast<int>(drops[gi].size()))));
      }
      rg.entries.push_back(std::move(re));
    }
    rec.groups.push_back(std::move(rg));
  }
  ModelGraph<T> core = model;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) depgraph::apply_index_drop(core, groups[gi], drops[gi]);
  rec.post_checksum = core.registry_checksum();
  return {std::move(core), std::move(rec)};
}

template <typename T>
ModelGraph<T> soft_prune(const ModelGraph<T>& model, const std::vector<DependencyGroup>& groups,
                         const std::vector<std::vector<int>>& drops) {
  validate_drops(model, groups, drops);
  ModelGraph<T> out = model;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (drops[gi].empty()) continue;
    for (const CouplingEntry& e : groups[gi].entries) {
      const LayerNode& n = out.node(e.node);
      if (e.dim == CouplingDim::OutChannels) {
        Tensor<T>& w = out.param(e.node, ParamRole::Weight);
        ChannelAxis ax = channel_axis(n, ParamRole::Weight, e.dim);
        for (int d : drops[gi])
          for (std::int64_t o = 0; o < ax.outer; ++o)
            std::fill_n(w.ptr() + (o * ax.channels + d) * ax.inner, ax.inner, T(0));
        if (n.has_bias) {
          Tensor<T>& b = out.param(e.node, ParamRole::Bias);
          for (int d : drops[gi]) b.data[static_cast<std::size_t>(d)] = T(0);
        }
      } else if (e.dim == CouplingDim::BnChannels) {
        for (int d : drops[gi]) {
          out.param(e.node, ParamRole::Gamma).data[static_cast<std::size_t>(d)] = T(0);
          out.param(e.node, ParamRole::Beta).data[static_cast<std::size_t>(d)] = T(0);
          out.param(e.node, ParamRole::RunningMean).data[static_cast<std::size_t>(d)] = T(0);
          out.param(e.node, ParamRole::RunningVar).data[static_cast<std::size_t>(d)] = T(1);
        }
      }
      // in-channel entries stay untouched: a zeroed producer feeds them zeros
    }
  }
  return out;
}

template <typename T>
std::pair<ModelGraph<T>, PruneRecord<T>> extract_core(const ModelGraph<T>& soft,
                                                      const std::vector<DependencyGroup>& groups, int step) {
  std::vector<std::vector<int>> detected(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const DependencyGroup& g = groups[gi];
    if (!g.prunable) continue;
    int width = group_width(soft, g);
    for (int c = 0; c < width; ++c) {
      bool zero = true;
      for (const CouplingEntry& e : g.entries) {
        if (!zero) break;
        const LayerNode& n = soft.node(e.node);
        if (e.dim == CouplingDim::OutChannels) {
          const Tensor<T>& w = soft.param(e.node, ParamRole::Weight);
          ChannelAxis ax = channel_axis(n, ParamRole::Weight, e.dim);
          for (std::int64_t o = 0; o < ax.outer && zero; ++o) {
            const T* p = w.ptr() + (o * ax.channels + c) * ax.inner;
            for (std::int64_t i = 0; i < ax.inner; ++i)
              if (p[i] != T(0)) {
                zero = false;
                break;
              }
          }
          if (zero && n.has_bias && soft.param(e.node, ParamRole::Bias).data[static_cast<std::size_t>(c)] != T(0))
            zero = false;
        } else if (e.dim == CouplingDim::BnChannels) {
          if (soft.param(e.node, ParamRole::Gamma).data[static_cast<std::size_t>(c)] != T(0) ||
              soft.param(e.node, ParamRole::Beta).data[static_cast<std::size_t>(c)] != T(0))
            zero = false;
        }
      }
      if (!zero) continue;
      detected[gi].push_back(c);
      for (const CouplingEntry& e : g.entries) {
        if (e.dim != CouplingDim::BnChannels) continue;
        if (soft.param(e.node, ParamRole::RunningVar).data[static_cast<std::size_t>(c)] != T(1) ||
            soft.param(e.node, ParamRole::RunningMean).data[static_cast<std::size_t>(c)] != T(0)) {
          std::fprintf(stderr,
                       "warning: channel %d of node '%s' is all-zero but its running stats are not at reset; "
                       "treating it as pruned\n",
                       c, soft.node(e.node).name.c_str());
          break;
        }
      }
    }
  }
  return hard_prune(soft, groups, detected, step);
}

template <typename T>
std::pair<ModelGraph<T>, FreezeMask> rebuild(const ModelGraph<T>& core, const PruneRecord<T>& record) {
  // Verify the record matches this core before touching anything.
  std::vector<StepPositions> positions;
  positions.reserve(record.groups.size());
  for (const RecordGroup<T>& rg : record.groups) {
    positions.push_back(step_positions(rg));
    for (const RecordEntry<T>& re : rg.entries) {
      const std::vector<int>& org = core.origin(entry_slot(core, re.entry));
      if (org != rg.kept_original)
        throw ValueError("record/core mismatch at node '" + core.node(re.entry.node).name +
                         "': kept original indices differ");
    }
  }

  ModelGraph<T> full = core;

  // Phase 1: grow every pruned dim back to its pre-step width, core values at
  // kept positions, zeros elsewhere.
  for (std::size_t gi = 0; gi < record.groups.size(); ++gi) {
    const RecordGroup<T>& rg = record.groups[gi];
    const StepPositions& sp = positions[gi];
    for (const RecordEntry<T>& re : rg.entries) {
      LayerNode& n = full.node(re.entry.node);
      std::vector<ParamRole> roles = entry_roles(n.kind, re.entry.dim, n.has_bias);
      std::vector<Tensor<T>> old;
      old.reserve(roles.size());
      for (ParamRole role : roles) old.push_back(std::move(full.param(re.entry.node, role)));
      switch (re.entry.dim) {
        case CouplingDim::OutChannels:
          n.out_channels = rg.pre_width;
          break;
        case CouplingDim::InChannels:
          n.in_channels = rg.pre_width * (n.kind == LayerKind::Linear ? n.in_factor : 1);
          break;
        case CouplingDim::BnChannels:
          n.out_channels = n.in_channels = rg.pre_width;
          break;
      }
      for (std::size_t ri = 0; ri < roles.size(); ++ri) {
        Tensor<T> grown(resized_channel_shape(n, roles[ri], re.entry.dim, rg.pre_width));
        ChannelAxis ax = channel_axis(n, roles[ri], re.entry.dim);
        scatter_channels(grown, ax, sp.kept_pos, old[ri]);
        full.set_param(re.entry.node, roles[ri], std::move(grown));
      }
      full.origin(entry_slot(full, re.entry)) = sp.merged;
    }
  }

  // Phase 2: reinsert the saved pre-prune slices at their original positions.
  // Every affected dim is back at pre-step extents, so slices fit exactly.
  for (std::size_t gi = 0; gi < record.groups.size(); ++gi) {
    const RecordGroup<T>& rg = record.groups[gi];
    const StepPositions& sp = positions[gi];
    for (const RecordEntry<T>& re : rg.entries) {
      const LayerNode& n = full.node(re.entry.node);
      for (std::size_t ri = 0; ri < re.slices.roles.size(); ++ri) {
        ChannelAxis ax = channel_axis(n, re.slices.roles[ri], re.entry.dim);
        scatter_channels(full.param(re.entry.node, re.slices.roles[ri]), ax, sp.dropped_pos, re.slices.tensors[ri]);
      }
    }
  }

  // Freeze everything that came from the core; reinserted channels train.
  FreezeMask mask;
  for (const auto& [key, t] : full.registry())
    if (!role_is_buffer(key.role))
      mask.frozen[key].assign(t.data.size(), 1);
  for (const LayerNode& n : full.nodes())
    if (n.kind == LayerKind::BatchNorm2d)
      mask.bn_stats[n.id].assign(static_cast<std::size_t>(n.out_channels), 1);
  for (std::size_t gi = 0; gi < record.groups.size(); ++gi) {
    const RecordGroup<T>& rg = record.groups[gi];
    const StepPositions& sp = positions[gi];
    for (const RecordEntry<T>& re : rg.entries) {
      const LayerNode& n = full.node(re.entry.node);
      for (ParamRole role : entry_roles(n.kind, re.entry.dim, n.has_bias)) {
        if (role_is_buffer(role)) continue;
        ChannelAxis ax = channel_axis(n, role, re.entry.dim);
        auto& m = mask.frozen[ParamKey{re.entry.node, role}];
        for (int d : sp.dropped_pos)
          for (std::int64_t o = 0; o < ax.outer; ++o)
            std::fill_n(m.begin() + (o * ax.channels + d) * ax.inner, ax.inner, std::uint8_t(0));
      }
      if (re.entry.dim == CouplingDim::BnChannels)
        for (int d : sp.dropped_pos) mask.bn_stats[re.entry.node][static_cast<std::size_t>(d)] = 0;
    }
  }
  full.validate();
  return {std::move(full), std::move(mask)};
}

template <typename T>
bool nested_core_equal(const ModelGraph<T>& full, const PruneRecord<T>& record, const ModelGraph<T>& core) {
  std::vector<DependencyGroup> groups;
  std::vector<std::vector<int>> drops;
  for (const RecordGroup<T>& rg : record.groups) {
    StepPositions sp = step_positions(rg);
    DependencyGroup g;
    g.width = rg.pre_width;
    g.prunable = true;
    for (const RecordEntry<T>& re : rg.entries) {
      g.entries.push_back(re.entry);
      if (full.origin(entry_slot(full, re.entry)) != sp.merged) return false;
    }
    groups.push_back(std::move(g));
    drops.push_back(sp.dropped_pos);
  }
  ModelGraph<T> sliced = hard_prune(full, groups, drops, record.step).first;
  return models_bits_equal(sliced, core);
}

template <typename T>
LevelStack<T> iterative_pipeline(const ModelGraph<T>& model, const PipelineOptions& opts,
                                 const std::vector<importance::LabeledBatch<T>>& batches,
                                 const std::function<void(ModelGraph<T>&)>& finetune) {
  if (opts.steps < 1) throw ValueError("pipeline needs at least one step");
  if (!(opts.ratio >= 0.0 && opts.ratio < 1.0))
    throw ValueError("ratio must lie in [0,1), got " + std::to_string(opts.ratio));
  LevelStack<T> stack;
  stack.levels.push_back(model);
  for (int step = 1; step <= opts.steps; ++step) {
    ModelGraph<T>& cur = stack.levels.back();
    std::vector<DependencyGroup> groups = depgraph::build_groups(cur, opts.protected_nodes);
    std::vector<std::size_t> targets;
    int prunable_seen = 0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      if (!groups[gi].prunable) continue;
      int ordinal = prunable_seen++;
      if (opts.alternate_layers && ordinal % 2 != 0) continue;
      if (opts.method == importance::Method::L1) {
        bool has_conv_out = false;
        for (const CouplingEntry& e : groups[gi].entries)
          if (e.dim == CouplingDim::OutChannels && cur.node(e.node).kind == LayerKind::Conv2d) has_conv_out = true;
        if (!has_conv_out) continue;  // l1 targets conv layers only
      }
      targets.push_back(gi);
    }
    if (targets.empty()) throw ValueError("no prunable groups selected (everything protected?)");
    std::vector<importance::ImportanceVector> vectors =
        importance::score_groups(cur, groups, targets, opts.method, batches);
    std::vector<std::vector<int>> target_drops = importance::rank_for_drop(vectors, opts.ratio, opts.scope);

    std::vector<DependencyGroup> sel_groups;
    std::vector<std::vector<int>> sel_drops;
    bool any = false;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      any = any || !target_drops[i].empty();
      sel_groups.push_back(groups[targets[i]]);
      sel_drops.push_back(std::move(target_drops[i]));
    }
    if (!any) continue;  // ratio rounded to zero drops: a no-op step adds no level
    ModelGraph<T> core;
    PruneRecord<T> rec;
    if (opts.method == importance::Method::Soft) {
      ModelGraph<T> softened = soft_prune(cur, sel_groups, sel_drops);
      std::tie(core, rec) = extract_core(softened, sel_groups, step);
    } else {
      std::tie(core, rec) = hard_prune(cur, sel_groups, sel_drops, step);
    }
    if (finetune && opts.finetune_each_step) finetune(core);
    stack.records.push_back(std::move(rec));
    stack.levels.push_back(std::move(core));
  }
  stack.current_level = opts.steps;
  if (finetune && !opts.finetune_each_step) finetune(stack.levels.back());
  return stack;
}

template <typename T>
void rebuild_levels(LevelStack<T>& stack, int k, const std::function<void(ModelGraph<T>&, const FreezeMask&)>& finetune) {
  if (k < 0 || k > stack.current_level)
    throw ValueError("cannot rebuild " + std::to_string(k) + " levels from level " +
                     std::to_string(stack.current_level));
  for (int i = 0; i < k; ++i) {
    int lvl = stack.current_level;
    auto [full, mask] = rebuild(stack.levels[static_cast<std::size_t>(lvl)],
                                stack.records[static_cast<std::size_t>(lvl - 1)]);
    if (finetune) finetune(full, mask);
    stack.levels[static_cast<std::size_t>(lvl - 1)] = std::move(full);
    stack.current_level = lvl - 1;
  }
}

template <typename T>
const ModelGraph<T>& switch_capacity(const LevelStack<T>& stack, int level) {
  if (level < 0 || level >= static_cast<int>(stack.levels.size()))
    throw ValueError("level " + std::to_string(level) + " is not materialized (stack holds 0.." +
                     std::to_string(stack.levels.size() - 1) + ")");
  return stack.levels[static_cast<std::size_t>(level)];
}

template <typename T>
CostSummary cost_report(const ModelGraph<T>& model) {
  CostSummary s;
  if (model.nodes().empty()) return s;
  s.params = model.count_params();
  s.bytes = model.model_size_bytes();
  std::vector<Shape> shapes = model.infer_shapes();
  for (const LayerNode& n : model.nodes()) {
    if (n.kind == LayerKind::Conv2d) {
      const Shape& out = shapes[static_cast<std::size_t>(n.id)];
      s.flops += static_cast<std::int64_t>(n.out_channels) * n.kernel * n.kernel * n.in_channels * out[1] * out[2];
    } else if (n.kind == LayerKind::Linear) {
      s.flops += static_cast<std::int64_t>(n.out_channels) * n.in_channels;
    }
  }
  return s;
}

template <typename T>
std::vector<CostSummary> level_costs(const LevelStack<T>& stack) {
  std::vector<CostSummary> out;
  out.reserve(stack.levels.size());
  for (const auto& level : stack.levels) out.push_back(cost_report(level));
  return out;
}

#define ECNN_INSTANTIATE_ELASTIC(T)                                                                               \
  template std::pair<ModelGraph<T>, PruneRecord<T>> hard_prune<T>(                                                \
      const ModelGraph<T>&, const std::vector<depgraph::DependencyGroup>&, const std::vector<std::vector<int>>&,  \
      int);                                                                                                       \
  template ModelGraph<T> soft_prune<T>(const ModelGraph<T>&, const std::vector<depgraph::DependencyGroup>&,       \
                                       const std::vector<std::vector<int>>&);                                     \
  template std::pair<ModelGraph<T>, PruneRecord<T>> extract_core<T>(const ModelGraph<T>&,                         \
                                                                    const std::vector<depgraph::DependencyGroup>&, \
                                                                    int);                                         \
  template std::pair<ModelGraph<T>, FreezeMask> rebuild<T>(const ModelGraph<T>&, const PruneRecord<T>&);          \
  template bool nested_core_equal<T>(const ModelGraph<T>&, const PruneRecord<T>&, const ModelGraph<T>&);          \
  template LevelStack<T> iterative_pipeline<T>(const ModelGraph<T>&, const PipelineOptions&,                      \
                                               const std::vector<importance::LabeledBatch<T>>&,                   \
                                               const std::function<void(ModelGraph<T>&)>&);                       \
  template void rebuild_levels<T>(LevelStack<T>&, int,                                                            \
                                  const std::function<void(ModelGraph<T>&, const FreezeMask&)>&);                 \
  template const ModelGraph<T>& switch_capacity<T>(const LevelStack<T>&, int);                                    \
  template CostSummary cost_report<T>(const ModelGraph<T>&);                                                      \
  template std::vector<CostSummary> level_costs<T>(const LevelStack<T>&);

ECNN_INSTANTIATE_ELASTIC(float)
ECNN_INSTANTIATE_ELASTIC(double)

}  // namespace ecnn::elastic
