#include "ecnn/depgraph.hpp"

#include <algorithm>
#include <map>

namespace ecnn::depgraph {

const char* coupling_dim_name(CouplingDim d) {
  switch (d) {
    case CouplingDim::OutChannels: return "out";
    case CouplingDim::InChannels: return "in";
    case CouplingDim::BnChannels: return "bn";
  }
  return "?";
}

CouplingDim coupling_dim_from_name(const std::string& s) {
  for (CouplingDim d : {CouplingDim::OutChannels, CouplingDim::InChannels, CouplingDim::BnChannels})
    if (s == coupling_dim_name(d)) return d;
  throw ValueError("unknown coupling dim '" + s + "'");
}

namespace {

class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(static_cast<std::size_t>(n)) {
    for (int i = 0; i < n; ++i) parent_[static_cast<std::size_t>(i)] = i;
  }
  int find(int x) {
    while (parent_[static_cast<std::size_t>(x)] != x) {
      parent_[static_cast<std::size_t>(x)] = parent_[static_cast<std::size_t>(parent_[static_cast<std::size_t>(x)])];
      x = parent_[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }

 private:
  std::vector<int> parent_;
};

bool produces_channels(LayerKind k) { return k == LayerKind::Conv2d || k == LayerKind::Linear; }

}  // namespace

template <typename T>
Slot entry_slot(const ModelGraph<T>& model, const CouplingEntry& e) {
  (void)model;
  switch (e.dim) {
    case CouplingDim::OutChannels:
    case CouplingDim::BnChannels: return Slot{e.node, Dim::Out};
    case CouplingDim::InChannels: return Slot{e.node, Dim::In};
  }
  return Slot{};
}

template <typename T>
int group_width(const ModelGraph<T>& model, const DependencyGroup& group) {
  int width = -1;
  for (const CouplingEntry& e : group.entries) {
    const LayerNode& n = model.node(e.node);
    int w = 0;
    switch (e.dim) {
      case CouplingDim::OutChannels:
      case CouplingDim::BnChannels: w = n.out_channels; break;
      case CouplingDim::InChannels:
        w = n.kind == LayerKind::Linear ? n.in_channels / n.in_factor : n.in_channels;
        break;
    }
    if (width < 0) width = w;
    if (w != width)
      throw ShapeError("group width disagreement at node '" + n.name + "': " + std::to_string(w) + " vs " +
                       std::to_string(width));
  }
  if (width <= 0) throw ShapeError("group has no width");
  return width;
}

template <typename T>
std::vector<DependencyGroup> build_groups(const ModelGraph<T>& model, const std::set<int>& protected_nodes) {
  const auto& nodes = model.nodes();
  const int input_token = 0;
  auto token_of_node = [](int id) { return id + 1; };
  UnionFind uf(static_cast<int>(nodes.size()) + 1);

  // Phase 1: flow producer tokens forward, unifying across add nodes.
  std::vector<int> tok(nodes.size(), input_token);
  for (const LayerNode& n : nodes) {
    auto pred_tok = [&](int i) {
      return n.preds.empty() ? input_token : tok[static_cast<std::size_t>(n.preds[static_cast<std::size_t>(i)])];
    };
    switch (n.kind) {
      case LayerKind::Conv2d:
      case LayerKind::Linear:
        tok[static_cast<std::size_t>(n.id)] = token_of_node(n.id);
        break;
      case LayerKind::BatchNorm2d:
      case LayerKind::Relu:
      case LayerKind::MaxPool2d:
      case LayerKind::AvgPool2d:
      case LayerKind::Flatten:
        tok[static_cast<std::size_t>(n.id)] = pred_tok(0);
        break;
      case LayerKind::Add:
        uf.unite(pred_tok(0), pred_tok(1));
        tok[static_cast<std::size_t>(n.id)] = pred_tok(0);
        break;
      default:
        throw ValueError(std::string("unsupported node kind '") + kind_name(n.kind) + "' in a coupled path");
    }
  }

  // Phase 2: attach entries to unified classes.
  std::map<int, DependencyGroup> by_class;
  auto attach = [&](int token, CouplingEntry e) { by_class[uf.find(token)].entries.push_back(e); };
  for (const LayerNode& n : nodes) {
    auto pred_tok = [&](int i) {
      return n.preds.empty() ? input_token : tok[static_cast<std::size_t>(n.preds[static_cast<std::size_t>(i)])];
    };
    if (produces_channels(n.kind)) {
      attach(token_of_node(n.id), CouplingEntry{n.id, CouplingDim::OutChannels, 1});
      attach(pred_tok(0), CouplingEntry{n.id, CouplingDim::InChannels, n.kind == LayerKind::Linear ? n.in_factor : 1});
    } else if (n.kind == LayerKind::BatchNorm2d) {
      attach(pred_tok(0), CouplingEntry{n.id, CouplingDim::BnChannels, 1});
    }
  }

  // Phase 3: finalize widths and prunability. by_class is keyed by class
  // representative = smallest member token, so group order is deterministic.
  int input_class = uf.find(input_token);
  int classifier_class = uf.find(token_of_node(model.output()));
  std::vector<DependencyGroup> groups;
  for (auto& [cls, g] : by_class) {
    std::sort(g.entries.begin(), g.entries.end());
    g.width = group_width(model, g);
    g.prunable = cls != input_class && cls != classifier_class;
    for (const CouplingEntry& e : g.entries)
      if (e.dim == CouplingDim::OutChannels && protected_nodes.count(e.node)) g.prunable = false;
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<ParamRole> entry_roles(LayerKind kind, CouplingDim dim, bool has_bias) {
  (void)kind;
  switch (dim) {
    case CouplingDim::OutChannels:
      if (has_bias) return {ParamRole::Weight, ParamRole::Bias};
      return {ParamRole::Weight};
    case CouplingDim::InChannels:
      return {ParamRole::Weight};
    case CouplingDim::BnChannels:
      return {ParamRole::Gamma, ParamRole::Beta, ParamRole::RunningMean, ParamRole::RunningVar};
  }
  return {};
}

ChannelAxis channel_axis(const LayerNode& node, ParamRole role, CouplingDim dim) {
  ChannelAxis ax;
  if (role != ParamRole::Weight) {
    ax.channels = node.out_channels;
    return ax;
  }
  switch (node.kind) {
    case LayerKind::Conv2d:
      if (dim == CouplingDim::OutChannels) {
        ax.channels = node.out_channels;
        ax.inner = static_cast<std::int64_t>(node.in_channels) * node.kernel * node.kernel;
      } else {
        ax.outer = node.out_channels;
        ax.channels = node.in_channels;
        ax.inner = static_cast<std::int64_t>(node.kernel) * node.kernel;
      }
      break;
    case LayerKind::Linear:
      if (dim == CouplingDim::OutChannels) {
        ax.channels = node.out_channels;
        ax.inner = node.in_channels;
      } else {
        ax.outer = node.out_channels;
        ax.channels = node.in_channels / node.in_factor;
        ax.inner = node.in_factor;
      }
      break;
    default:
      throw ValueError(std::string("no weight channel axis for kind '") + kind_name(node.kind) + "'");
  }
  return ax;
}

template <typename T>
Tensor<T> select_channels(const Tensor<T>& t, const ChannelAxis& ax, const std::vector<int>& pick, Shape new_shape) {
  Tensor<T> out(std::move(new_shape));
  const std::int64_t kept = static_cast<std::int64_t>(pick.size());
  for (std::int64_t o = 0; o < ax.outer; ++o)
    for (std::int64_t c = 0; c < kept; ++c) {
      const T* src = t.ptr() + (o * ax.channels + pick[static_cast<std::size_t>(c)]) * ax.inner;
      T* dst = out.ptr() + (o * kept + c) * ax.inner;
      std::copy(src, src + ax.inner, dst);
    }
  return out;
}

template <typename T>
void scatter_channels(Tensor<T>& dst, const ChannelAxis& ax, const std::vector<int>& positions, const Tensor<T>& src) {
  const std::int64_t count = static_cast<std::int64_t>(positions.size());
  for (std::int64_t o = 0; o < ax.outer; ++o)
    for (std::int64_t c = 0; c < count; ++c) {
      const T* s = src.ptr() + (o * count + c) * ax.inner;
      T* d = dst.ptr() + (o * ax.channels + positions[static_cast<std::size_t>(c)]) * ax.inner;
      std::copy(s, s + ax.inner, d);
    }
}

namespace {

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

void check_drop(int width, const std::vector<int>& drop) {
  if (static_cast<int>(drop.size()) >= width)
    throw ValueError("cannot drop " + std::to_string(drop.size()) + " of " + std::to_string(width) + " channels");
  int prev = -1;
  for (int d : drop) {
    if (d < 0 || d >= width)
      throw ValueError("drop index " + std::to_string(d) + " out of range [0," + std::to_string(width) + ")");
    if (d <= prev) throw ValueError("drop indices must be sorted and duplicate-free");
    prev = d;
  }
}

}  // namespace

Shape resized_channel_shape(const LayerNode& node, ParamRole role, CouplingDim dim, int n_channels) {
  if (role != ParamRole::Weight) return {n_channels};
  if (node.kind == LayerKind::Conv2d) {
    if (dim == CouplingDim::OutChannels) return {n_channels, node.in_channels, node.kernel, node.kernel};
    return {node.out_channels, n_channels, node.kernel, node.kernel};
  }
  if (dim == CouplingDim::OutChannels) return {n_channels, node.in_channels};
  return {node.out_channels, n_channels * node.in_factor};
}

template <typename T>
void apply_index_drop(ModelGraph<T>& model, const DependencyGroup& group, const std::vector<int>& drop) {
  int width = group_width(model, group);
  check_drop(width, drop);
  if (drop.empty()) return;
  if (!group.prunable) throw ValueError("group is not prunable (protected or structurally fixed)");
  std::vector<int> keep = complement(width, drop);

  for (const CouplingEntry& e : group.entries) {
    LayerNode& n = model.node(e.node);
    for (ParamRole role : entry_roles(n.kind, e.dim, n.has_bias)) {
      ChannelAxis ax = channel_axis(n, role, e.dim);
      Tensor<T> sliced = select_channels(model.param(e.node, role), ax, keep,
                                         resized_channel_shape(n, role, e.dim, static_cast<int>(keep.size())));
      model.set_param(e.node, role, std::move(sliced));
    }
    Slot slot = entry_slot(model, e);
    std::vector<int>& org = model.origin(slot);
    std::vector<int> new_org;
    new_org.reserve(keep.size());
    for (int k : keep) new_org.push_back(org[static_cast<std::size_t>(k)]);
    org = std::move(new_org);
    switch (e.dim) {
      case CouplingDim::OutChannels:
        n.out_channels = static_cast<int>(keep.size());
        break;
      case CouplingDim::InChannels:
        n.in_channels = static_cast<int>(keep.size()) * (n.kind == LayerKind::Linear ? n.in_factor : 1);
        break;
      case CouplingDim::BnChannels:
        n.out_channels = n.in_channels = static_cast<int>(keep.size());
        break;
    }
  }
}

template <typename T>
CostDelta analytic_drop_delta(const ModelGraph<T>& model, const std::vector<DependencyGroup>& groups,
                              const std::vector<std::vector<int>>& drops) {
  if (groups.size() != drops.size())
    throw ValueError("analytic_drop_delta: " + std::to_string(drops.size()) + " drop sets for " +
                     std::to_string(groups.size()) + " groups");
  // Running extents make the cross terms exact when both dims of one tensor
  // are pruned in the same step.
  std::map<Slot, std::int64_t> ext;
  auto extent = [&](Slot s, std::int64_t fallback) {
    auto it = ext.find(s);
    return it == ext.end() ? fallback : it->second;
  };
  CostDelta delta;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const std::int64_t nd = static_cast<std::int64_t>(drops[gi].size());
    if (nd == 0) continue;
    for (const CouplingEntry& e : groups[gi].entries) {
      const LayerNode& n = model.node(e.node);
      Slot out_slot{e.node, Dim::Out}, in_slot{e.node, Dim::In};
      switch (e.dim) {
        case CouplingDim::OutChannels: {
          std::int64_t per;
          if (n.kind == LayerKind::Conv2d)
            per = extent(in_slot, n.in_channels) * n.kernel * n.kernel + (n.has_bias ? 1 : 0);
          else
            per = extent(in_slot, n.in_channels) + (n.has_bias ? 1 : 0);
          delta.params += nd * per;
          ext[out_slot] = extent(out_slot, n.out_channels) - nd;
          break;
        }
        case CouplingDim::InChannels: {
          std::int64_t per;
          if (n.kind == LayerKind::Conv2d)
            per = extent(out_slot, n.out_channels) * n.kernel * n.kernel;
          else
            per = extent(out_slot, n.out_channels) * e.factor;
          delta.params += nd * per;
          std::int64_t step = n.kind == LayerKind::Linear ? e.factor : 1;
          ext[in_slot] = extent(in_slot, n.in_channels) - nd * step;
          break;
        }
        case CouplingDim::BnChannels:
          delta.params += nd * 2;
          delta.buffers += nd * 2;
          ext[out_slot] = extent(out_slot, n.out_channels) - nd;
          break;
      }
    }
  }
  return delta;
}

#define ECNN_INSTANTIATE_DEPGRAPH(T)                                                                            \
  template Slot entry_slot<T>(const ModelGraph<T>&, const CouplingEntry&);                                      \
  template int group_width<T>(const ModelGraph<T>&, const DependencyGroup&);                                    \
  template std::vector<DependencyGroup> build_groups<T>(const ModelGraph<T>&, const std::set<int>&);            \
  template Tensor<T> select_channels<T>(const Tensor<T>&, const ChannelAxis&, const std::vector<int>&, Shape);  \
  template void scatter_channels<T>(Tensor<T>&, const ChannelAxis&, const std::vector<int>&, const Tensor<T>&); \
  template void apply_index_drop<T>(ModelGraph<T>&, const DependencyGroup&, const std::vector<int>&);           \
  template CostDelta analytic_drop_delta<T>(const ModelGraph<T>&, const std::vector<DependencyGroup>&,          \
                                            const std::vector<std::vector<int>>&);

ECNN_INSTANTIATE_DEPGRAPH(float)
ECNN_INSTANTIATE_DEPGRAPH(double)

}  // namespace ecnn::depgraph
