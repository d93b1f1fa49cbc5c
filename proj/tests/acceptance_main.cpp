// Acceptance suite: runs every gate criterion at its pinned tolerance and
// prints one PASS/FAIL line each. Exit code = number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "ecnn/checkpoint.hpp"
#include "ecnn/elastic.hpp"
#include "ecnn/trainer.hpp"
#include "ecnn/zoo.hpp"
#include "support/fd_check.hpp"
#include "support/random_models.hpp"

using namespace ecnn;
using elastic::LevelStack;
using elastic::PipelineOptions;

namespace {

int g_failures = 0;

void criterion(int number, const std::string& name, const std::function<bool(std::string&)>& body) {
  std::string detail;
  auto t0 = std::chrono::steady_clock::now();
  bool ok = false;
  try {
    ok = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", number, name.c_str(), secs,
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

bool within(double value, double target, double rel, std::string& detail, const char* tag) {
  bool ok = std::abs(value - target) <= rel * target;
  if (!ok) detail += std::string(tag) + "=" + std::to_string(value) + " off " + std::to_string(target) + "; ";
  return ok;
}

std::vector<int> random_drop(Rng& rng, int width, double ratio) {
  int k = std::min(width - 1, static_cast<int>(std::floor(width * ratio)));
  std::vector<int> all(static_cast<std::size_t>(width));
  for (int i = 0; i < width; ++i) all[static_cast<std::size_t>(i)] = i;
  std::shuffle(all.begin(), all.end(), rng.engine());
  std::vector<int> drop(all.begin(), all.begin() + k);
  std::sort(drop.begin(), drop.end());
  return drop;
}

double mib(std::int64_t bytes) { return static_cast<double>(bytes) / (1024.0 * 1024.0); }

}  // namespace

int main() {
  // Criteria 1 + 2 share the zoo builds.
  {
    struct Target {
      const char* arch;
      double params_m, params_tol;
      double size_mb, size_tol;
    };
    const Target targets[] = {
        {"vgg16_bn_cifar10", 15.25, 0.01, 58.244, 0.05},
        {"resnet20_cifar10", 0.27, 0.02, 1.078, 0.05},
        {"resnet56_cifar10", 0.86, 0.02, 3.369, 0.05},
        {"alexnet_10class", 57.04, 0.01, 217.614, 0.05},
    };
    std::vector<std::pair<double, double>> measured;
    criterion(1, "zoo parameter counts match the reference baselines", [&](std::string& d) {
      bool ok = true;
      for (const Target& t : targets) {
        ModelGraph<float> m = build<float>(arch_spec(t.arch), 1);
        measured.emplace_back(static_cast<double>(m.count_params()) / 1e6, mib(m.model_size_bytes()));
      }
      for (std::size_t i = 0; i < 4; ++i)
        ok &= within(measured[i].first, targets[i].params_m, targets[i].params_tol, d, targets[i].arch);
      return ok;
    });
    criterion(2, "model sizes match under 4-byte storage", [&](std::string& d) {
      bool ok = true;
      for (std::size_t i = 0; i < 4; ++i)
        ok &= within(measured[i].second, targets[i].size_mb, targets[i].size_tol, d, targets[i].arch);
      return ok;
    });
  }

  criterion(3, "pruned parameter deltas equal the analytic per-channel costs (50 prunes, exact)",
            [](std::string& d) {
              int checked = 0;
              for (std::uint64_t seed = 1; checked < 50; ++seed) {
                ModelGraph<float> m = testsup::random_residual_model<float>(seed * 131);
                Rng rng(seed);
                auto groups = depgraph::build_groups(m);
                std::vector<std::vector<int>> drops(groups.size());
                bool any = false;
                for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                  if (!groups[gi].prunable || groups[gi].width < 2 || rng.randint(0, 2) == 0) continue;
                  drops[gi] = random_drop(rng, groups[gi].width, 0.1 + 0.6 * rng.uniform(0, 1));
                  any = any || !drops[gi].empty();
                }
                if (!any) continue;
                auto delta = depgraph::analytic_drop_delta(m, groups, drops);
                std::int64_t before = m.count_params();
                for (std::size_t gi = 0; gi < groups.size(); ++gi)
                  depgraph::apply_index_drop(m, groups[gi], drops[gi]);
                if (before - m.count_params() != delta.params) {
                  d = "mismatch at seed " + std::to_string(seed);
                  return false;
                }
                ++checked;
              }
              return true;
            });

  criterion(4, "conv flops follow m_j*k^2*m_{j-1}*w_j*h_j on 20 random shapes (exact)", [](std::string& d) {
    Rng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
      int cin = rng.randint(1, 8), cout = rng.randint(1, 8);
      int k = 1 + 2 * rng.randint(0, 2);
      int stride = rng.randint(1, 2), pad = rng.randint(0, k / 2);
      int hw = rng.randint(k + 2, 20);
      GraphBuilder<float> b({cin, hw, hw}, 2, rng.raw());
      int c = b.conv("c", -1, cin, cout, k, stride, pad, false);
      int fl = b.flatten("f", c);
      int hout = (hw + 2 * pad - k) / stride + 1;
      int fc = b.linear("fc", fl, cout * hout * hout, 2, false, hout * hout);
      ModelGraph<float> m = b.finish(fc, "probe");
      std::int64_t expect = static_cast<std::int64_t>(cout) * k * k * cin * hout * hout +
                            static_cast<std::int64_t>(2) * cout * hout * hout;
      if (elastic::cost_report(m).flops != expect) {
        d = "trial " + std::to_string(trial);
        return false;
      }
    }
    return true;
  });

  criterion(5, "analytic gradients match central finite differences (64-bit, rel err <= 1e-5)",
            [](std::string& d) {
              Rng rng(505);
              double worst = 0;
              auto rand_t = [&](Shape s, double lo = -1, double hi = 1) {
                Tensor<double> t(std::move(s));
                rng.fill_uniform(t, lo, hi);
                return t;
              };
              auto check = [&](testsup::FdProblem& p) {
                worst = std::max(worst, testsup::fd_check(p).max_rel_err);
              };
              for (int trial = 0; trial < 3; ++trial) {
                {  // conv2d with bias, strided + padded
                  testsup::FdProblem p;
                  int cin = rng.randint(1, 3), cout = rng.randint(1, 3), k = 1 + 2 * rng.randint(0, 1);
                  int hw = rng.randint(k + 1, 6), stride = rng.randint(1, 2);
                  p.inputs = {rand_t({2, cin, hw, hw}), rand_t({cout, cin, k, k}), rand_t({cout})};
                  int ho = (hw + 2 - k) / stride + 1;
                  Tensor<double> proj = rand_t({2, cout, ho, ho});
                  p.forward = [proj, stride](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
                    return tp::inner(t, tp::conv2d(t, in[0], in[1], in[2], stride, 1), proj);
                  };
                  check(p);
                }
                {  // linear
                  testsup::FdProblem p;
                  int fin = rng.randint(2, 8), fout = rng.randint(2, 6);
                  p.inputs = {rand_t({3, fin}), rand_t({fout, fin}), rand_t({fout})};
                  Tensor<double> proj = rand_t({3, fout});
                  p.forward = [proj](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
                    return tp::inner(t, tp::linear(t, in[0], in[1], in[2]), proj);
                  };
                  check(p);
                }
                {  // relu/maxpool/avgpool/add/flatten chain on kink-safe inputs
                  testsup::FdProblem p;
                  Tensor<double> a({2, 2, 4, 4});
                  std::vector<int> order(a.data.size());
                  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
                  std::shuffle(order.begin(), order.end(), rng.engine());
                  for (std::size_t i = 0; i < a.data.size(); ++i) {
                    double base = 0.01 * (order[i] - 32);
                    a.data[i] = base + (base >= 0 ? 0.005 : -0.005);
                  }
                  Tensor<double> b2 = a;
                  for (auto& v : b2.data) v *= 0.5;
                  p.inputs = {a, b2};
                  Tensor<double> proj = rand_t({2, 8});
                  p.forward = [proj](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
                    auto s = tp::add(t, in[0], in[1]);
                    auto f = tp::flatten(t, tp::avgpool2d(t, tp::maxpool2d(t, tp::relu(t, s), 2, 2), 1, 1));
                    return tp::inner(t, f, proj);
                  };
                  check(p);
                }
                for (bool training : {true, false}) {  // batchnorm both modes
                  testsup::FdProblem p;
                  int ch = rng.randint(1, 3);
                  p.inputs = {rand_t({3, ch, 3, 3}), rand_t({ch}, 0.5, 1.5), rand_t({ch})};
                  Tensor<double> proj = rand_t({3, ch, 3, 3});
                  Tensor<double> rm = rand_t({ch}, -0.3, 0.3), rv = rand_t({ch}, 0.5, 1.5);
                  p.forward = [proj, training, rm, rv](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
                    Tensor<double> mean, var;
                    if (training)
                      ops::batch_moments(t.value(in[0]), mean, var);
                    else {
                      mean = rm;
                      var = rv;
                    }
                    auto y = tp::batchnorm2d(t, in[0], in[1], in[2], std::move(mean), std::move(var), 1e-5, training);
                    return tp::inner(t, y, proj);
                  };
                  check(p);
                }
                {  // softmax cross-entropy
                  testsup::FdProblem p;
                  int classes = rng.randint(2, 6);
                  p.inputs = {rand_t({4, classes}, -2, 2)};
                  std::vector<int> labels;
                  for (int i = 0; i < 4; ++i) labels.push_back(rng.randint(0, classes - 1));
                  p.forward = [labels](Tape<double>& t, const std::vector<tp::Id<double>>& in) {
                    return tp::cross_entropy(t, in[0], labels);
                  };
                  check(p);
                }
              }
              char buf[48];
              std::snprintf(buf, sizeof(buf), "max rel err %.2e", worst);
              d = buf;
              return worst <= 1e-5;
            });

  criterion(6, "rebuild after hard_prune is bitwise identity (50 random arch/ratio/method trials)",
            [](std::string& d) {
              const importance::Method methods[] = {importance::Method::L1, importance::Method::L2Global,
                                                    importance::Method::Taylor, importance::Method::Hessian};
              int done = 0;
              for (std::uint64_t seed = 1; done < 50; ++seed) {
                ModelGraph<double> m = testsup::random_residual_model<double>(seed * 389);
                Rng rng(seed);
                double ratio = 0.1 * rng.randint(1, 7);
                importance::Method method = methods[seed % 4];

                auto groups = depgraph::build_groups(m);
                std::vector<std::size_t> targets;
                for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                  if (!groups[gi].prunable || groups[gi].width < 2) continue;
                  if (method == importance::Method::L1) {
                    bool conv = false;
                    for (const auto& e : groups[gi].entries)
                      if (e.dim == depgraph::CouplingDim::OutChannels &&
                          m.node(e.node).kind == LayerKind::Conv2d)
                        conv = true;
                    if (!conv) continue;
                  }
                  targets.push_back(gi);
                }
                if (targets.empty()) continue;
                Tensor<double> x({8, 3, 16, 16});
                rng.fill_uniform(x, -1, 1);
                std::vector<int> labels;
                for (int i = 0; i < 8; ++i) labels.push_back(rng.randint(0, 4));
                std::vector<importance::LabeledBatch<double>> batches;
                batches.emplace_back(std::move(x), std::move(labels));
                auto vectors = importance::score_groups(m, groups, targets, method, batches);
                auto drops = importance::rank_for_drop(vectors, ratio, importance::Scope::Local);
                std::vector<depgraph::DependencyGroup> sel;
                for (std::size_t i = 0; i < targets.size(); ++i) sel.push_back(groups[targets[i]]);
                auto [core, rec] = elastic::hard_prune(m, sel, drops);
                auto [full, mask] = elastic::rebuild(core, rec);
                if (!models_bits_equal(full, m)) {
                  d = "trial " + std::to_string(done) + " (seed " + std::to_string(seed) + ")";
                  return false;
                }
                ++done;
              }
              return true;
            });

  criterion(7, "nesting: masked fine-tuning keeps the core bitwise, capacity switch reproduces core logits",
            [](std::string& d) {
              auto data = trainer::make_synth_dataset<double>(512, 4, 11);
              ModelGraph<double> m = build<double>(arch_spec("tinynet"), 77);
              trainer::TrainConfig cfg;
              cfg.epochs = 3;
              cfg.patience = 5;
              cfg.seed = 21;
              trainer::fit(m, data, cfg);

              auto groups = depgraph::build_groups(m);
              auto vectors = importance::score_groups(m, groups,
                                                      [&] {
                                                        std::vector<std::size_t> t;
                                                        for (std::size_t gi = 0; gi < groups.size(); ++gi)
                                                          if (groups[gi].prunable) t.push_back(gi);
                                                        return t;
                                                      }(),
                                                      importance::Method::L2Global, {});
              auto drops = importance::rank_for_drop(vectors, 0.4, importance::Scope::Global);
              std::vector<depgraph::DependencyGroup> sel;
              for (const auto& v : vectors) sel.push_back(groups[static_cast<std::size_t>(v.group_index)]);
              auto [core, rec] = elastic::hard_prune(m, sel, drops);
              trainer::fit(core, data, cfg);

              auto [full, mask] = elastic::rebuild(core, rec);
              trainer::fit(full, data, cfg, &mask);
              if (!elastic::nested_core_equal(full, rec, core)) {
                d = "kept slices diverged from the core";
                return false;
              }
              LevelStack<double> stack;
              stack.levels = {full, core};
              stack.records = {rec};
              Tensor<double> x({4, 3, 16, 16});
              Rng rng(5);
              rng.fill_uniform(x, -1, 1);
              Tensor<double> a = elastic::switch_capacity(stack, 1).forward_eval(x);
              Tensor<double> b = core.forward_eval(x);
              for (std::size_t i = 0; i < a.data.size(); ++i)
                if (a.data[i] != b.data[i]) {
                  d = "capacity-switch logits differ";
                  return false;
                }
              return true;
            });

  criterion(8, "extract_core matches the soft-pruned model (exact in 64-bit, <=1e-6 in 32-bit)",
            [](std::string& d) {
              {
                ModelGraph<double> m = build<double>(arch_spec("tinynet"), 88);
                auto data = trainer::make_synth_dataset<double>(64, 4, 2);
                m.forward(data.images, Mode::Train);  // give the running stats history
                auto groups = depgraph::build_groups(m);
                Rng rng(6);
                std::vector<std::vector<int>> drops(groups.size());
                for (std::size_t gi = 0; gi < groups.size(); ++gi)
                  if (groups[gi].prunable && groups[gi].width > 2)
                    drops[gi] = random_drop(rng, groups[gi].width, 0.5);
                ModelGraph<double> soft = elastic::soft_prune(m, groups, drops);
                auto [compact, rec] = elastic::extract_core(soft, groups);
                for (int trial = 0; trial < 16; ++trial) {
                  Tensor<double> x({1, 3, 16, 16});
                  rng.fill_uniform(x, -1, 1);
                  Tensor<double> a = soft.forward_eval(x);
                  Tensor<double> b = compact.forward_eval(x);
                  for (std::size_t i = 0; i < a.data.size(); ++i)
                    if (a.data[i] != b.data[i]) {
                      d = "64-bit mismatch at trial " + std::to_string(trial);
                      return false;
                    }
                }
              }
              {
                ModelGraph<float> m = build<float>(arch_spec("tinynet"), 89);
                auto groups = depgraph::build_groups(m);
                Rng rng(7);
                std::vector<std::vector<int>> drops(groups.size());
                for (std::size_t gi = 0; gi < groups.size(); ++gi)
                  if (groups[gi].prunable && groups[gi].width > 2)
                    drops[gi] = random_drop(rng, groups[gi].width, 0.4);
                ModelGraph<float> soft = elastic::soft_prune(m, groups, drops);
                auto [compact, rec] = elastic::extract_core(soft, groups);
                Tensor<float> x({16, 3, 16, 16});
                rng.fill_uniform(x, -1, 1);
                double diff = max_abs_diff(soft.forward_eval(x), compact.forward_eval(x));
                if (diff > 1e-6) {
                  d = "32-bit max abs diff " + std::to_string(diff);
                  return false;
                }
              }
              return true;
            });

  criterion(9, "dependency fuzz: 100 randomized legal drops keep forwards shape-valid", [](std::string& d) {
    int runs = 0;
    for (std::uint64_t seed = 1; runs < 100; ++seed) {
      ModelGraph<float> m = testsup::random_residual_model<float>(seed * 977);
      Rng rng(seed);
      auto groups = depgraph::build_groups(m);
      std::vector<std::size_t> prunable;
      for (std::size_t gi = 0; gi < groups.size(); ++gi)
        if (groups[gi].prunable && groups[gi].width > 1) prunable.push_back(gi);
      if (prunable.empty()) continue;
      std::size_t pick = prunable[static_cast<std::size_t>(rng.randint(0, static_cast<int>(prunable.size()) - 1))];
      std::vector<int> drop = random_drop(rng, groups[pick].width, rng.uniform(0.1, 0.9));
      if (drop.empty()) drop = {0};
      depgraph::apply_index_drop(m, groups[pick], drop);
      m.validate();
      Tensor<float> x({2, 3, 16, 16});
      rng.fill_uniform(x, -1, 1);
      Tensor<float> logits = m.forward(x, Mode::Eval);
      if (!(logits.shape == Shape{2, 5}) || !logits.all_finite()) {
        d = "seed " + std::to_string(seed);
        return false;
      }
      ++runs;
    }
    return true;
  });

  criterion(10, "desk-scale elasticity demo: train, iterative prune, recover, rebuild monotonically",
            [](std::string& d) {
              auto data = trainer::make_synth_dataset<float>(2048, 4, 7);
              ModelGraph<float> m = build<float>(arch_spec("tinynet"), 42);
              trainer::TrainConfig cfg;
              cfg.epochs = 30;
              cfg.patience = 8;
              cfg.seed = 42;
              trainer::History h = trainer::fit(m, data, cfg);
              double best_train = 0;
              for (const auto& st : h) best_train = std::max(best_train, st.train_acc);
              if (best_train < 0.95) {
                d = "baseline train accuracy " + std::to_string(best_train);
                return false;
              }
              double base = trainer::evaluate(m, data);

              PipelineOptions opts;
              opts.steps = 3;
              opts.ratio = 0.2;
              opts.method = importance::Method::L2Global;
              opts.scope = importance::Scope::Global;
              LevelStack<float> stack = elastic::iterative_pipeline(m, opts);
              std::vector<double> pruned_acc(4);
              for (int lvl = 1; lvl <= 3; ++lvl) {
                ModelGraph<float> c = stack.levels[static_cast<std::size_t>(lvl)];
                pruned_acc[static_cast<std::size_t>(lvl)] = trainer::evaluate(c, data);
              }
              for (int lvl = 1; lvl <= 3; ++lvl)
                if (pruned_acc[static_cast<std::size_t>(lvl)] >= base - 0.1) {
                  d = "pruning did not measurably drop accuracy at level " + std::to_string(lvl);
                  return false;
                }

              trainer::TrainConfig ft = cfg;
              ft.epochs = 16;
              trainer::fit(stack.levels[3], data, ft);
              ModelGraph<float> core_copy = stack.levels[3];
              double core_acc = trainer::evaluate(core_copy, data);
              if (core_acc < base - 0.05) {
                d = "core recovered only to " + std::to_string(core_acc) + " vs baseline " + std::to_string(base);
                return false;
              }

              elastic::rebuild_levels<float>(stack, 3, [&](ModelGraph<float>& model, const elastic::FreezeMask& mask) {
                trainer::fit(model, data, ft, &mask);
              });
              double rebuilt[3];
              for (int lvl = 0; lvl <= 2; ++lvl) {
                ModelGraph<float> c = stack.levels[static_cast<std::size_t>(lvl)];
                rebuilt[lvl] = trainer::evaluate(c, data);
              }
              d = "base " + std::to_string(base) + ", core " + std::to_string(core_acc) + ", backward rows " +
                  std::to_string(rebuilt[2]) + " " + std::to_string(rebuilt[1]) + " " + std::to_string(rebuilt[0]);
              for (int lvl = 1; lvl <= 2; ++lvl)
                if (rebuilt[lvl] < pruned_acc[static_cast<std::size_t>(lvl)]) return false;
              if (core_acc < pruned_acc[3]) return false;
              return true;
            });

  criterion(11, "three 20% steps on a 64-wide group report widths 52/42/34", [](std::string& d) {
    GraphBuilder<float> b({3, 8, 8}, 4, 31);
    int c1 = b.conv("c1", -1, 3, 64, 3, 1, 1, false);
    int n1 = b.bn("bn1", c1, 64);
    int r1 = b.relu("r1", n1);
    int c2 = b.conv("c2", r1, 64, 8, 3, 1, 1, false);
    int fl = b.flatten("flatten", c2);
    int fc = b.linear("fc", fl, 8 * 8 * 8, 4, true, 64);
    ModelGraph<float> m = b.finish(fc, "wide64");
    PipelineOptions opts;
    opts.steps = 3;
    opts.ratio = 0.2;
    opts.scope = importance::Scope::Local;
    LevelStack<float> stack = elastic::iterative_pipeline(m, opts);
    std::vector<int> widths;
    for (const auto& level : stack.levels) widths.push_back(level.node(c1).out_channels);
    d = "widths";
    for (int w : widths) d += " " + std::to_string(w);
    return widths == std::vector<int>{64, 52, 42, 34};
  });

  criterion(12, "checkpoint round-trip is payload-byte-identical and rebuilds bitwise", [](std::string& d) {
    std::string p1 = (std::filesystem::temp_directory_path() / ("ecnn_acc12_a_" + std::to_string(::getpid()))).string();
    std::string p2 = (std::filesystem::temp_directory_path() / ("ecnn_acc12_b_" + std::to_string(::getpid()))).string();
    bool ok = true;
    {
      ModelGraph<double> m = testsup::random_residual_model<double>(4242);
      auto groups = depgraph::build_groups(m);
      Rng rng(12);
      std::vector<std::vector<int>> drops(groups.size());
      for (std::size_t gi = 0; gi < groups.size(); ++gi)
        if (groups[gi].prunable && groups[gi].width > 2) drops[gi] = random_drop(rng, groups[gi].width, 0.4);
      auto [core, rec] = elastic::hard_prune(m, groups, drops);
      LevelStack<double> stack;
      stack.levels = {m, core};
      stack.records = {rec};
      stack.current_level = 1;
      ckpt::save(p1, stack);
      LevelStack<double> loaded = ckpt::load<double>(p1);
      ckpt::save(p2, loaded);
      if (ckpt::payload_bytes(p1) != ckpt::payload_bytes(p2)) {
        d = "payload bytes differ after reload";
        ok = false;
      }
      if (ok) {
        auto [full, mask] = elastic::rebuild(loaded.levels[1], loaded.records[0]);
        if (!models_bits_equal(full, m)) {
          d = "rebuild from the reloaded stack is not bitwise";
          ok = false;
        }
      }
    }
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
    return ok;
  });

  std::printf("%d of 12 criteria passed\n", 12 - g_failures);
  return g_failures;
}
