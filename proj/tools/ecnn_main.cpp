// Command-line front end for the elastic CNN engine: train on the synthetic
// task, prune into nested levels, rebuild with frozen cores, switch capacity,
// evaluate, and report per-level costs. Single-file checkpoints carry the
// whole level stack so every command is self-contained.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ecnn/checkpoint.hpp"
#include "ecnn/elastic.hpp"
#include "ecnn/trainer.hpp"
#include "ecnn/zoo.hpp"

namespace {

using namespace ecnn;
using elastic::FreezeMask;
using elastic::LevelStack;

bool g_json = false;

trainer::Dataset<float> synth_data(const std::string& source, int samples, int classes, std::uint64_t seed) {
  if (source != "synth") throw ValueError("unknown data source '" + source + "'; only 'synth' is available");
  return trainer::make_synth_dataset<float>(samples, classes, seed);
}

void print_history(const trainer::History& h) {
  for (const auto& st : h) {
    if (g_json) {
      std::printf("{\"event\":\"epoch\",\"epoch\":%d,\"split\":\"train\",\"loss\":%.6f,\"accuracy\":%.6f,\"lr\":%.8f}\n",
                  st.epoch, st.train_loss, st.train_acc, st.lr);
      std::printf("{\"event\":\"epoch\",\"epoch\":%d,\"split\":\"val\",\"loss\":%.6f,\"accuracy\":%.6f,\"lr\":%.8f}\n",
                  st.epoch, st.val_loss, st.val_acc, st.lr);
    } else {
      std::printf("epoch %3d | train loss %.4f acc %.4f | val loss %.4f acc %.4f | lr %.2e\n", st.epoch,
                  st.train_loss, st.train_acc, st.val_loss, st.val_acc, st.lr);
    }
  }
}

void print_cost_table(const LevelStack<float>& stack) {
  if (!g_json) std::printf("%-6s %12s %14s %10s %s\n", "level", "params", "flops", "MB", "");
  std::vector<elastic::CostSummary> costs = elastic::level_costs(stack);
  for (std::size_t lvl = 0; lvl < stack.levels.size(); ++lvl) {
    const elastic::CostSummary& c = costs[lvl];
    double mb = static_cast<double>(c.bytes) / (1024.0 * 1024.0);
    const char* mark = static_cast<int>(lvl) == stack.current_level ? "<- current" : "";
    if (g_json)
      std::printf("{\"event\":\"level\",\"level\":%zu,\"params\":%lld,\"flops\":%lld,\"mb\":%.3f,\"current\":%s}\n",
                  lvl, static_cast<long long>(c.params), static_cast<long long>(c.flops), mb,
                  static_cast<int>(lvl) == stack.current_level ? "true" : "false");
    else
      std::printf("%-6zu %12lld %14lld %10.3f %s\n", lvl, static_cast<long long>(c.params),
                  static_cast<long long>(c.flops), mb, mark);
  }
}

struct TrainArgs {
  std::string arch = "tinynet";
  std::string data = "synth";
  std::string out;
  int epochs = 30;
  int batch = 32;
  int samples = 2048;
  std::uint64_t seed = 42;
  std::uint64_t data_seed = 7;
  double lr = 1e-3;
};

int cmd_train(const TrainArgs& a) {
  ArchSpec spec = arch_spec(a.arch);
  ModelGraph<float> model = build<float>(spec, a.seed);
  auto data = synth_data(a.data, a.samples, spec.num_classes, a.data_seed);
  trainer::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.lr_max = a.lr;
  cfg.lr_min = a.lr / 100.0;
  trainer::History h = trainer::fit(model, data, cfg);
  print_history(h);
  double acc = trainer::evaluate(model, data);
  if (g_json)
    std::printf("{\"event\":\"final\",\"accuracy\":%.6f,\"params\":%lld}\n", acc,
                static_cast<long long>(model.count_params()));
  else
    std::printf("final accuracy %.4f | params %lld\n", acc, static_cast<long long>(model.count_params()));
  LevelStack<float> stack;
  stack.levels.push_back(std::move(model));
  ckpt::save(a.out, stack);
  if (!g_json) std::printf("saved %s\n", a.out.c_str());
  return 0;
}

struct PruneArgs {
  std::string in, out;
  double ratio = 0.2;
  std::string method = "l2_global";
  std::string scope;
  std::string layers = "all";
  int steps = 1;
  bool finetune_each = false;
  int finetune_epochs = 8;
  int samples = 2048;
  std::uint64_t seed = 42;
  std::uint64_t data_seed = 7;
};

int cmd_prune(const PruneArgs& a) {
  LevelStack<float> stack = ckpt::load<float>(a.in);
  if (stack.current_level != stack.depth())
    throw ValueError("prune continues from the deepest level; switch to level " + std::to_string(stack.depth()) +
                     " first");
  ModelGraph<float>& base = stack.levels.back();

  elastic::PipelineOptions opts;
  opts.steps = a.steps;
  opts.ratio = a.ratio;
  opts.method = importance::method_from_name(a.method);
  opts.scope = a.scope.empty() ? importance::default_scope(opts.method) : importance::scope_from_name(a.scope);
  if (a.layers == "alternate")
    opts.alternate_layers = true;
  else if (a.layers != "all")
    throw ValueError("--layers must be 'alternate' or 'all'");
  opts.finetune_each_step = a.finetune_each;

  auto data = synth_data("synth", a.samples, base.num_classes, a.data_seed);
  std::vector<importance::LabeledBatch<float>> batches = trainer::take_batches(data, 4, 64);
  std::function<void(ModelGraph<float>&)> finetune;
  if (a.finetune_each) {
    trainer::TrainConfig cfg;
    cfg.epochs = a.finetune_epochs;
    cfg.seed = a.seed;
    finetune = [cfg, &data](ModelGraph<float>& m) { trainer::fit(m, data, cfg); };
  }
  LevelStack<float> result = elastic::iterative_pipeline(base, opts, batches, finetune);

  // splice the new levels onto the existing stack
  for (std::size_t i = 1; i < result.levels.size(); ++i) {
    stack.levels.push_back(std::move(result.levels[i]));
    stack.records.push_back(std::move(result.records[i - 1]));
    stack.records.back().step = static_cast<int>(stack.records.size());
  }
  stack.current_level = stack.depth();

  for (const auto& rec : stack.records) {
    if (g_json) {
      for (const auto& rg : rec.groups)
        std::printf("{\"event\":\"prune-group\",\"step\":%d,\"pre_width\":%d,\"dropped\":%zu}\n", rec.step,
                    rg.pre_width, rg.dropped_original.size());
    } else {
      std::printf("step %d:", rec.step);
      for (const auto& rg : rec.groups)
        std::printf(" %d->%d", rg.pre_width, rg.pre_width - static_cast<int>(rg.dropped_original.size()));
      std::printf("\n");
    }
  }
  print_cost_table(stack);
  ckpt::save(a.out, stack);
  if (!g_json) std::printf("saved %s\n", a.out.c_str());
  return 0;
}

struct RebuildArgs {
  std::string in, out;
  int levels = 1;
  int finetune_epochs = 8;
  bool check_nesting = false;
  int samples = 2048;
  std::uint64_t seed = 42;
  std::uint64_t data_seed = 7;
};

int cmd_rebuild(const RebuildArgs& a) {
  LevelStack<float> stack = ckpt::load<float>(a.in);
  if (a.levels > stack.current_level)
    throw ValueError("cannot rebuild " + std::to_string(a.levels) + " levels: only " +
                     std::to_string(stack.current_level) + " records above the current level");
  auto data = synth_data("synth", a.samples, stack.levels.front().num_classes, a.data_seed);
  ModelGraph<float> core = stack.levels[static_cast<std::size_t>(stack.current_level)];

  std::function<void(ModelGraph<float>&, const FreezeMask&)> finetune;
  if (a.finetune_epochs > 0) {
    trainer::TrainConfig cfg;
    cfg.epochs = a.finetune_epochs;
    cfg.seed = a.seed;
    finetune = [cfg, &data](ModelGraph<float>& m, const FreezeMask& mask) { trainer::fit(m, data, cfg, &mask); };
  }
  int core_level = stack.current_level;
  elastic::rebuild_levels(stack, a.levels, finetune);

  for (int lvl = core_level - 1; lvl >= stack.current_level; --lvl) {
    ModelGraph<float> copy = stack.levels[static_cast<std::size_t>(lvl)];
    double acc = trainer::evaluate(copy, data);
    if (g_json)
      std::printf("{\"event\":\"rebuilt\",\"level\":%d,\"params\":%lld,\"accuracy\":%.6f}\n", lvl,
                  static_cast<long long>(copy.count_params()), acc);
    else
      std::printf("rebuilt level %d | params %lld | accuracy %.4f\n", lvl,
                  static_cast<long long>(copy.count_params()), acc);
  }
  if (a.check_nesting) {
    bool ok = elastic::nested_core_equal(stack.levels[static_cast<std::size_t>(core_level - 1)],
                                         stack.records[static_cast<std::size_t>(core_level - 1)], core);
    std::printf("nesting check: %s\n", ok ? "PASS" : "FAIL");
    if (!ok) throw ShapeError("rebuilt model does not nest its core bitwise");
  }
  print_cost_table(stack);
  ckpt::save(a.out, stack);
  if (!g_json) std::printf("saved %s\n", a.out.c_str());
  return 0;
}

struct SwitchArgs {
  std::string in, out;
  int level = 0;
};

int cmd_switch(const SwitchArgs& a) {
  LevelStack<float> stack = ckpt::load<float>(a.in);
  elastic::switch_capacity(stack, a.level);  // validates the level
  stack.current_level = a.level;
  print_cost_table(stack);
  ckpt::save(a.out, stack);
  if (!g_json) std::printf("saved %s\n", a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string in;
  std::string data = "synth";
  int samples = 2048;
  std::uint64_t data_seed = 7;
};

int cmd_eval(const EvalArgs& a) {
  LevelStack<float> stack = ckpt::load<float>(a.in);
  ModelGraph<float> model = elastic::switch_capacity(stack, stack.current_level);
  auto data = synth_data(a.data, a.samples, model.num_classes, a.data_seed);
  double acc = trainer::evaluate(model, data);
  if (g_json)
    std::printf("{\"event\":\"eval\",\"level\":%d,\"accuracy\":%.6f}\n", stack.current_level, acc);
  else
    std::printf("level %d accuracy %.4f\n", stack.current_level, acc);
  return 0;
}

int cmd_report(const std::string& in) {
  LevelStack<float> stack = ckpt::load<float>(in);
  if (!g_json)
    std::printf("arch %s | levels %zu | current %d\n", stack.levels.front().arch_name.c_str(), stack.levels.size(),
                stack.current_level);
  print_cost_table(stack);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"elastic-cnn: structured prune-and-grow toolkit"};
  app.require_subcommand(1);
  app.add_flag("--json-lines", g_json, "emit metrics as line-delimited JSON records");

  TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "train an architecture on the synthetic dataset");
  t->add_option("--arch", train.arch, "architecture name");
  t->add_option("--data", train.data, "data source (synth)");
  t->add_option("--out", train.out, "output checkpoint")->required();
  t->add_option("--epochs", train.epochs);
  t->add_option("--batch", train.batch);
  t->add_option("--samples", train.samples);
  t->add_option("--seed", train.seed);
  t->add_option("--data-seed", train.data_seed);
  t->add_option("--lr", train.lr);

  PruneArgs prune;
  CLI::App* p = app.add_subcommand("prune", "structured pruning into nested capacity levels");
  p->add_option("--in", prune.in, "input checkpoint")->required();
  p->add_option("--out", prune.out, "output checkpoint")->required();
  p->add_option("--ratio", prune.ratio, "per-step channel drop ratio in [0,1)")->required();
  p->add_option("--method", prune.method, "l1|l2_global|taylor|hessian|soft");
  p->add_option("--scope", prune.scope, "local|global");
  p->add_option("--layers", prune.layers, "alternate|all");
  p->add_option("--steps", prune.steps);
  p->add_flag("--finetune-each", prune.finetune_each, "fine-tune after each step");
  p->add_option("--finetune-epochs", prune.finetune_epochs);
  p->add_option("--samples", prune.samples);
  p->add_option("--seed", prune.seed);
  p->add_option("--data-seed", prune.data_seed);

  RebuildArgs rebuild;
  CLI::App* r = app.add_subcommand("rebuild", "reinsert pruned channels level by level with masked fine-tuning");
  r->add_option("--in", rebuild.in)->required();
  r->add_option("--out", rebuild.out)->required();
  r->add_option("--levels", rebuild.levels, "how many records to rebuild")->required();
  r->add_option("--finetune-epochs", rebuild.finetune_epochs, "0 disables fine-tuning");
  r->add_flag("--check-nesting", rebuild.check_nesting, "verify the core stays bitwise intact");
  r->add_option("--samples", rebuild.samples);
  r->add_option("--seed", rebuild.seed);
  r->add_option("--data-seed", rebuild.data_seed);

  SwitchArgs sw;
  CLI::App* s = app.add_subcommand("switch", "materialize a capacity level as the current model");
  s->add_option("--in", sw.in)->required();
  s->add_option("--out", sw.out)->required();
  s->add_option("--level", sw.level)->required();

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "evaluate the current level");
  e->add_option("--in", ev.in)->required();
  e->add_option("--data", ev.data);
  e->add_option("--samples", ev.samples);
  e->add_option("--data-seed", ev.data_seed);

  std::string report_in;
  CLI::App* rep = app.add_subcommand("report", "per-level parameter/FLOP/size table");
  rep->add_option("--in", report_in)->required();

  try {
    app.parse(argc, argv);
    if (t->parsed()) return cmd_train(train);
    if (p->parsed()) return cmd_prune(prune);
    if (r->parsed()) return cmd_rebuild(rebuild);
    if (s->parsed()) return cmd_switch(sw);
    if (e->parsed()) return cmd_eval(ev);
    if (rep->parsed()) return cmd_report(report_in);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 2;
  } catch (const ecnn::DivergenceError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 4;
  } catch (const ecnn::ValueError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const ecnn::Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 3;
  }
  return 0;
}
