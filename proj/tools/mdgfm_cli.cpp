// mdgfm: multi-domain graph pretraining and few-shot transfer.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mdgfm/error.hpp"
#include "mdgfm/harness.hpp"
#include "mdgfm/random.hpp"

namespace fs = std::filesystem;
using namespace mdgfm;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool needs_config) {
  auto* opt = app->add_option("--config", c.config, "INI configuration file");
  if (needs_config) opt->required();
  app->add_option("--set", c.overrides, "Override a config key (section.key=value)");
  app->add_option("--seed", c.seed, "Master seed");
  app->add_option("--out", c.out, "Output directory");
}

KeyValues load_config(const Common& c) {
  KeyValues kv = c.config.empty() ? KeyValues{} : load_ini(c.config);
  for (const auto& o : c.overrides) apply_override(kv, o);
  if (c.seed) kv["experiment.seed"] = std::to_string(*c.seed);
  if (!c.out.empty()) kv["experiment.out"] = c.out;
  return kv;
}

std::vector<Graph> load_sources(const ExperimentConfig& cfg) {
  std::vector<Graph> out;
  for (const auto& s : cfg.sources) out.push_back(load_dataset_dir(s.dir, s.domain_id));
  return out;
}

void print_summary(const ExperimentReport& r, const fs::path& out) {
  std::cout << "accuracy " << r.display << " over " << r.tasks.size() << " tasks\n";
  std::cout << "reports written to " << out.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain graph pretraining and few-shot transfer"};
  app.require_subcommand(1);

  std::vector<std::string> stats_dirs;
  std::string stats_out;
  auto* stats = app.add_subcommand("stats", "Print dataset statistics as CSV");
  stats->add_option("datasets", stats_dirs, "Dataset directories")->required();
  stats->add_option("--out", stats_out, "Write the CSV to this file");

  FixtureSpec fx;
  std::string fx_kind = "sbm_homophilic";
  std::string fx_out;
  auto* fixture = app.add_subcommand("fixture", "Generate a stochastic block model dataset");
  fixture->add_option("--kind", fx_kind, "sbm_homophilic or sbm_heterophilic");
  fixture->add_option("--n", fx.n, "Nodes");
  fixture->add_option("--classes", fx.classes, "Blocks");
  fixture->add_option("--p-in", fx.p_in, "Within-block edge probability");
  fixture->add_option("--p-out", fx.p_out, "Between-block edge probability");
  fixture->add_option("--d-raw", fx.d_raw, "Feature width");
  fixture->add_option("--noise", fx.noise, "Feature noise scale");
  fixture->add_option("--seed", fx.seed, "Seed");
  fixture->add_option("--out", fx_out, "Output dataset directory")->required();

  Common pre_opts;
  auto* pre = app.add_subcommand("pretrain", "Pretrain on the configured source datasets");
  add_common(pre, pre_opts, true);

  Common adapt_opts;
  std::string checkpoint_path;
  auto* adapt = app.add_subcommand("adapt", "Few-shot adaptation of a checkpoint to the configured target");
  add_common(adapt, adapt_opts, true);
  adapt->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();

  Common run_opts;
  auto* run = app.add_subcommand("run", "Pretrain, adapt, and evaluate");
  add_common(run, run_opts, true);

  std::string atk_dataset, atk_out, atk_mode = "add";
  AttackSpec atk;
  auto* attack = app.add_subcommand("attack", "Randomly add or delete edges of a dataset");
  attack->add_option("dataset", atk_dataset, "Dataset directory")->required();
  attack->add_option("--mode", atk_mode, "add or delete");
  attack->add_option("--ratio", atk.ratio, "Fraction of undirected edges")->required();
  attack->add_option("--seed", atk.seed, "Seed");
  attack->add_option("--out", atk_out, "Output dataset directory")->required();

  Common abl_opts;
  std::vector<std::string> variants;
  auto* abl = app.add_subcommand("ablate", "Run ablation variants");
  add_common(abl, abl_opts, true);
  abl->add_option("--variant", variants, "full, wo_refinedadj, wo_sumtoken, wo_topology, wo_balance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*stats) {
      std::ofstream file;
      if (!stats_out.empty()) {
        file.open(stats_out);
        if (!file) throw DataError("cannot write " + stats_out);
      }
      std::ostream& out = stats_out.empty() ? std::cout : file;
      out << stats_csv_header() << "\n";
      for (const auto& dir : stats_dirs) {
        const fs::path p(dir);
        const std::string id = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
        out << stats_csv_row(dataset_stats(load_dataset_dir(p, id))) << "\n";
      }
    } else if (*fixture) {
      fx.kind = parse_fixture_kind(fx_kind);
      const Graph g = make_fixture(fx, fs::path(fx_out).filename().string());
      save_dataset_dir(g, fx_out);
      std::cout << stats_csv_header() << "\n" << stats_csv_row(dataset_stats(g)) << "\n";
    } else if (*pre) {
      const ExperimentConfig cfg = read_experiment_config(load_config(pre_opts));
      PretrainConfig pcfg = cfg.pretrain;
      pcfg.seed = cfg.master_seed;
      std::vector<PretrainLogRow> log;
      const Checkpoint cp = pretrain(load_sources(cfg), pcfg, &log);
      fs::create_directories(cfg.out_dir);
      save_checkpoint(cp, cfg.out_dir / "checkpoint.bin");
      write_pretrain_log_csv(log, cfg.out_dir / "pretrain_log.csv");
      std::cout << "checkpoint written to " << (cfg.out_dir / "checkpoint.bin").string() << "\n";
    } else if (*adapt) {
      const ExperimentConfig cfg = read_experiment_config(load_config(adapt_opts));
      const Checkpoint cp = load_checkpoint(checkpoint_path);
      const Graph target = load_dataset_dir(cfg.target.dir, cfg.target.domain_id);
      if (!target.labels) throw DataError("target dataset has no labels");
      const TargetView view = prepare_target(target, cp);
      ExperimentReport report;
      for (int t = 0; t < cfg.n_resamples; ++t) {
        const std::uint64_t seed = derive_seed(cfg.master_seed, {11, static_cast<std::uint64_t>(t)});
        const FewShotTask task = sample_kshot(*target.labels, cfg.adapt.shots, seed);
        const TuneResult res = tune(view, *target.labels, cp, task, cfg.adapt);
        report.tasks.push_back({0, seed, task.K, task.support_size(), task.query.size(), res.accuracy});
      }
      summarize(report);
      fs::create_directories(cfg.out_dir);
      write_tasks_csv(report, cfg.out_dir / "tasks.csv");
      write_summary_csv(report, cfg.out_dir / "summary.csv");
      print_summary(report, cfg.out_dir);
    } else if (*run) {
      const ExperimentConfig cfg = read_experiment_config(load_config(run_opts));
      print_summary(run_experiment(cfg), cfg.out_dir);
    } else if (*attack) {
      atk.mode = parse_attack_mode(atk_mode);
      const Graph g = load_dataset_dir(atk_dataset, fs::path(atk_dataset).filename().string());
      std::string warning;
      const Graph out = attack_random(g, atk, &warning);
      if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
      save_dataset_dir(out, atk_out);
      std::cout << "edges " << g.num_undirected_edges() << " -> " << out.num_undirected_edges() << "\n";
    } else if (*abl) {
      const ExperimentConfig cfg = read_experiment_config(load_config(abl_opts));
      if (variants.empty()) variants = {"full", "wo_refinedadj", "wo_sumtoken", "wo_topology", "wo_balance"};
      for (const auto& v : variants) {
        const ExperimentReport r = ablate(cfg, parse_variant(v));
        std::cout << v << "," << r.display << "\n";
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
