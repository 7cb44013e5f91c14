#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mdgfm/adapt.hpp"
#include "mdgfm/config.hpp"
#include "mdgfm/graph.hpp"
#include "mdgfm/pretrain.hpp"

namespace mdgfm {

enum class AttackMode { add, remove };
enum class AttackScope { sources, target, all };

struct AttackSpec {
  AttackMode mode = AttackMode::add;
  // Fraction of the undirected edge count.
  double ratio = 0.0;
  AttackScope scope = AttackScope::all;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const AttackSpec&) const = default;
};

AttackMode parse_attack_mode(std::string_view s);
AttackScope parse_attack_scope(std::string_view s);
std::string to_string(AttackMode m);
std::string to_string(AttackScope s);

// Removes or inserts floor(ratio * E) undirected edges uniformly at random.
// Insertion is capped at the number of available non-edges; the cap is
// reported through `warning`.
Graph attack_random(const Graph& g, const AttackSpec& spec, std::string* warning = nullptr);

enum class FixtureKind { sbm_homophilic, sbm_heterophilic };

FixtureKind parse_fixture_kind(std::string_view s);
std::string to_string(FixtureKind k);

struct FixtureSpec {
  FixtureKind kind = FixtureKind::sbm_homophilic;
  std::size_t n = 150;
  int classes = 3;
  double p_in = 0.2;
  double p_out = 0.02;
  Index d_raw = 60;
  double noise = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Stochastic block model with equal contiguous blocks. Features are the
// one-hot block indicator in the first C columns plus N(0, noise^2) on every
// column.
Graph make_fixture(const FixtureSpec& spec, std::string domain_id = "fixture");

struct DatasetRef {
  std::string domain_id;
  std::filesystem::path dir;
};

struct ExperimentConfig {
  std::vector<DatasetRef> sources;
  DatasetRef target;
  PretrainConfig pretrain;
  AdaptConfig adapt;
  int n_runs = 5;
  int n_resamples = 50;
  std::optional<AttackSpec> attack;
  std::filesystem::path out_dir = "out";
  std::uint64_t master_seed = 0;
  bool use_cache = true;

  void validate() const;
};

// Sections: [experiment] sources = id:dir, ... / target = id:dir / runs /
// resamples / seed / out / cache, [attack], [pretrain], [encoder], [gsl],
// [adapt]. Unknown keys are rejected.
ExperimentConfig read_experiment_config(const KeyValues& kv);

struct TaskRow {
  int run = 0;
  std::uint64_t seed = 0;
  int K = 0;
  std::size_t support_size = 0;
  std::size_t query_size = 0;
  double accuracy = 0.0;
};

struct ExperimentReport {
  std::vector<TaskRow> tasks;
  std::vector<PretrainLogRow> pretrain_log;
  double mean = 0.0;  // fraction
  double std = 0.0;   // sample standard deviation, fraction
  std::string display;
};

// Mean and sample standard deviation; display as "mean±std" in percent.
void summarize(ExperimentReport& report);

// Pretrain on `sources` and adapt to `target` over runs x resamples. Graphs
// are attacked according to cfg.attack before use. When `cache_dir` is set,
// checkpoints are reused across calls with identical upstream inputs.
ExperimentReport run_experiment(const std::vector<Graph>& sources, const Graph& target, const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& cache_dir = std::nullopt);

// Loads the datasets, runs, and writes tasks.csv, summary.csv, and
// pretrain_log.csv into cfg.out_dir.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// run_experiment with the given ablation variant, written to out_dir/<variant>.
ExperimentReport ablate(ExperimentConfig cfg, Variant variant);

// Key for the checkpoint cache: FNV-1a over the pretraining settings and the
// content of every source graph.
std::uint64_t upstream_hash(const std::vector<Graph>& sources, const PretrainConfig& cfg);

void write_tasks_csv(const ExperimentReport& r, const std::filesystem::path& path);
void write_summary_csv(const ExperimentReport& r, const std::filesystem::path& path);
void write_pretrain_log_csv(const std::vector<PretrainLogRow>& log, const std::filesystem::path& path);

}  // namespace mdgfm
