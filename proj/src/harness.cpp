#include "mdgfm/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <unordered_set>

#include "mdgfm/error.hpp"
#include "mdgfm/random.hpp"

namespace mdgfm {

AttackMode parse_attack_mode(std::string_view s) {
  if (s == "add") return AttackMode::add;
  if (s == "delete" || s == "remove") return AttackMode::remove;
  throw ConfigError("unknown attack mode '" + std::string(s) + "'");
}

AttackScope parse_attack_scope(std::string_view s) {
  if (s == "sources") return AttackScope::sources;
  if (s == "target") return AttackScope::target;
  if (s == "all") return AttackScope::all;
  throw ConfigError("unknown attack scope '" + std::string(s) + "'");
}

std::string to_string(AttackMode m) { return m == AttackMode::add ? "add" : "delete"; }

std::string to_string(AttackScope s) {
  switch (s) {
    case AttackScope::sources: return "sources";
    case AttackScope::target: return "target";
    case AttackScope::all: return "all";
  }
  return "all";
}

void AttackSpec::validate() const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("attack.ratio must be in [0, 1]");
}

Graph attack_random(const Graph& g, const AttackSpec& spec, std::string* warning) {
  spec.validate();
  auto edges = undirected_edges(g.adjacency);
  const std::size_t n = g.num_nodes();
  const auto count = static_cast<std::size_t>(std::floor(spec.ratio * static_cast<double>(edges.size())));
  if (count == 0) return g;
  std::mt19937_64 rng(spec.seed);
  if (spec.mode == AttackMode::remove) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, edges.size() - 1);
      std::swap(edges[i], edges[pick(rng)]);
    }
    edges.erase(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(count));
  } else {
    const std::size_t pairs = n * (n - 1) / 2;
    std::size_t target = count;
    if (edges.size() + target > pairs) {
      target = pairs - edges.size();
      if (warning) {
        *warning = "attack: only " + std::to_string(target) + " non-edges available, requested " +
                   std::to_string(count);
      }
    }
    std::unordered_set<std::uint64_t> present;
    for (const auto& [u, v] : edges) present.insert(static_cast<std::uint64_t>(u) * n + v);
    if (target > 0 && 2 * target > pairs - edges.size()) {
      std::vector<std::pair<std::size_t, std::size_t>> free;
      for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
          if (!present.count(static_cast<std::uint64_t>(u) * n + v)) free.emplace_back(u, v);
        }
      }
      for (std::size_t i = 0; i < target; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, free.size() - 1);
        std::swap(free[i], free[pick(rng)]);
        edges.push_back(free[i]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> node(0, n - 1);
      std::size_t added = 0;
      while (added < target) {
        std::size_t u = node(rng);
        std::size_t v = node(rng);
        if (u == v) continue;
        if (u > v) std::swap(u, v);
        if (!present.insert(static_cast<std::uint64_t>(u) * n + v).second) continue;
        edges.emplace_back(u, v);
        ++added;
      }
    }
  }
  Graph out = g;
  out.adjacency = adjacency_from_edges(n, edges);
  return out;
}

FixtureKind parse_fixture_kind(std::string_view s) {
  if (s == "sbm_homophilic") return FixtureKind::sbm_homophilic;
  if (s == "sbm_heterophilic") return FixtureKind::sbm_heterophilic;
  throw ConfigError("unknown fixture kind '" + std::string(s) + "'");
}

std::string to_string(FixtureKind k) {
  return k == FixtureKind::sbm_heterophilic ? "sbm_heterophilic" : "sbm_homophilic";
}

void FixtureSpec::validate() const {
  if (!(p_in >= 0.0 && p_in <= 1.0) || !(p_out >= 0.0 && p_out <= 1.0)) {
    throw ConfigError("fixture: probabilities must be in [0, 1]");
  }
  if (kind == FixtureKind::sbm_homophilic && !(p_in > p_out)) {
    throw ConfigError("fixture: sbm_homophilic requires p_in > p_out");
  }
  if (kind == FixtureKind::sbm_heterophilic && !(p_in < p_out)) {
    throw ConfigError("fixture: sbm_heterophilic requires p_in < p_out");
  }
  if (classes < 1 || n < static_cast<std::size_t>(classes)) throw ConfigError("fixture: need n >= classes >= 1");
  if (d_raw < 1) throw ConfigError("fixture: d_raw must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("fixture: noise must be >= 0");
}

Graph make_fixture(const FixtureSpec& spec, std::string domain_id) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<int> labels(spec.n);
  const auto c = static_cast<std::size_t>(spec.classes);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = static_cast<int>(i * c / spec.n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < spec.n; ++u) {
    for (std::size_t v = u + 1; v < spec.n; ++v) {
      const double p = labels[u] == labels[v] ? spec.p_in : spec.p_out;
      if (unit(rng) < p) edges.emplace_back(u, v);
    }
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  DenseMatrix x(static_cast<Index>(spec.n), spec.d_raw);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) x(i, j) = spec.noise * gauss(rng);
    if (labels[static_cast<std::size_t>(i)] < spec.d_raw) x(i, labels[static_cast<std::size_t>(i)]) += 1.0;
  }
  Graph g;
  g.adjacency = adjacency_from_edges(spec.n, edges);
  g.features = std::move(x);
  g.labels = std::move(labels);
  g.domain_id = domain_id;
  g.name = std::move(domain_id);
  return g;
}

void ExperimentConfig::validate() const {
  if (sources.empty()) throw ConfigError("experiment: no source datasets");
  for (const auto& s : sources) {
    if (s.domain_id == target.domain_id) throw ConfigError("experiment: target '" + s.domain_id + "' is also a source");
  }
  if (n_runs < 1) throw ConfigError("experiment.runs must be >= 1");
  if (n_resamples < 1) throw ConfigError("experiment.resamples must be >= 1");
  pretrain.validate();
  adapt.validate();
  if (attack) attack->validate();
}

namespace {

DatasetRef parse_dataset_ref(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
    throw ConfigError("dataset reference '" + s + "' is not id:path");
  }
  return {s.substr(0, colon), s.substr(colon + 1)};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    std::string item = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

// Rethrows with the stage and seed prefixed, keeping the error category.
template <typename Fn>
auto staged(const std::string& stage, std::uint64_t seed, Fn&& fn) {
  const std::string prefix = stage + " (seed " + std::to_string(seed) + "): ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
};

}  // namespace

ExperimentConfig read_experiment_config(const KeyValues& kv) {
  ConfigReader r(kv);
  ExperimentConfig c;
  for (const auto& item : split_list(r.get_string("experiment.sources", ""))) c.sources.push_back(parse_dataset_ref(item));
  const std::string target = r.get_string("experiment.target", "");
  if (target.empty()) throw ConfigError("experiment.target is required");
  c.target = parse_dataset_ref(target);
  c.n_runs = static_cast<int>(r.get_int("experiment.runs", c.n_runs));
  c.n_resamples = static_cast<int>(r.get_int("experiment.resamples", c.n_resamples));
  c.master_seed = r.get_u64("experiment.seed", c.master_seed);
  c.out_dir = r.get_string("experiment.out", c.out_dir.string());
  c.use_cache = r.get_bool("experiment.cache", c.use_cache);
  if (r.has("attack.ratio") || r.has("attack.mode") || r.has("attack.scope")) {
    AttackSpec a;
    a.mode = parse_attack_mode(r.get_string("attack.mode", to_string(a.mode)));
    a.ratio = r.get_double("attack.ratio", a.ratio);
    a.scope = parse_attack_scope(r.get_string("attack.scope", to_string(a.scope)));
    c.attack = a;
  }
  c.pretrain = read_pretrain_config(r, c.pretrain);
  c.adapt = read_adapt_config(r, c.adapt);
  r.require_all_used();
  c.validate();
  return c;
}

void summarize(ExperimentReport& report) {
  const auto n = static_cast<double>(report.tasks.size());
  if (report.tasks.empty()) {
    report.mean = report.std = 0.0;
    report.display = "nan";
    return;
  }
  double sum = 0.0;
  for (const auto& t : report.tasks) sum += t.accuracy;
  report.mean = sum / n;
  double sq = 0.0;
  for (const auto& t : report.tasks) sq += (t.accuracy - report.mean) * (t.accuracy - report.mean);
  report.std = report.tasks.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  report.display = percent(report.mean) + "±" + percent(report.std);
}

std::uint64_t upstream_hash(const std::vector<Graph>& sources, const PretrainConfig& cfg) {
  Fnv f;
  f.u64(kCheckpointVersion);
  for (const auto& [k, v] : to_key_values(cfg)) {
    f.str(k);
    f.str(v);
  }
  for (const auto& g : sources) {
    f.str(g.domain_id);
    f.u64(g.num_nodes());
    for (std::size_t p : g.adjacency.row_ptr()) f.u64(p);
    for (std::size_t c : g.adjacency.col_idx()) f.u64(c);
    for (double v : g.adjacency.values()) f.f64(v);
    f.u64(static_cast<std::uint64_t>(g.features.cols()));
    for (Index i = 0; i < g.features.size(); ++i) f.f64(g.features.data()[i]);
  }
  return f.h;
}

ExperimentReport run_experiment(const std::vector<Graph>& sources, const Graph& target, const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& cache_dir) {
  cfg.validate();
  if (!target.labels) throw DataError("target graph '" + target.domain_id + "' has no labels");
  ExperimentReport report;
  for (int run = 0; run < cfg.n_runs; ++run) {
    const std::uint64_t run_seed = derive_seed(cfg.master_seed, {10, static_cast<std::uint64_t>(run)});

    std::vector<Graph> run_sources = sources;
    Graph run_target = target;
    if (cfg.attack && cfg.attack->ratio > 0.0) {
      staged("attack", run_seed, [&] {
        AttackSpec spec = *cfg.attack;
        std::string warning;
        if (spec.scope != AttackScope::target) {
          for (std::size_t i = 0; i < run_sources.size(); ++i) {
            spec.seed = derive_seed(run_seed, {12, i});
            run_sources[i] = attack_random(run_sources[i], spec, &warning);
          }
        }
        if (spec.scope != AttackScope::sources) {
          spec.seed = derive_seed(run_seed, {12, run_sources.size()});
          run_target = attack_random(run_target, spec, &warning);
        }
        if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
        return 0;
      });
    }

    PretrainConfig pcfg = cfg.pretrain;
    pcfg.seed = derive_seed(run_seed, {13});
    const Checkpoint cp = staged("pretrain", pcfg.seed, [&] {
      std::optional<std::filesystem::path> cached;
      if (cache_dir) {
        char name[32];
        std::snprintf(name, sizeof name, "%016llx.ckpt",
                      static_cast<unsigned long long>(upstream_hash(run_sources, pcfg)));
        cached = *cache_dir / name;
        if (std::filesystem::exists(*cached)) {
          try {
            return load_checkpoint(*cached);
          } catch (const LoadError&) {
            std::cerr << "warning: ignoring unreadable cache entry " << cached->string() << "\n";
          }
        }
      }
      std::vector<PretrainLogRow> log;
      Checkpoint fresh = pretrain(run_sources, pcfg, &log);
      if (run == 0) report.pretrain_log = std::move(log);
      if (cached) {
        std::filesystem::create_directories(*cache_dir);
        save_checkpoint(fresh, *cached);
      }
      return fresh;
    });

    const TargetView view = staged("prepare target", pcfg.seed, [&] { return prepare_target(run_target, cp); });
    for (int t = 0; t < cfg.n_resamples; ++t) {
      const std::uint64_t task_seed = derive_seed(run_seed, {11, static_cast<std::uint64_t>(t)});
      staged("adapt", task_seed, [&] {
        const FewShotTask task = sample_kshot(*run_target.labels, cfg.adapt.shots, task_seed);
        const TuneResult res = tune(view, *run_target.labels, cp, task, cfg.adapt);
        report.tasks.push_back({run, task_seed, task.K, task.support_size(), task.query.size(), res.accuracy});
        return 0;
      });
    }
  }
  summarize(report);
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<Graph> sources;
  for (const auto& s : cfg.sources) {
    sources.push_back(staged("load " + s.domain_id, cfg.master_seed, [&] { return load_dataset_dir(s.dir, s.domain_id); }));
  }
  const Graph target =
      staged("load " + cfg.target.domain_id, cfg.master_seed, [&] { return load_dataset_dir(cfg.target.dir, cfg.target.domain_id); });
  std::optional<std::filesystem::path> cache;
  if (cfg.use_cache) cache = cfg.out_dir / "cache";
  ExperimentReport report = run_experiment(sources, target, cfg, cache);
  std::filesystem::create_directories(cfg.out_dir);
  write_tasks_csv(report, cfg.out_dir / "tasks.csv");
  write_summary_csv(report, cfg.out_dir / "summary.csv");
  write_pretrain_log_csv(report.pretrain_log, cfg.out_dir / "pretrain_log.csv");
  return report;
}

ExperimentReport ablate(ExperimentConfig cfg, Variant variant) {
  cfg.pretrain.variant = variant;
  cfg.out_dir = cfg.out_dir / to_string(variant);
  return run_experiment(cfg);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_tasks_csv(const ExperimentReport& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "seed,K,support_size,query_size,accuracy\n";
  char buf[32];
  for (const auto& t : r.tasks) {
    std::snprintf(buf, sizeof buf, "%.6f", t.accuracy);
    out << t.seed << "," << t.K << "," << t.support_size << "," << t.query_size << "," << buf << "\n";
  }
}

void write_summary_csv(const ExperimentReport& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "mean,std,n,display\n";
  out << percent(r.mean) << "," << percent(r.std) << "," << r.tasks.size() << "," << r.display << "\n";
}

void write_pretrain_log_csv(const std::vector<PretrainLogRow>& log, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "epoch,graph,mean_loss\n";
  char buf[32];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%.10g", row.mean_loss);
    out << row.epoch << "," << row.graph << "," << buf << "\n";
  }
}

}  // namespace mdgfm
