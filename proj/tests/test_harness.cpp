#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mdgfm/error.hpp"
#include "mdgfm/harness.hpp"
#include "support.hpp"

using namespace mdgfm;
namespace fs = std::filesystem;

namespace {

std::set<std::pair<std::size_t, std::size_t>> edge_set(const Graph& g) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t r = 0; r < g.adjacency.rows(); ++r) {
    for (std::size_t e = g.adjacency.row_begin(r); e < g.adjacency.row_end(r); ++e) {
      const std::size_t c = g.adjacency.col_idx()[e];
      if (r < c) out.emplace(r, c);
    }
  }
  return out;
}

Graph graph_with_edges(std::size_t n, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  std::uniform_int_distribution<std::size_t> node(0, n - 1);
  while (chosen.size() < m) {
    std::size_t u = node(rng), v = node(rng);
    if (u == v) continue;
    chosen.emplace(std::min(u, v), std::max(u, v));
  }
  Graph g = testing::random_graph(n, 0.0, 3, seed);
  g.adjacency = adjacency_from_edges(n, {chosen.begin(), chosen.end()});
  return g;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdgfm_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("random attacks") {
  const Graph g = graph_with_edges(60, 100, 1);
  REQUIRE(g.num_undirected_edges() == 100);
  const auto before = edge_set(g);

  AttackSpec spec;
  spec.ratio = 0.0;
  CHECK(attack_random(g, spec).adjacency == g.adjacency);

  spec.mode = AttackMode::add;
  spec.ratio = 0.10;
  spec.seed = 2;
  const Graph added = attack_random(g, spec);
  CHECK(added.num_undirected_edges() == 110);
  const auto after_add = edge_set(added);
  CHECK(std::includes(after_add.begin(), after_add.end(), before.begin(), before.end()));
  CHECK(added.features == g.features);
  CHECK(is_symmetric(added.adjacency, 0.0));

  spec.mode = AttackMode::remove;
  spec.ratio = 0.25;
  const Graph removed = attack_random(g, spec);
  CHECK(removed.num_undirected_edges() == 75);
  const auto after_remove = edge_set(removed);
  CHECK(std::includes(before.begin(), before.end(), after_remove.begin(), after_remove.end()));

  spec.ratio = 1.0;
  CHECK(attack_random(g, spec).num_undirected_edges() == 0);

  CHECK(attack_random(g, spec).adjacency == attack_random(g, spec).adjacency);
  spec.ratio = 1.5;
  CHECK_THROWS_AS(attack_random(g, spec), ConfigError);
  CHECK(parse_attack_mode("delete") == AttackMode::remove);
}

TEST_CASE("adding edges is capped by the available non-edges") {
  const Graph g = graph_with_edges(6, 12, 3);
  AttackSpec spec;
  spec.ratio = 1.0;
  std::string warning;
  const Graph out = attack_random(g, spec, &warning);
  CHECK(out.num_undirected_edges() == 15);
  CHECK(!warning.empty());
}

TEST_CASE("fixture homophily") {
  FixtureSpec s;
  s.p_out = 0.0;
  CHECK(homophily_ratio(make_fixture(s)) == 1.0);
  s.kind = FixtureKind::sbm_heterophilic;
  s.p_in = 0.0;
  s.p_out = 0.1;
  CHECK(homophily_ratio(make_fixture(s)) == 0.0);

  FixtureSpec h;
  const double within = 3.0 * 50.0 * 49.0 / 2.0;
  const double between = 3.0 * 50.0 * 50.0;
  const double expected = h.p_in * within / (h.p_in * within + h.p_out * between);
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    h.seed = seed;
    sum += homophily_ratio(make_fixture(h));
  }
  CHECK(std::abs(sum / 10.0 - expected) < 0.1);

  const Graph g = make_fixture(h);
  CHECK(g.features.rows() == 150);
  CHECK(g.features.cols() == 60);
  CHECK((*g.labels)[0] == 0);
  CHECK((*g.labels)[149] == 2);

  FixtureSpec bad;
  bad.p_in = 0.01;
  CHECK_THROWS_AS(make_fixture(bad), ConfigError);
}

TEST_CASE("experiment configuration") {
  std::istringstream in(
      "[experiment]\n"
      "sources = a:/data/a, b:/data/b\n"
      "target = t:/data/t\n"
      "runs = 2\n"
      "resamples = 3\n"
      "seed = 17\n"
      "[attack]\n"
      "mode = delete\n"
      "ratio = 0.05\n"
      "[pretrain]\n"
      "epochs = 4\n"
      "variant = wo_balance\n"
      "[encoder]\n"
      "hidden_dim = 16\n"
      "[adapt]\n"
      "shots = 3\n");
  const ExperimentConfig c = read_experiment_config(parse_ini(in));
  REQUIRE(c.sources.size() == 2);
  CHECK(c.sources[1].domain_id == "b");
  CHECK(c.sources[1].dir == fs::path("/data/b"));
  CHECK(c.target.domain_id == "t");
  CHECK(c.n_runs == 2);
  CHECK(c.n_resamples == 3);
  CHECK(c.master_seed == 17);
  REQUIRE(c.attack.has_value());
  CHECK(c.attack->mode == AttackMode::remove);
  CHECK(c.pretrain.epochs == 4);
  CHECK(c.pretrain.variant == Variant::wo_balance);
  CHECK(c.pretrain.encoder.hidden_dim == 16);
  CHECK(c.adapt.shots == 3);

  CHECK_THROWS_AS(read_experiment_config({{"experiment.target", "t:/x"}, {"experiment.sources", "a:/y"},
                                          {"experiment.colour", "red"}}),
                  ConfigError);
  CHECK_THROWS_AS(read_experiment_config({{"experiment.target", "t:/x"}, {"experiment.sources", "t:/y"}}),
                  ConfigError);
  CHECK_THROWS_AS(read_experiment_config({{"experiment.sources", "a:/y"}}), ConfigError);
  std::istringstream broken("[experiment\n");
  CHECK_THROWS_AS(parse_ini(broken), ConfigError);
}

TEST_CASE("summary statistics and display") {
  ExperimentReport r;
  for (double a : {0.5, 0.6, 0.7}) r.tasks.push_back({0, 0, 1, 3, 10, a});
  summarize(r);
  CHECK(std::abs(r.mean - 0.6) < 1e-12);
  CHECK(std::abs(r.std - 0.1) < 1e-12);
  CHECK(r.display == "60.00±10.00");

  const fs::path dir = scratch("summary");
  fs::create_directories(dir);
  write_summary_csv(r, dir / "summary.csv");
  write_tasks_csv(r, dir / "tasks.csv");
  std::ifstream s(dir / "summary.csv");
  std::string header, row;
  std::getline(s, header);
  std::getline(s, row);
  CHECK(header == "mean,std,n,display");
  CHECK(row.rfind("60.00,10.00,3,", 0) == 0);
  std::ifstream t(dir / "tasks.csv");
  std::getline(t, header);
  CHECK(header == "seed,K,support_size,query_size,accuracy");
  fs::remove_all(dir);
}

TEST_CASE("end-to-end runs are deterministic and reuse the cache") {
  FixtureSpec fs_a;
  fs_a.n = 30;
  fs_a.d_raw = 8;
  fs_a.p_in = 0.3;
  fs_a.p_out = 0.05;
  Graph a = make_fixture(fs_a, "a");
  fs_a.seed = 1;
  fs_a.kind = FixtureKind::sbm_heterophilic;
  fs_a.p_in = 0.05;
  fs_a.p_out = 0.2;
  Graph b = make_fixture(fs_a, "b");
  FixtureSpec ft;
  ft.n = 30;
  ft.d_raw = 10;
  ft.seed = 2;
  Graph t = make_fixture(ft, "t");

  ExperimentConfig cfg;
  cfg.sources = {{"a", "unused"}, {"b", "unused"}};
  cfg.target = {"t", "unused"};
  cfg.n_runs = 1;
  cfg.n_resamples = 2;
  cfg.pretrain.epochs = 2;
  cfg.pretrain.unified_dim = 6;
  cfg.pretrain.encoder.hidden_dim = 8;
  cfg.pretrain.encoder.n_layers = 2;
  cfg.pretrain.gsl.k = 4;
  cfg.adapt.k = 4;
  cfg.adapt.epochs = 3;

  const fs::path cache = scratch("cache");
  const ExperimentReport first = run_experiment({a, b}, t, cfg, cache);
  CHECK(fs::exists(cache));
  CHECK(std::distance(fs::directory_iterator(cache), fs::directory_iterator{}) == 1);
  const ExperimentReport second = run_experiment({a, b}, t, cfg, cache);
  const ExperimentReport fresh = run_experiment({a, b}, t, cfg);
  REQUIRE(first.tasks.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(first.tasks[i].accuracy == second.tasks[i].accuracy);
    CHECK(first.tasks[i].accuracy == fresh.tasks[i].accuracy);
    CHECK(first.tasks[i].seed == fresh.tasks[i].seed);
  }

  cfg.attack = AttackSpec{AttackMode::add, 0.0, AttackScope::all, 0};
  const ExperimentReport zero = run_experiment({a, b}, t, cfg);
  CHECK(zero.display == fresh.display);

  cfg.pretrain.epochs = 3;
  CHECK(upstream_hash({a, b}, cfg.pretrain) != upstream_hash({a, b}, PretrainConfig{}));
  Graph a2 = a;
  a2.features(0, 0) += 1.0;
  CHECK(upstream_hash({a2, b}, cfg.pretrain) != upstream_hash({a, b}, cfg.pretrain));

  Graph unlabeled = t;
  unlabeled.labels.reset();
  CHECK_THROWS_AS(run_experiment({a, b}, unlabeled, cfg), DataError);
  fs::remove_all(cache);
}
