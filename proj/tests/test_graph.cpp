#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mdgfm/csr.hpp"
#include "mdgfm/error.hpp"
#include "mdgfm/graph.hpp"
#include "support.hpp"

using namespace mdgfm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mdgfm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

double brute_homophily(const Graph& g) {
  const DenseMatrix a = g.adjacency.to_dense();
  double same = 0, total = 0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = i + 1; j < a.cols(); ++j) {
      if (a(i, j) != 0.0) {
        total += 1;
        if ((*g.labels)[i] == (*g.labels)[j]) same += 1;
      }
    }
  }
  return total == 0 ? 1.0 : same / total;
}

}  // namespace

TEST_CASE("csr construction rejects malformed structure") {
  CHECK_THROWS_AS(Csr(2, 2, {0, 1}, {0}, {1.0}), ShapeError);
  CHECK_THROWS_AS(Csr(2, 2, {0, 2, 2}, {1, 0}, {1.0, 1.0}), ShapeError);
  CHECK_THROWS_AS(Csr(1, 2, {0, 1}, {2}, {1.0}), BoundsError);
  CHECK_THROWS(Csr(1, 1, {0, 1}, {0}, {std::nan("")}));
  const Csr ok(2, 3, {0, 1, 3}, {2, 0, 1}, {1.0, -2.0, 3.0});
  CHECK(ok.nnz() == 3);
  CHECK(ok.coeff(1, 0) == -2.0);
  CHECK(ok.coeff(0, 0) == 0.0);
}

TEST_CASE("from_triplets sorts and resolves duplicates") {
  std::vector<Triplet<double>> t{{1, 1, 2.0}, {0, 1, 1.0}, {1, 1, 3.0}, {1, 0, 4.0}};
  const Csr keep = Csr::from_triplets(2, 2, t, DuplicatePolicy::keep_first);
  CHECK(keep.coeff(1, 1) == 2.0);
  const Csr sum = Csr::from_triplets(2, 2, t, DuplicatePolicy::sum);
  CHECK(sum.coeff(1, 1) == 5.0);
  CHECK(sum.col_idx() == std::vector<std::size_t>{1, 0, 1});
}

TEST_CASE("spmm matches the dense product") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = testing::random_graph(17, 0.3, 4, seed);
    const DenseMatrix x = testing::random_matrix(17, 5, seed + 100);
    const DenseMatrix expected = g.adjacency.to_dense() * x;
    CHECK((spmm(g.adjacency, x) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(spmm(Csr::identity(3), DenseMatrix::Zero(4, 2)), ShapeError);
}

TEST_CASE("transpose round trip") {
  const DenseMatrix d = testing::random_matrix(5, 7, 3);
  const Csr a = Csr::from_dense(DenseMatrix((d.array() > 0.5).select(d, 0.0)));
  CHECK(a.transpose().transpose() == a);
  CHECK((a.transpose().to_dense() - a.to_dense().transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("symmetrize_activate sparse agrees with dense") {
  const DenseMatrix d = testing::random_matrix(9, 9, 11);
  const Csr a = Csr::from_dense(DenseMatrix((d.array().abs() > 0.7).select(d, 0.0)));
  const DenseMatrix dense = symmetrize_activate(a.to_dense());
  const Csr sparse = symmetrize_activate(a);
  CHECK((sparse.to_dense() - dense).cwiseAbs().maxCoeff() == 0.0);
  CHECK(is_symmetric(sparse, 0.0));
  CHECK(sparse.all_nonnegative());
}

TEST_CASE("degree normalization with self loops") {
  SUBCASE("two nodes one edge") {
    const Csr a = Csr::from_dense(DenseMatrix{{0.0, 1.0}, {1.0, 0.0}});
    const DenseMatrix n = degree_normalize_selfloops(a).to_dense();
    CHECK(n(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(n(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("sparse equals dense") {
    const Graph g = testing::random_graph(12, 0.3, 2, 5);
    const DenseMatrix dense = degree_normalize_selfloops(g.adjacency.to_dense());
    CHECK((degree_normalize_selfloops(g.adjacency).to_dense() - dense).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("asymmetric input rejected") {
    const Csr a = Csr::from_dense(DenseMatrix{{0.0, 1.0}, {0.0, 0.0}});
    CHECK_THROWS_AS(degree_normalize_selfloops(a), PreconditionError);
  }
}

TEST_CASE("adjacency_from_edges canonicalizes") {
  const Csr a = adjacency_from_edges(4, {{0, 1}, {1, 0}, {2, 2}, {3, 1}, {0, 1}});
  CHECK(a.nnz() == 4);
  CHECK(is_symmetric(a, 0.0));
  CHECK(a.coeff(2, 2) == 0.0);
  CHECK(undirected_edges(a) == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 3}});
}

TEST_CASE("homophily ratio against brute force") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = testing::random_graph(30, 0.15, 2, seed, 3);
    CHECK(homophily_ratio(g) == doctest::Approx(brute_homophily(g)).epsilon(1e-15));
  }
  Graph edgeless = testing::random_graph(5, 0.0, 2, 1);
  CHECK(homophily_ratio(edgeless) == 1.0);
  edgeless.labels.reset();
  CHECK_THROWS_AS(homophily_ratio(edgeless), PreconditionError);
}

TEST_CASE("dataset files round trip") {
  const fs::path dir = scratch("roundtrip");
  const Graph g = testing::random_graph(20, 0.2, 3, 9);
  save_dataset_dir(g, dir);
  const Graph back = load_dataset_dir(dir, "x");
  CHECK(back.adjacency == g.adjacency);
  CHECK(back.features == g.features);
  CHECK(*back.labels == *g.labels);
  CHECK(back.name == dir.filename().string());
  const DatasetStats s = dataset_stats(back);
  CHECK(s.n_nodes == 20);
  CHECK(s.undirected_edges == g.num_undirected_edges());
  CHECK(s.directed_entries == 2 * s.undirected_edges);
  CHECK(stats_csv_header() == "name,n_nodes,directed_entries,undirected_edges,feature_dim,n_classes,homophily_ratio");
}

TEST_CASE("loader errors carry file and line") {
  const fs::path dir = scratch("errors");
  write_file(dir / kFeatureFile, "1,2\n3,4\n");
  write_file(dir / kEdgeFile, "# comment\n0\t1\n1 x\n");
  try {
    load_dataset_dir(dir, "d");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("edges.tsv:3") != std::string::npos);
  }
  write_file(dir / kEdgeFile, "0\t5\n");
  CHECK_THROWS_AS(load_dataset_dir(dir, "d"), BoundsError);
  write_file(dir / kEdgeFile, "0\t1\n");
  write_file(dir / kFeatureFile, "1,2\n3\n");
  CHECK_THROWS_AS(load_dataset_dir(dir, "d"), ParseError);
  write_file(dir / kFeatureFile, "1,2\n3,4\n");
  write_file(dir / kLabelFile, "0\n1\n2\n");
  CHECK_THROWS_AS(load_dataset_dir(dir, "d"), DataError);
  CHECK_THROWS_AS(load_dataset_dir(dir / "missing", "d"), LoadError);
}
