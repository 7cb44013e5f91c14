#include <doctest.h>

#include <cmath>

#include "mdgfm/autodiff.hpp"
#include "mdgfm/error.hpp"
#include "mdgfm/grad_check.hpp"
#include "support.hpp"

using namespace mdgfm;
using namespace mdgfm::ad;

namespace {

// Generic scalar readout: sum(y .* R) with a fixed random R.
Var probe(Var y, std::uint64_t seed = 77) {
  return sum_scalar(hadamard(y, y.tape->constant(testing::random_matrix(y.rows(), y.cols(), seed))));
}

void expect_gradients(const LossBuilder& build, const ParamMap& params, double tol = 1e-6) {
  const GradCheckReport r = grad_check(build, params);
  INFO(r.worst);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < tol);
}

ParamMap two(Index r1, Index c1, Index r2, Index c2) {
  return {{"a", testing::random_matrix(r1, c1, 1)}, {"b", testing::random_matrix(r2, c2, 2)}};
}

}  // namespace

TEST_CASE("linear algebra gradients") {
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(matmul(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); },
                   two(4, 3, 3, 5));
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(matmul_bt(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); },
                   two(4, 3, 6, 3));
  const Graph g = testing::random_graph(8, 0.4, 2, 3);
  auto a = std::make_shared<const Csr>(g.adjacency);
  expect_gradients([a](Tape& t, const ParamMap& p) { return probe(spmm(a, t.parameter("a", p.at("a")))); },
                   {{"a", testing::random_matrix(8, 3, 5)}});
  expect_gradients(
      [a](Tape& t, const ParamMap& p) {
        return probe(spmm_values(a, t.parameter("v", p.at("v")), t.parameter("x", p.at("x"))));
      },
      {{"v", testing::random_matrix(static_cast<Index>(a->nnz()), 1, 6)}, {"x", testing::random_matrix(8, 3, 7)}});
}

TEST_CASE("element-wise gradients") {
  const ParamMap same = two(3, 4, 3, 4);
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(add(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); }, same);
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(sub(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); }, same);
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(hadamard(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); }, same);
  const ParamMap row = two(3, 4, 1, 4);
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(row_broadcast_mul(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); }, row);
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(row_broadcast_add(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); }, row);
  const ParamMap scalar = two(3, 4, 1, 1);
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(scale_by(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); }, scalar);
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(add_scalar(scale(t.parameter("a", p.at("a")), -2.5), 3.0)); }, row);
  expect_gradients([](Tape& t, const ParamMap& p) { return probe(concat_cols(t.parameter("a", p.at("a")), t.parameter("b", p.at("b")))); },
                   two(3, 2, 3, 5));
}

TEST_CASE("activation gradients") {
  const ParamMap x{{"a", testing::random_matrix(5, 4, 9)}};
  const auto act = [&](auto fn) {
    expect_gradients([fn](Tape& t, const ParamMap& p) { return probe(fn(t.parameter("a", p.at("a")))); }, x);
  };
  act([](Var v) { return relu(v); });
  act([](Var v) { return elu(v); });
  act([](Var v) { return ad::tanh(v); });
  act([](Var v) { return sigmoid(v); });
  act([](Var v) { return ad::log(add_scalar(hadamard(v, v), 0.5)); });
  act([](Var v) {
    std::mt19937_64 rng(4);
    return dropout(v, 0.3, true, &rng);
  });
}

TEST_CASE("row operation gradients") {
  const ParamMap x{{"a", testing::random_matrix(5, 4, 10)}};
  const auto op = [&](auto fn, double tol = 1e-6) {
    expect_gradients([fn](Tape& t, const ParamMap& p) { return fn(t.parameter("a", p.at("a"))); }, x, tol);
  };
  op([](Var v) { return probe(l2_row_normalize(v)); });
  op([](Var v) { return probe(cosine_similarity_matrix(v, scale(v, 2.0))); });
  op([](Var v) { return probe(log_softmax_rows(v)); });
  op([](Var v) { return probe(softmax_rows(v)); });
  op([](Var v) { return probe(gather_rows(v, {4, 0, 4, 2})); });
  op([](Var v) { return probe(pick_per_row(v, {0, 3, 1, 1, 2})); });
  op([](Var v) {
    DenseMatrix w = testing::random_matrix(5, 4, 12).cwiseAbs();
    w(0, 1) = 0.0;
    return probe(weighted_logsumexp_rows(v, w));
  });
  op([](Var v) { return probe(row_pair_dot(v, {0, 1, 2, 4}, {1, 1, 3, 0})); });
  op([](Var v) { return mean_scalar(hadamard(v, v)); });
}

TEST_CASE("degree_normalize_values gradient and value") {
  const Graph g = testing::random_graph(7, 0.5, 2, 21);
  std::vector<Triplet<double>> trips;
  for (std::size_t r = 0; r < 7; ++r) {
    trips.push_back({r, r, 1.0});
    for (std::size_t e = g.adjacency.row_begin(r); e < g.adjacency.row_end(r); ++e) {
      trips.push_back({r, g.adjacency.col_idx()[e], 1.0});
    }
  }
  auto pattern = std::make_shared<const Csr>(Csr::from_triplets(7, 7, trips));
  const DenseMatrix base = testing::random_matrix(static_cast<Index>(pattern->nnz()), 1, 3).cwiseAbs().array() + 0.1;
  expect_gradients([pattern](Tape& t, const ParamMap& p) {
    return probe(degree_normalize_values(pattern, t.parameter("v", p.at("v")), 1e-12));
  }, {{"v", base}});

  Tape t;
  const Var y = degree_normalize_values(pattern, t.constant(DenseMatrix::Ones(static_cast<Index>(pattern->nnz()), 1)), 1e-12);
  const Csr expected = degree_normalize_selfloops(g.adjacency);
  CHECK((pattern->with_values(std::vector<double>(y.value().data(), y.value().data() + y.value().size())).to_dense() -
         expected.to_dense()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("tape semantics") {
  SUBCASE("repeated parameter keys accumulate") {
    Tape t;
    const DenseMatrix v = testing::random_matrix(2, 2, 1);
    const Var a = t.parameter("w", v);
    const Var b = t.parameter("w", v);
    const Gradients g = t.backward(sum_scalar(add(a, scale(b, 3.0))));
    CHECK((g.at("w").array() == 4.0).all());
  }
  SUBCASE("constants receive no gradient") {
    Tape t;
    const Var c = t.constant(DenseMatrix::Ones(2, 2));
    const Var w = t.parameter("w", DenseMatrix::Ones(2, 2));
    const Gradients g = t.backward(sum_scalar(hadamard(c, w)));
    CHECK(g.size() == 1);
    CHECK(g.count("w") == 1);
  }
  SUBCASE("non-scalar loss rejected") {
    Tape t;
    const Var w = t.parameter("w", DenseMatrix::Ones(2, 2));
    CHECK_THROWS_AS(t.backward(w), PreconditionError);
  }
  SUBCASE("checked tape rejects non-finite values") {
    Tape t;
    CHECK_THROWS_AS(t.constant(DenseMatrix::Constant(1, 1, std::nan(""))), PreconditionError);
    Tape unchecked(false);
    CHECK_NOTHROW(unchecked.constant(DenseMatrix::Constant(1, 1, std::nan(""))));
  }
  SUBCASE("shape errors") {
    Tape t;
    const Var a = t.constant(DenseMatrix::Ones(2, 3));
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(add(a, t.constant(DenseMatrix::Ones(3, 2))), ShapeError);
    CHECK_THROWS_AS(row_broadcast_mul(a, t.constant(DenseMatrix::Ones(1, 2))), ShapeError);
  }
  SUBCASE("dropout is identity outside training") {
    Tape t;
    std::mt19937_64 rng(1);
    const Var a = t.constant(testing::random_matrix(3, 3, 1));
    CHECK(dropout(a, 0.5, false, &rng).value() == a.value());
    CHECK_THROWS_AS(dropout(a, 1.0, true, &rng), ConfigError);
  }
  SUBCASE("zero rows normalize to zero") {
    Tape t;
    DenseMatrix m = testing::random_matrix(3, 2, 4);
    m.row(1).setZero();
    const Var w = t.parameter("w", m);
    const Var n = l2_row_normalize(w);
    CHECK(n.value().row(1).norm() == 0.0);
    CHECK(n.value().row(0).norm() == doctest::Approx(1.0));
    const Gradients g = t.backward(probe(n));
    CHECK(g.at("w").row(1).norm() == 0.0);
  }
}

TEST_CASE("grad_check skips relu kinks") {
  DenseMatrix x(1, 3);
  x << 1e-7, -0.5, 0.4;
  const GradCheckReport r = grad_check(
      [](Tape& t, const ParamMap& p) { return probe(relu(t.parameter("a", p.at("a")))); }, {{"a", x}});
  CHECK(r.skipped_kinks == 1);
  CHECK(r.checked == 2);
  CHECK(r.max_rel_error < 1e-8);
}
