#include <doctest.h>

#include <cmath>

#include "mdgfm/encoder.hpp"
#include "mdgfm/error.hpp"
#include "mdgfm/grad_check.hpp"
#include "support.hpp"

using namespace mdgfm;

namespace {

DenseMatrix elu_dense(const DenseMatrix& x) {
  return x.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
}

// Straight dense forward pass.
DenseMatrix dense_encode(const DenseMatrix& a, const DenseMatrix& x, const EncoderParams& p) {
  DenseMatrix h = x;
  for (int l = 0; l < p.n_layers(); ++l) {
    h = a * h * p.weights[static_cast<std::size_t>(l)];
    if (!p.biases.empty()) h.rowwise() += p.biases[static_cast<std::size_t>(l)];
    if (l + 1 < p.n_layers()) h = elu_dense(h);
  }
  return h;
}

EncoderParams make_params(Index d, Index h, int layers, std::uint64_t seed, bool bias = false) {
  EncoderConfig cfg;
  cfg.hidden_dim = h;
  cfg.n_layers = layers;
  cfg.bias = bias;
  std::mt19937_64 rng(seed);
  EncoderParams p = init_encoder(d, cfg, rng);
  if (bias) {
    for (auto& b : p.biases) b = testing::random_matrix(1, h, seed + 7).row(0);
  }
  return p;
}

}  // namespace

TEST_CASE("glorot initialisation bounds") {
  std::mt19937_64 rng(1);
  const DenseMatrix w = glorot_uniform(30, 20, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  CHECK(w.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.cwiseAbs().maxCoeff() > 0.5 * bound);
  const EncoderParams p = make_params(7, 5, 3, 2);
  CHECK(p.n_layers() == 3);
  CHECK(p.in_dim() == 7);
  CHECK(p.out_dim() == 5);
  CHECK(p.weights[1].rows() == 5);
}

TEST_CASE("single linear layer with identity weights is the propagation") {
  EncoderParams p;
  p.weights = {DenseMatrix::Identity(4, 4)};
  const Graph g = testing::random_graph(6, 0.5, 4, 3);
  const Csr a = degree_normalize_selfloops(g.adjacency);
  CHECK((encode(a, g.features, p) - a.to_dense() * g.features).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("encoder matches a dense oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Graph g = testing::random_graph(15, 0.2, 6, seed);
    const Csr a = degree_normalize_selfloops(g.adjacency);
    const bool bias = seed % 2 == 1;
    const EncoderParams p = make_params(6, 8, 3, seed, bias);
    CHECK((encode(a, g.features, p) - dense_encode(a.to_dense(), g.features, p)).cwiseAbs().maxCoeff() < 1e-12);

    ad::Tape tape;
    auto ap = std::make_shared<const Csr>(a);
    const ad::Var z = encode(Propagation{ap, std::nullopt}, tape.constant(g.features), encoder_vars(tape, p), 0.1,
                             false, nullptr);
    CHECK((z.value() - dense_encode(a.to_dense(), g.features, p)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("encoder is permutation equivariant") {
  const Graph g = testing::random_graph(12, 0.3, 5, 4);
  const EncoderParams p = make_params(5, 6, 2, 5);
  const auto perm = testing::random_permutation(12, 6);
  const DenseMatrix pm = testing::permutation_matrix(perm);
  const DenseMatrix z = encode(degree_normalize_selfloops(g.adjacency), g.features, p);
  const DenseMatrix zp = encode(degree_normalize_selfloops(testing::permute(g.adjacency, perm)), pm * g.features, p);
  CHECK((zp - pm * z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dropout only acts in training mode") {
  const Graph g = testing::random_graph(10, 0.3, 4, 7);
  const EncoderParams p = make_params(4, 6, 3, 8);
  auto ap = std::make_shared<const Csr>(degree_normalize_selfloops(g.adjacency));
  auto run = [&](bool training, std::uint64_t seed) {
    ad::Tape tape;
    std::mt19937_64 rng(seed);
    return DenseMatrix(
        encode(Propagation{ap, std::nullopt}, tape.constant(g.features), encoder_vars(tape, p), 0.5, training, &rng)
            .value());
  };
  CHECK(run(false, 1) == run(false, 2));
  CHECK(run(true, 1) == run(true, 1));
  CHECK(run(true, 1) != run(true, 2));
  CHECK(run(true, 1) != run(false, 1));
}

TEST_CASE("parameter map round trip") {
  const EncoderParams p = make_params(5, 4, 3, 9, true);
  ad::ParamMap m;
  store_encoder(p, m);
  CHECK(m.count(encoder_weight_key(0)) == 1);
  CHECK(m.count(encoder_bias_key(2)) == 1);
  CHECK(load_encoder(m, 3, true) == p);
  CHECK_THROWS(load_encoder(m, 4, true));
}

TEST_CASE("encoder gradients") {
  const Graph g = testing::random_graph(10, 0.3, 4, 10);
  EncoderParams p = make_params(4, 5, 3, 11, true);
  ad::ParamMap params;
  store_encoder(p, params);
  auto ap = std::make_shared<const Csr>(degree_normalize_selfloops(g.adjacency));
  const DenseMatrix r = testing::random_matrix(10, 5, 12);
  const ad::GradCheckReport rep = ad::grad_check(
      [&](ad::Tape& t, const ad::ParamMap& pm) {
        const EncoderVars vars = encoder_vars(t, pm, 3, true, true);
        const ad::Var z = encode(Propagation{ap, std::nullopt}, t.constant(g.features), vars, 0.0, false, nullptr);
        return ad::sum_scalar(ad::hadamard(z, t.constant(r)));
      },
      params);
  INFO(rep.worst);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("encoder config validation") {
  EncoderConfig c;
  c.n_layers = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
