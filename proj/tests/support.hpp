#pragma once

#include <random>
#include <vector>

#include "mdgfm/graph.hpp"

namespace testing {

using mdgfm::Csr;
using mdgfm::DenseMatrix;
using mdgfm::Index;

inline DenseMatrix random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  DenseMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Erdos-Renyi undirected graph with Gaussian features and `classes` labels.
inline mdgfm::Graph random_graph(std::size_t n, double p, Index d, std::uint64_t seed, int classes = 3,
                                 std::string domain = "g") {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (u(rng) < p) edges.emplace_back(a, b);
    }
  }
  mdgfm::Graph g;
  g.adjacency = mdgfm::adjacency_from_edges(n, edges);
  g.features = random_matrix(static_cast<Index>(n), d, seed + 1);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(classes));
  g.labels = labels;
  g.domain_id = domain;
  g.name = domain;
  return g;
}

inline DenseMatrix permutation_matrix(const std::vector<std::size_t>& perm) {
  const auto n = static_cast<Index>(perm.size());
  DenseMatrix p = DenseMatrix::Zero(n, n);
  for (std::size_t i = 0; i < perm.size(); ++i) p(static_cast<Index>(i), static_cast<Index>(perm[i])) = 1.0;
  return p;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

// (P A P^T) for a permutation with P(i, perm[i]) = 1.
inline Csr permute(const Csr& a, const std::vector<std::size_t>& perm) {
  const DenseMatrix p = permutation_matrix(perm);
  return Csr::from_dense(DenseMatrix(p * a.to_dense() * p.transpose()));
}

}  // namespace testing
