#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mdgfm/autodiff.hpp"
#include "mdgfm/csr.hpp"
#include "mdgfm/graph.hpp"

namespace mdgfm {

// Non-linearity applied inside token modulation.
enum class Activation { elu, relu, tanh };

Activation parse_activation(std::string_view name);
std::string to_string(Activation a);

// Learnable alignment vectors. Domain and shared tokens have the unified
// width d; balance tokens have width 2d (d when topology fusion is disabled).
struct TokenSet {
  std::map<std::string, RowVector> domain_tokens;
  RowVector shared_token;
  std::map<std::string, RowVector> balance_tokens;

  // All-ones tokens for the given domains.
  static TokenSet ones(const std::vector<std::string>& domains, Index dim, Index balance_dim);
  bool operator==(const TokenSet&) const = default;
};

struct RefineConfig {
  std::size_t k = 30;
  int r = 1;
  // 0 selects exact kNN; otherwise the LSH bucket size.
  std::size_t lsh_batch = 0;
  double eps = kDefaultDegreeEps;
  // Aggregate with the self-loop normalized adjacency instead of the raw one.
  bool fuse_normalized_adj = false;
  // false: similarity on t_B * X' alone (no A^r X' half).
  bool use_topology = true;
  std::uint64_t lsh_seed = 0;

  void validate() const;
  bool operator==(const RefineConfig&) const = default;
};

struct KnnStats {
  std::size_t similarity_evaluations = 0;
  std::size_t buckets = 0;
};

// ---- value-level operations ----

DenseMatrix activate(const DenseMatrix& x, Activation act);

// t_S * act(t_D * X), row-broadcast products.
DenseMatrix unify_features(const DenseMatrix& x, const RowVector& domain_token,
                           const RowVector& shared_token, Activation act = Activation::elu);

// t_B * [X_u, A^r X_u].
DenseMatrix fuse_views(const DenseMatrix& x_unified, const Csr& a, int r, const RowVector& balance_token);

// Row-wise top-k cosine similarities, diagonal excluded, ties to the lower
// column index. Zero rows have similarity 0 to everything.
Csr knn_exact(const DenseMatrix& h, std::size_t k, KnnStats* stats = nullptr);

// Random-hyperplane LSH: rows are bucketed by the signs of ceil(log2(n/B))
// projections, undersized buckets are merged with their smaller neighbour
// until every bucket holds at least B rows, and top-k runs inside buckets.
// With B >= n this is knn_exact.
Csr knn_lsh(const DenseMatrix& h, std::size_t k, std::size_t batch, std::uint64_t seed,
            KnnStats* stats = nullptr);

Csr knn(const DenseMatrix& h, const RefineConfig& cfg, KnnStats* stats = nullptr);

// Symmetrize + ReLU, then degree-normalize with self-loops.
Csr postprocess(const Csr& a_sp, double eps = kDefaultDegreeEps);

// The adjacency used inside the A^r X' term.
Csr fusion_adjacency(const Csr& a, const RefineConfig& cfg);

// Full refinement of a graph whose features are already token-unified.
Csr refine(const DenseMatrix& x_unified, const Csr& a, const RowVector& balance_token,
           const RefineConfig& cfg);
Csr refine(const Graph& unified, const TokenSet& tokens, const RefineConfig& cfg);

// ---- taped operations ----

ad::Var activate(ad::Var x, Activation act);
ad::Var unify_features(ad::Var x, ad::Var domain_token, ad::Var shared_token, Activation act);
// `a` is the fusion adjacency (see fusion_adjacency).
ad::Var fuse_views(ad::Var x_unified, const ad::CsrPtr& a, int r, ad::Var balance_token);
// Dispatches on cfg.use_topology.
ad::Var similarity_features(ad::Var x_unified, const ad::CsrPtr& a, ad::Var balance_token,
                            const RefineConfig& cfg);

// A' whose stored values are a differentiable function of h on a frozen kNN
// pattern. The pattern is the union of the kNN pattern, its transpose, and
// the diagonal.
struct RefinedAdjacency {
  ad::CsrPtr pattern;
  ad::Var values;

  Csr materialize() const;
};

RefinedAdjacency refined_adjacency(ad::Var h, const Csr& knn_pattern, double eps);

}  // namespace mdgfm
