#include "mdgfm/refine.hpp"

#include <algorithm>
#include <cmath>
#include <list>
#include <random>

#include "mdgfm/error.hpp"

namespace mdgfm {
namespace {

constexpr double kNormFloor = 1e-12;

DenseMatrix normalize_rows(const DenseMatrix& h) {
  DenseMatrix out = DenseMatrix::Zero(h.rows(), h.cols());
  for (Index i = 0; i < h.rows(); ++i) {
    const double norm = h.row(i).norm();
    if (norm >= kNormFloor) out.row(i) = h.row(i) / norm;
  }
  return out;
}

// Top-k inside each bucket from the bucket's Gram matrix. Buckets must be
// ascending so ties resolve to the lower column.
Csr knn_over_buckets(const DenseMatrix& hn, std::size_t k, const std::vector<std::vector<std::size_t>>& buckets,
                     KnnStats* stats) {
  const auto n = static_cast<std::size_t>(hn.rows());
  std::vector<Triplet<double>> trips;
  trips.reserve(n * std::min(k, n));
  std::size_t evaluations = 0;
  std::vector<std::pair<double, std::size_t>> scored;
  for (const auto& bucket : buckets) {
    const auto m = static_cast<Index>(bucket.size());
    DenseMatrix members(m, hn.cols());
    for (Index i = 0; i < m; ++i) members.row(i) = hn.row(static_cast<Index>(bucket[static_cast<std::size_t>(i)]));
    const DenseMatrix gram = members * members.transpose();
    for (Index i = 0; i < m; ++i) {
      scored.clear();
      for (Index j = 0; j < m; ++j) {
        if (j != i) scored.emplace_back(gram(i, j), bucket[static_cast<std::size_t>(j)]);
      }
      evaluations += scored.size();
      const std::size_t keep = std::min(k, scored.size());
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                        [](const auto& a, const auto& b) {
                          return a.first > b.first || (a.first == b.first && a.second < b.second);
                        });
      const std::size_t row = bucket[static_cast<std::size_t>(i)];
      for (std::size_t t = 0; t < keep; ++t) trips.push_back({row, scored[t].second, scored[t].first});
    }
  }
  if (stats) {
    stats->similarity_evaluations = evaluations;
    stats->buckets = buckets.size();
  }
  return Csr::from_triplets(n, n, std::move(trips));
}

void require_row_token(const char* op, const DenseMatrix& x, const RowVector& t) {
  if (t.size() != x.cols()) {
    throw ShapeError(std::string(op) + ": token has length " + std::to_string(t.size()) +
                     " but features have width " + std::to_string(x.cols()));
  }
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "elu") return Activation::elu;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown token activation '" + std::string(name) + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "elu";
}

TokenSet TokenSet::ones(const std::vector<std::string>& domains, Index dim, Index balance_dim) {
  TokenSet t;
  t.shared_token = RowVector::Ones(dim);
  for (const auto& d : domains) {
    t.domain_tokens[d] = RowVector::Ones(dim);
    t.balance_tokens[d] = RowVector::Ones(balance_dim);
  }
  return t;
}

void RefineConfig::validate() const {
  if (k < 1) throw ConfigError("gsl.k must be >= 1");
  if (r < 1) throw ConfigError("gsl.r must be >= 1");
  if (lsh_batch != 0 && lsh_batch < k + 1) {
    throw ConfigError("gsl.lsh_batch must be 0 or >= k+1 (k=" + std::to_string(k) + ")");
  }
  if (!(eps > 0.0)) throw ConfigError("gsl.eps must be positive");
}

DenseMatrix activate(const DenseMatrix& x, Activation act) {
  switch (act) {
    case Activation::elu: return (x.array() > 0.0).select(x.array(), x.array().exp() - 1.0);
    case Activation::relu: return x.cwiseMax(0.0);
    case Activation::tanh: return x.array().tanh();
  }
  return x;
}

DenseMatrix unify_features(const DenseMatrix& x, const RowVector& domain_token,
                           const RowVector& shared_token, Activation act) {
  require_row_token("unify_features", x, domain_token);
  require_row_token("unify_features", x, shared_token);
  const DenseMatrix inner = x.array().rowwise() * domain_token.array();
  return activate(inner, act).array().rowwise() * shared_token.array();
}

DenseMatrix fuse_views(const DenseMatrix& x_unified, const Csr& a, int r, const RowVector& balance_token) {
  if (r < 1) throw ConfigError("fuse_views: order r must be >= 1");
  DenseMatrix agg = x_unified;
  for (int i = 0; i < r; ++i) agg = spmm(a, agg);
  DenseMatrix h(x_unified.rows(), 2 * x_unified.cols());
  h << x_unified, agg;
  require_row_token("fuse_views", h, balance_token);
  return h.array().rowwise() * balance_token.array();
}

Csr knn_exact(const DenseMatrix& h, std::size_t k, KnnStats* stats) {
  if (k < 1) throw ConfigError("knn: k must be >= 1");
  std::vector<std::size_t> all(static_cast<std::size_t>(h.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return knn_over_buckets(normalize_rows(h), k, {all}, stats);
}

Csr knn_lsh(const DenseMatrix& h, std::size_t k, std::size_t batch, std::uint64_t seed, KnnStats* stats) {
  if (k < 1) throw ConfigError("knn: k must be >= 1");
  if (batch < k + 1) {
    throw ConfigError("knn_lsh: batch " + std::to_string(batch) + " must be >= k+1 = " + std::to_string(k + 1));
  }
  const DenseMatrix hn = normalize_rows(h);
  const auto n = static_cast<std::size_t>(h.rows());
  int planes = 0;
  if (n > batch) planes = static_cast<int>(std::ceil(std::log2(static_cast<double>(n) / static_cast<double>(batch))));

  std::vector<std::vector<std::size_t>> buckets;
  if (planes == 0) {
    buckets.emplace_back(n);
    for (std::size_t i = 0; i < n; ++i) buckets[0][i] = i;
  } else {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    DenseMatrix dirs(planes, h.cols());
    for (Index i = 0; i < dirs.size(); ++i) dirs.data()[i] = normal(rng);
    // Hyperplanes through the centroid of the normalized rows.
    const RowVector centroid = hn.colwise().mean();
    const DenseMatrix proj = (hn.rowwise() - centroid) * dirs.transpose();
    std::map<std::uint64_t, std::vector<std::size_t>> by_code;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t code = 0;
      for (int b = 0; b < planes; ++b) {
        if (proj(static_cast<Index>(i), b) > 0.0) code |= (std::uint64_t{1} << b);
      }
      by_code[code].push_back(i);
    }
    for (auto& [code, members] : by_code) buckets.push_back(std::move(members));
    while (buckets.size() > 1) {
      std::size_t smallest = 0;
      for (std::size_t b = 1; b < buckets.size(); ++b) {
        if (buckets[b].size() < buckets[smallest].size()) smallest = b;
      }
      if (buckets[smallest].size() >= batch) break;
      std::size_t other = smallest == 0 ? 1 : smallest - 1;
      if (smallest > 0 && smallest + 1 < buckets.size() &&
          buckets[smallest + 1].size() < buckets[smallest - 1].size()) {
        other = smallest + 1;
      }
      const std::size_t keep = std::min(smallest, other);
      const std::size_t drop = std::max(smallest, other);
      std::vector<std::size_t> merged;
      merged.reserve(buckets[keep].size() + buckets[drop].size());
      std::merge(buckets[keep].begin(), buckets[keep].end(), buckets[drop].begin(), buckets[drop].end(),
                 std::back_inserter(merged));
      buckets[keep] = std::move(merged);
      buckets.erase(buckets.begin() + static_cast<std::ptrdiff_t>(drop));
    }
  }
  return knn_over_buckets(hn, k, buckets, stats);
}

Csr knn(const DenseMatrix& h, const RefineConfig& cfg, KnnStats* stats) {
  if (cfg.lsh_batch == 0) return knn_exact(h, cfg.k, stats);
  return knn_lsh(h, cfg.k, cfg.lsh_batch, cfg.lsh_seed, stats);
}

Csr postprocess(const Csr& a_sp, double eps) {
  if (!a_sp.is_square()) throw ShapeError("postprocess: matrix must be square");
  return degree_normalize_selfloops(symmetrize_activate(a_sp), eps);
}

Csr fusion_adjacency(const Csr& a, const RefineConfig& cfg) {
  return cfg.fuse_normalized_adj ? degree_normalize_selfloops(a, cfg.eps) : a;
}

Csr refine(const DenseMatrix& x_unified, const Csr& a, const RowVector& balance_token, const RefineConfig& cfg) {
  cfg.validate();
  DenseMatrix h;
  if (cfg.use_topology) {
    h = fuse_views(x_unified, fusion_adjacency(a, cfg), cfg.r, balance_token);
  } else {
    require_row_token("refine", x_unified, balance_token);
    h = x_unified.array().rowwise() * balance_token.array();
  }
  return postprocess(knn(h, cfg), cfg.eps);
}

Csr refine(const Graph& unified, const TokenSet& tokens, const RefineConfig& cfg) {
  const auto it = tokens.balance_tokens.find(unified.domain_id);
  if (it == tokens.balance_tokens.end()) {
    throw PreconditionError("refine: no balance token for domain '" + unified.domain_id + "'");
  }
  return refine(unified.features, unified.adjacency, it->second, cfg);
}

// ---- taped ----

ad::Var activate(ad::Var x, Activation act) {
  switch (act) {
    case Activation::elu: return ad::elu(x);
    case Activation::relu: return ad::relu(x);
    case Activation::tanh: return ad::tanh(x);
  }
  return x;
}

ad::Var unify_features(ad::Var x, ad::Var domain_token, ad::Var shared_token, Activation act) {
  return ad::row_broadcast_mul(activate(ad::row_broadcast_mul(x, domain_token), act), shared_token);
}

ad::Var fuse_views(ad::Var x_unified, const ad::CsrPtr& a, int r, ad::Var balance_token) {
  if (r < 1) throw ConfigError("fuse_views: order r must be >= 1");
  ad::Var agg = x_unified;
  for (int i = 0; i < r; ++i) agg = ad::spmm(a, agg);
  return ad::row_broadcast_mul(ad::concat_cols(x_unified, agg), balance_token);
}

ad::Var similarity_features(ad::Var x_unified, const ad::CsrPtr& a, ad::Var balance_token,
                            const RefineConfig& cfg) {
  if (cfg.use_topology) return fuse_views(x_unified, a, cfg.r, balance_token);
  return ad::row_broadcast_mul(x_unified, balance_token);
}

Csr RefinedAdjacency::materialize() const {
  const DenseMatrix& v = values.value();
  return pattern->with_values(std::vector<double>(v.data(), v.data() + v.size()));
}

RefinedAdjacency refined_adjacency(ad::Var h, const Csr& knn_pattern, double eps) {
  const std::size_t n = knn_pattern.rows();
  if (!knn_pattern.is_square() || n != static_cast<std::size_t>(h.rows())) {
    throw ShapeError("refined_adjacency: pattern does not match the feature rows");
  }
  // Entries of the kNN pattern in CSR order.
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  rows.reserve(knn_pattern.nnz());
  cols.reserve(knn_pattern.nnz());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t e = knn_pattern.row_begin(r); e < knn_pattern.row_end(r); ++e) {
      rows.push_back(r);
      cols.push_back(knn_pattern.col_idx()[e]);
    }
  }
  // Output pattern: kNN union its transpose union the diagonal. Each output
  // entry (i,j) averages the kNN entries (i,j) and (j,i) when present.
  std::vector<Triplet<double>> out_trips;
  out_trips.reserve(2 * rows.size() + n);
  for (std::size_t e = 0; e < rows.size(); ++e) {
    out_trips.push_back({rows[e], cols[e], 0.0});
    out_trips.push_back({cols[e], rows[e], 0.0});
  }
  for (std::size_t i = 0; i < n; ++i) out_trips.push_back({i, i, 0.0});
  auto pattern = std::make_shared<const Csr>(Csr::from_triplets(n, n, std::move(out_trips)));

  const auto locate = [&](std::size_t r, std::size_t c) {
    const auto& idx = pattern->col_idx();
    auto first = idx.begin() + static_cast<std::ptrdiff_t>(pattern->row_begin(r));
    auto last = idx.begin() + static_cast<std::ptrdiff_t>(pattern->row_end(r));
    return static_cast<std::size_t>(std::lower_bound(first, last, c) - idx.begin());
  };
  std::vector<Triplet<double>> map_trips;
  map_trips.reserve(2 * rows.size());
  for (std::size_t e = 0; e < rows.size(); ++e) {
    map_trips.push_back({locate(rows[e], cols[e]), e, 0.5});
    map_trips.push_back({locate(cols[e], rows[e]), e, 0.5});
  }
  auto sym_map = std::make_shared<const Csr>(
      Csr::from_triplets(pattern->nnz(), rows.size(), std::move(map_trips), DuplicatePolicy::sum));
  DenseMatrix diagonal = DenseMatrix::Zero(static_cast<Index>(pattern->nnz()), 1);
  for (std::size_t i = 0; i < n; ++i) diagonal(static_cast<Index>(locate(i, i)), 0) = 1.0;

  ad::Tape& tape = *h.tape;
  const ad::Var sims = ad::row_pair_dot(ad::l2_row_normalize(h), std::move(rows), std::move(cols));
  const ad::Var sym = ad::spmm(sym_map, ad::relu(sims));
  const ad::Var tilde = ad::add(sym, tape.constant(std::move(diagonal)));
  return RefinedAdjacency{pattern, ad::degree_normalize_values(pattern, tilde, eps)};
}

}  // namespace mdgfm
