#include "mdgfm/losses.hpp"

#include <algorithm>

#include "mdgfm/encoder.hpp"
#include "mdgfm/error.hpp"

namespace mdgfm {
namespace {

void require_pair(const char* op, ad::Var a, ad::Var b, double tau_c) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(op) + ": views differ in shape");
  if (a.rows() < 1) throw ShapeError(std::string(op) + ": empty batch");
  if (!(tau_c > 0.0)) throw ConfigError(std::string(op) + ": tau_c must be positive");
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Mean over anchors of log(sum_n w_mn exp(s_mn) / sum_n exp(s_mn)).
ad::Var weighted_direction(ad::Var anchors, ad::Var others, const DenseMatrix& w, double tau_c,
                           std::size_t& skipped) {
  const ad::Var logp = ad::log_softmax_rows(ad::matmul_bt(anchors, others) * (1.0 / tau_c));
  std::vector<std::size_t> keep;
  for (Index i = 0; i < w.rows(); ++i) {
    if ((w.row(i).array() > 0.0).any()) keep.push_back(static_cast<std::size_t>(i));
  }
  skipped += static_cast<std::size_t>(w.rows()) - keep.size();
  if (keep.empty()) return anchors.tape->constant(DenseMatrix::Zero(1, 1));
  if (keep.size() == static_cast<std::size_t>(w.rows())) {
    return ad::mean_scalar(ad::weighted_logsumexp_rows(logp, w));
  }
  DenseMatrix wk(static_cast<Index>(keep.size()), w.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) wk.row(static_cast<Index>(i)) = w.row(static_cast<Index>(keep[i]));
  return ad::mean_scalar(ad::weighted_logsumexp_rows(ad::gather_rows(logp, keep), std::move(wk)));
}

}  // namespace

HeadParams init_head(Index dim, std::mt19937_64& rng) {
  HeadParams h;
  h.w0 = glorot_uniform(dim, dim, rng);
  h.w1 = glorot_uniform(dim, dim, rng);
  return h;
}

ad::Var project_head(ad::Var z, ad::Var w0, ad::Var w1) {
  return ad::l2_row_normalize(ad::matmul(ad::elu(ad::matmul(z, w0)), w1));
}

DenseMatrix project_head(const DenseMatrix& z, const HeadParams& head) {
  DenseMatrix a = z * head.w0;
  a = (a.array() > 0.0).select(a.array(), a.array().exp() - 1.0);
  DenseMatrix out = a * head.w1;
  for (Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    out.row(i) = norm >= 1e-12 ? RowVector(out.row(i) / norm) : RowVector::Zero(out.cols());
  }
  return out;
}

ad::Var loss_identity(ad::Var z1t, ad::Var z2t, double tau_c) {
  require_pair("loss_identity", z1t, z2t, tau_c);
  const auto n = static_cast<std::size_t>(z1t.rows());
  const ad::Var l12 = ad::mean_scalar(ad::pick_per_row(ad::log_softmax_rows(ad::matmul_bt(z1t, z2t) * (1.0 / tau_c)), iota(n)));
  const ad::Var l21 = ad::mean_scalar(ad::pick_per_row(ad::log_softmax_rows(ad::matmul_bt(z2t, z1t) * (1.0 / tau_c)), iota(n)));
  return (l12 + l21) * -0.5;
}

ad::Var loss_refined(ad::Var z1t, ad::Var z2t, const DenseMatrix& weights, double tau_c, std::size_t* skipped) {
  require_pair("loss_refined", z1t, z2t, tau_c);
  if (weights.rows() != z1t.rows() || weights.cols() != z1t.rows()) {
    throw ShapeError("loss_refined: weights must be batch x batch");
  }
  if ((weights.array() < 0.0).any()) throw PreconditionError("loss_refined: negative weight");
  std::size_t count = 0;
  const ad::Var l12 = weighted_direction(z1t, z2t, weights, tau_c, count);
  const DenseMatrix wt = weights.transpose();
  const ad::Var l21 = weighted_direction(z2t, z1t, wt, tau_c, count);
  if (skipped) *skipped += count;
  return (l12 + l21) * -0.5;
}

DenseMatrix restrict_to_batch(const Csr& a, const std::vector<std::size_t>& batch) {
  std::vector<long> slot(a.cols(), -1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i] >= a.rows() || batch[i] >= a.cols()) throw BoundsError("restrict_to_batch: node out of range");
    slot[batch[i]] = static_cast<long>(i);
  }
  DenseMatrix out = DenseMatrix::Zero(static_cast<Index>(batch.size()), static_cast<Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t e = a.row_begin(batch[i]); e < a.row_end(batch[i]); ++e) {
      const long j = slot[a.col_idx()[e]];
      if (j >= 0) out(static_cast<Index>(i), j) = a.values()[e];
    }
  }
  return out;
}

}  // namespace mdgfm
