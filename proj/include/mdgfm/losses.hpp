#pragma once

#include <random>
#include <vector>

#include "mdgfm/autodiff.hpp"

namespace mdgfm {

// Two-layer projection head used only inside the contrastive losses.
struct HeadParams {
  DenseMatrix w0;
  DenseMatrix w1;
  bool operator==(const HeadParams&) const = default;
};

inline constexpr const char* kHeadW0 = "head.w0";
inline constexpr const char* kHeadW1 = "head.w1";

HeadParams init_head(Index dim, std::mt19937_64& rng);

// l2norm(elu(z W0) W1), row-wise.
ad::Var project_head(ad::Var z, ad::Var w0, ad::Var w1);
DenseMatrix project_head(const DenseMatrix& z, const HeadParams& head);

// Symmetrized InfoNCE with the matching row of the other view as the only
// positive. Rows are expected to be unit length.
ad::Var loss_identity(ad::Var z1t, ad::Var z2t, double tau_c);

// InfoNCE whose positives are weighted by A' restricted to the batch. The
// weights are constants. Anchors whose weight row is empty are skipped and
// counted in `skipped` (both directions).
ad::Var loss_refined(ad::Var z1t, ad::Var z2t, const DenseMatrix& weights, double tau_c,
                     std::size_t* skipped = nullptr);

// Dense batch x batch block of a sparse matrix.
DenseMatrix restrict_to_batch(const Csr& a, const std::vector<std::size_t>& batch);

}  // namespace mdgfm
