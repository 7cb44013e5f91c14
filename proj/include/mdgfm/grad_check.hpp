#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "mdgfm/autodiff.hpp"

namespace mdgfm::ad {

using ParamMap = std::map<std::string, DenseMatrix>;

// Builds a scalar loss on the given tape from the parameter values. Must be
// deterministic: dropout off, fixed kNN patterns, fixed seeds.
using LossBuilder = std::function<Var(Tape&, const ParamMap&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates checked per parameter; larger parameters are subsampled.
  std::size_t max_coords = 200;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +-step perturbation changed the activity pattern of a
  // non-smooth op (a ReLU crossing zero); these are excluded.
  std::size_t skipped_kinks = 0;
  std::string worst;
};

// Central differences against the taped gradient. The per-coordinate error is
// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckReport grad_check(const LossBuilder& build_loss, const ParamMap& params,
                           GradCheckOptions options = {});

}  // namespace mdgfm::ad
