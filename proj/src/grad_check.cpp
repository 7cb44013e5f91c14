#include "mdgfm/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mdgfm::ad {
namespace {

struct Evaluation {
  double loss;
  std::uint64_t kinks;
};

Evaluation evaluate(const LossBuilder& build, const ParamMap& params) {
  Tape tape(false);
  const Var loss = build(tape, params);
  return {loss.scalar(), tape.kink_signature()};
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build_loss, const ParamMap& params,
                           GradCheckOptions options) {
  Gradients analytic;
  std::uint64_t base_kinks = 0;
  {
    Tape tape(false);
    const Var loss = build_loss(tape, params);
    base_kinks = tape.kink_signature();
    analytic = tape.backward(loss);
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  ParamMap probe = params;
  for (const auto& [key, value] : params) {
    const auto size = static_cast<std::size_t>(value.size());
    std::vector<std::size_t> coords(size);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (size > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    const auto grad_it = analytic.find(key);
    for (std::size_t c : coords) {
      double& slot = probe.at(key).data()[c];
      const double original = slot;
      slot = original + options.step;
      const Evaluation plus = evaluate(build_loss, probe);
      slot = original - options.step;
      const Evaluation minus = evaluate(build_loss, probe);
      slot = original;
      if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
        ++report.skipped_kinks;
        continue;
      }
      const double fd = (plus.loss - minus.loss) / (2.0 * options.step);
      const double ad = grad_it == analytic.end() ? 0.0 : grad_it->second.data()[c];
      const double err = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = key + "[" + std::to_string(c) + "] ad=" + std::to_string(ad) +
                       " fd=" + std::to_string(fd);
      }
    }
  }
  return report;
}

}  // namespace mdgfm::ad
