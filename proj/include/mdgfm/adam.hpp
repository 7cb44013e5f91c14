#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mdgfm/autodiff.hpp"
#include "mdgfm/grad_check.hpp"

namespace mdgfm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with per-parameter step counters, so parameters that only receive a
// gradient on some steps get the correct bias correction.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(ad::ParamMap& params, const ad::Gradients& grads) {
    for (const auto& [key, g] : grads) {
      auto it = params.find(key);
      if (it == params.end()) continue;
      auto& st = state_[key];
      if (st.steps == 0) {
        st.m = DenseMatrix::Zero(g.rows(), g.cols());
        st.v = DenseMatrix::Zero(g.rows(), g.cols());
      }
      ++st.steps;
      st.m = cfg_.beta1 * st.m + (1.0 - cfg_.beta1) * g;
      st.v = cfg_.beta2 * st.v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.steps));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.steps));
      it->second.array() -=
          cfg_.learning_rate * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + cfg_.eps);
    }
  }

 private:
  struct State {
    DenseMatrix m;
    DenseMatrix v;
    long steps = 0;
  };
  AdamConfig cfg_;
  std::map<std::string, State> state_;
};

}  // namespace mdgfm
