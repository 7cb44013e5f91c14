#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mdgfm/autodiff.hpp"
#include "mdgfm/grad_check.hpp"

namespace mdgfm {

struct EncoderConfig {
  Index hidden_dim = 256;
  int n_layers = 3;
  double dropout = 0.1;
  bool bias = false;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Weights of the shared graph-convolution stack. W_0 is d x h, the rest h x h.
struct EncoderParams {
  std::vector<DenseMatrix> weights;
  std::vector<RowVector> biases;  // empty when the encoder has no bias

  int n_layers() const { return static_cast<int>(weights.size()); }
  Index in_dim() const { return weights.empty() ? 0 : weights.front().rows(); }
  Index out_dim() const { return weights.empty() ? 0 : weights.back().cols(); }
  bool operator==(const EncoderParams&) const = default;
};

DenseMatrix glorot_uniform(Index fan_in, Index fan_out, std::mt19937_64& rng);
EncoderParams init_encoder(Index in_dim, const EncoderConfig& cfg, std::mt19937_64& rng);

std::string encoder_weight_key(int layer);
std::string encoder_bias_key(int layer);

void store_encoder(const EncoderParams& p, ad::ParamMap& out);
EncoderParams load_encoder(const ad::ParamMap& params, int n_layers, bool bias);

// Propagation matrix of one view: a constant sparse matrix, or a fixed
// pattern whose values are a taped node.
struct Propagation {
  ad::CsrPtr pattern;
  std::optional<ad::Var> values;
};

struct EncoderVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

// Trainable leaves when `trainable`, constants otherwise.
EncoderVars encoder_vars(ad::Tape& tape, const ad::ParamMap& params, int n_layers, bool bias, bool trainable);
EncoderVars encoder_vars(ad::Tape& tape, const EncoderParams& p);

// H_{l+1} = elu(dropout(a H_l W_l)); the last layer is linear.
ad::Var encode(const Propagation& a, ad::Var x, const EncoderVars& vars, double dropout, bool training,
               std::mt19937_64* rng);

// Evaluation-mode forward pass without a tape.
DenseMatrix encode(const Csr& a, const DenseMatrix& x, const EncoderParams& p);

}  // namespace mdgfm
