#include "mdgfm/encoder.hpp"

#include <cmath>

#include "mdgfm/error.hpp"

namespace mdgfm {

void EncoderConfig::validate() const {
  if (n_layers < 1) throw ConfigError("encoder.n_layers must be >= 1");
  if (hidden_dim < 1) throw ConfigError("encoder.hidden_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder.dropout must be in [0, 1)");
}

DenseMatrix glorot_uniform(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  DenseMatrix w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

EncoderParams init_encoder(Index in_dim, const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  EncoderParams p;
  Index rows = in_dim;
  for (int l = 0; l < cfg.n_layers; ++l) {
    p.weights.push_back(glorot_uniform(rows, cfg.hidden_dim, rng));
    if (cfg.bias) p.biases.push_back(RowVector::Zero(cfg.hidden_dim));
    rows = cfg.hidden_dim;
  }
  return p;
}

std::string encoder_weight_key(int layer) { return "encoder.w" + std::to_string(layer); }
std::string encoder_bias_key(int layer) { return "encoder.b" + std::to_string(layer); }

void store_encoder(const EncoderParams& p, ad::ParamMap& out) {
  for (int l = 0; l < p.n_layers(); ++l) {
    out[encoder_weight_key(l)] = p.weights[static_cast<std::size_t>(l)];
    if (!p.biases.empty()) out[encoder_bias_key(l)] = p.biases[static_cast<std::size_t>(l)];
  }
}

namespace {

const DenseMatrix& require_key(const ad::ParamMap& params, const std::string& key) {
  const auto it = params.find(key);
  if (it == params.end()) throw PreconditionError("missing parameter '" + key + "'");
  return it->second;
}

}  // namespace

EncoderParams load_encoder(const ad::ParamMap& params, int n_layers, bool bias) {
  EncoderParams p;
  for (int l = 0; l < n_layers; ++l) {
    p.weights.push_back(require_key(params, encoder_weight_key(l)));
    if (bias) p.biases.push_back(require_key(params, encoder_bias_key(l)));
  }
  return p;
}

EncoderVars encoder_vars(ad::Tape& tape, const ad::ParamMap& params, int n_layers, bool bias, bool trainable) {
  EncoderVars v;
  const auto leaf = [&](const std::string& key) {
    const DenseMatrix& value = require_key(params, key);
    return trainable ? tape.parameter(key, value) : tape.constant(value);
  };
  for (int l = 0; l < n_layers; ++l) {
    v.weights.push_back(leaf(encoder_weight_key(l)));
    if (bias) v.biases.push_back(leaf(encoder_bias_key(l)));
  }
  return v;
}

EncoderVars encoder_vars(ad::Tape& tape, const EncoderParams& p) {
  EncoderVars v;
  for (const auto& w : p.weights) v.weights.push_back(tape.constant(w));
  for (const auto& b : p.biases) v.biases.push_back(tape.constant(b));
  return v;
}

ad::Var encode(const Propagation& a, ad::Var x, const EncoderVars& vars, double dropout, bool training,
               std::mt19937_64* rng) {
  if (vars.weights.empty()) throw ShapeError("encode: encoder has no layers");
  const std::size_t layers = vars.weights.size();
  ad::Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    ad::Var xw = ad::matmul(h, vars.weights[l]);
    ad::Var ax = a.values ? ad::spmm_values(a.pattern, *a.values, xw) : ad::spmm(a.pattern, xw);
    if (!vars.biases.empty()) ax = ad::row_broadcast_add(ax, vars.biases[l]);
    h = l + 1 < layers ? ad::elu(ad::dropout(ax, dropout, training, rng)) : ax;
  }
  return h;
}

DenseMatrix encode(const Csr& a, const DenseMatrix& x, const EncoderParams& p) {
  if (p.weights.empty()) throw ShapeError("encode: encoder has no layers");
  DenseMatrix h = x;
  for (int l = 0; l < p.n_layers(); ++l) {
    const auto& w = p.weights[static_cast<std::size_t>(l)];
    if (h.cols() != w.rows()) throw ShapeError("encode: layer " + std::to_string(l) + " width mismatch");
    DenseMatrix ax = spmm(a, DenseMatrix(h * w));
    if (!p.biases.empty()) ax.rowwise() += p.biases[static_cast<std::size_t>(l)];
    if (l + 1 < p.n_layers()) ax = (ax.array() > 0.0).select(ax.array(), ax.array().exp() - 1.0);
    h = std::move(ax);
  }
  return h;
}

}  // namespace mdgfm
