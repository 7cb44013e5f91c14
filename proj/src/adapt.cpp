#include "mdgfm/adapt.hpp"

#include <algorithm>
#include <cmath>

#include "mdgfm/adam.hpp"
#include "mdgfm/error.hpp"
#include "mdgfm/random.hpp"

namespace mdgfm {

TargetBalance parse_target_balance(std::string_view s) {
  if (s == "trained") return TargetBalance::trained;
  if (s == "mixed") return TargetBalance::mixed;
  throw ConfigError("unknown target_balance '" + std::string(s) + "'");
}

std::string to_string(TargetBalance t) { return t == TargetBalance::mixed ? "mixed" : "trained"; }

void AdaptConfig::validate() const {
  if (epochs < 0) throw ConfigError("adapt.epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("adapt.learning_rate must be positive");
  if (!(tau > 0.0)) throw ConfigError("adapt.tau must be positive");
  if (shots < 1) throw ConfigError("adapt.shots must be >= 1");
  if (k < 1) throw ConfigError("adapt.k must be >= 1");
  if (lsh_batch != 0 && lsh_batch < k + 1) throw ConfigError("adapt.lsh_batch must be 0 or >= k+1");
}

KeyValues to_key_values(const AdaptConfig& c) {
  return {
      {"adapt.epochs", std::to_string(c.epochs)},
      {"adapt.learning_rate", format_double(c.learning_rate)},
      {"adapt.tau", format_double(c.tau)},
      {"adapt.shots", std::to_string(c.shots)},
      {"adapt.literal_eq7", format_bool(c.literal_eq7)},
      {"adapt.target_balance", to_string(c.target_balance)},
      {"adapt.k", std::to_string(c.k)},
      {"adapt.lsh_batch", std::to_string(c.lsh_batch)},
  };
}

AdaptConfig read_adapt_config(ConfigReader& r, const AdaptConfig& d) {
  AdaptConfig c = d;
  c.epochs = static_cast<int>(r.get_int("adapt.epochs", d.epochs));
  c.learning_rate = r.get_double("adapt.learning_rate", d.learning_rate);
  c.tau = r.get_double("adapt.tau", d.tau);
  c.shots = static_cast<int>(r.get_int("adapt.shots", d.shots));
  c.literal_eq7 = r.get_bool("adapt.literal_eq7", d.literal_eq7);
  c.target_balance = parse_target_balance(r.get_string("adapt.target_balance", to_string(d.target_balance)));
  c.k = static_cast<std::size_t>(r.get_u64("adapt.k", d.k));
  c.lsh_batch = static_cast<std::size_t>(r.get_u64("adapt.lsh_batch", d.lsh_batch));
  c.validate();
  return c;
}

RefineConfig downstream_gsl(const Checkpoint& cp, const AdaptConfig& cfg) {
  RefineConfig g = cp.config.effective_gsl();
  g.k = cfg.k;
  g.lsh_batch = cfg.lsh_batch;
  return g;
}

PromptState PromptState::initial(const Checkpoint& cp, double tau) {
  PromptState ps;
  ps.alpha_logits = RowVector::Zero(static_cast<Index>(cp.source_domain_ids.size()));
  ps.p_s = RowVector::Ones(cp.config.unified_dim);
  ps.beta_logit = 0.0;
  ps.t_target = RowVector::Ones(cp.config.balance_dim());
  ps.tau = tau;
  return ps;
}

ad::ParamMap prompt_params(const PromptState& ps) {
  ad::ParamMap p;
  p[kAlphaKey] = ps.alpha_logits;
  p[kSpecificKey] = ps.p_s;
  p[kBetaKey] = DenseMatrix::Constant(1, 1, ps.beta_logit);
  p[kTargetTokenKey] = ps.t_target;
  return p;
}

PromptState prompt_state(const ad::ParamMap& params, double tau) {
  PromptState ps;
  ps.alpha_logits = params.at(kAlphaKey);
  ps.p_s = params.at(kSpecificKey);
  ps.beta_logit = params.at(kBetaKey)(0, 0);
  ps.t_target = params.at(kTargetTokenKey);
  ps.tau = tau;
  return ps;
}

PromptVars prompt_vars(ad::Tape& tape, const ad::ParamMap& params, const Checkpoint& cp, bool trainable) {
  const auto leaf = [&](const char* key, bool train) {
    const auto it = params.find(key);
    if (it == params.end()) throw PreconditionError(std::string("missing prompt parameter '") + key + "'");
    return train ? tape.parameter(key, it->second) : tape.constant(it->second);
  };
  PromptVars v;
  v.alpha_logits = leaf(kAlphaKey, trainable);
  v.p_s = leaf(kSpecificKey, trainable);
  v.beta_logit = leaf(kBetaKey, trainable);
  v.t_target = leaf(kTargetTokenKey, trainable && cp.config.variant != Variant::wo_balance);
  return v;
}

TargetView prepare_target(const Graph& g, const Checkpoint& cp) {
  g.validate();
  PcaOptions opts;
  opts.center = cp.config.pca_center;
  opts.seed = derive_seed(cp.config.seed, {4});
  TargetView t;
  t.basis = fit_pca(g.features, cp.config.unified_dim, opts);
  SourceView v = make_source_view(g, t.basis, cp.config);
  t.x = std::move(v.x);
  t.adj_norm = std::move(v.adj_norm);
  t.adj_fuse = std::move(v.adj_fuse);
  return t;
}

namespace {

// Stacks per-domain tokens as rows in checkpoint domain order.
DenseMatrix stack_tokens(const Checkpoint& cp, const std::map<std::string, RowVector>& tokens) {
  if (cp.source_domain_ids.empty()) throw ShapeError("checkpoint has no source domains");
  const Index width = tokens.at(cp.source_domain_ids.front()).size();
  DenseMatrix out(static_cast<Index>(cp.source_domain_ids.size()), width);
  for (std::size_t i = 0; i < cp.source_domain_ids.size(); ++i) {
    out.row(static_cast<Index>(i)) = tokens.at(cp.source_domain_ids[i]);
  }
  return out;
}

ad::Var mixture(ad::Var alpha_logits, const Checkpoint& cp, const std::map<std::string, RowVector>& tokens) {
  const auto n = static_cast<Index>(cp.source_domain_ids.size());
  if (alpha_logits.rows() != 1 || alpha_logits.cols() != n) {
    throw ShapeError("meta prompt: " + std::to_string(alpha_logits.cols()) + " coefficients for " +
                     std::to_string(n) + " source domains");
  }
  return ad::matmul(ad::softmax_rows(alpha_logits), alpha_logits.tape->constant(stack_tokens(cp, tokens)));
}

}  // namespace

ad::Var meta_prompt(ad::Var x, ad::Var alpha_logits, const Checkpoint& cp) {
  const ad::Var mix = mixture(alpha_logits, cp, cp.tokens.domain_tokens);
  const ad::Var t_s = x.tape->constant(cp.tokens.shared_token);
  return ad::row_broadcast_mul(activate(ad::row_broadcast_mul(x, mix), cp.config.token_activation), t_s);
}

ad::Var compose_input(ad::Var x, const PromptVars& vars, const Checkpoint& cp) {
  const ad::Var beta = ad::sigmoid(vars.beta_logit);
  const ad::Var one_minus = ad::add_scalar(ad::neg(beta), 1.0);
  return ad::scale_by(meta_prompt(x, vars.alpha_logits, cp), beta) +
         ad::scale_by(ad::row_broadcast_mul(x, vars.p_s), one_minus);
}

TargetEmbedding embed_target(ad::Tape& tape, const TargetView& target, const Checkpoint& cp, const PromptVars& vars,
                             const RefineConfig& gsl, TargetBalance balance, bool training, std::mt19937_64* rng,
                             const Csr* frozen_pattern) {
  if (target.x.cols() != cp.config.unified_dim) {
    throw ShapeError("embed_target: features have width " + std::to_string(target.x.cols()) + ", expected " +
                     std::to_string(cp.config.unified_dim));
  }
  TargetEmbedding out;
  const ad::Var xu = compose_input(tape.constant(target.x), vars, cp);
  Propagation prop{target.adj_norm, std::nullopt};
  if (cp.config.variant != Variant::wo_refinedadj) {
    const ad::Var t = balance == TargetBalance::mixed ? mixture(vars.alpha_logits, cp, cp.tokens.balance_tokens)
                                                      : vars.t_target;
    const ad::Var h = similarity_features(xu, target.adj_fuse, t, gsl);
    out.knn_pattern = frozen_pattern ? *frozen_pattern : knn(h.value(), gsl);
    const RefinedAdjacency ra = refined_adjacency(h, out.knn_pattern, gsl.eps);
    prop = Propagation{ra.pattern, ra.values};
  }
  out.z = encode(prop, xu, encoder_vars(tape, cp.encoder), cp.config.encoder.dropout, training, rng);
  return out;
}

std::vector<int> FewShotTask::classes() const {
  std::vector<int> out;
  for (const auto& [c, nodes] : support) out.push_back(c);
  return out;
}

std::size_t FewShotTask::support_size() const {
  std::size_t n = 0;
  for (const auto& [c, nodes] : support) n += nodes.size();
  return n;
}

FewShotTask sample_kshot(const std::vector<int>& labels, int K, std::uint64_t seed) {
  if (K < 1) throw ConfigError("K must be >= 1");
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) members[labels[i]].push_back(i);
  }
  FewShotTask task;
  task.K = K;
  task.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<char> in_support(labels.size(), 0);
  for (auto& [c, nodes] : members) {
    if (nodes.size() < static_cast<std::size_t>(K) + 1) {
      task.dropped_classes.push_back(c);
      continue;
    }
    std::shuffle(nodes.begin(), nodes.end(), rng);
    std::vector<std::size_t> chosen(nodes.begin(), nodes.begin() + K);
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t v : chosen) in_support[v] = 1;
    task.support[c] = std::move(chosen);
  }
  if (task.support.empty()) throw TaskError("no class has at least K+1 = " + std::to_string(K + 1) + " labelled nodes");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0 && !in_support[i] && task.support.count(labels[i])) task.query.push_back(i);
  }
  return task;
}

namespace {

ad::CsrPtr averaging_matrix(const FewShotTask& task, std::size_t n) {
  std::vector<Triplet<double>> trips;
  std::size_t row = 0;
  for (const auto& [c, nodes] : task.support) {
    if (nodes.empty()) throw PreconditionError("prototypes: class " + std::to_string(c) + " has no support nodes");
    for (std::size_t v : nodes) {
      if (v >= n) throw BoundsError("prototypes: support node " + std::to_string(v) + " out of range");
      trips.push_back({row, v, 1.0 / static_cast<double>(nodes.size())});
    }
    ++row;
  }
  return std::make_shared<const Csr>(Csr::from_triplets(row, n, std::move(trips), DuplicatePolicy::sum));
}

void support_rows(const FewShotTask& task, std::vector<std::size_t>& rows, std::vector<std::size_t>& targets) {
  std::size_t ci = 0;
  for (const auto& [c, nodes] : task.support) {
    for (std::size_t v : nodes) {
      rows.push_back(v);
      targets.push_back(ci);
    }
    ++ci;
  }
}

}  // namespace

ad::Var prototypes(ad::Var z, const FewShotTask& task) {
  return ad::spmm(averaging_matrix(task, static_cast<std::size_t>(z.rows())), z);
}

DenseMatrix prototypes(const DenseMatrix& z, const FewShotTask& task) {
  return spmm(*averaging_matrix(task, static_cast<std::size_t>(z.rows())), z);
}

ad::Var classify_loss(ad::Var z, ad::Var protos, const std::vector<std::size_t>& targets, double tau, bool literal) {
  if (!(tau > 0.0)) throw ConfigError("classify: tau must be positive");
  const ad::Var logits = ad::cosine_similarity_matrix(z, protos) * (1.0 / tau);
  const ad::Var logp = ad::log_softmax_rows(logits);
  if (!literal) return -ad::mean_scalar(ad::pick_per_row(logp, targets));
  // -log(s_y / sum exp(s)) = -log(s_y) + (s_y - log_softmax_y)
  const ad::Var s_y = ad::pick_per_row(logits, targets);
  const ad::Var lse = s_y - ad::pick_per_row(logp, targets);
  return ad::mean_scalar(lse - ad::log(ad::add_scalar(ad::relu(s_y), 1e-12)));
}

Classification classify(const DenseMatrix& z, const DenseMatrix& protos, double tau,
                        const std::vector<std::size_t>& targets, bool literal) {
  ad::Tape tape(false);
  const ad::Var zv = tape.constant(z);
  const ad::Var pv = tape.constant(protos);
  Classification out;
  const DenseMatrix logits = ad::cosine_similarity_matrix(zv, pv).value();
  out.predictions.resize(static_cast<std::size_t>(z.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out.predictions[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  if (!targets.empty()) out.loss = classify_loss(zv, pv, targets, tau, literal).scalar();
  return out;
}

ad::Var support_loss(ad::Tape& tape, const ad::ParamMap& prompt, const TargetView& target, const Checkpoint& cp,
                     const FewShotTask& task, const AdaptConfig& cfg, const Csr* frozen_pattern, Csr* pattern_out) {
  const PromptVars vars = prompt_vars(tape, prompt, cp, true);
  const TargetEmbedding emb =
      embed_target(tape, target, cp, vars, downstream_gsl(cp, cfg), cfg.target_balance, false, nullptr, frozen_pattern);
  if (pattern_out) *pattern_out = emb.knn_pattern;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> targets;
  support_rows(task, rows, targets);
  return classify_loss(ad::gather_rows(emb.z, rows), prototypes(emb.z, task), targets, cfg.tau, cfg.literal_eq7);
}

double evaluate(const TargetView& target, const std::vector<int>& labels, const Checkpoint& cp,
                const FewShotTask& task, const PromptState& state, const AdaptConfig& cfg) {
  if (task.query.empty()) throw TaskError("evaluate: empty query set");
  ad::Tape tape;
  const PromptVars vars = prompt_vars(tape, prompt_params(state), cp, false);
  const TargetEmbedding emb = embed_target(tape, target, cp, vars, downstream_gsl(cp, cfg), cfg.target_balance);
  const DenseMatrix& z = emb.z.value();
  const DenseMatrix protos = prototypes(z, task);
  DenseMatrix zq(static_cast<Index>(task.query.size()), z.cols());
  for (std::size_t i = 0; i < task.query.size(); ++i) zq.row(static_cast<Index>(i)) = z.row(static_cast<Index>(task.query[i]));
  const Classification c = classify(zq, protos, state.tau, {});
  const std::vector<int> classes = task.classes();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < task.query.size(); ++i) {
    if (classes[c.predictions[i]] == labels[task.query[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.query.size());
}

TuneResult tune(const TargetView& target, const std::vector<int>& labels, const Checkpoint& cp,
                const FewShotTask& task, const AdaptConfig& cfg) {
  cfg.validate();
  ad::ParamMap params = prompt_params(PromptState::initial(cp, cfg.tau));
  Adam adam(AdamConfig{cfg.learning_rate});
  TuneResult out;
  for (int e = 0; e < cfg.epochs; ++e) {
    ad::Tape tape;
    const ad::Var loss = support_loss(tape, params, target, cp, task, cfg);
    out.support_losses.push_back(loss.scalar());
    adam.step(params, tape.backward(loss));
  }
  out.state = prompt_state(params, cfg.tau);
  out.accuracy = evaluate(target, labels, cp, task, out.state, cfg);
  return out;
}

}  // namespace mdgfm
