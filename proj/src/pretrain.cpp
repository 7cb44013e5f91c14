#include "mdgfm/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mdgfm/adam.hpp"
#include "mdgfm/error.hpp"
#include "mdgfm/random.hpp"

namespace mdgfm {

Schedule parse_schedule(std::string_view s) {
  if (s == "per_epoch_roundrobin") return Schedule::per_epoch_roundrobin;
  if (s == "per_graph_full") return Schedule::per_graph_full;
  throw ConfigError("unknown schedule '" + std::string(s) + "'");
}

StepMode parse_step_mode(std::string_view s) {
  if (s == "graph") return StepMode::graph;
  if (s == "batch") return StepMode::batch;
  throw ConfigError("unknown step mode '" + std::string(s) + "'");
}

Variant parse_variant(std::string_view s) {
  if (s == "full") return Variant::full;
  if (s == "wo_refinedadj") return Variant::wo_refinedadj;
  if (s == "wo_sumtoken") return Variant::wo_sumtoken;
  if (s == "wo_topology") return Variant::wo_topology;
  if (s == "wo_balance") return Variant::wo_balance;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

std::string to_string(Schedule s) {
  return s == Schedule::per_graph_full ? "per_graph_full" : "per_epoch_roundrobin";
}

std::string to_string(StepMode s) { return s == StepMode::batch ? "batch" : "graph"; }

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::wo_refinedadj: return "wo_refinedadj";
    case Variant::wo_sumtoken: return "wo_sumtoken";
    case Variant::wo_topology: return "wo_topology";
    case Variant::wo_balance: return "wo_balance";
  }
  return "full";
}

void PretrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be positive");
  if (epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("pretrain.batch_size must be >= 2");
  if (!(tau_c > 0.0)) throw ConfigError("pretrain.tau_c must be positive");
  if (unified_dim < 1) throw ConfigError("pretrain.unified_dim must be >= 1");
  encoder.validate();
  gsl.validate();
}

RefineConfig PretrainConfig::effective_gsl() const {
  RefineConfig g = gsl;
  if (variant == Variant::wo_topology) g.use_topology = false;
  return g;
}

Index PretrainConfig::balance_dim() const { return effective_gsl().use_topology ? 2 * unified_dim : unified_dim; }

KeyValues to_key_values(const PretrainConfig& c) {
  return {
      {"pretrain.learning_rate", format_double(c.learning_rate)},
      {"pretrain.epochs", std::to_string(c.epochs)},
      {"pretrain.batch_size", std::to_string(c.batch_size)},
      {"pretrain.tau_c", format_double(c.tau_c)},
      {"pretrain.unified_dim", std::to_string(c.unified_dim)},
      {"pretrain.seed", std::to_string(c.seed)},
      {"pretrain.pca_center", format_bool(c.pca_center)},
      {"pretrain.token_activation", to_string(c.token_activation)},
      {"pretrain.schedule", to_string(c.schedule)},
      {"pretrain.step", to_string(c.step)},
      {"pretrain.shared_dropout_mask", format_bool(c.shared_dropout_mask)},
      {"pretrain.variant", to_string(c.variant)},
      {"encoder.hidden_dim", std::to_string(c.encoder.hidden_dim)},
      {"encoder.n_layers", std::to_string(c.encoder.n_layers)},
      {"encoder.dropout", format_double(c.encoder.dropout)},
      {"encoder.bias", format_bool(c.encoder.bias)},
      {"gsl.k", std::to_string(c.gsl.k)},
      {"gsl.r", std::to_string(c.gsl.r)},
      {"gsl.lsh_batch", std::to_string(c.gsl.lsh_batch)},
      {"gsl.lsh_seed", std::to_string(c.gsl.lsh_seed)},
      {"gsl.eps", format_double(c.gsl.eps)},
      {"gsl.fuse_normalized_adj", format_bool(c.gsl.fuse_normalized_adj)},
  };
}

PretrainConfig read_pretrain_config(ConfigReader& r, const PretrainConfig& d) {
  PretrainConfig c = d;
  c.learning_rate = r.get_double("pretrain.learning_rate", d.learning_rate);
  c.epochs = static_cast<int>(r.get_int("pretrain.epochs", d.epochs));
  c.batch_size = static_cast<std::size_t>(r.get_u64("pretrain.batch_size", d.batch_size));
  c.tau_c = r.get_double("pretrain.tau_c", d.tau_c);
  c.unified_dim = static_cast<Index>(r.get_int("pretrain.unified_dim", d.unified_dim));
  c.seed = r.get_u64("pretrain.seed", d.seed);
  c.pca_center = r.get_bool("pretrain.pca_center", d.pca_center);
  c.token_activation = parse_activation(r.get_string("pretrain.token_activation", to_string(d.token_activation)));
  c.schedule = parse_schedule(r.get_string("pretrain.schedule", to_string(d.schedule)));
  c.step = parse_step_mode(r.get_string("pretrain.step", to_string(d.step)));
  c.shared_dropout_mask = r.get_bool("pretrain.shared_dropout_mask", d.shared_dropout_mask);
  c.variant = parse_variant(r.get_string("pretrain.variant", to_string(d.variant)));
  c.encoder.hidden_dim = static_cast<Index>(r.get_int("encoder.hidden_dim", d.encoder.hidden_dim));
  c.encoder.n_layers = static_cast<int>(r.get_int("encoder.n_layers", d.encoder.n_layers));
  c.encoder.dropout = r.get_double("encoder.dropout", d.encoder.dropout);
  c.encoder.bias = r.get_bool("encoder.bias", d.encoder.bias);
  c.gsl.k = static_cast<std::size_t>(r.get_u64("gsl.k", d.gsl.k));
  c.gsl.r = static_cast<int>(r.get_int("gsl.r", d.gsl.r));
  c.gsl.lsh_batch = static_cast<std::size_t>(r.get_u64("gsl.lsh_batch", d.gsl.lsh_batch));
  c.gsl.lsh_seed = r.get_u64("gsl.lsh_seed", d.gsl.lsh_seed);
  c.gsl.eps = r.get_double("gsl.eps", d.gsl.eps);
  c.gsl.fuse_normalized_adj = r.get_bool("gsl.fuse_normalized_adj", d.gsl.fuse_normalized_adj);
  c.validate();
  return c;
}

std::string domain_token_key(const std::string& domain) { return "token.domain." + domain; }
std::string balance_token_key(const std::string& domain) { return "token.balance." + domain; }

SourceView make_source_view(const Graph& g, const ProjectionBasis& basis, const PretrainConfig& cfg) {
  SourceView v;
  v.domain = g.domain_id;
  v.x = project(g.features, basis);
  v.adj_norm = std::make_shared<const Csr>(degree_normalize_selfloops(g.adjacency, cfg.gsl.eps));
  v.adj_fuse = cfg.gsl.fuse_normalized_adj ? v.adj_norm : std::make_shared<const Csr>(g.adjacency);
  return v;
}

PretrainState init_pretrain(const std::vector<Graph>& graphs, const PretrainConfig& cfg) {
  cfg.validate();
  if (graphs.empty()) throw ConfigError("pretrain: no source graphs");
  PretrainState st;
  std::set<std::string> seen;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = graphs[gi];
    g.validate();
    if (g.num_nodes() < 2) throw DataError("pretrain: graph '" + g.domain_id + "' has fewer than 2 nodes");
    if (!seen.insert(g.domain_id).second) throw ConfigError("pretrain: duplicate domain id '" + g.domain_id + "'");
    PcaOptions opts;
    opts.center = cfg.pca_center;
    opts.seed = derive_seed(cfg.seed, {1, gi});
    st.domains.push_back(g.domain_id);
    st.bases[g.domain_id] = fit_pca(g.features, cfg.unified_dim, opts);
    st.views.push_back(make_source_view(g, st.bases[g.domain_id], cfg));
  }
  const Index d = cfg.unified_dim;
  const TokenSet tokens = TokenSet::ones(st.domains, d, cfg.balance_dim());
  st.params[kSharedTokenKey] = tokens.shared_token;
  for (const auto& dom : st.domains) {
    st.params[domain_token_key(dom)] = tokens.domain_tokens.at(dom);
    st.params[balance_token_key(dom)] = tokens.balance_tokens.at(dom);
  }
  std::mt19937_64 init_rng(derive_seed(cfg.seed, {0}));
  store_encoder(init_encoder(d, cfg.encoder, init_rng), st.params);
  const HeadParams head = init_head(cfg.encoder.hidden_dim, init_rng);
  st.params[kHeadW0] = head.w0;
  st.params[kHeadW1] = head.w1;
  return st;
}

Checkpoint make_checkpoint(const PretrainState& st, const PretrainConfig& cfg) {
  Checkpoint cp;
  cp.config = cfg;
  cp.source_domain_ids = st.domains;
  cp.pca_bases = st.bases;
  cp.tokens.shared_token = st.params.at(kSharedTokenKey);
  for (const auto& dom : st.domains) {
    cp.tokens.domain_tokens[dom] = st.params.at(domain_token_key(dom));
    cp.tokens.balance_tokens[dom] = st.params.at(balance_token_key(dom));
  }
  cp.encoder = load_encoder(st.params, cfg.encoder.n_layers, cfg.encoder.bias);
  cp.head = HeadParams{st.params.at(kHeadW0), st.params.at(kHeadW1)};
  return cp;
}

ad::ParamMap checkpoint_params(const Checkpoint& cp) {
  ad::ParamMap p;
  p[kSharedTokenKey] = cp.tokens.shared_token;
  for (const auto& [dom, t] : cp.tokens.domain_tokens) p[domain_token_key(dom)] = t;
  for (const auto& [dom, t] : cp.tokens.balance_tokens) p[balance_token_key(dom)] = t;
  store_encoder(cp.encoder, p);
  p[kHeadW0] = cp.head.w0;
  p[kHeadW1] = cp.head.w1;
  return p;
}

PretrainLoss pretrain_loss(ad::Tape& tape, const ad::ParamMap& params, const SourceView& view,
                           const std::vector<std::vector<std::size_t>>& batches, const PretrainConfig& cfg,
                           bool training, std::mt19937_64* dropout_rng, const Csr* frozen_pattern,
                           const Csr* frozen_weights) {
  const auto leaf = [&](const std::string& key, bool trainable) {
    const auto it = params.find(key);
    if (it == params.end()) throw PreconditionError("pretrain_loss: missing parameter '" + key + "'");
    return trainable ? tape.parameter(key, it->second) : tape.constant(it->second);
  };
  const RefineConfig gsl = cfg.effective_gsl();
  PretrainLoss out;

  const ad::Var x = tape.constant(view.x);
  const ad::Var t_d = leaf(domain_token_key(view.domain), true);
  const ad::Var t_s = leaf(kSharedTokenKey, cfg.variant != Variant::wo_sumtoken);
  const ad::Var xu = unify_features(x, t_d, t_s, cfg.token_activation);

  const Propagation view1{view.adj_norm, std::nullopt};
  Propagation view2 = view1;
  Csr a_ref;
  if (cfg.variant == Variant::wo_refinedadj) {
    a_ref = *view.adj_norm;
  } else {
    const ad::Var t_b = leaf(balance_token_key(view.domain), cfg.variant != Variant::wo_balance);
    const ad::Var h = similarity_features(xu, view.adj_fuse, t_b, gsl);
    out.knn_pattern = frozen_pattern ? *frozen_pattern : knn(h.value(), gsl);
    const RefinedAdjacency ra = refined_adjacency(h, out.knn_pattern, gsl.eps);
    view2 = Propagation{ra.pattern, ra.values};
    a_ref = ra.materialize();
  }

  if (frozen_weights) a_ref = *frozen_weights;
  out.loss_weights = a_ref;

  const EncoderVars enc = encoder_vars(tape, params, cfg.encoder.n_layers, cfg.encoder.bias, true);
  const double p = cfg.encoder.dropout;
  ad::Var z1;
  ad::Var z2;
  if (cfg.shared_dropout_mask && dropout_rng) {
    const std::mt19937_64 saved = *dropout_rng;
    z1 = encode(view1, xu, enc, p, training, dropout_rng);
    *dropout_rng = saved;
    z2 = encode(view2, xu, enc, p, training, dropout_rng);
  } else {
    z1 = encode(view1, xu, enc, p, training, dropout_rng);
    z2 = encode(view2, xu, enc, p, training, dropout_rng);
  }
  const ad::Var w0 = leaf(kHeadW0, true);
  const ad::Var w1 = leaf(kHeadW1, true);
  const ad::Var p1 = project_head(z1, w0, w1);
  const ad::Var p2 = project_head(z2, w0, w1);

  std::size_t total_nodes = 0;
  for (const auto& b : batches) total_nodes += b.size();
  if (total_nodes == 0) throw PreconditionError("pretrain_loss: no nodes in batches");
  std::optional<ad::Var> total;
  for (const auto& b : batches) {
    const ad::Var g1 = ad::gather_rows(p1, b);
    const ad::Var g2 = ad::gather_rows(p2, b);
    const DenseMatrix w = restrict_to_batch(a_ref, b);
    const ad::Var lb = loss_identity(g1, g2, cfg.tau_c) + loss_refined(g1, g2, w, cfg.tau_c, &out.skipped_anchors);
    out.batch_losses.push_back(lb.scalar());
    const ad::Var weighted = lb * (static_cast<double>(b.size()) / static_cast<double>(total_nodes));
    total = total ? ad::add(*total, weighted) : weighted;
  }
  out.total = *total;
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < n; s += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

namespace {

std::string where(int epoch, const std::string& graph, std::optional<std::size_t> batch) {
  std::string s = "epoch " + std::to_string(epoch) + ", graph '" + graph + "'";
  if (batch) s += ", batch " + std::to_string(*batch);
  return s;
}

}  // namespace

Checkpoint pretrain(const std::vector<Graph>& graphs, const PretrainConfig& cfg, std::vector<PretrainLogRow>* log) {
  PretrainState st = init_pretrain(graphs, cfg);
  Adam adam(AdamConfig{cfg.learning_rate});
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, {2}));
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, {3}));

  const auto visit = [&](int epoch, std::size_t gi) {
    const SourceView& view = st.views[gi];
    const auto batches = make_batches(static_cast<std::size_t>(view.x.rows()), cfg.batch_size, shuffle_rng);
    double mean_loss = 0.0;
    if (cfg.step == StepMode::graph) {
      ad::Tape tape;
      PretrainLoss l;
      try {
        l = pretrain_loss(tape, st.params, view, batches, cfg, true, &dropout_rng);
      } catch (const PreconditionError& e) {
        throw TrainingError("non-finite value at " + where(epoch, view.domain, std::nullopt) + ": " + e.what());
      }
      for (std::size_t b = 0; b < l.batch_losses.size(); ++b) {
        if (!std::isfinite(l.batch_losses[b])) throw TrainingError("non-finite loss at " + where(epoch, view.domain, b));
      }
      mean_loss = l.total.scalar();
      adam.step(st.params, tape.backward(l.total));
    } else {
      std::optional<Csr> pattern;
      std::size_t nodes = 0;
      for (std::size_t b = 0; b < batches.size(); ++b) {
        ad::Tape tape;
        PretrainLoss l;
        try {
          l = pretrain_loss(tape, st.params, view, {batches[b]}, cfg, true, &dropout_rng,
                            pattern ? &*pattern : nullptr);
        } catch (const PreconditionError& e) {
          throw TrainingError("non-finite value at " + where(epoch, view.domain, b) + ": " + e.what());
        }
        if (!std::isfinite(l.total.scalar())) throw TrainingError("non-finite loss at " + where(epoch, view.domain, b));
        if (!pattern && cfg.variant != Variant::wo_refinedadj) pattern = l.knn_pattern;
        mean_loss += l.total.scalar() * static_cast<double>(batches[b].size());
        nodes += batches[b].size();
        adam.step(st.params, tape.backward(l.total));
      }
      mean_loss /= static_cast<double>(nodes);
    }
    if (log) log->push_back({epoch, view.domain, mean_loss});
  };

  if (cfg.schedule == Schedule::per_epoch_roundrobin) {
    for (int e = 0; e < cfg.epochs; ++e) {
      for (std::size_t gi = 0; gi < st.views.size(); ++gi) visit(e, gi);
    }
  } else {
    for (std::size_t gi = 0; gi < st.views.size(); ++gi) {
      for (int e = 0; e < cfg.epochs; ++e) visit(e, gi);
    }
  }
  return make_checkpoint(st, cfg);
}

}  // namespace mdgfm
