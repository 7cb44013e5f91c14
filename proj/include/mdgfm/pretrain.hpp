#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mdgfm/config.hpp"
#include "mdgfm/encoder.hpp"
#include "mdgfm/graph.hpp"
#include "mdgfm/losses.hpp"
#include "mdgfm/pca.hpp"
#include "mdgfm/refine.hpp"

namespace mdgfm {

enum class Schedule { per_epoch_roundrobin, per_graph_full };
// graph: one optimizer step per graph visit on the node-weighted mean of the
// batch losses. batch: one step per node batch.
enum class StepMode { graph, batch };
enum class Variant { full, wo_refinedadj, wo_sumtoken, wo_topology, wo_balance };

Schedule parse_schedule(std::string_view s);
StepMode parse_step_mode(std::string_view s);
Variant parse_variant(std::string_view s);
std::string to_string(Schedule s);
std::string to_string(StepMode s);
std::string to_string(Variant v);

struct PretrainConfig {
  double learning_rate = 0.001;
  int epochs = 60;
  std::size_t batch_size = 128;
  double tau_c = 0.2;
  Index unified_dim = 50;
  std::uint64_t seed = 0;
  bool pca_center = true;
  Activation token_activation = Activation::elu;
  EncoderConfig encoder;
  RefineConfig gsl;
  Schedule schedule = Schedule::per_epoch_roundrobin;
  StepMode step = StepMode::graph;
  bool shared_dropout_mask = false;
  Variant variant = Variant::full;

  void validate() const;
  // gsl with the variant applied (wo_topology drops the A^r X' half).
  RefineConfig effective_gsl() const;
  Index balance_dim() const;
  bool operator==(const PretrainConfig&) const = default;
};

// Keys: pretrain.*, encoder.*, gsl.*.
KeyValues to_key_values(const PretrainConfig& cfg);
PretrainConfig read_pretrain_config(ConfigReader& reader, const PretrainConfig& defaults = {});

// Frozen pretrained state.
struct Checkpoint {
  PretrainConfig config;
  std::vector<std::string> source_domain_ids;
  TokenSet tokens;
  std::map<std::string, ProjectionBasis> pca_bases;
  EncoderParams encoder;
  HeadParams head;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr const char* kSharedTokenKey = "token.shared";
std::string domain_token_key(const std::string& domain);
std::string balance_token_key(const std::string& domain);

// Per-graph inputs that stay fixed during pretraining.
struct SourceView {
  std::string domain;
  DenseMatrix x;            // PCA-projected features
  ad::CsrPtr adj_norm;      // D^-1/2 (A+I) D^-1/2
  ad::CsrPtr adj_fuse;      // adjacency inside A^r X'
};

SourceView make_source_view(const Graph& g, const ProjectionBasis& basis, const PretrainConfig& cfg);

struct PretrainState {
  std::vector<std::string> domains;
  std::map<std::string, ProjectionBasis> bases;
  std::vector<SourceView> views;
  ad::ParamMap params;
};

// PCA bases, views, all-ones tokens, Glorot encoder and head.
PretrainState init_pretrain(const std::vector<Graph>& graphs, const PretrainConfig& cfg);
Checkpoint make_checkpoint(const PretrainState& state, const PretrainConfig& cfg);
ad::ParamMap checkpoint_params(const Checkpoint& cp);

struct PretrainLoss {
  ad::Var total;
  std::vector<double> batch_losses;
  std::size_t skipped_anchors = 0;
  // kNN pattern used for A' (empty for wo_refinedadj).
  Csr knn_pattern;
  // Positive weights of loss_refined; they carry no gradient.
  Csr loss_weights;
};

// Node-weighted mean over `batches` of loss_identity + loss_refined on one
// graph. The kNN pattern is taken from `frozen_pattern` when given, else
// selected from the current similarity features. `frozen_weights` replaces
// the loss_refined weights; finite-difference checks use it to hold the
// gradient-free weights at their base value.
PretrainLoss pretrain_loss(ad::Tape& tape, const ad::ParamMap& params, const SourceView& view,
                           const std::vector<std::vector<std::size_t>>& batches, const PretrainConfig& cfg,
                           bool training, std::mt19937_64* dropout_rng, const Csr* frozen_pattern = nullptr,
                           const Csr* frozen_weights = nullptr);

// Shuffled node batches; a trailing batch of one node joins the previous one.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng);

struct PretrainLogRow {
  int epoch = 0;
  std::string graph;
  double mean_loss = 0.0;
};

Checkpoint pretrain(const std::vector<Graph>& graphs, const PretrainConfig& cfg,
                    std::vector<PretrainLogRow>* log = nullptr);

// Binary checkpoint: "MDGF", u32 version, tagged length-prefixed sections,
// little-endian doubles.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& cp);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::uint64_t checkpoint_checksum(const Checkpoint& cp);

}  // namespace mdgfm
