#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mdgfm/pretrain.hpp"

namespace mdgfm {

// How the target balance token is obtained: trained directly, or mixed from
// the source balance tokens with the meta-prompt coefficients.
enum class TargetBalance { trained, mixed };

TargetBalance parse_target_balance(std::string_view s);
std::string to_string(TargetBalance t);

struct AdaptConfig {
  int epochs = 50;
  double learning_rate = 0.001;
  double tau = 0.2;
  int shots = 1;
  bool literal_eq7 = false;
  TargetBalance target_balance = TargetBalance::trained;
  // Downstream kNN; the remaining structure-learning settings come from the
  // checkpoint.
  std::size_t k = 30;
  std::size_t lsh_batch = 0;

  void validate() const;
  bool operator==(const AdaptConfig&) const = default;
};

// Keys: adapt.*.
KeyValues to_key_values(const AdaptConfig& cfg);
AdaptConfig read_adapt_config(ConfigReader& reader, const AdaptConfig& defaults = {});

RefineConfig downstream_gsl(const Checkpoint& cp, const AdaptConfig& cfg);

// Downstream learnables.
struct PromptState {
  RowVector alpha_logits;  // one per source domain, checkpoint order
  RowVector p_s;
  double beta_logit = 0.0;
  RowVector t_target;
  double tau = 0.2;

  static PromptState initial(const Checkpoint& cp, double tau = 0.2);
  bool operator==(const PromptState&) const = default;
};

inline constexpr const char* kAlphaKey = "prompt.alpha";
inline constexpr const char* kSpecificKey = "prompt.p_s";
inline constexpr const char* kBetaKey = "prompt.beta";
inline constexpr const char* kTargetTokenKey = "prompt.t_target";

ad::ParamMap prompt_params(const PromptState& ps);
PromptState prompt_state(const ad::ParamMap& params, double tau);

struct PromptVars {
  ad::Var alpha_logits;
  ad::Var p_s;
  ad::Var beta_logit;
  ad::Var t_target;
};

// Leaves for the prompt keys. Under wo_balance the target token is frozen.
PromptVars prompt_vars(ad::Tape& tape, const ad::ParamMap& params, const Checkpoint& cp, bool trainable);

// Target graph projected with a basis fitted on the target itself.
struct TargetView {
  ProjectionBasis basis;
  DenseMatrix x;
  ad::CsrPtr adj_norm;
  ad::CsrPtr adj_fuse;
};

TargetView prepare_target(const Graph& g, const Checkpoint& cp);

// t_S * act(sum_i softmax(alpha)_i t_{D_i} * X) with frozen checkpoint tokens.
ad::Var meta_prompt(ad::Var x, ad::Var alpha_logits, const Checkpoint& cp);
// beta p_m(X) + (1 - beta) p_s * X, beta = sigmoid(beta_logit).
ad::Var compose_input(ad::Var x, const PromptVars& vars, const Checkpoint& cp);

struct TargetEmbedding {
  ad::Var z;
  Csr knn_pattern;  // empty under wo_refinedadj
};

// Prompted features -> refined target adjacency -> frozen encoder.
TargetEmbedding embed_target(ad::Tape& tape, const TargetView& target, const Checkpoint& cp,
                             const PromptVars& vars, const RefineConfig& gsl, TargetBalance balance,
                             bool training = false, std::mt19937_64* rng = nullptr,
                             const Csr* frozen_pattern = nullptr);

struct FewShotTask {
  int K = 0;
  std::map<int, std::vector<std::size_t>> support;
  std::vector<std::size_t> query;
  std::uint64_t seed = 0;
  std::vector<int> dropped_classes;

  std::vector<int> classes() const;
  std::size_t support_size() const;
};

// K support nodes per class, uniformly without replacement. Classes with
// fewer than K+1 labelled nodes are dropped; their nodes join neither set.
// Negative labels mark unlabelled nodes.
FewShotTask sample_kshot(const std::vector<int>& labels, int K, std::uint64_t seed);

// Class means of the support embeddings, one row per task class in ascending
// class order.
ad::Var prototypes(ad::Var z, const FewShotTask& task);
DenseMatrix prototypes(const DenseMatrix& z, const FewShotTask& task);

// Mean cross-entropy of cosine / tau logits. `targets` holds the prototype row
// for each row of z. The literal form uses the bare scaled similarity as the
// numerator (clamped at 1e-12).
ad::Var classify_loss(ad::Var z, ad::Var protos, const std::vector<std::size_t>& targets, double tau,
                      bool literal = false);

struct Classification {
  std::vector<std::size_t> predictions;  // prototype rows; ties go to the lower row
  double loss = 0.0;
};

Classification classify(const DenseMatrix& z, const DenseMatrix& protos, double tau,
                        const std::vector<std::size_t>& targets, bool literal = false);

// Support-set loss for a prompt state; used by tune and by gradient checks.
ad::Var support_loss(ad::Tape& tape, const ad::ParamMap& prompt, const TargetView& target, const Checkpoint& cp,
                     const FewShotTask& task, const AdaptConfig& cfg, const Csr* frozen_pattern = nullptr,
                     Csr* pattern_out = nullptr);

struct TuneResult {
  PromptState state;
  double accuracy = 0.0;
  std::vector<double> support_losses;  // before each step
};

TuneResult tune(const TargetView& target, const std::vector<int>& labels, const Checkpoint& cp,
                const FewShotTask& task, const AdaptConfig& cfg);

// Query accuracy of a prompt state.
double evaluate(const TargetView& target, const std::vector<int>& labels, const Checkpoint& cp,
                const FewShotTask& task, const PromptState& state, const AdaptConfig& cfg);

}  // namespace mdgfm
