#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtrec/data.hpp"
#include "dtrec/metrics.hpp"
#include "dtrec/models.hpp"
#include "dtrec/reco.hpp"
#include "dtrec/rng.hpp"
#include "dtrec/transport.hpp"

namespace dtrec {

// Inner-loop update counts per gda_step for (scorer, weighter, critic).
struct StepRatio {
  int f = 1;
  int w = 10;
  int g = 10;
};

StepRatio parse_step_ratio(const std::string& text);  // "1:10:10"
std::string to_string(const StepRatio& ratio);

struct ModelKinds {
  ModelKind f = ModelKind::mcf;
  ModelKind w = ModelKind::mcf;
  ModelKind g = ModelKind::mcf;
};

ModelKinds parse_model_kinds(const std::string& text);  // "M/N/N" or "MCF/NCF/NCF"
std::string to_string(const ModelKinds& kinds);

struct GdaConfig {
  double lambda = 0.1;
  // Ascent learning rate; descent players default to eta / gamma.
  double eta = 0.01;
  double gamma = 10.0;
  std::optional<double> lr_f;
  std::optional<double> lr_w;
  StepRatio step_ratio;
  int batch_size = 1024;
  int max_epochs = 50;
  int patience = 5;
  int negatives_per_positive = 3;
  double max_weight = 1.0;
  double l2 = 0.0;  // on the scorer only
  RecoConfig reco;
  LipschitzPenaltyConfig penalty;
  IpmNormalization normalization = IpmNormalization::self_normalized;
  AdamConfig adam;
  int dim = 32;
  std::vector<int> hidden = {64, 32, 16};
  std::uint64_t seed = 0;
  // Wall-clock time varies between runs, so it is kept out of the training
  // log unless asked for.
  bool log_wall_time = false;

  double descent_lr_f() const { return lr_f.value_or(eta / gamma); }
  double descent_lr_w() const { return lr_w.value_or(eta / gamma); }
  void validate() const;
};

struct UpdateCounters {
  std::int64_t f = 0;
  std::int64_t w = 0;
  std::int64_t g = 0;
};

struct MinimaxState {
  ModelParams f;  // scorer
  ModelParams w;  // weighter
  ModelParams g;  // critic
  AdamState adam_f, adam_w, adam_g;
  std::int64_t step = 0;
  UpdateCounters updates;
  // Best validation snapshot.
  ModelParams best_f, best_w, best_g;
  double best_metric = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
};

MinimaxState init_minimax_state(std::int32_t n_users, std::int32_t n_items, const ModelKinds& kinds,
                                const GdaConfig& cfg);

// A training batch plus, per record, the sampled competitor items used by
// the soft reco surrogate.
struct DtBatch {
  Batch pairs;
  std::vector<std::vector<ItemId>> reco_candidates;
};

// Competitors exclude the record's item and the user's train positives.
DtBatch prepare_dt_batch(Batch pairs, const SplitDataset& split, const RecoConfig& reco, Rng& rng);

struct DtLoss {
  double loss = 0.0;       // risk + lambda * transport
  double risk = 0.0;       // self-normalized weighted cross-entropy
  double transport = 0.0;  // IPM value
  double penalty = 0.0;    // gradient penalty (critic objective only)
  Gradients grad_f;        // d loss / d theta_f
  Gradients grad_w;        // d loss / d theta_w
  // Descent direction for the critic: -d/d theta_g of
  // lambda * (transport - coefficient * penalty).
  Gradients grad_g;
};

struct DtLossNeeds {
  bool f = true;
  bool w = true;
  bool g = true;
};

DtLoss dt_loss(const MinimaxState& state, const DtBatch& batch, const GdaConfig& cfg, Rng& rng,
               DtLossNeeds needs = {});

// steps_g critic ascent updates at eta, then steps_w weighter and steps_f
// scorer descent updates at eta / gamma. A zero learning rate skips that
// player.
void gda_step(MinimaxState& state, const DtBatch& batch, const GdaConfig& cfg, Rng& rng);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double transport_term = 0.0;
  double val_rel = 0.0;
  double val_hit = 0.0;
  double val_ndcg = 0.0;
  std::optional<double> wall_ms;
};

nlohmann::json to_json(const EpochLog& log);

struct TrainedModel {
  ModelParams best_f;
  std::optional<ModelParams> best_w;
  std::optional<ModelParams> best_g;
  std::optional<MinimaxState> final_state;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_rel = -std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::string divergence_message;
};

// Epoch loop of gda_step over shuffled batches with fresh negatives; keeps
// the best validation Rel@K snapshot and stops after `patience` epochs
// without improvement.
TrainedModel train(const SplitDataset& split, const GdaConfig& cfg, const ModelKinds& kinds);

// Negative-sampling empirical risk minimization for the MCF / NCF / IPW-MF
// baselines. `item_weights`, when non-empty, multiplies each record's loss.
struct ErmConfig {
  double lr = 0.001;
  double l2 = 0.0;
  int batch_size = 1024;
  int max_epochs = 50;
  int patience = 5;
  int negatives_per_positive = 3;
  int top_k = 10;
  AdamConfig adam;
  int dim = 32;
  std::vector<int> hidden = {64, 32, 16};
  std::uint64_t seed = 0;
  bool log_wall_time = false;
};

TrainedModel train_erm(const SplitDataset& split, const ErmConfig& cfg, ModelKind kind,
                       std::span<const double> item_weights = {});

// Binary cross-entropy on the logit scale and its derivative.
double bce_with_logit(double logit, double label);
double bce_logit_derivative(double logit, double label);

// Scalar stand-in for the minimax game:
//   L(x, y) = x * y - (curvature / 2) * y^2,  min over x, max over y,
// equilibrium (0, 0). The curvature plays the role of the critic's
// Lipschitz regularizer. Updates are simultaneous: x moves at eta / gamma,
// y at eta.
struct ScalarGameTrace {
  std::vector<double> distance;  // |(x, y)| after every step
  double x = 0.0;
  double y = 0.0;
  int first_within = -1;  // first step with distance < tolerance
};

ScalarGameTrace scalar_game_gda(double x0, double y0, double eta, double gamma, int steps,
                                double curvature = 0.1, double tolerance = 1e-2);

}  // namespace dtrec
