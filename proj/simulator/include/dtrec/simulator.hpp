#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>

#include <Eigen/Dense>

#include "dtrec/data.hpp"
#include "dtrec/metrics.hpp"
#include "dtrec/mlp.hpp"
#include "dtrec/rng.hpp"

// Semi-synthetic click generation. Ground-truth tables live only in this
// library; trainers are built without it.
namespace dtrec {

using ProbTable = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SyntheticGroundTruth {
  ProbTable relevance;
  ProbTable exposure;
  double cutoff = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;
  double u = 3.0;
  double p = 2.0;

  std::int32_t n_users() const { return static_cast<std::int32_t>(relevance.rows()); }
  std::int32_t n_items() const { return static_cast<std::int32_t>(relevance.cols()); }
  ProbTable click_prob() const { return relevance.cwiseProduct(exposure); }
  // Relevance as the evaluator's lookup table.
  RelevanceTable relevance_table() const { return {relevance}; }
  RelevanceTable exposure_table() const { return {exposure}; }
};

// MCF fit used for both the rating regressor and the exposure model.
struct SimFitConfig {
  int dim = 32;
  int epochs = 40;
  double lr = 0.01;
  double l2 = 1e-4;
  int batch_size = 256;
  std::uint64_t seed = 0;
};

// sigmoid(r_hat - u)^p elementwise.
ProbTable relevance_from_predictions(const ProbTable& r_hat, double u, double p);

// Fits an MCF regressor to the explicit ratings (squared loss) and maps its
// predictions over every (user, item) pair through sigmoid(r_hat - u)^p.
ProbTable fit_relevance(const InteractionLog& ratings, const SimFitConfig& cfg, double u, double p);

// Three bias-free layers [32, 16, 1] with ReLU; weights N(0, 1) / sqrt(fan_in).
Mlp make_exposure_mlp(int input_size, std::uint64_t seed);

// sigmoid(mlp([user row, item row])) for every pair. Embedding columns are
// standardized over entities before entering the network.
ProbTable exposure_from_embeddings(const Eigen::MatrixXd& users, const Eigen::MatrixXd& items,
                                   const Mlp& mlp);

// Fits MCF embeddings to the observed indicator (every observed pair is 1,
// every other pair 0, binary cross-entropy) and returns the exposure table.
ProbTable fit_exposure(const InteractionLog& indicator, const SimFitConfig& cfg,
                       std::uint64_t mlp_seed);

// Clicks over all cells divided by n_users * n_items, with a click being a
// rating above the cutoff.
double source_click_ratio(const InteractionLog& ratings);

struct ClickResult {
  InteractionLog log;  // positives only, random order per user
  SyntheticGroundTruth truth;
  double realized_ratio = 0.0;
};

// Deterministic thresholding: the cutoff is the click probability at the
// requested quantile and label 1 iff click_prob >= cutoff. Fails when the
// realized ratio is off by more than 1% relative.
ClickResult generate_clicks(SyntheticGroundTruth truth, double source_ratio, Rng& rng);

// Bernoulli clicks with probabilities scaled so the expected ratio matches.
ClickResult generate_clicks_bernoulli(SyntheticGroundTruth truth, double source_ratio, Rng& rng);

// Seeded latent-factor rating matrix with popularity-driven, rating-dependent
// (missing-not-at-random) observation. Every user gets at least
// `min_per_user` ratings.
InteractionLog make_toy_ratings(std::int32_t n_users, std::int32_t n_items, std::uint64_t seed,
                                double density = 0.08, int min_per_user = 8);

struct SimulationConfig {
  double u = 3.0;
  double p = 2.0;
  SimFitConfig relevance_fit;
  SimFitConfig exposure_fit;
  std::uint64_t seed = 0;
  bool bernoulli = false;
  // <= 0 uses the source ratio of the ratings.
  double click_ratio = 0.0;
};

ClickResult simulate(const InteractionLog& ratings, const SimulationConfig& cfg);

// TSV user, item, relevance_prob, exposure_prob plus a JSON sidecar
// (same stem, ".json") with cutoff, seed, u and p.
void save_ground_truth(const SyntheticGroundTruth& truth, const std::filesystem::path& tsv_path);
SyntheticGroundTruth load_ground_truth(const std::filesystem::path& tsv_path);
std::filesystem::path ground_truth_sidecar(const std::filesystem::path& tsv_path);

// Reindexes a ground-truth table to the dense ids of a log whose original
// ids are the table's row and column numbers (a reloaded synthetic log).
RelevanceTable align_to_log(const ProbTable& table, const InteractionLog& log);

}  // namespace dtrec
