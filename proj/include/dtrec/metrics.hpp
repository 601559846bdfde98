#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dtrec/data.hpp"
#include "dtrec/models.hpp"
#include "dtrec/rng.hpp"

namespace dtrec {

// Scores of every catalog item for one user.
using ItemScorer = std::function<Eigen::VectorXd(UserId)>;

ItemScorer scorer_for(const ModelParams& model);

// Dense per-(user, item) relevance, e.g. ground-truth relevance
// probabilities of a simulated dataset.
struct RelevanceTable {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;

  std::int32_t n_users() const { return static_cast<std::int32_t>(values.rows()); }
  std::int32_t n_items() const { return static_cast<std::int32_t>(values.cols()); }
};

// Candidate items by descending score, ties to the lower id, exclusions
// (sorted) removed.
std::vector<ItemId> rank_full(std::span<const double> scores, std::span<const ItemId> exclusions);

struct HitNdcg {
  double hit = 0.0;
  double ndcg = 0.0;
  int rank = 0;  // 1-based
};

// Single-relevant-item form: hit = [rank <= K], ndcg = 1 / log2(rank + 1).
HitNdcg hit_ndcg_at_rank(int rank, int k);

// Rank of `target` among itself and `n_negatives` items sampled from the
// catalog minus `exclusions` (sorted).
HitNdcg hit_ndcg_sampled(std::span<const double> scores, ItemId target, int k, int n_negatives,
                         Rng& rng, std::span<const ItemId> exclusions);

// Sum of relevance over the top-K of the full ranking.
double rel_at_k(std::span<const double> scores, int k, std::span<const double> relevance,
                std::span<const ItemId> exclusions);

enum class EvalMode { sampled, full_rank };
enum class RelevanceSource { observed_label, true_relevance };
enum class EvalTarget { validation, test };

struct EvalConfig {
  int k = 10;
  int n_negatives = 100;
  EvalMode mode = EvalMode::sampled;
  // Seeds the per-user negative samples; fixed so that every model compared
  // under one config sees the same negatives.
  std::uint64_t seed = 2022;
};

struct MetricsReport {
  double rel_at_k = 0.0;
  double hit_at_k = 0.0;
  double ndcg_at_k = 0.0;
  int k = 10;
  int n_users = 0;
  // Sampled mode: users with fewer unseen items than n_negatives, ranked
  // against all of them instead.
  int n_short_pool = 0;
  std::string mode;
  RelevanceSource relevance_source = RelevanceSource::observed_label;
  std::uint64_t seed = 0;
  std::string model_id;
  std::string config_hash;
};

std::string to_string(RelevanceSource source);
nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& doc);

// Aligned text table; metric values are multiplied by 100.
std::string format_table(std::span<const std::string> labels,
                         std::span<const MetricsReport> reports);

// Averages per-user metrics over the held-out record of each user.
// Validation ranks exclude train items; test ranks exclude train and
// validation items. Sampled negatives exclude everything the user
// interacted with. Gains use true relevance when `truth` is given and the
// observed label otherwise.
MetricsReport evaluate(const ItemScorer& scorer, const SplitDataset& split,
                       const RelevanceTable* truth, const EvalConfig& cfg,
                       EvalTarget target = EvalTarget::test);

struct WeightRow {
  UserId user = 0;
  ItemId item = 0;
  double weight = 0.0;
  double score = 0.0;  // f on the probability scale
  int label = 0;
  int in_top_k = 0;
  std::optional<double> exposure;
};

// Rows for every train record plus `negatives_per_positive` sampled
// negatives per positive.
std::vector<WeightRow> weight_analysis(const ModelParams& weight_model, const ModelParams& scorer,
                                       const SplitDataset& split, const RelevanceTable* exposure,
                                       int k, double max_weight, int negatives_per_positive,
                                       Rng& rng);

void write_weight_table(std::span<const WeightRow> rows, const std::filesystem::path& path);

struct WeightSummary {
  double mean_positive = 0.0;
  double mean_negative = 0.0;
  double mean_in_top_k = 0.0;
  double mean_outside_top_k = 0.0;
  std::size_t n_positive = 0, n_negative = 0, n_in_top_k = 0, n_outside_top_k = 0;
};

WeightSummary summarize_weights(std::span<const WeightRow> rows);

}  // namespace dtrec
