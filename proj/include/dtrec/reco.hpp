#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dtrec/data.hpp"
#include "dtrec/models.hpp"
#include "dtrec/rng.hpp"

namespace dtrec {

struct RecoConfig {
  int top_k = 10;
  // Number of sampled competitor items.
  int n_samples = 100;
  double temperature = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Ranking order used everywhere: higher score first, ties to the lower id.
inline bool ranks_above(double score_a, ItemId a, double score_b, ItemId b) {
  return score_a > score_b || (score_a == score_b && a < b);
}

// 1 iff `item` is among the k best of the catalog minus `exclusions`
// (sorted item ids). `scores` holds one score per catalog item.
int topk_exact(std::span<const double> scores, ItemId item, int k,
               std::span<const ItemId> exclusions);
int topk_exact(const ModelParams& f, UserId user, ItemId item, int k,
               std::span<const ItemId> exclusions);

// Uniform sample without replacement of `count` items from the catalog
// minus `item` and `exclusions`.
std::vector<ItemId> sample_candidates(std::int32_t n_items, ItemId item, int count,
                                      std::span<const ItemId> exclusions, Rng& rng);

// Number of candidates that rank above `item`.
int count_above(std::span<const double> scores, ItemId item,
                std::span<const ItemId> candidates);

int topk_sampled(std::span<const double> scores, ItemId item, const RecoConfig& cfg,
                 std::span<const ItemId> exclusions, Rng& rng);

// K-th largest score among `candidate_scores`; -inf when there are fewer
// than K candidates (the item is then always recommended).
double kth_largest(std::vector<double> candidate_scores, int k);

struct SoftRecoValue {
  double value = 0.0;
  // d(value)/d(item score); the threshold is held constant.
  double d_score = 0.0;
};

SoftRecoValue soft_reco_from(double item_score, double threshold, double temperature);

// sigmoid((score(item) - tau_K) / temperature) with tau_K the K-th largest
// score among the sampled candidates.
double soft_reco(std::span<const double> scores, ItemId item, const RecoConfig& cfg,
                 std::span<const ItemId> exclusions, Rng& rng);

}  // namespace dtrec
