#include "dtrec/reco.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "dtrec/error.hpp"

namespace dtrec {

void RecoConfig::validate() const {
  if (top_k < 1) throw Error("bad_config", "top_k must be >= 1");
  if (n_samples < 0) throw Error("bad_config", "n_samples must be >= 0");
  if (top_k > n_samples + 1) throw Error("bad_config", "top_k must be <= n_samples + 1");
  if (!(temperature > 0.0)) throw Error("bad_config", "temperature must be positive");
}

namespace {

bool excluded(std::span<const ItemId> exclusions, ItemId item) {
  return std::binary_search(exclusions.begin(), exclusions.end(), item);
}

}  // namespace

int topk_exact(std::span<const double> scores, ItemId item, int k,
               std::span<const ItemId> exclusions) {
  const auto n = static_cast<ItemId>(scores.size());
  if (item < 0 || item >= n) throw Error("id_out_of_range", "item outside catalog");
  if (excluded(exclusions, item)) throw Error("bad_argument", "item is in the exclusion set");
  const auto n_excluded = static_cast<ItemId>(std::count_if(
      exclusions.begin(), exclusions.end(), [n](ItemId e) { return e >= 0 && e < n; }));
  if (k < 1 || k > n - n_excluded)
    throw Error("bad_argument", "K exceeds the number of candidate items");
  int above = 0;
  const double s = scores[static_cast<std::size_t>(item)];
  for (ItemId j = 0; j < n; ++j) {
    if (j == item || excluded(exclusions, j)) continue;
    if (ranks_above(scores[static_cast<std::size_t>(j)], j, s, item) && ++above >= k) return 0;
  }
  return 1;
}

int topk_exact(const ModelParams& f, UserId user, ItemId item, int k,
               std::span<const ItemId> exclusions) {
  const Eigen::VectorXd scores = raw_item_scores(f, user);
  return topk_exact(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())),
                    item, k, exclusions);
}

std::vector<ItemId> sample_candidates(std::int32_t n_items, ItemId item, int count,
                                      std::span<const ItemId> exclusions, Rng& rng) {
  // Blocked ids, sorted and unique.
  std::vector<ItemId> blocked;
  blocked.reserve(exclusions.size() + 1);
  for (const auto e : exclusions)
    if (e >= 0 && e < n_items) blocked.push_back(e);
  blocked.push_back(item);
  std::sort(blocked.begin(), blocked.end());
  blocked.erase(std::unique(blocked.begin(), blocked.end()), blocked.end());
  const std::int64_t pool = n_items - static_cast<std::int64_t>(blocked.size());
  if (count < 0 || count > pool)
    throw Error("insufficient_candidates", "cannot sample " + std::to_string(count) +
                                               " candidates from " + std::to_string(pool));
  // Floyd's algorithm over indices into the allowed set.
  std::set<std::int64_t> picked;
  for (std::int64_t j = pool - count; j < pool; ++j) {
    const auto t = uniform_int(rng, 0, j);
    if (!picked.insert(t).second) picked.insert(j);
  }
  std::vector<ItemId> out;
  out.reserve(static_cast<std::size_t>(count));
  auto b = blocked.begin();
  std::int64_t skipped = 0;
  for (const auto index : picked) {
    // The index-th allowed id is index + (#blocked ids <= that id).
    while (b != blocked.end() && *b <= index + skipped) {
      ++skipped;
      ++b;
    }
    out.push_back(static_cast<ItemId>(index + skipped));
  }
  return out;
}

int count_above(std::span<const double> scores, ItemId item, std::span<const ItemId> candidates) {
  const double s = scores[static_cast<std::size_t>(item)];
  int above = 0;
  for (const auto c : candidates)
    if (ranks_above(scores[static_cast<std::size_t>(c)], c, s, item)) ++above;
  return above;
}

int topk_sampled(std::span<const double> scores, ItemId item, const RecoConfig& cfg,
                 std::span<const ItemId> exclusions, Rng& rng) {
  cfg.validate();
  const auto candidates = sample_candidates(static_cast<std::int32_t>(scores.size()), item,
                                            cfg.n_samples, exclusions, rng);
  return count_above(scores, item, candidates) < cfg.top_k ? 1 : 0;
}

double kth_largest(std::vector<double> candidate_scores, int k) {
  if (k > static_cast<int>(candidate_scores.size()))
    return -std::numeric_limits<double>::infinity();
  std::nth_element(candidate_scores.begin(), candidate_scores.begin() + (k - 1),
                   candidate_scores.end(), std::greater<>());
  return candidate_scores[static_cast<std::size_t>(k - 1)];
}

SoftRecoValue soft_reco_from(double item_score, double threshold, double temperature) {
  if (std::isinf(threshold) && threshold < 0) return {1.0, 0.0};
  const double v = sigmoid((item_score - threshold) / temperature);
  return {v, v * (1.0 - v) / temperature};
}

double soft_reco(std::span<const double> scores, ItemId item, const RecoConfig& cfg,
                 std::span<const ItemId> exclusions, Rng& rng) {
  cfg.validate();
  const auto candidates = sample_candidates(static_cast<std::int32_t>(scores.size()), item,
                                            cfg.n_samples, exclusions, rng);
  std::vector<double> cs;
  cs.reserve(candidates.size());
  for (const auto c : candidates) cs.push_back(scores[static_cast<std::size_t>(c)]);
  return soft_reco_from(scores[static_cast<std::size_t>(item)], kth_largest(std::move(cs), cfg.top_k),
                        cfg.temperature)
      .value;
}

}  // namespace dtrec
