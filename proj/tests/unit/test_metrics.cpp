#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dtrec/metrics.hpp"
#include "dtrec/reco.hpp"
#include "support.hpp"

using namespace dtrec;
using namespace dtrec::test;

namespace {

struct Brute {
  double rel = 0, hit = 0, ndcg = 0;
};

// Stable sort with exclusions, then direct sums.
Brute brute_user(const std::vector<double>& s, ItemId target, int k, const std::vector<double>& rel,
                 const std::vector<ItemId>& excl, double gain) {
  std::vector<ItemId> ids;
  for (ItemId i = 0; i < static_cast<ItemId>(s.size()); ++i)
    if (std::find(excl.begin(), excl.end(), i) == excl.end()) ids.push_back(i);
  std::stable_sort(ids.begin(), ids.end(), [&](ItemId a, ItemId b) { return s[a] > s[b]; });
  Brute b;
  for (int j = 0; j < k && j < static_cast<int>(ids.size()); ++j) b.rel += rel[static_cast<std::size_t>(ids[j])];
  const int r = 1 + static_cast<int>(std::find(ids.begin(), ids.end(), target) - ids.begin());
  if (r <= k) {
    b.hit = gain;
    b.ndcg = gain / std::log2(r + 1.0);
  }
  return b;
}

}  // namespace

TEST_CASE("ranking") {
  CHECK(rank_full(std::vector<double>{0.9, 0.1}, {}) == std::vector<ItemId>{0, 1});
  CHECK(rank_full(std::vector<double>{0.5, 0.5}, {}) == std::vector<ItemId>{0, 1});
  const std::vector<ItemId> ex = {1};
  CHECK(rank_full(std::vector<double>{0.2, 0.9, 0.5}, ex) == std::vector<ItemId>{2, 0});
  Rng rng(1);
  std::vector<double> s(20);
  for (auto& v : s) v = std::round(uniform01(rng) * 5) / 5;  // plenty of ties
  std::vector<ItemId> ids(20);
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](ItemId a, ItemId b) { return s[a] > s[b]; });
  CHECK(rank_full(s, {}) == ids);
}

TEST_CASE("hit and ndcg") {
  CHECK(hit_ndcg_at_rank(1, 10).hit == 1.0);
  CHECK(hit_ndcg_at_rank(1, 10).ndcg == 1.0);
  CHECK(hit_ndcg_at_rank(2, 10).ndcg == doctest::Approx(0.6309297535714575));
  CHECK(hit_ndcg_at_rank(11, 10).hit == 0.0);
  CHECK(hit_ndcg_at_rank(11, 10).ndcg == 0.0);
  for (int r = 1; r < 30; ++r) CHECK(hit_ndcg_at_rank(r, 10).hit >= hit_ndcg_at_rank(r, 10).ndcg);
}

TEST_CASE("six-item hand-built rankings") {
  // Order by score: 0 (0.9), 5 (0.7), 2 (0.5), 3 (0.5), 4 (0.3), 1 (0.1).
  const std::vector<double> s = {0.9, 0.1, 0.5, 0.5, 0.3, 0.7};
  const std::vector<double> rel = {0.2, 1.0, 0.0, 0.6, 0.4, 0.1};
  CHECK(rel_at_k(s, 3, rel, {}) == doctest::Approx(0.2 + 0.1 + 0.0));
  CHECK(rel_at_k(s, 4, rel, {}) == doctest::Approx(0.2 + 0.1 + 0.0 + 0.6));
  const std::vector<ItemId> ex = {0, 2};
  CHECK(rel_at_k(s, 3, rel, ex) == doctest::Approx(0.1 + 0.6 + 0.4));
  CHECK(rel_at_k(s, 3, std::vector<double>(6, 0.0), {}) == 0.0);
  CHECK(rel_at_k(s, 3, std::vector<double>(6, 1.0), {}) == 3.0);
  // Item 3 ranks 4th overall; with items 0 and 2 excluded it ranks 2nd.
  const auto full = rank_full(s, {});
  CHECK(1 + (std::find(full.begin(), full.end(), 3) - full.begin()) == 4);
  Rng rng(2);
  const auto all = hit_ndcg_sampled(s, 3, 3, 5, rng, {});
  CHECK(all.rank == 4);
  CHECK(all.hit == 0.0);
  const auto excl = hit_ndcg_sampled(s, 3, 3, 3, rng, ex);
  CHECK(excl.rank == 2);
  CHECK(excl.ndcg == doctest::Approx(1.0 / std::log2(3.0)));
  DTREC_CHECK_CODE(hit_ndcg_sampled(s, 3, 3, 6, rng, {}), "insufficient_candidates");
  DTREC_CHECK_CODE(rel_at_k(s, 3, std::vector<double>(5, 0.0), {}), "missing_relevance");
}

TEST_CASE("evaluate matches per-user brute force; sampled with every item equals full rank") {
  const auto split = random_split(5, 12, 6, 3);
  Rng rng(4);
  std::vector<std::vector<double>> scores(5, std::vector<double>(12));
  for (auto& row : scores)
    for (auto& v : row) v = std::round(uniform01(rng) * 8) / 8;
  RelevanceTable truth;
  truth.values.resize(5, 12);
  for (int u = 0; u < 5; ++u)
    for (int i = 0; i < 12; ++i) truth.values(u, i) = uniform01(rng);
  const ItemScorer scorer = [&](UserId u) {
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(scores[static_cast<std::size_t>(u)].data(), 12));
  };
  for (const bool with_truth : {false, true}) {
    EvalConfig cfg;
    cfg.k = 3;
    cfg.mode = EvalMode::full_rank;
    const auto rep = evaluate(scorer, split, with_truth ? &truth : nullptr, cfg);
    Brute sum;
    for (const auto& t : split.test.records) {
      const auto u = static_cast<std::size_t>(t.user);
      std::vector<ItemId> excl = split.train_items[u];
      excl.push_back(split.validation.records[u].item);
      std::vector<double> rel(12, 0.0);
      if (with_truth)
        for (int i = 0; i < 12; ++i) rel[static_cast<std::size_t>(i)] = truth.values(t.user, i);
      else
        rel[static_cast<std::size_t>(t.item)] = 1.0;
      const auto b = brute_user(scores[u], t.item, 3, rel, excl, rel[static_cast<std::size_t>(t.item)]);
      sum.rel += b.rel / 5;
      sum.hit += b.hit / 5;
      sum.ndcg += b.ndcg / 5;
    }
    CHECK(rep.rel_at_k == doctest::Approx(sum.rel).epsilon(1e-12));
    CHECK(rep.hit_at_k == doctest::Approx(sum.hit).epsilon(1e-12));
    CHECK(rep.ndcg_at_k == doctest::Approx(sum.ndcg).epsilon(1e-12));
    CHECK(rep.relevance_source == (with_truth ? RelevanceSource::true_relevance : RelevanceSource::observed_label));

    EvalConfig sampled = cfg;
    sampled.mode = EvalMode::sampled;
    sampled.n_negatives = 11;
    const auto srep = evaluate(scorer, split, with_truth ? &truth : nullptr, sampled);
    CHECK(srep.hit_at_k == rep.hit_at_k);
    CHECK(srep.ndcg_at_k == rep.ndcg_at_k);
    CHECK(srep.rel_at_k == rep.rel_at_k);
    CHECK(srep.n_short_pool == 5);
  }
  // Full catalog, no exclusions: sampled with catalog - 1 negatives is the full rank.
  Rng r(5);
  for (ItemId target = 0; target < 12; ++target) {
    const auto a = hit_ndcg_sampled(scores[0], target, 4, 11, r, {});
    const auto full = rank_full(scores[0], {});
    const int rank = 1 + static_cast<int>(std::find(full.begin(), full.end(), target) - full.begin());
    CHECK(a.rank == rank);
  }
}

TEST_CASE("weight analysis rows") {
  const auto split = random_split(4, 10, 5, 6);
  auto shape = tiny_shape(ModelKind::mcf, OutputRange::logit, 4, 10);
  const auto constant = zero_model(shape);
  Rng rng(7);
  const auto f = spread_model(shape, rng);
  const auto rows = weight_analysis(constant, f, split, nullptr, 3, 2.0, 2, rng);
  CHECK(rows.size() == split.train.size() * 3);
  for (const auto& r : rows) CHECK(r.weight == 1.0);

  const auto w = spread_model(shape, rng);
  const auto rows2 = weight_analysis(w, f, split, nullptr, 3, 1.0, 2, rng);
  double pos = 0, neg = 0;
  int np = 0, nn = 0;
  for (const auto& r : rows2) {
    CHECK(r.weight == weight_of(w, r.user, r.item, 1.0));
    if (r.in_top_k) CHECK(topk_exact(f, r.user, r.item, 3, {}) == 1);
    (r.label ? pos : neg) += r.weight;
    ++(r.label ? np : nn);
  }
  const auto summary = summarize_weights(rows2);
  CHECK(summary.mean_positive == doctest::Approx(pos / np));
  CHECK(summary.mean_negative == doctest::Approx(neg / nn));
}
