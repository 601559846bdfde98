#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <tuple>

#include "dtrec/simulator.hpp"
#include "support.hpp"

#ifndef DTREC_DATA_DIR
#error "DTREC_DATA_DIR must point at the bundled data directory"
#endif

using namespace dtrec;
using namespace dtrec::test;

namespace {

SyntheticGroundTruth random_truth(int users, int items, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticGroundTruth t;
  t.relevance.resize(users, items);
  t.exposure.resize(users, items);
  for (int u = 0; u < users; ++u)
    for (int i = 0; i < items; ++i) {
      t.relevance(u, i) = uniform01(rng);
      t.exposure(u, i) = uniform01(rng);
    }
  return t;
}

std::set<std::pair<int, int>> cells(const InteractionLog& log) {
  std::set<std::pair<int, int>> out;
  for (const auto& r : log.records) out.insert({r.user, r.item});
  return out;
}

}  // namespace

TEST_CASE("relevance transform") {
  ProbTable r(1, 3);
  r << 3.0, 5.0, 1.0;
  const auto rel = relevance_from_predictions(r, 3.0, 2.0);
  CHECK(rel(0, 0) == doctest::Approx(0.25));
  const double s = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(rel(0, 1) == doctest::Approx(s * s));
  CHECK(rel(0, 2) == doctest::Approx((1 - s) * (1 - s)));
  DTREC_CHECK_CODE(relevance_from_predictions(r, 3.0, 0.0), "bad_argument");
}

TEST_CASE("exposure network") {
  auto mlp = make_exposure_mlp(6, 3);
  REQUIRE(mlp.layers.size() == 3);
  CHECK(mlp.layers[0].weight.rows() == 32);
  CHECK(mlp.layers[1].weight.rows() == 16);
  CHECK(mlp.layers[2].weight.rows() == 1);
  for (const auto& l : mlp.layers) CHECK(l.bias.size() == 0);
  Rng rng(4);
  Eigen::MatrixXd users(5, 3), items(7, 3);
  for (auto* m : {&users, &items})
    for (Eigen::Index k = 0; k < m->size(); ++k) m->data()[k] = uniform01(rng);
  const auto e = exposure_from_embeddings(users, items, mlp);
  CHECK(e.rows() == 5);
  CHECK(e.cols() == 7);
  CHECK(e.minCoeff() > 0.0);
  CHECK(e.maxCoeff() < 1.0);
  for (auto& l : mlp.layers) l.weight.setZero();
  const auto half = exposure_from_embeddings(users, items, mlp);
  CHECK(half.cwiseAbs().maxCoeff() == 0.5);
  CHECK(half.minCoeff() == 0.5);
  DTREC_CHECK_CODE(exposure_from_embeddings(users, items, make_exposure_mlp(4, 3)), "bad_argument");
}

TEST_CASE("deterministic clicks pick the top cells") {
  const auto truth = random_truth(4, 4, 5);
  Rng rng(6);
  const auto res = generate_clicks(truth, 0.25, rng);
  // Oracle: the four largest click probabilities by brute force.
  std::vector<std::tuple<double, int, int>> all;
  for (int u = 0; u < 4; ++u)
    for (int i = 0; i < 4; ++i) all.emplace_back(truth.relevance(u, i) * truth.exposure(u, i), u, i);
  std::sort(all.begin(), all.end(), std::greater<>());
  std::set<std::pair<int, int>> expect;
  for (int k = 0; k < 4; ++k) expect.insert({std::get<1>(all[k]), std::get<2>(all[k])});
  CHECK(cells(res.log) == expect);
  CHECK(res.realized_ratio == 0.25);
  CHECK(res.truth.cutoff == std::get<0>(all[3]));
  for (const auto& r : res.log.records) CHECK(r.label == 1);

  const auto click = truth.click_prob();
  for (int u = 0; u < 4; ++u)
    for (int i = 0; i < 4; ++i)
      CHECK(click(u, i) <= std::min(truth.relevance(u, i), truth.exposure(u, i)));
}

TEST_CASE("ties that make the ratio unreachable") {
  SyntheticGroundTruth flat;
  flat.relevance = ProbTable::Constant(4, 4, 0.5);
  flat.exposure = ProbTable::Constant(4, 4, 0.5);
  Rng rng(1);
  DTREC_CHECK_CODE(generate_clicks(flat, 0.25, rng), "ratio_unreachable");
  DTREC_CHECK_CODE(generate_clicks(flat, 1.5, rng), "bad_argument");
  flat.exposure.setZero();
  DTREC_CHECK_CODE(generate_clicks_bernoulli(flat, 0.25, rng), "ratio_unreachable");
}

TEST_CASE("bernoulli clicks") {
  auto truth = random_truth(60, 50, 7);
  truth.exposure.col(3).setZero();
  Rng rng(8);
  const auto res = generate_clicks_bernoulli(truth, 0.1, rng);
  for (const auto& r : res.log.records) CHECK(r.item != 3);
  // 3000 cells at p = 0.1: SE of the ratio is about 0.0055.
  CHECK(std::abs(res.realized_ratio - 0.1) < 4 * std::sqrt(0.1 * 0.9 / 3000));
  CHECK(std::isnan(res.truth.cutoff));
}

TEST_CASE("bundled toy ratings match the generator") {
  const auto file = load_interactions(std::filesystem::path(DTREC_DATA_DIR) / "toy_ratings.tsv");
  const auto gen = make_toy_ratings(200, 300, 7);
  CHECK(file.has_ratings);
  REQUIRE(file.size() == gen.size());
  std::set<std::tuple<std::string, std::string, double>> a, b;
  for (const auto& r : file.records)
    a.emplace(file.users.to_original(r.user), file.items.to_original(r.item), r.rating);
  for (const auto& r : gen.records)
    b.emplace(gen.users.to_original(r.user), gen.items.to_original(r.item), r.rating);
  CHECK(a == b);
  std::set<ItemId> used;
  for (const auto& r : gen.records) used.insert(r.item);
  CHECK(gen.n_items == 300);
  CHECK(static_cast<int>(used.size()) == file.n_items);
}

TEST_CASE("end-to-end simulation") {
  const auto ratings = make_toy_ratings(40, 50, 3);
  CHECK(ratings.has_ratings);
  std::vector<int> per_user(40, 0);
  for (const auto& r : ratings.records) ++per_user[static_cast<std::size_t>(r.user)];
  CHECK(*std::min_element(per_user.begin(), per_user.end()) >= 8);

  SimulationConfig cfg;
  cfg.seed = 9;
  cfg.relevance_fit.dim = 4;
  cfg.relevance_fit.epochs = 5;
  cfg.exposure_fit.dim = 4;
  cfg.exposure_fit.epochs = 5;
  const auto a = simulate(ratings, cfg);
  const auto b = simulate(ratings, cfg);
  CHECK(cells(a.log) == cells(b.log));
  CHECK(a.truth.relevance == b.truth.relevance);
  CHECK(a.truth.exposure == b.truth.exposure);
  const double source = source_click_ratio(ratings);
  CHECK(std::abs(a.realized_ratio - source) <= 0.01 * source);
  CHECK(a.truth.relevance.minCoeff() >= 0.0);
  CHECK(a.truth.relevance.maxCoeff() <= 1.0);

  auto other = cfg;
  other.seed = 10;
  CHECK(simulate(ratings, other).truth.exposure != a.truth.exposure);

  const auto dir = std::filesystem::temp_directory_path() / "dtrec_test_sim";
  std::filesystem::create_directories(dir);
  save_ground_truth(a.truth, dir / "truth.tsv");
  const auto back = load_ground_truth(dir / "truth.tsv");
  CHECK(back.relevance.isApprox(a.truth.relevance, 1e-15));
  CHECK(back.exposure.isApprox(a.truth.exposure, 1e-15));
  CHECK(back.cutoff == doctest::Approx(a.truth.cutoff));
  std::filesystem::remove_all(dir);

  InteractionLog implicit = ratings;
  implicit.has_ratings = false;
  DTREC_CHECK_CODE(fit_relevance(implicit, cfg.relevance_fit, 3, 2), "missing_ratings");
}
