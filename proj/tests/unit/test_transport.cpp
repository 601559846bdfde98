#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtrec/lp.hpp"
#include "dtrec/transport.hpp"
#include "support.hpp"

using namespace dtrec;
using namespace dtrec::test;

namespace {

DiscreteMeasure points_1d(std::vector<double> xs) {
  DiscreteMeasure m;
  for (const double x : xs) m.atoms.push_back(Eigen::VectorXd::Constant(1, x));
  m.mass.assign(xs.size(), 1.0 / static_cast<double>(xs.size()));
  return m;
}

DiscreteMeasure random_measure(int n, int dim, Rng& rng, bool uniform_mass) {
  DiscreteMeasure m;
  std::normal_distribution<double> g(0.0, 1.0);
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    Eigen::VectorXd a(dim);
    for (int d = 0; d < dim; ++d) a(d) = g(rng);
    m.atoms.push_back(a);
    m.mass.push_back(uniform_mass ? 1.0 : 0.1 + uniform01(rng));
    total += m.mass.back();
  }
  for (auto& v : m.mass) v /= total;
  return m;
}

// Equal-mass n-vs-n transport is an assignment problem: try every matching.
double best_matching(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  std::vector<int> perm(p.atoms.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += (p.atoms[i] - q.atoms[static_cast<std::size_t>(perm[i])]).norm();
    best = std::min(best, c / static_cast<double>(perm.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("exact ot examples") {
  DiscreteMeasure a, b;
  a.atoms = {Eigen::Vector2d(0.0, 0.0)};
  b.atoms = {Eigen::Vector2d(3.0, 4.0)};
  a.mass = b.mass = {1.0};
  CHECK(exact_ot(a, b) == doctest::Approx(5.0).epsilon(1e-12));
  Rng rng(1);
  const auto p = random_measure(6, 3, rng, false);
  CHECK(exact_ot(p, p) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(exact_ot(points_1d({0, 2}), points_1d({1, 3})) == doctest::Approx(1.0).epsilon(1e-12));

  DiscreteMeasure bad = a;
  bad.mass = {0.7};
  DTREC_CHECK_CODE(exact_ot(bad, b), "unnormalized");
  DTREC_CHECK_CODE(exact_ot(random_measure(17, 1, rng, true), p), "bad_argument");
}

TEST_CASE("exact ot against assignment enumeration, symmetry and triangle inequality") {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const int n = 2 + t % 4;
    const auto p = random_measure(n, 2, rng, true);
    const auto q = random_measure(n, 2, rng, true);
    CHECK(exact_ot(p, q) == doctest::Approx(best_matching(p, q)).epsilon(1e-9));
  }
  for (int t = 0; t < 10; ++t) {
    const auto p = random_measure(5, 2, rng, false);
    const auto q = random_measure(7, 2, rng, false);
    const auto r = random_measure(4, 2, rng, false);
    CHECK(exact_ot(p, q) == doctest::Approx(exact_ot(q, p)).epsilon(1e-9));
    CHECK(exact_ot(p, r) <= exact_ot(p, q) + exact_ot(q, r) + 1e-9);
  }
}

TEST_CASE("ipm estimate") {
  const std::vector<double> g = {0.3, -1.2, 2.0};
  const std::vector<double> w = {0.5, 0.2, 0.9};
  CHECK(ipm_estimate(g, w, w, IpmNormalization::self_normalized).value == doctest::Approx(0.0));
  // Point masses at z = 0 (source) and z = 1 (target) under g(z) = z, then -z.
  CHECK(ipm_estimate(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0},
                     std::vector<double>{0.0, 1.0}, IpmNormalization::self_normalized)
            .value == -1.0);
  CHECK(ipm_estimate(std::vector<double>{0.0, -1.0}, std::vector<double>{1.0, 0.0},
                     std::vector<double>{0.0, 1.0}, IpmNormalization::self_normalized)
            .value == 1.0);
  const std::vector<double> r = {0.1, 0.8, 0.4};
  const auto raw = ipm_estimate(g, w, r, IpmNormalization::raw_sum);
  CHECK(raw.source_side == doctest::Approx(0.3 * 0.5 - 1.2 * 0.2 + 2.0 * 0.9));
  CHECK(raw.target_side == doctest::Approx(0.3 * 0.1 - 1.2 * 0.8 + 2.0 * 0.4));
  std::vector<double> g3 = g;
  for (auto& v : g3) v *= 3.0;
  CHECK(ipm_estimate(g3, w, r, IpmNormalization::self_normalized).value ==
        doctest::Approx(3.0 * ipm_estimate(g, w, r, IpmNormalization::self_normalized).value));
  DTREC_CHECK_CODE(ipm_estimate(g, std::vector<double>{0, 0, 0}, r, IpmNormalization::self_normalized),
                   "degenerate_batch");
}

TEST_CASE("lipschitz penalty") {
  Rng rng(3);
  LipschitzPenaltyConfig cfg;
  cfg.n_interpolates = 3;
  std::vector<Eigen::VectorXd> a = {Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1.0, 2.0)};
  std::vector<Eigen::VectorXd> b = {Eigen::Vector2d(-1.0, 0.5)};
  const Eigen::Vector2d unit(0.6, 0.8);
  CHECK(lipschitz_penalty([&](const Eigen::VectorXd&) -> Eigen::VectorXd { return unit; }, a, b, cfg, rng) ==
        doctest::Approx(0.0));
  CHECK(lipschitz_penalty([](const Eigen::VectorXd& z) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(z.size()); },
                          a, b, cfg, rng) == doctest::Approx(1.0));
  // g(z) = |z|^2 / 2 has gradient z; with both samples at x every
  // interpolate is x, so each of the 3 terms is (|x| - 1)^2.
  const std::vector<Eigen::VectorXd> x = {Eigen::Vector2d(3.0, 4.0)};
  CHECK(lipschitz_penalty([](const Eigen::VectorXd& z) -> Eigen::VectorXd { return z; }, x, x, cfg, rng) ==
        doctest::Approx(16.0));
}

TEST_CASE("critic penalty gradient matches finite differences") {
  Rng rng(4);
  const auto split = random_split(4, 8, 4, 1);
  for (const auto kind : {ModelKind::mcf, ModelKind::ncf}) {
    auto shape = tiny_shape(kind, OutputRange::unbounded, split.n_users, split.n_items);
    const auto critic = spread_model(shape, rng);
    Batch pairs;
    std::vector<double> w, r;
    for (const auto& rec : split.train.records) {
      pairs.push_back({rec.user, rec.item, 1.0});
      w.push_back(0.2 + uniform01(rng));
      r.push_back(uniform01(rng));
    }
    Rng a(9);
    const auto pen = critic_gradient_penalty(critic, pairs, w, r, 5, a);
    ModelParams work = critic;
    const auto numeric = numeric_gradient(
        [&](const std::vector<double>& x) {
          unflatten(work, x);
          Rng b(9);
          return critic_gradient_penalty(work, pairs, w, r, 5, b).value;
        },
        flatten(critic));
    CHECK(relative_error(flatten_gradients(pen.gradients, critic), numeric) < 1e-5);
  }
}

TEST_CASE("trained point critic is certified below the exact cost") {
  Rng rng(5);
  const auto p = random_measure(4, 2, rng, false);
  const auto q = random_measure(4, 2, rng, false);
  PointCriticConfig cfg;
  cfg.steps = 600;
  cfg.learning_rate = 1e-2;
  const auto res = train_point_critic(p, q, cfg, rng);
  const double exact = exact_ot(p, q);
  CHECK(res.certified_ipm <= exact + 1e-9);
  CHECK(res.certified_ipm >= 0.5 * exact);
}

TEST_CASE("standard-form lp") {
  // min -x1 - 2 x2  s.t.  x1 + x2 + s1 = 4,  x2 + s2 = 3.  Optimum (1, 3).
  Eigen::VectorXd c(4);
  c << -1, -2, 0, 0;
  Eigen::MatrixXd A(2, 4);
  A << 1, 1, 1, 0, 0, 1, 0, 1;
  Eigen::VectorXd b(2);
  b << 4, 3;
  const auto sol = solve_standard_lp(c, A, b);
  CHECK(sol.objective == doctest::Approx(-7.0));
  CHECK(sol.x(0) == doctest::Approx(1.0));
  CHECK(sol.x(1) == doctest::Approx(3.0));

  Eigen::MatrixXd A2(1, 2);
  A2 << 1, 1;
  Eigen::VectorXd b2(1);
  b2 << -1;
  DTREC_CHECK_CODE(solve_standard_lp(Eigen::Vector2d(1, 1), A2, b2), "lp_infeasible");
  Eigen::MatrixXd A3(1, 2);
  A3 << 1, -1;
  Eigen::VectorXd b3(1);
  b3 << 0;
  DTREC_CHECK_CODE(solve_standard_lp(Eigen::Vector2d(-1, 0), A3, b3), "lp_unbounded");
}
