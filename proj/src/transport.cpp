#include "dtrec/transport.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtrec/error.hpp"
#include "dtrec/lp.hpp"

namespace dtrec {

IpmBatchTerm ipm_estimate(std::span<const double> critic_values, std::span<const double> weights,
                          std::span<const double> reco_values, IpmNormalization normalization) {
  if (critic_values.empty()) throw Error("bad_argument", "empty batch");
  if (critic_values.size() != weights.size() || critic_values.size() != reco_values.size())
    throw Error("bad_argument", "critic, weight and reco arrays differ in length");
  double sw = 0.0, sr = 0.0, source = 0.0, target = 0.0;
  for (std::size_t k = 0; k < critic_values.size(); ++k) {
    if (weights[k] < 0.0) throw Error("bad_argument", "negative weight");
    if (reco_values[k] < 0.0 || reco_values[k] > 1.0)
      throw Error("bad_argument", "reco value outside [0, 1]");
    sw += weights[k];
    sr += reco_values[k];
    source += weights[k] * critic_values[k];
    target += reco_values[k] * critic_values[k];
  }
  IpmBatchTerm term;
  term.normalization = normalization;
  if (normalization == IpmNormalization::self_normalized) {
    if (!(sw > 0.0) || !(sr > 0.0)) throw Error("degenerate_batch", "degenerate batch");
    source /= sw;
    target /= sr;
  }
  term.source_side = source;
  term.target_side = target;
  term.value = source - target;
  if (!std::isfinite(term.value)) throw Error("non_finite", "transport estimate is not finite");
  return term;
}

IpmBatchTerm ipm_estimate(const ModelParams& critic, std::span<const LabeledPair> batch,
                          std::span<const double> weights, std::span<const double> reco_values,
                          IpmNormalization normalization) {
  std::vector<double> g;
  g.reserve(batch.size());
  for (const auto& pair : batch) g.push_back(score(critic, pair.user, pair.item));
  return ipm_estimate(g, weights, reco_values, normalization);
}

void LipschitzPenaltyConfig::validate() const {
  if (!(coefficient > 0.0)) throw Error("bad_config", "penalty coefficient must be positive");
  if (n_interpolates < 0) throw Error("bad_config", "n_interpolates must be >= 0");
}

double lipschitz_penalty(const PointGradient& critic_gradient,
                         std::span<const Eigen::VectorXd> sample_a,
                         std::span<const Eigen::VectorXd> sample_b,
                         const LipschitzPenaltyConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.mode != LipschitzMode::gradient_penalty)
    throw Error("bad_config", "lipschitz_penalty requires gradient_penalty mode");
  if (sample_a.empty() || sample_b.empty()) throw Error("bad_argument", "empty sample");
  const int n = cfg.n_interpolates > 0
                    ? cfg.n_interpolates
                    : static_cast<int>(std::max(sample_a.size(), sample_b.size()));
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto& a = sample_a[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(sample_a.size()) - 1))];
    const auto& b = sample_b[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<std::int64_t>(sample_b.size()) - 1))];
    const double t = uniform01(rng);
    const Eigen::VectorXd z = t * a + (1.0 - t) * b;
    const double dev = critic_gradient(z).norm() - 1.0;
    total += dev * dev;
  }
  return total / n;
}

Eigen::VectorXd critic_input(const ModelParams& critic, UserId user, ItemId item) {
  check_ids(critic, user, item);
  const int d = critic.dim();
  Eigen::VectorXd z(2 * d);
  z.head(d) = critic.user_table.row(user).transpose();
  z.tail(d) = critic.item_table.row(item).transpose();
  return z;
}

double critic_at(const ModelParams& critic, const Eigen::VectorXd& z) {
  if (critic.kind == ModelKind::mcf) {
    const int d = critic.dim();
    return z.head(d).dot(z.tail(d)) + critic.global_bias;
  }
  return mlp_forward(critic.mlp, z);
}

Eigen::VectorXd critic_input_gradient(const ModelParams& critic, const Eigen::VectorXd& z) {
  if (critic.kind == ModelKind::mcf) {
    const int d = critic.dim();
    Eigen::VectorXd g(2 * d);
    g.head(d) = z.tail(d);
    g.tail(d) = z.head(d);
    return g;
  }
  return mlp_input_gradient(critic.mlp, z);
}

namespace {

std::discrete_distribution<std::size_t> make_picker(std::span<const double> mass) {
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  if (!(total > 0.0)) {
    std::vector<double> uniform(mass.size(), 1.0);
    return {uniform.begin(), uniform.end()};
  }
  return {mass.begin(), mass.end()};
}

// d/dq of (|q| - 1)^2, with the subgradient 0 at q = 0.
Eigen::VectorXd penalty_direction(const Eigen::VectorXd& q, double& value) {
  const double norm = q.norm();
  value = (norm - 1.0) * (norm - 1.0);
  if (norm == 0.0) return Eigen::VectorXd::Zero(q.size());
  return 2.0 * (norm - 1.0) / norm * q;
}

}  // namespace

CriticPenalty critic_gradient_penalty(const ModelParams& critic, std::span<const LabeledPair> batch,
                                      std::span<const double> source_mass,
                                      std::span<const double> target_mass, int n_interpolates,
                                      Rng& rng) {
  if (batch.empty()) throw Error("bad_argument", "empty batch");
  if (source_mass.size() != batch.size() || target_mass.size() != batch.size())
    throw Error("bad_argument", "mass arrays differ from batch length");
  const int n = n_interpolates > 0 ? n_interpolates : static_cast<int>(batch.size());
  auto pick_a = make_picker(source_mass);
  auto pick_b = make_picker(target_mass);
  CriticPenalty out;
  out.gradients = zero_gradients(critic);
  const int d = critic.dim();
  const double inv_n = 1.0 / n;
  for (int k = 0; k < n; ++k) {
    const auto& a = batch[pick_a(rng)];
    const auto& b = batch[pick_b(rng)];
    const double t = uniform01(rng);
    const Eigen::VectorXd z =
        t * critic_input(critic, a.user, a.item) + (1.0 - t) * critic_input(critic, b.user, b.item);
    const Eigen::VectorXd q = critic_input_gradient(critic, z);
    double value = 0.0;
    const Eigen::VectorXd dq = penalty_direction(q, value) * inv_n;
    out.value += value * inv_n;
    if (critic.kind == ModelKind::mcf) {
      // q is z with halves swapped, so dP/dz is dq with halves swapped.
      Eigen::VectorXd dz(2 * d);
      dz.head(d) = dq.tail(d);
      dz.tail(d) = dq.head(d);
      out.gradients.user_table.add(a.user, t * dz.head(d));
      out.gradients.item_table.add(a.item, t * dz.tail(d));
      out.gradients.user_table.add(b.user, (1.0 - t) * dz.head(d));
      out.gradients.item_table.add(b.item, (1.0 - t) * dz.tail(d));
    } else {
      mlp_input_gradient_backward(critic.mlp, z, dq, &out.gradients.mlp);
    }
  }
  return out;
}

void clip_critic_weights(ModelParams& critic, double bound) {
  auto clamp = [bound](auto& block) { block = block.cwiseMax(-bound).cwiseMin(bound); };
  clamp(critic.user_table);
  clamp(critic.item_table);
  clamp(critic.user_bias);
  clamp(critic.item_bias);
  critic.global_bias = std::clamp(critic.global_bias, -bound, bound);
  for (auto& l : critic.mlp.layers) {
    clamp(l.weight);
    clamp(l.bias);
  }
}

namespace {

void check_distribution(std::span<const double> p, const char* name) {
  if (p.empty() || p.size() > static_cast<std::size_t>(kMaxOtAtoms))
    throw Error("bad_argument", std::string(name) + " must have 1..16 atoms");
  double total = 0.0;
  for (const double v : p) {
    if (!(v >= 0.0)) throw Error("unnormalized", std::string(name) + " has a negative mass");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw Error("unnormalized", std::string(name) + " is not normalized");
}

}  // namespace

double exact_ot(std::span<const double> p, std::span<const double> q, const Eigen::MatrixXd& cost) {
  check_distribution(p, "p");
  check_distribution(q, "q");
  const auto n = static_cast<Eigen::Index>(p.size());
  const auto m = static_cast<Eigen::Index>(q.size());
  if (cost.rows() != n || cost.cols() != m) throw Error("bad_argument", "cost matrix shape mismatch");
  // Variables pi(i, j) at index i * m + j.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + m, n * m);
  Eigen::VectorXd b(n + m);
  Eigen::VectorXd c(n * m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      A(i, i * m + j) = 1.0;
      A(n + j, i * m + j) = 1.0;
      c(i * m + j) = cost(i, j);
    }
    b(i) = p[static_cast<std::size_t>(i)];
  }
  for (Eigen::Index j = 0; j < m; ++j) b(n + j) = q[static_cast<std::size_t>(j)];
  return std::max(0.0, solve_standard_lp(c, A, b).objective);
}

Eigen::MatrixXd l2_cost(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  Eigen::MatrixXd cost(p.atoms.size(), q.atoms.size());
  for (std::size_t i = 0; i < p.atoms.size(); ++i)
    for (std::size_t j = 0; j < q.atoms.size(); ++j)
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (p.atoms[i] - q.atoms[j]).norm();
  return cost;
}

double exact_ot(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  if (p.atoms.size() != p.mass.size() || q.atoms.size() != q.mass.size())
    throw Error("bad_argument", "atoms and masses differ in length");
  return exact_ot(p.mass, q.mass, l2_cost(p, q));
}

double expectation_gap(const Mlp& critic, const DiscreteMeasure& p, const DiscreteMeasure& q) {
  double gap = 0.0;
  for (std::size_t i = 0; i < p.atoms.size(); ++i) gap += p.mass[i] * mlp_forward(critic, p.atoms[i]);
  for (std::size_t j = 0; j < q.atoms.size(); ++j) gap -= q.mass[j] * mlp_forward(critic, q.atoms[j]);
  return gap;
}

PointCriticResult train_point_critic(const DiscreteMeasure& p, const DiscreteMeasure& q,
                                     const PointCriticConfig& cfg, Rng& rng) {
  cfg.penalty.validate();
  if (p.atoms.empty() || q.atoms.empty()) throw Error("bad_argument", "empty measure");
  const auto dim = p.atoms.front().size();
  auto widths = cfg.hidden;
  widths.push_back(1);
  PointCriticResult result;
  result.critic = make_mlp(dim, widths, true, MlpInit::glorot_uniform, rng);
  auto adam = init_mlp_adam(result.critic, cfg.adam);
  auto pick_a = make_picker(p.mass);
  auto pick_b = make_picker(q.mass);
  const int n_interp = cfg.penalty.n_interpolates > 0 ? cfg.penalty.n_interpolates : 64;

  for (int step = 0; step < cfg.steps; ++step) {
    // Descent direction on -(E_p g - E_q g - c * penalty).
    auto grads = zero_like(result.critic.layers);
    MlpTrace trace;
    for (std::size_t i = 0; i < p.atoms.size(); ++i) {
      mlp_forward(result.critic, p.atoms[i], &trace);
      mlp_backward(result.critic, trace, -p.mass[i], &grads, nullptr);
    }
    for (std::size_t j = 0; j < q.atoms.size(); ++j) {
      mlp_forward(result.critic, q.atoms[j], &trace);
      mlp_backward(result.critic, trace, q.mass[j], &grads, nullptr);
    }
    if (cfg.penalty.mode == LipschitzMode::gradient_penalty) {
      for (int k = 0; k < n_interp; ++k) {
        const double t = uniform01(rng);
        const Eigen::VectorXd z = t * p.atoms[pick_a(rng)] + (1.0 - t) * q.atoms[pick_b(rng)];
        const Eigen::VectorXd g = mlp_input_gradient(result.critic, z);
        double value = 0.0;
        const Eigen::VectorXd dq = penalty_direction(g, value) * (cfg.penalty.coefficient / n_interp);
        mlp_input_gradient_backward(result.critic, z, dq, &grads);
      }
    }
    apply_mlp_update(result.critic, adam, std::move(grads), cfg.learning_rate);
    if (cfg.penalty.mode == LipschitzMode::weight_clip) {
      for (auto& l : result.critic.layers) {
        l.weight = l.weight.cwiseMax(-cfg.penalty.coefficient).cwiseMin(cfg.penalty.coefficient);
        l.bias = l.bias.cwiseMax(-cfg.penalty.coefficient).cwiseMin(cfg.penalty.coefficient);
      }
    }
  }

  result.ipm = expectation_gap(result.critic, p, q);
  std::vector<Eigen::VectorXd> support = p.atoms;
  support.insert(support.end(), q.atoms.begin(), q.atoms.end());
  std::vector<double> values;
  for (const auto& x : support) values.push_back(mlp_forward(result.critic, x));
  double lip = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    for (std::size_t j = i + 1; j < support.size(); ++j) {
      const double dist = (support[i] - support[j]).norm();
      if (dist > 1e-12) lip = std::max(lip, std::abs(values[i] - values[j]) / dist);
    }
  }
  result.support_lipschitz = lip;
  result.certified_ipm = lip > 0.0 ? result.ipm / lip : 0.0;
  return result;
}

}  // namespace dtrec
