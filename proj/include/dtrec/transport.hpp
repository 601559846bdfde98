#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dtrec/data.hpp"
#include "dtrec/mlp.hpp"
#include "dtrec/models.hpp"
#include "dtrec/rng.hpp"

namespace dtrec {

enum class IpmNormalization { raw_sum, self_normalized };

// Batch estimate of  sum w*g - sum reco*g  (each side optionally divided by
// its own coefficient sum).
struct IpmBatchTerm {
  double source_side = 0.0;
  double target_side = 0.0;
  double value = 0.0;
  IpmNormalization normalization = IpmNormalization::self_normalized;
};

IpmBatchTerm ipm_estimate(std::span<const double> critic_values, std::span<const double> weights,
                          std::span<const double> reco_values, IpmNormalization normalization);

IpmBatchTerm ipm_estimate(const ModelParams& critic, std::span<const LabeledPair> batch,
                          std::span<const double> weights, std::span<const double> reco_values,
                          IpmNormalization normalization);

enum class LipschitzMode { gradient_penalty, weight_clip };

struct LipschitzPenaltyConfig {
  LipschitzMode mode = LipschitzMode::gradient_penalty;
  // Penalty weight, or the clip bound in weight_clip mode.
  double coefficient = 10.0;
  // Interpolates per evaluation; 0 means "one per batch record".
  int n_interpolates = 0;

  void validate() const;
};

using PointGradient = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Mean over interpolates of (|grad g(z)| - 1)^2 where z is uniform on the
// segment between a random point of `sample_a` and one of `sample_b`.
// Returned unscaled by the coefficient.
double lipschitz_penalty(const PointGradient& critic_gradient,
                         std::span<const Eigen::VectorXd> sample_a,
                         std::span<const Eigen::VectorXd> sample_b,
                         const LipschitzPenaltyConfig& cfg, Rng& rng);

// Same penalty for a recommender critic, evaluated in the space of its
// concatenated [user, item] embeddings. Interpolation endpoints are drawn
// from `batch` with probabilities proportional to `source_mass` and
// `target_mass`. Per-id biases are constant in that space and excluded.
struct CriticPenalty {
  double value = 0.0;
  Gradients gradients;  // d(value)/d(critic params)
};

CriticPenalty critic_gradient_penalty(const ModelParams& critic, std::span<const LabeledPair> batch,
                                      std::span<const double> source_mass,
                                      std::span<const double> target_mass, int n_interpolates,
                                      Rng& rng);

// Critic output and its input gradient at a point of the embedding space.
double critic_at(const ModelParams& critic, const Eigen::VectorXd& z);
Eigen::VectorXd critic_input_gradient(const ModelParams& critic, const Eigen::VectorXd& z);
Eigen::VectorXd critic_input(const ModelParams& critic, UserId user, ItemId item);

// Clamps every critic parameter to [-bound, bound] (weight_clip mode).
void clip_critic_weights(ModelParams& critic, double bound);

inline constexpr int kMaxOtAtoms = 16;

// Exact optimal transport cost between two normalized discrete
// distributions with an explicit cost matrix (|p| x |q|), solved as a
// linear program.
double exact_ot(std::span<const double> p, std::span<const double> q, const Eigen::MatrixXd& cost);

struct DiscreteMeasure {
  std::vector<Eigen::VectorXd> atoms;
  std::vector<double> mass;
};

Eigen::MatrixXd l2_cost(const DiscreteMeasure& p, const DiscreteMeasure& q);
double exact_ot(const DiscreteMeasure& p, const DiscreteMeasure& q);

struct PointCriticConfig {
  int steps = 2000;
  double learning_rate = 1e-3;
  std::vector<int> hidden = {64, 64};
  LipschitzPenaltyConfig penalty{LipschitzMode::gradient_penalty, 10.0, 64};
  AdamConfig adam{0.5, 0.9, 1e-8, 0.0};
};

struct PointCriticResult {
  Mlp critic;
  // Expectation gap of the trained critic.
  double ipm = 0.0;
  // Largest slope |g(x) - g(y)| / |x - y| over pairs of support atoms.
  double support_lipschitz = 0.0;
  // ipm / support_lipschitz: the gap of a critic that is exactly 1-Lipschitz
  // on the support, hence a lower bound on the transport cost.
  double certified_ipm = 0.0;
};

// Gradient-penalty critic trained by ascent on  E_p g - E_q g - c * penalty.
PointCriticResult train_point_critic(const DiscreteMeasure& p, const DiscreteMeasure& q,
                                     const PointCriticConfig& cfg, Rng& rng);

double expectation_gap(const Mlp& critic, const DiscreteMeasure& p, const DiscreteMeasure& q);

}  // namespace dtrec
