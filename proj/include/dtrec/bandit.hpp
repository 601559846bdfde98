#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dtrec/rng.hpp"

namespace dtrec {

// Enumerable contextual bandit. Cells (context, action) are indexed
// row-major: cell = context * n_actions + action.
struct BanditInstance {
  std::string name;
  Eigen::VectorXd context_prob;  // sums to 1
  Eigen::MatrixXd logging;       // context x action, rows sum to 1
  Eigen::MatrixXd loss;          // context x action, entries in [0, 1]
  // Optional target distribution over cells for the IW diagnostic
  // (context x action, sums to 1); empty when absent.
  Eigen::MatrixXd target;

  int n_contexts() const { return static_cast<int>(logging.rows()); }
  int n_actions() const { return static_cast<int>(logging.cols()); }
  int n_cells() const { return n_contexts() * n_actions(); }
  bool full_overlap() const { return (logging.array() > 0.0).all(); }
  void validate() const;
};

nlohmann::json to_json(const BanditInstance& inst);
BanditInstance bandit_from_json(const nlohmann::json& doc);
BanditInstance load_bandit(const std::filesystem::path& path);

// Shipped instances: "2x2", "3x3" (full overlap, consistency checks),
// "iw_full" (target inside the logged support), "iw_low" / "iw_high"
// (full overlap, d1 differs by about 7x) and
// "missing_mass" (target puts 0.4 on an action the logger never takes).
BanditInstance builtin_bandit(const std::string& name);
std::vector<std::string> builtin_bandit_names();

// Stochastic policy: context x action, rows sum to 1.
using Policy = Eigen::MatrixXd;

void check_policy(const Policy& f, const BanditInstance& inst);

// sum_c p(c) sum_a f(a|c) loss(c, a).
double counterfactual_risk(const Policy& f, const BanditInstance& inst);

// Logged measure P(c, a) = p(c) pi(a|c) and deployment measure
// P_f(c, a) = p(c) f(a|c), flattened over cells.
Eigen::VectorXd logged_measure(const BanditInstance& inst);
Eigen::VectorXd deployment_measure(const Policy& f, const BanditInstance& inst);

// Every policy whose rows lie on the simplex grid with `resolution` points
// per edge, in lexicographic order (first coordinate slowest, ascending).
std::vector<Policy> policy_grid(int n_contexts, int n_actions, int resolution);

struct CrmOptimum {
  Policy f;
  double risk = 0.0;
};

// Grid minimizer of the counterfactual risk; ties go to the
// lexicographically first grid policy.
CrmOptimum crm_optimum(const BanditInstance& inst, int resolution);

// Cost between one-hot cell encodings: 0 on the diagonal, sqrt(2) off it.
Eigen::MatrixXd one_hot_cost(int n_cells);

// E_{P_w} loss + lambda * W1(P_w, P_f) with P_w proportional to w * P.
// `w` is context x action and nonnegative.
double dt_bandit_objective(const Policy& f, const Eigen::MatrixXd& w, const BanditInstance& inst,
                           double lambda);

struct InnerMinimum {
  double value = 0.0;
  Eigen::MatrixXd w;  // a minimizing weight table (max entry 1)
};

// min over w of dt_bandit_objective(f, w, ...), solved exactly as a
// transport LP whose source marginal is free on the logged support.
InnerMinimum dt_inner_minimum(const Policy& f, const BanditInstance& inst, double lambda);

struct ConsistencyRow {
  double lambda = 0.0;
  double gap = 0.0;  // |risk(f*) - min over (f, w) of the DT objective|
  double dt_min = 0.0;
  Policy dt_argmin;
};

struct ConsistencyReport {
  std::string instance;
  int resolution = 0;
  Policy f_star;
  double risk_star = 0.0;
  std::vector<ConsistencyRow> rows;
};

ConsistencyReport consistency_check(const BanditInstance& inst, const std::vector<double>& lambdas,
                                    int resolution);

nlohmann::json to_json(const ConsistencyReport& report);

struct IwDiagnostic {
  double target_risk = 0.0;   // exact E_Q loss
  double mean_estimate = 0.0;
  double bias = 0.0;          // mean_estimate - target_risk
  double exact_bias = 0.0;    // -(sum of Q * loss outside the logged support)
  double variance = 0.0;      // across replications
  double standard_error = 0.0;
  double d1 = 0.0;            // sum over the overlap of P^2 / Q
  double missing_mass = 0.0;  // Q mass outside the logged support
  int n_samples = 0;
  int replications = 0;
};

// Replicated importance-weighting estimate of E_Q loss from `n_samples`
// logged draws. `target` is a context x action distribution summing to 1.
IwDiagnostic iw_overlap_diagnostic(const BanditInstance& inst, const Eigen::MatrixXd& target,
                                   int n_samples, int replications, Rng& rng);

nlohmann::json to_json(const IwDiagnostic& diag);

}  // namespace dtrec
