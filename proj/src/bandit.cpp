#include "dtrec/bandit.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "dtrec/error.hpp"
#include "dtrec/lp.hpp"
#include "dtrec/transport.hpp"

namespace dtrec {

namespace {

constexpr double kTol = 1e-9;

Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows, const char* what) {
  if (!rows.is_array() || rows.empty()) throw Error("bad_instance", std::string(what) + " must be a 2-D array");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m)
      throw Error("bad_instance", std::string(what) + " rows differ in length");
    for (Eigen::Index c = 0; c < m; ++c) out(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return out;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd rows_of(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (const double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

// Flattened cell view of a context x action table.
Eigen::VectorXd cells(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r * m.cols() + c) = m(r, c);
  return out;
}

// Compositions of `total` into `parts` nonnegative integers, first part
// slowest and ascending.
void compositions(int total, int parts, std::vector<int>& prefix, std::vector<std::vector<int>>& out) {
  if (parts == 1) {
    prefix.push_back(total);
    out.push_back(prefix);
    prefix.pop_back();
    return;
  }
  for (int v = 0; v <= total; ++v) {
    prefix.push_back(v);
    compositions(total - v, parts - 1, prefix, out);
    prefix.pop_back();
  }
}

std::vector<Eigen::VectorXd> simplex_grid(int n_actions, int resolution) {
  if (resolution < 2) throw Error("bad_argument", "grid resolution must be >= 2");
  std::vector<std::vector<int>> comps;
  std::vector<int> prefix;
  compositions(resolution - 1, n_actions, prefix, comps);
  std::vector<Eigen::VectorXd> out;
  out.reserve(comps.size());
  for (const auto& c : comps) {
    Eigen::VectorXd v(n_actions);
    for (int a = 0; a < n_actions; ++a) v(a) = static_cast<double>(c[static_cast<std::size_t>(a)]) / (resolution - 1);
    out.push_back(v);
  }
  return out;
}

// W1 between two cell distributions under the one-hot cost.
double one_hot_transport(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  std::vector<Eigen::Index> sp, sq;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) sp.push_back(i);
    if (q(i) > 0.0) sq.push_back(i);
  }
  if (sp.size() > static_cast<std::size_t>(kMaxOtAtoms) || sq.size() > static_cast<std::size_t>(kMaxOtAtoms)) {
    // The cost is a scaled discrete metric, whose transport cost is
    // sqrt(2) times the total variation distance.
    return std::sqrt(2.0) * 0.5 * (p - q).cwiseAbs().sum();
  }
  std::vector<double> pm, qm;
  double ps = 0.0, qs = 0.0;
  for (const auto i : sp) ps += p(i);
  for (const auto j : sq) qs += q(j);
  for (const auto i : sp) pm.push_back(p(i) / ps);
  for (const auto j : sq) qm.push_back(q(j) / qs);
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(sp.size()), static_cast<Eigen::Index>(sq.size()));
  for (std::size_t a = 0; a < sp.size(); ++a)
    for (std::size_t b = 0; b < sq.size(); ++b)
      cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = sp[a] == sq[b] ? 0.0 : std::sqrt(2.0);
  return exact_ot(pm, qm, cost);
}

}  // namespace

void BanditInstance::validate() const {
  if (logging.rows() < 1 || logging.cols() < 1 || logging.rows() > 10 || logging.cols() > 10)
    throw Error("bad_instance", "instances have 1..10 contexts and actions");
  if (loss.rows() != logging.rows() || loss.cols() != logging.cols())
    throw Error("bad_instance", "loss and logging policy differ in shape");
  if (context_prob.size() != logging.rows())
    throw Error("bad_instance", "context distribution length differs from context count");
  if ((context_prob.array() < 0.0).any() || std::abs(context_prob.sum() - 1.0) > kTol)
    throw Error("bad_instance", "context distribution must be nonnegative and sum to 1");
  for (Eigen::Index r = 0; r < logging.rows(); ++r) {
    if ((logging.row(r).array() < 0.0).any() || std::abs(logging.row(r).sum() - 1.0) > kTol)
      throw Error("bad_instance", "logging policy row " + std::to_string(r) + " is not a distribution");
  }
  if ((loss.array() < 0.0).any() || (loss.array() > 1.0).any())
    throw Error("bad_instance", "losses must lie in [0, 1]");
  if (target.size() > 0) {
    if (target.rows() != logging.rows() || target.cols() != logging.cols())
      throw Error("bad_instance", "target differs in shape");
    if ((target.array() < 0.0).any() || std::abs(target.sum() - 1.0) > kTol)
      throw Error("bad_instance", "target must be a distribution over cells");
  }
}

nlohmann::json to_json(const BanditInstance& inst) {
  nlohmann::json j = {{"name", inst.name},
                      {"context_prob", std::vector<double>(inst.context_prob.data(),
                                                           inst.context_prob.data() + inst.context_prob.size())},
                      {"logging", matrix_to_json(inst.logging)},
                      {"loss", matrix_to_json(inst.loss)}};
  if (inst.target.size() > 0) j["target"] = matrix_to_json(inst.target);
  return j;
}

BanditInstance bandit_from_json(const nlohmann::json& doc) {
  BanditInstance inst;
  try {
    inst.name = doc.value("name", "");
    const auto p = doc.at("context_prob").get<std::vector<double>>();
    inst.context_prob = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    inst.logging = matrix_from_json(doc.at("logging"), "logging");
    inst.loss = matrix_from_json(doc.at("loss"), "loss");
    if (doc.contains("target")) inst.target = matrix_from_json(doc.at("target"), "target");
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_instance", std::string("malformed bandit instance: ") + e.what());
  }
  inst.validate();
  return inst;
}

BanditInstance load_bandit(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", "'" + path.string() + "': " + e.what());
  }
  auto inst = bandit_from_json(doc);
  if (inst.name.empty()) inst.name = path.stem().string();
  return inst;
}

std::vector<std::string> builtin_bandit_names() {
  return {"2x2", "3x3", "iw_full", "iw_low", "iw_high", "missing_mass"};
}

BanditInstance builtin_bandit(const std::string& name) {
  BanditInstance inst;
  inst.name = name;
  if (name == "2x2") {
    inst.context_prob = Eigen::Vector2d(0.5, 0.5);
    inst.logging = rows_of({{0.7, 0.3}, {0.4, 0.6}});
    inst.loss = rows_of({{0.2, 0.8}, {0.6, 0.3}});
  } else if (name == "3x3") {
    inst.context_prob = Eigen::Vector3d(0.3, 0.3, 0.4);
    inst.logging = rows_of({{0.5, 0.3, 0.2}, {0.2, 0.5, 0.3}, {0.3, 0.3, 0.4}});
    inst.loss = rows_of({{0.1, 0.5, 0.9}, {0.7, 0.2, 0.6}, {0.4, 0.8, 0.3}});
  } else if (name == "iw_full") {
    inst.context_prob = Eigen::VectorXd::Ones(1);
    inst.logging = rows_of({{0.4, 0.3, 0.3}});
    inst.loss = rows_of({{0.2, 0.5, 0.9}});
    inst.target = rows_of({{0.3, 0.3, 0.4}});
  } else if (name == "iw_low") {
    inst.context_prob = Eigen::VectorXd::Ones(1);
    inst.logging = rows_of({{0.5, 0.5}});
    inst.loss = rows_of({{0.2, 0.8}});
    inst.target = rows_of({{0.7, 0.3}});
  } else if (name == "iw_high") {
    inst.context_prob = Eigen::VectorXd::Ones(1);
    inst.logging = rows_of({{0.9, 0.1}});
    inst.loss = rows_of({{0.2, 0.8}});
    inst.target = rows_of({{0.1, 0.9}});
  } else if (name == "missing_mass") {
    inst.context_prob = Eigen::VectorXd::Ones(1);
    inst.logging = rows_of({{0.5, 0.5, 0.0}});
    inst.loss = rows_of({{0.2, 0.5, 0.9}});
    inst.target = rows_of({{0.3, 0.3, 0.4}});
  } else {
    throw Error("unknown_instance", "no builtin bandit instance named '" + name + "'");
  }
  inst.validate();
  return inst;
}

void check_policy(const Policy& f, const BanditInstance& inst) {
  if (f.rows() != inst.logging.rows() || f.cols() != inst.logging.cols())
    throw Error("bad_policy", "policy shape differs from the instance");
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    if ((f.row(r).array() < 0.0).any() || std::abs(f.row(r).sum() - 1.0) > kTol)
      throw Error("unnormalized", "policy row " + std::to_string(r) + " is not a distribution");
  }
}

double counterfactual_risk(const Policy& f, const BanditInstance& inst) {
  check_policy(f, inst);
  return inst.context_prob.dot(f.cwiseProduct(inst.loss).rowwise().sum());
}

Eigen::VectorXd logged_measure(const BanditInstance& inst) {
  return cells(inst.context_prob.asDiagonal() * inst.logging);
}

Eigen::VectorXd deployment_measure(const Policy& f, const BanditInstance& inst) {
  check_policy(f, inst);
  return cells(inst.context_prob.asDiagonal() * f);
}

std::vector<Policy> policy_grid(int n_contexts, int n_actions, int resolution) {
  const auto rows = simplex_grid(n_actions, resolution);
  const double total = std::pow(static_cast<double>(rows.size()), n_contexts);
  if (total > 2e6) throw Error("bad_argument", "policy grid too large to enumerate");
  std::vector<Policy> out;
  out.reserve(static_cast<std::size_t>(total));
  std::vector<std::size_t> idx(static_cast<std::size_t>(n_contexts), 0);
  while (true) {
    Policy f(n_contexts, n_actions);
    for (int c = 0; c < n_contexts; ++c) f.row(c) = rows[idx[static_cast<std::size_t>(c)]].transpose();
    out.push_back(f);
    int c = n_contexts - 1;
    while (c >= 0 && ++idx[static_cast<std::size_t>(c)] == rows.size()) idx[static_cast<std::size_t>(c--)] = 0;
    if (c < 0) break;
  }
  return out;
}

CrmOptimum crm_optimum(const BanditInstance& inst, int resolution) {
  inst.validate();
  // The risk separates over contexts, so the lexicographically first joint
  // minimizer is the product of per-context first minimizers.
  const auto rows = simplex_grid(inst.n_actions(), resolution);
  CrmOptimum out;
  out.f = Policy::Zero(inst.n_contexts(), inst.n_actions());
  for (int c = 0; c < inst.n_contexts(); ++c) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& row : rows) {
      const double v = row.dot(inst.loss.row(c).transpose());
      if (v < best - 1e-12) {
        best = v;
        out.f.row(c) = row.transpose();
      }
    }
  }
  out.risk = counterfactual_risk(out.f, inst);
  return out;
}

Eigen::MatrixXd one_hot_cost(int n_cells) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Constant(n_cells, n_cells, std::sqrt(2.0));
  c.diagonal().setZero();
  return c;
}

double dt_bandit_objective(const Policy& f, const Eigen::MatrixXd& w, const BanditInstance& inst,
                           double lambda) {
  inst.validate();
  if (w.rows() != inst.logging.rows() || w.cols() != inst.logging.cols())
    throw Error("bad_argument", "weight table shape differs from the instance");
  if ((w.array() < 0.0).any()) throw Error("bad_argument", "weights must be nonnegative");
  if (lambda < 0.0) throw Error("bad_argument", "lambda must be >= 0");
  const Eigen::VectorXd pw_raw = cells(w).cwiseProduct(logged_measure(inst));
  const double total = pw_raw.sum();
  if (!(total > 0.0)) throw Error("degenerate_weights", "weights vanish on the logged support");
  const Eigen::VectorXd pw = pw_raw / total;
  const Eigen::VectorXd pf = deployment_measure(f, inst);
  const double risk = pw.dot(cells(inst.loss));
  if (lambda == 0.0) return risk;
  return risk + lambda * one_hot_transport(pw, pf);
}

InnerMinimum dt_inner_minimum(const Policy& f, const BanditInstance& inst, double lambda) {
  const Eigen::VectorXd pf = deployment_measure(f, inst);
  const Eigen::VectorXd logged = logged_measure(inst);
  const Eigen::VectorXd loss = cells(inst.loss);
  const auto n = pf.size();
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < n; ++i)
    if (logged(i) > 0.0) support.push_back(i);
  const auto s = static_cast<Eigen::Index>(support.size());
  // Coupling pi(k, j): mass moved from support cell support[k] to cell j,
  // with the P_f marginal fixed and the source marginal free.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, s * n);
  Eigen::VectorXd c(s * n);
  for (Eigen::Index k = 0; k < s; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) {
      A(j, k * n + j) = 1.0;
      c(k * n + j) = loss(support[static_cast<std::size_t>(k)]) +
                     lambda * (support[static_cast<std::size_t>(k)] == j ? 0.0 : std::sqrt(2.0));
    }
  }
  const auto sol = solve_standard_lp(c, A, pf);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < s; ++k) {
    const auto cell = support[static_cast<std::size_t>(k)];
    w(cell) = std::max(0.0, sol.x.segment(k * n, n).sum()) / logged(cell);
  }
  if (w.maxCoeff() > 0.0) w /= w.maxCoeff();
  InnerMinimum out;
  out.value = sol.objective;
  out.w = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      w.data(), inst.n_contexts(), inst.n_actions());
  return out;
}

ConsistencyReport consistency_check(const BanditInstance& inst, const std::vector<double>& lambdas,
                                    int resolution) {
  inst.validate();
  if (!inst.full_overlap()) throw Error("bad_instance", "consistency check needs full overlap");
  if (lambdas.empty()) throw Error("bad_argument", "lambda grid is empty");
  ConsistencyReport report;
  report.instance = inst.name;
  report.resolution = resolution;
  const auto crm = crm_optimum(inst, resolution);
  report.f_star = crm.f;
  report.risk_star = crm.risk;
  const auto grid = policy_grid(inst.n_contexts(), inst.n_actions(), resolution);
  for (const double lambda : lambdas) {
    if (lambda < 0.0) throw Error("bad_argument", "lambda must be >= 0");
    ConsistencyRow row;
    row.lambda = lambda;
    row.dt_min = std::numeric_limits<double>::infinity();
    for (const auto& f : grid) {
      const double v = dt_inner_minimum(f, inst, lambda).value;
      if (v < row.dt_min - 1e-12) {
        row.dt_min = v;
        row.dt_argmin = f;
      }
    }
    row.gap = std::abs(crm.risk - row.dt_min);
    report.rows.push_back(row);
  }
  return report;
}

nlohmann::json to_json(const ConsistencyReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"lambda", r.lambda},
                    {"gap", r.gap},
                    {"dt_min", r.dt_min},
                    {"dt_argmin", matrix_to_json(r.dt_argmin)}});
  }
  return {{"instance", report.instance},
          {"resolution", report.resolution},
          {"f_star", matrix_to_json(report.f_star)},
          {"risk_star", report.risk_star},
          {"rows", rows}};
}

IwDiagnostic iw_overlap_diagnostic(const BanditInstance& inst, const Eigen::MatrixXd& target,
                                   int n_samples, int replications, Rng& rng) {
  inst.validate();
  if (n_samples < 1 || replications < 2)
    throw Error("bad_argument", "need n_samples >= 1 and replications >= 2");
  if (target.rows() != inst.logging.rows() || target.cols() != inst.logging.cols() ||
      (target.array() < 0.0).any() || std::abs(target.sum() - 1.0) > kTol)
    throw Error("bad_argument", "target must be a distribution over the instance cells");
  const Eigen::VectorXd p = logged_measure(inst);
  const Eigen::VectorXd q = cells(target);
  const Eigen::VectorXd loss = cells(inst.loss);

  IwDiagnostic d;
  d.n_samples = n_samples;
  d.replications = replications;
  d.target_risk = q.dot(loss);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) {
      if (q(i) > 0.0) d.d1 += p(i) * p(i) / q(i);
    } else {
      d.missing_mass += q(i);
      d.exact_bias -= q(i) * loss(i);
    }
  }
  std::discrete_distribution<int> draw(p.data(), p.data() + p.size());
  std::vector<double> estimates;
  estimates.reserve(static_cast<std::size_t>(replications));
  for (int r = 0; r < replications; ++r) {
    double sum = 0.0;
    for (int s = 0; s < n_samples; ++s) {
      const int cell = draw(rng);
      sum += q(cell) / p(cell) * loss(cell);
    }
    estimates.push_back(sum / n_samples);
  }
  double mean = 0.0;
  for (const double e : estimates) mean += e;
  mean /= replications;
  double var = 0.0;
  for (const double e : estimates) var += (e - mean) * (e - mean);
  var /= replications - 1;
  d.mean_estimate = mean;
  d.bias = mean - d.target_risk;
  d.variance = var;
  d.standard_error = std::sqrt(var / replications);
  return d;
}

nlohmann::json to_json(const IwDiagnostic& d) {
  return {{"target_risk", d.target_risk}, {"mean_estimate", d.mean_estimate},
          {"bias", d.bias},               {"exact_bias", d.exact_bias},
          {"variance", d.variance},       {"standard_error", d.standard_error},
          {"d1", d.d1},                   {"missing_mass", d.missing_mass},
          {"n_samples", d.n_samples},     {"replications", d.replications}};
}

}  // namespace dtrec
