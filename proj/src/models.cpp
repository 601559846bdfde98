#include "dtrec/models.hpp"

#include <cmath>

#include "dtrec/error.hpp"

namespace dtrec {

std::string to_string(ModelKind kind) { return kind == ModelKind::mcf ? "MCF" : "NCF"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "MCF" || name == "mcf" || name == "M") return ModelKind::mcf;
  if (name == "NCF" || name == "ncf" || name == "N") return ModelKind::ncf;
  throw Error("bad_model_kind", "unknown model kind '" + name + "'");
}

namespace {

ModelParams allocate(const ModelShape& shape) {
  if (shape.n_users < 1 || shape.n_items < 1 || shape.dim < 1)
    throw Error("bad_shape", "model needs at least one user, one item and dim >= 1");
  ModelParams p;
  p.kind = shape.kind;
  p.output = shape.output;
  p.user_table = EmbeddingTable::Zero(shape.n_users, shape.dim);
  p.item_table = EmbeddingTable::Zero(shape.n_items, shape.dim);
  if (shape.kind == ModelKind::mcf) {
    p.user_bias = Eigen::VectorXd::Zero(shape.n_users);
    p.item_bias = Eigen::VectorXd::Zero(shape.n_items);
  }
  return p;
}

std::vector<int> head_widths(const ModelShape& shape) {
  auto widths = shape.hidden;
  widths.push_back(1);
  return widths;
}

}  // namespace

ModelParams init_model(const ModelShape& shape, Rng& rng) {
  auto p = allocate(shape);
  std::normal_distribution<double> normal(0.0, 0.01);
  for (Eigen::Index r = 0; r < p.user_table.rows(); ++r)
    for (Eigen::Index c = 0; c < p.user_table.cols(); ++c) p.user_table(r, c) = normal(rng);
  for (Eigen::Index r = 0; r < p.item_table.rows(); ++r)
    for (Eigen::Index c = 0; c < p.item_table.cols(); ++c) p.item_table(r, c) = normal(rng);
  if (shape.kind == ModelKind::ncf)
    p.mlp = make_mlp(2 * shape.dim, head_widths(shape), true, MlpInit::glorot_uniform, rng);
  return p;
}

ModelParams zero_model(const ModelShape& shape) {
  auto p = allocate(shape);
  if (shape.kind == ModelKind::ncf) {
    Rng unused(0);
    p.mlp = make_mlp(2 * shape.dim, head_widths(shape), true, MlpInit::zeros, unused);
  }
  return p;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double apply_output(OutputRange range, double raw) {
  return range == OutputRange::unit_interval ? sigmoid(raw) : raw;
}

double output_derivative(OutputRange range, double raw) {
  if (range != OutputRange::unit_interval) return 1.0;
  const double s = sigmoid(raw);
  return s * (1.0 - s);
}

void check_ids(const ModelParams& params, UserId user, ItemId item) {
  if (user < 0 || user >= params.n_users() || item < 0 || item >= params.n_items()) {
    throw Error("id_out_of_range", "pair (" + std::to_string(user) + ", " +
                                       std::to_string(item) + ") outside model tables");
  }
}

namespace {

Eigen::VectorXd concat_embeddings(const ModelParams& p, UserId user, ItemId item) {
  Eigen::VectorXd z(2 * p.dim());
  z.head(p.dim()) = p.user_table.row(user).transpose();
  z.tail(p.dim()) = p.item_table.row(item).transpose();
  return z;
}

}  // namespace

double raw_score(const ModelParams& p, UserId user, ItemId item) {
  check_ids(p, user, item);
  if (p.kind == ModelKind::mcf) {
    return p.user_table.row(user).dot(p.item_table.row(item)) + p.user_bias(user) +
           p.item_bias(item) + p.global_bias;
  }
  return mlp_forward(p.mlp, concat_embeddings(p, user, item));
}

double score(const ModelParams& p, UserId user, ItemId item) {
  return apply_output(p.output, raw_score(p, user, item));
}

Eigen::VectorXd raw_item_scores(const ModelParams& p, UserId user) {
  check_ids(p, user, 0);
  if (p.kind == ModelKind::mcf) {
    Eigen::VectorXd s = p.item_table * p.user_table.row(user).transpose();
    s.array() += p.item_bias.array() + p.user_bias(user) + p.global_bias;
    return s;
  }
  // First layer splits into user and item halves; the user half is shared.
  const auto& first = p.mlp.layers.front();
  const int d = p.dim();
  Eigen::VectorXd user_part = first.weight.leftCols(d) * p.user_table.row(user).transpose();
  if (first.bias.size() > 0) user_part += first.bias;
  Eigen::MatrixXd pre = first.weight.rightCols(d) * p.item_table.transpose();
  pre.colwise() += user_part;
  Eigen::MatrixXd a = p.mlp.layers.size() > 1 ? Eigen::MatrixXd(pre.cwiseMax(0.0)) : pre;
  for (std::size_t l = 1; l < p.mlp.layers.size(); ++l) {
    const auto& layer = p.mlp.layers[l];
    Eigen::MatrixXd z = layer.weight * a;
    if (layer.bias.size() > 0) z.colwise() += layer.bias;
    a = (l + 1 < p.mlp.layers.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  return a.row(0).transpose();
}

void SparseRows::add(std::int32_t row, const Eigen::Ref<const Eigen::VectorXd>& value) {
  auto it = rows.find(row);
  if (it == rows.end()) {
    rows.emplace(row, value);
  } else {
    it->second += value;
  }
}

void SparseRows::add(std::int32_t row, double value) {
  add(row, Eigen::VectorXd::Constant(1, value));
}

namespace {

void add_rows(SparseRows& into, const SparseRows& from) {
  for (const auto& [row, v] : from.rows) into.add(row, v);
}

void scale_rows(SparseRows& rows, double factor) {
  for (auto& [row, v] : rows.rows) v *= factor;
}

}  // namespace

Gradients& Gradients::operator+=(const Gradients& other) {
  add_rows(user_table, other.user_table);
  add_rows(item_table, other.item_table);
  add_rows(user_bias, other.user_bias);
  add_rows(item_bias, other.item_bias);
  global_bias += other.global_bias;
  if (mlp.empty()) mlp = zero_like(other.mlp);
  for (std::size_t l = 0; l < other.mlp.size(); ++l) {
    mlp[l].weight += other.mlp[l].weight;
    mlp[l].bias += other.mlp[l].bias;
  }
  return *this;
}

Gradients& Gradients::operator*=(double factor) {
  scale_rows(user_table, factor);
  scale_rows(item_table, factor);
  scale_rows(user_bias, factor);
  scale_rows(item_bias, factor);
  global_bias *= factor;
  for (auto& l : mlp) {
    l.weight *= factor;
    l.bias *= factor;
  }
  return *this;
}

Gradients zero_gradients(const ModelParams& p) {
  Gradients g;
  g.user_table.width = p.dim();
  g.item_table.width = p.dim();
  g.user_bias.width = 1;
  g.item_bias.width = 1;
  g.mlp = zero_like(p.mlp.layers);
  return g;
}

void accumulate_raw_gradient(const ModelParams& p, UserId user, ItemId item, double upstream,
                             Gradients& g) {
  check_ids(p, user, item);
  if (p.kind == ModelKind::mcf) {
    g.user_table.add(user, upstream * p.item_table.row(item).transpose());
    g.item_table.add(item, upstream * p.user_table.row(user).transpose());
    g.user_bias.add(user, upstream);
    g.item_bias.add(item, upstream);
    g.global_bias += upstream;
    return;
  }
  MlpTrace trace;
  mlp_forward(p.mlp, concat_embeddings(p, user, item), &trace);
  Eigen::VectorXd input_grad = Eigen::VectorXd::Zero(2 * p.dim());
  mlp_backward(p.mlp, trace, upstream, &g.mlp, &input_grad);
  g.user_table.add(user, input_grad.head(p.dim()));
  g.item_table.add(item, input_grad.tail(p.dim()));
}

Gradients backward(const ModelParams& p, std::span<const PairUpstream> batch) {
  auto g = zero_gradients(p);
  for (const auto& pair : batch) {
    if (!std::isfinite(pair.upstream))
      throw Error("non_finite_gradient", "upstream gradient is not finite");
    const double raw = raw_score(p, pair.user, pair.item);
    accumulate_raw_gradient(p, pair.user, pair.item,
                            pair.upstream * output_derivative(p.output, raw), g);
  }
  return g;
}

double weight_from_raw(double raw, double max_weight) {
  if (!(max_weight > 0.0)) throw Error("bad_argument", "max_weight must be positive");
  return max_weight * sigmoid(raw);
}

double weight_derivative(double raw, double max_weight) {
  const double s = sigmoid(raw);
  return max_weight * s * (1.0 - s);
}

double weight_of(const ModelParams& p, UserId user, ItemId item, double max_weight) {
  return weight_from_raw(raw_score(p, user, item), max_weight);
}

namespace {

template <typename Visit>
void visit_blocks(const ModelParams& p, Visit&& visit) {
  visit(p.user_table.data(), p.user_table.size());
  visit(p.item_table.data(), p.item_table.size());
  visit(p.user_bias.data(), p.user_bias.size());
  visit(p.item_bias.data(), p.item_bias.size());
  visit(&p.global_bias, 1);
  for (const auto& l : p.mlp.layers) {
    visit(l.weight.data(), l.weight.size());
    visit(l.bias.data(), l.bias.size());
  }
}

}  // namespace

std::vector<double> flatten(const ModelParams& p) {
  std::vector<double> out;
  visit_blocks(p, [&](const double* data, Eigen::Index n) { out.insert(out.end(), data, data + n); });
  return out;
}

void unflatten(ModelParams& p, std::span<const double> values) {
  std::size_t offset = 0;
  visit_blocks(p, [&](const double* data, Eigen::Index n) {
    if (offset + static_cast<std::size_t>(n) > values.size())
      throw Error("shape_mismatch", "flat parameter vector too short");
    std::copy_n(values.data() + offset, n, const_cast<double*>(data));
    offset += static_cast<std::size_t>(n);
  });
  if (offset != values.size()) throw Error("shape_mismatch", "flat parameter vector too long");
}

std::vector<double> flatten_gradients(const Gradients& g, const ModelParams& like) {
  ModelParams dense = like;
  dense.user_table.setZero();
  dense.item_table.setZero();
  dense.user_bias.setZero();
  dense.item_bias.setZero();
  for (const auto& [r, v] : g.user_table.rows) dense.user_table.row(r) = v.transpose();
  for (const auto& [r, v] : g.item_table.rows) dense.item_table.row(r) = v.transpose();
  for (const auto& [r, v] : g.user_bias.rows) dense.user_bias(r) = v(0);
  for (const auto& [r, v] : g.item_bias.rows) dense.item_bias(r) = v(0);
  dense.global_bias = g.global_bias;
  for (std::size_t l = 0; l < dense.mlp.layers.size(); ++l) {
    dense.mlp.layers[l].weight = g.mlp[l].weight;
    dense.mlp.layers[l].bias = g.mlp[l].bias;
  }
  return flatten(dense);
}

AdamState init_adam(const ModelParams& p, AdamConfig config) {
  AdamState s;
  s.config = config;
  s.m_user = EmbeddingTable::Zero(p.user_table.rows(), p.user_table.cols());
  s.v_user = s.m_user;
  s.m_item = EmbeddingTable::Zero(p.item_table.rows(), p.item_table.cols());
  s.v_item = s.m_item;
  s.m_user_bias = Eigen::VectorXd::Zero(p.user_bias.size());
  s.v_user_bias = s.m_user_bias;
  s.m_item_bias = Eigen::VectorXd::Zero(p.item_bias.size());
  s.v_item_bias = s.m_item_bias;
  s.user_steps.assign(static_cast<std::size_t>(p.user_table.rows()), 0);
  s.item_steps.assign(static_cast<std::size_t>(p.item_table.rows()), 0);
  s.user_bias_steps.assign(static_cast<std::size_t>(p.user_bias.size()), 0);
  s.item_bias_steps.assign(static_cast<std::size_t>(p.item_bias.size()), 0);
  s.m_mlp = zero_like(p.mlp.layers);
  s.v_mlp = zero_like(p.mlp.layers);
  return s;
}

namespace {

double sparse_norm_sq(const SparseRows& rows) {
  double total = 0.0;
  for (const auto& [r, v] : rows.rows) total += v.squaredNorm();
  return total;
}

void clip_block(SparseRows& rows, double max_norm, int& clipped) {
  const double norm = std::sqrt(sparse_norm_sq(rows));
  if (norm > max_norm) {
    scale_rows(rows, max_norm / norm);
    ++clipped;
  }
}

template <typename Derived>
void clip_dense(Eigen::MatrixBase<Derived>& block, double max_norm, int& clipped) {
  const double norm = block.norm();
  if (norm > max_norm) {
    block *= max_norm / norm;
    ++clipped;
  }
}

bool all_finite(const Gradients& g) {
  auto rows_ok = [](const SparseRows& s) {
    for (const auto& [r, v] : s.rows)
      if (!v.allFinite()) return false;
    return true;
  };
  if (!rows_ok(g.user_table) || !rows_ok(g.item_table) || !rows_ok(g.user_bias) ||
      !rows_ok(g.item_bias) || !std::isfinite(g.global_bias))
    return false;
  for (const auto& l : g.mlp)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

struct AdamStep {
  double beta1, beta2, eps, lr;
  double c1, c2;  // bias corrections 1 - beta^t

  AdamStep(const AdamConfig& cfg, double lr_, std::int64_t t)
      : beta1(cfg.beta1), beta2(cfg.beta2), eps(cfg.epsilon), lr(lr_),
        c1(1.0 - std::pow(cfg.beta1, static_cast<double>(t))),
        c2(1.0 - std::pow(cfg.beta2, static_cast<double>(t))) {}

  void operator()(double& param, double& m, double& v, double grad) const {
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad * grad;
    param -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
  }
};

void update_rows(EmbeddingTable& param, EmbeddingTable& m, EmbeddingTable& v,
                 std::vector<std::int64_t>& steps, const SparseRows& grads,
                 const AdamConfig& cfg, double lr) {
  for (const auto& [row, g] : grads.rows) {
    const AdamStep step(cfg, lr, ++steps[static_cast<std::size_t>(row)]);
    for (Eigen::Index c = 0; c < g.size(); ++c) step(param(row, c), m(row, c), v(row, c), g(c));
  }
}

void update_bias_rows(Eigen::VectorXd& param, Eigen::VectorXd& m, Eigen::VectorXd& v,
                      std::vector<std::int64_t>& steps, const SparseRows& grads,
                      const AdamConfig& cfg, double lr) {
  for (const auto& [row, g] : grads.rows) {
    const AdamStep step(cfg, lr, ++steps[static_cast<std::size_t>(row)]);
    step(param(row), m(row), v(row), g(0));
  }
}

template <typename P, typename G>
void update_dense(P& param, P& m, P& v, const G& grad, const AdamStep& step) {
  for (Eigen::Index k = 0; k < param.size(); ++k)
    step(param.data()[k], m.data()[k], v.data()[k], grad.data()[k]);
}

}  // namespace

int clip_gradients(Gradients& g, double max_norm) {
  int clipped = 0;
  if (max_norm <= 0.0) return clipped;
  clip_block(g.user_table, max_norm, clipped);
  clip_block(g.item_table, max_norm, clipped);
  clip_block(g.user_bias, max_norm, clipped);
  clip_block(g.item_bias, max_norm, clipped);
  if (std::abs(g.global_bias) > max_norm) {
    g.global_bias = std::copysign(max_norm, g.global_bias);
    ++clipped;
  }
  for (auto& l : g.mlp) {
    clip_dense(l.weight, max_norm, clipped);
    clip_dense(l.bias, max_norm, clipped);
  }
  return clipped;
}

void apply_update(ModelParams& p, AdamState& adam, Gradients g, double lr) {
  if (!(lr > 0.0)) throw Error("bad_argument", "learning rate must be positive");
  if (!all_finite(g)) throw Error("divergence", "non-finite gradient");
  clip_gradients(g, adam.config.clip_norm);
  if (!all_finite(g)) throw Error("divergence", "non-finite gradient after clipping");

  const auto& cfg = adam.config;
  update_rows(p.user_table, adam.m_user, adam.v_user, adam.user_steps, g.user_table, cfg, lr);
  update_rows(p.item_table, adam.m_item, adam.v_item, adam.item_steps, g.item_table, cfg, lr);
  update_bias_rows(p.user_bias, adam.m_user_bias, adam.v_user_bias, adam.user_bias_steps,
                   g.user_bias, cfg, lr);
  update_bias_rows(p.item_bias, adam.m_item_bias, adam.v_item_bias, adam.item_bias_steps,
                   g.item_bias, cfg, lr);

  const AdamStep step(cfg, lr, ++adam.dense_steps);
  if (p.kind == ModelKind::mcf) step(p.global_bias, adam.m_global, adam.v_global, g.global_bias);
  if (g.mlp.size() != p.mlp.layers.size()) return;
  for (std::size_t l = 0; l < p.mlp.layers.size(); ++l) {
    update_dense(p.mlp.layers[l].weight, adam.m_mlp[l].weight, adam.v_mlp[l].weight,
                 g.mlp[l].weight, step);
    update_dense(p.mlp.layers[l].bias, adam.m_mlp[l].bias, adam.v_mlp[l].bias, g.mlp[l].bias,
                 step);
  }
}

MlpAdamState init_mlp_adam(const Mlp& mlp, AdamConfig config) {
  return {config, zero_like(mlp.layers), zero_like(mlp.layers), 0};
}

void apply_mlp_update(Mlp& mlp, MlpAdamState& adam, std::vector<DenseLayer> grads, double lr) {
  if (!(lr > 0.0)) throw Error("bad_argument", "learning rate must be positive");
  int clipped = 0;
  for (auto& l : grads) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) throw Error("divergence", "non-finite gradient");
    if (adam.config.clip_norm > 0.0) {
      clip_dense(l.weight, adam.config.clip_norm, clipped);
      clip_dense(l.bias, adam.config.clip_norm, clipped);
    }
  }
  const AdamStep step(adam.config, lr, ++adam.steps);
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    update_dense(mlp.layers[l].weight, adam.m[l].weight, adam.v[l].weight, grads[l].weight, step);
    update_dense(mlp.layers[l].bias, adam.m[l].bias, adam.v[l].bias, grads[l].bias, step);
  }
}

}  // namespace dtrec
