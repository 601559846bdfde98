#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dtrec/data.hpp"
#include "dtrec/mlp.hpp"
#include "dtrec/rng.hpp"

namespace dtrec {

// Scorer families. MCF is the biased dot-product model; NCF runs an MLP over
// the concatenated user and item embeddings.
enum class ModelKind { mcf, ncf };

// Final transform applied by score(): identity, sigmoid, identity.
enum class OutputRange { logit, unit_interval, unbounded };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

using EmbeddingTable = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelShape {
  ModelKind kind = ModelKind::mcf;
  OutputRange output = OutputRange::logit;
  std::int32_t n_users = 0;
  std::int32_t n_items = 0;
  int dim = 32;
  std::vector<int> hidden = {64, 32, 16};
};

struct ModelParams {
  ModelKind kind = ModelKind::mcf;
  OutputRange output = OutputRange::logit;
  EmbeddingTable user_table;
  EmbeddingTable item_table;
  // MCF only; empty for NCF.
  Eigen::VectorXd user_bias;
  Eigen::VectorXd item_bias;
  double global_bias = 0.0;
  // NCF only; input is [user embedding, item embedding].
  Mlp mlp;

  std::int32_t n_users() const { return static_cast<std::int32_t>(user_table.rows()); }
  std::int32_t n_items() const { return static_cast<std::int32_t>(item_table.rows()); }
  int dim() const { return static_cast<int>(user_table.cols()); }
};

// Embeddings ~ N(0, 0.01^2), MLP weights Glorot-uniform, biases zero.
ModelParams init_model(const ModelShape& shape, Rng& rng);
ModelParams zero_model(const ModelShape& shape);

double sigmoid(double x);
double apply_output(OutputRange range, double raw);
double output_derivative(OutputRange range, double raw);

// Pre-transform model output.
double raw_score(const ModelParams& params, UserId user, ItemId item);
double score(const ModelParams& params, UserId user, ItemId item);
// Raw scores of every item for one user.
Eigen::VectorXd raw_item_scores(const ModelParams& params, UserId user);

// Row-sparse gradient block: only touched rows are present.
struct SparseRows {
  int width = 0;
  std::map<std::int32_t, Eigen::VectorXd> rows;

  void add(std::int32_t row, const Eigen::Ref<const Eigen::VectorXd>& value);
  void add(std::int32_t row, double value);
};

struct Gradients {
  SparseRows user_table;
  SparseRows item_table;
  SparseRows user_bias;
  SparseRows item_bias;
  double global_bias = 0.0;
  std::vector<DenseLayer> mlp;

  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double factor);
};

Gradients zero_gradients(const ModelParams& params);

// Adds upstream * d(raw score)/d(params) for one pair.
void accumulate_raw_gradient(const ModelParams& params, UserId user, ItemId item,
                             double upstream, Gradients& grads);

struct PairUpstream {
  UserId user = 0;
  ItemId item = 0;
  // d(loss)/d(score) where score includes the output transform.
  double upstream = 0.0;
};

Gradients backward(const ModelParams& params, std::span<const PairUpstream> batch);

// Weight model output: max_weight * sigmoid(raw), strictly inside (0, M).
double weight_of(const ModelParams& params, UserId user, ItemId item, double max_weight);
double weight_from_raw(double raw, double max_weight);
// d(weight)/d(raw).
double weight_derivative(double raw, double max_weight);

void check_ids(const ModelParams& params, UserId user, ItemId item);

// Flat views in a fixed block order, used by checkpoints and finite-difference
// checks.
std::vector<double> flatten(const ModelParams& params);
void unflatten(ModelParams& params, std::span<const double> values);
std::vector<double> flatten_gradients(const Gradients& grads, const ModelParams& like);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Max L2 norm per parameter block; <= 0 disables clipping.
  double clip_norm = 5.0;
};

// Lazy (sparse) Adam: embedding and per-entity bias rows keep their own step
// counters and moments, which only move when the row has a gradient.
struct AdamState {
  AdamConfig config;
  EmbeddingTable m_user, v_user, m_item, v_item;
  Eigen::VectorXd m_user_bias, v_user_bias, m_item_bias, v_item_bias;
  std::vector<std::int64_t> user_steps, item_steps, user_bias_steps, item_bias_steps;
  double m_global = 0.0, v_global = 0.0;
  std::vector<DenseLayer> m_mlp, v_mlp;
  std::int64_t dense_steps = 0;
};

AdamState init_adam(const ModelParams& params, AdamConfig config = {});

// Clips each block of `grads` in place to config.clip_norm, then applies one
// Adam step at learning rate `lr`.
void apply_update(ModelParams& params, AdamState& adam, Gradients grads, double lr);

// Plain (dense) Adam for a standalone network.
struct MlpAdamState {
  AdamConfig config;
  std::vector<DenseLayer> m, v;
  std::int64_t steps = 0;
};

MlpAdamState init_mlp_adam(const Mlp& mlp, AdamConfig config = {});
void apply_mlp_update(Mlp& mlp, MlpAdamState& adam, std::vector<DenseLayer> grads, double lr);

// Per-block L2 clipping; returns the number of blocks that were scaled.
int clip_gradients(Gradients& grads, double max_norm);

}  // namespace dtrec
