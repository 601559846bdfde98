#include "dtrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "dtrec/error.hpp"

namespace dtrec {

StepRatio parse_step_ratio(const std::string& text) {
  StepRatio r;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> r.f >> c1 >> r.w >> c2 >> r.g) || c1 != ':' || c2 != ':' || !in.eof())
    throw Error("bad_config", "step ratio must look like 1:10:10, got '" + text + "'");
  if (r.f < 1 || r.w < 1 || r.g < 1) throw Error("bad_config", "step ratio entries must be >= 1");
  return r;
}

std::string to_string(const StepRatio& r) {
  return std::to_string(r.f) + ":" + std::to_string(r.w) + ":" + std::to_string(r.g);
}

ModelKinds parse_model_kinds(const std::string& text) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, '/')) parts.push_back(part);
  if (parts.size() == 1) parts = {parts[0], parts[0], parts[0]};
  if (parts.size() != 3) throw Error("bad_config", "model kinds must look like M/N/N");
  return {parse_model_kind(parts[0]), parse_model_kind(parts[1]), parse_model_kind(parts[2])};
}

std::string to_string(const ModelKinds& k) {
  auto letter = [](ModelKind m) { return m == ModelKind::mcf ? "M" : "N"; };
  return std::string(letter(k.f)) + "/" + letter(k.w) + "/" + letter(k.g);
}

void GdaConfig::validate() const {
  if (!(lambda >= 0.0)) throw Error("bad_config", "lambda must be >= 0");
  if (!(eta > 0.0)) throw Error("bad_config", "eta must be > 0");
  if (!(gamma >= 1.0)) throw Error("bad_config", "gamma must be >= 1");
  if (patience < 1) throw Error("bad_config", "patience must be >= 1");
  if (max_epochs < 0) throw Error("bad_config", "max_epochs must be >= 0");
  if (batch_size < 1) throw Error("bad_config", "batch_size must be >= 1");
  if (negatives_per_positive < 0) throw Error("bad_config", "negatives_per_positive must be >= 0");
  if (!(max_weight > 0.0)) throw Error("bad_config", "max_weight must be > 0");
  if (step_ratio.f < 1 || step_ratio.w < 1 || step_ratio.g < 1)
    throw Error("bad_config", "step ratio entries must be >= 1");
  if (lr_f && !(*lr_f > 0.0)) throw Error("bad_config", "lr_f must be > 0");
  if (lr_w && !(*lr_w > 0.0)) throw Error("bad_config", "lr_w must be > 0");
  reco.validate();
  penalty.validate();
}

double bce_with_logit(double logit, double label) {
  // softplus(s) - y * s, computed stably.
  const double softplus = logit > 0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
  return softplus - label * logit;
}

double bce_logit_derivative(double logit, double label) { return sigmoid(logit) - label; }

MinimaxState init_minimax_state(std::int32_t n_users, std::int32_t n_items, const ModelKinds& kinds,
                                const GdaConfig& cfg) {
  auto shape = [&](ModelKind kind, OutputRange range) {
    ModelShape s;
    s.kind = kind;
    s.output = range;
    s.n_users = n_users;
    s.n_items = n_items;
    s.dim = cfg.dim;
    s.hidden = cfg.hidden;
    return s;
  };
  Rng rng_f(mix_seed(cfg.seed, 1));
  Rng rng_w(mix_seed(cfg.seed, 2));
  Rng rng_g(mix_seed(cfg.seed, 3));
  MinimaxState st;
  st.f = init_model(shape(kinds.f, OutputRange::logit), rng_f);
  st.w = init_model(shape(kinds.w, OutputRange::logit), rng_w);
  st.g = init_model(shape(kinds.g, OutputRange::unbounded), rng_g);
  st.adam_f = init_adam(st.f, cfg.adam);
  st.adam_w = init_adam(st.w, cfg.adam);
  st.adam_g = init_adam(st.g, cfg.adam);
  st.best_f = st.f;
  st.best_w = st.w;
  st.best_g = st.g;
  return st;
}

DtBatch prepare_dt_batch(Batch pairs, const SplitDataset& split, const RecoConfig& reco, Rng& rng) {
  DtBatch out;
  out.reco_candidates.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto& positives = split.train_positives[static_cast<std::size_t>(p.user)];
    const bool listed = std::binary_search(positives.begin(), positives.end(), p.item);
    // Heavy users in small catalogs get every remaining item.
    const int pool = split.n_items - static_cast<int>(positives.size()) - (listed ? 0 : 1);
    out.reco_candidates.push_back(
        sample_candidates(split.n_items, p.item, std::min(reco.n_samples, pool), positives, rng));
  }
  out.pairs = std::move(pairs);
  return out;
}

namespace {

struct ScorerSide {
  std::vector<double> logit, loss, dloss, reco, dreco;
};

struct WeightSide {
  std::vector<double> raw, weight;
};

ScorerSide eval_scorer(const ModelParams& f, const DtBatch& batch, const RecoConfig& reco) {
  const auto n = batch.pairs.size();
  ScorerSide s;
  s.logit.resize(n);
  s.loss.resize(n);
  s.dloss.resize(n);
  s.reco.resize(n);
  s.dreco.resize(n);
  std::vector<double> competitor;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = batch.pairs[k];
    const double logit = raw_score(f, p.user, p.item);
    s.logit[k] = logit;
    s.loss[k] = bce_with_logit(logit, p.label);
    s.dloss[k] = bce_logit_derivative(logit, p.label);
    competitor.clear();
    for (const auto c : batch.reco_candidates[k]) competitor.push_back(raw_score(f, p.user, c));
    const auto soft = soft_reco_from(logit, kth_largest(competitor, reco.top_k), reco.temperature);
    s.reco[k] = soft.value;
    s.dreco[k] = soft.d_score;
  }
  return s;
}

WeightSide eval_weighter(const ModelParams& w, const DtBatch& batch, double max_weight) {
  WeightSide s;
  for (const auto& p : batch.pairs) {
    const double raw = raw_score(w, p.user, p.item);
    s.raw.push_back(raw);
    s.weight.push_back(weight_from_raw(raw, max_weight));
  }
  return s;
}

std::vector<double> eval_critic(const ModelParams& g, const DtBatch& batch) {
  std::vector<double> out;
  out.reserve(batch.pairs.size());
  for (const auto& p : batch.pairs) out.push_back(score(g, p.user, p.item));
  return out;
}

void add_l2(Gradients& grads, const ModelParams& p, double l2) {
  if (l2 <= 0.0) return;
  for (auto& [r, v] : grads.user_table.rows) v += l2 * p.user_table.row(r).transpose();
  for (auto& [r, v] : grads.item_table.rows) v += l2 * p.item_table.row(r).transpose();
  for (auto& [r, v] : grads.user_bias.rows) v(0) += l2 * p.user_bias(r);
  for (auto& [r, v] : grads.item_bias.rows) v(0) += l2 * p.item_bias(r);
  for (std::size_t l = 0; l < grads.mlp.size(); ++l) grads.mlp[l].weight += l2 * p.mlp.layers[l].weight;
}

DtLoss assemble(const MinimaxState& st, const DtBatch& batch, const GdaConfig& cfg,
                const ScorerSide& fs, const WeightSide& ws, const std::vector<double>& gs, Rng& rng,
                DtLossNeeds needs) {
  const auto n = batch.pairs.size();
  if (n == 0) throw Error("bad_argument", "empty batch");
  double sw = 0.0, weighted_loss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sw += ws.weight[k];
    weighted_loss += ws.weight[k] * fs.loss[k];
  }
  DtLoss out;
  out.risk = weighted_loss / sw;
  const auto term = ipm_estimate(gs, ws.weight, fs.reco, cfg.normalization);
  out.transport = term.value;
  out.loss = out.risk + cfg.lambda * out.transport;
  if (!std::isfinite(out.loss)) throw Error("divergence", "non-finite loss");

  const bool self_norm = cfg.normalization == IpmNormalization::self_normalized;
  double sr = 0.0;
  for (const double r : fs.reco) sr += r;
  const double a = term.source_side;
  const double b = term.target_side;
  auto dipm_dw = [&](std::size_t k) { return self_norm ? (gs[k] - a) / sw : gs[k]; };
  auto dipm_dr = [&](std::size_t k) { return self_norm ? -(gs[k] - b) / sr : -gs[k]; };
  auto dipm_dg = [&](std::size_t k) {
    return self_norm ? ws.weight[k] / sw - fs.reco[k] / sr : ws.weight[k] - fs.reco[k];
  };

  if (needs.f) {
    out.grad_f = zero_gradients(st.f);
    for (std::size_t k = 0; k < n; ++k) {
      const double up = ws.weight[k] / sw * fs.dloss[k] + cfg.lambda * dipm_dr(k) * fs.dreco[k];
      if (up != 0.0) accumulate_raw_gradient(st.f, batch.pairs[k].user, batch.pairs[k].item, up, out.grad_f);
    }
    add_l2(out.grad_f, st.f, cfg.l2);
  }
  if (needs.w) {
    out.grad_w = zero_gradients(st.w);
    for (std::size_t k = 0; k < n; ++k) {
      const double dw = (fs.loss[k] - out.risk) / sw + cfg.lambda * dipm_dw(k);
      accumulate_raw_gradient(st.w, batch.pairs[k].user, batch.pairs[k].item,
                              dw * weight_derivative(ws.raw[k], cfg.max_weight), out.grad_w);
    }
  }
  if (needs.g) {
    out.grad_g = zero_gradients(st.g);
    for (std::size_t k = 0; k < n; ++k) {
      accumulate_raw_gradient(st.g, batch.pairs[k].user, batch.pairs[k].item,
                              -cfg.lambda * dipm_dg(k), out.grad_g);
    }
    if (cfg.penalty.mode == LipschitzMode::gradient_penalty) {
      auto pen = critic_gradient_penalty(st.g, batch.pairs, ws.weight, fs.reco,
                                         cfg.penalty.n_interpolates, rng);
      out.penalty = pen.value;
      pen.gradients *= cfg.lambda * cfg.penalty.coefficient;
      out.grad_g += pen.gradients;
    }
    // The penalty lives in the critic's embedding space, where per-id biases
    // are invisible; left free they would make the critic unbounded.
    out.grad_g.user_bias.rows.clear();
    out.grad_g.item_bias.rows.clear();
  }
  return out;
}

}  // namespace

DtLoss dt_loss(const MinimaxState& state, const DtBatch& batch, const GdaConfig& cfg, Rng& rng,
               DtLossNeeds needs) {
  if (batch.pairs.size() != batch.reco_candidates.size())
    throw Error("bad_argument", "batch is missing reco candidates");
  const auto fs = eval_scorer(state.f, batch, cfg.reco);
  const auto ws = eval_weighter(state.w, batch, cfg.max_weight);
  const auto gs = eval_critic(state.g, batch);
  return assemble(state, batch, cfg, fs, ws, gs, rng, needs);
}

namespace {

struct StepStats {
  double loss = 0.0;
  double transport = 0.0;
};

StepStats gda_step_impl(MinimaxState& st, const DtBatch& batch, const GdaConfig& cfg, Rng& rng) {
  if (batch.pairs.size() != batch.reco_candidates.size())
    throw Error("bad_argument", "batch is missing reco candidates");
  const double lr_g = cfg.eta;
  const double lr_w = cfg.eta > 0.0 ? cfg.descent_lr_w() : 0.0;
  const double lr_f = cfg.eta > 0.0 ? cfg.descent_lr_f() : 0.0;

  auto fs = eval_scorer(st.f, batch, cfg.reco);
  auto ws = eval_weighter(st.w, batch, cfg.max_weight);
  auto gs = eval_critic(st.g, batch);
  StepStats stats;
  {
    const auto first = assemble(st, batch, cfg, fs, ws, gs, rng, {false, false, false});
    stats.loss = first.loss;
    stats.transport = first.transport;
  }

  // The critic is a no-op player when the transport term is switched off.
  if (lr_g > 0.0 && cfg.lambda > 0.0) {
    for (int k = 0; k < cfg.step_ratio.g; ++k) {
      auto res = assemble(st, batch, cfg, fs, ws, gs, rng, {false, false, true});
      apply_update(st.g, st.adam_g, std::move(res.grad_g), lr_g);
      if (cfg.penalty.mode == LipschitzMode::weight_clip)
        clip_critic_weights(st.g, cfg.penalty.coefficient);
      gs = eval_critic(st.g, batch);
      ++st.updates.g;
    }
  }
  if (lr_w > 0.0) {
    for (int k = 0; k < cfg.step_ratio.w; ++k) {
      auto res = assemble(st, batch, cfg, fs, ws, gs, rng, {false, true, false});
      apply_update(st.w, st.adam_w, std::move(res.grad_w), lr_w);
      ws = eval_weighter(st.w, batch, cfg.max_weight);
      ++st.updates.w;
    }
  }
  if (lr_f > 0.0) {
    for (int k = 0; k < cfg.step_ratio.f; ++k) {
      auto res = assemble(st, batch, cfg, fs, ws, gs, rng, {true, false, false});
      apply_update(st.f, st.adam_f, std::move(res.grad_f), lr_f);
      fs = eval_scorer(st.f, batch, cfg.reco);
      ++st.updates.f;
    }
  }
  ++st.step;
  return stats;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

bool is_divergence(const Error& e) {
  return e.code() == "divergence" || e.code() == "non_finite" || e.code() == "degenerate_batch" ||
         e.code() == "non_finite_gradient";
}

// Shared epoch loop. `step` trains on one batch and returns (loss,
// transport); `scorer` exposes the current f; `snapshot` stores the best.
template <typename Step, typename Scorer, typename Snapshot>
void run_epochs(const SplitDataset& split, int max_epochs, int patience, int batch_size,
                int negatives, int k, std::uint64_t seed, bool log_time, Rng& rng, Step&& step,
                Scorer&& scorer, Snapshot&& snapshot, TrainedModel& out) {
  EvalConfig val_cfg;
  val_cfg.k = k;
  val_cfg.mode = EvalMode::full_rank;
  val_cfg.seed = seed;
  int since_best = 0;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog entry;
    entry.epoch = epoch;
    try {
      const auto batches = sample_epoch(split, batch_size, negatives, rng);
      for (const auto& batch : batches) {
        const auto [loss, transport] = step(batch);
        entry.loss += loss;
        entry.transport_term += transport;
      }
      entry.loss /= static_cast<double>(batches.size());
      entry.transport_term /= static_cast<double>(batches.size());
    } catch (const Error& e) {
      if (!is_divergence(e)) throw;
      out.diverged = true;
      out.divergence_message = "epoch " + std::to_string(epoch) + ": " + e.what();
      return;
    }
    const auto val = evaluate(scorer(), split, nullptr, val_cfg, EvalTarget::validation);
    entry.val_rel = val.rel_at_k;
    entry.val_hit = val.hit_at_k;
    entry.val_ndcg = val.ndcg_at_k;
    if (log_time) entry.wall_ms = elapsed_ms(start);
    out.log.push_back(entry);
    if (val.rel_at_k > out.best_val_rel) {
      out.best_val_rel = val.rel_at_k;
      out.best_epoch = epoch;
      since_best = 0;
      snapshot(epoch, val.rel_at_k);
    } else if (++since_best >= patience) {
      break;
    }
  }
}

}  // namespace

void gda_step(MinimaxState& state, const DtBatch& batch, const GdaConfig& cfg, Rng& rng) {
  gda_step_impl(state, batch, cfg, rng);
}

nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"transport_term", e.transport_term},
                      {"val_rel@K", e.val_rel},
                      {"val_hit@K", e.val_hit},
                      {"val_ndcg@K", e.val_ndcg}};
  if (e.wall_ms) j["wall_ms"] = *e.wall_ms;
  return j;
}

TrainedModel train(const SplitDataset& split, const GdaConfig& cfg, const ModelKinds& kinds) {
  cfg.validate();
  auto state = init_minimax_state(split.n_users, split.n_items, kinds, cfg);
  Rng rng(mix_seed(cfg.seed, 10));
  TrainedModel out;
  run_epochs(
      split, cfg.max_epochs, cfg.patience, cfg.batch_size, cfg.negatives_per_positive,
      cfg.reco.top_k, cfg.seed, cfg.log_wall_time, rng,
      [&](const Batch& batch) {
        const auto dt = prepare_dt_batch(batch, split, cfg.reco, rng);
        const auto stats = gda_step_impl(state, dt, cfg, rng);
        return std::pair{stats.loss, stats.transport};
      },
      [&] { return scorer_for(state.f); },
      [&](int epoch, double metric) {
        state.best_f = state.f;
        state.best_w = state.w;
        state.best_g = state.g;
        state.best_metric = metric;
        state.best_epoch = epoch;
      },
      out);
  out.best_f = state.best_f;
  out.best_w = state.best_w;
  out.best_g = state.best_g;
  out.final_state = std::move(state);
  return out;
}

TrainedModel train_erm(const SplitDataset& split, const ErmConfig& cfg, ModelKind kind,
                       std::span<const double> item_weights) {
  if (!(cfg.lr > 0.0)) throw Error("bad_config", "lr must be > 0");
  if (cfg.patience < 1) throw Error("bad_config", "patience must be >= 1");
  if (!item_weights.empty() && item_weights.size() != static_cast<std::size_t>(split.n_items))
    throw Error("bad_argument", "item weights must cover the catalog");
  ModelShape shape;
  shape.kind = kind;
  shape.output = OutputRange::logit;
  shape.n_users = split.n_users;
  shape.n_items = split.n_items;
  shape.dim = cfg.dim;
  shape.hidden = cfg.hidden;
  Rng init_rng(mix_seed(cfg.seed, 1));
  auto params = init_model(shape, init_rng);
  auto adam = init_adam(params, cfg.adam);
  auto best = params;
  Rng rng(mix_seed(cfg.seed, 10));
  TrainedModel out;
  run_epochs(
      split, cfg.max_epochs, cfg.patience, cfg.batch_size, cfg.negatives_per_positive, cfg.top_k,
      cfg.seed, cfg.log_wall_time, rng,
      [&](const Batch& batch) {
        auto grads = zero_gradients(params);
        double loss = 0.0;
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        for (const auto& p : batch) {
          const double weight = item_weights.empty() ? 1.0 : item_weights[static_cast<std::size_t>(p.item)];
          const double logit = raw_score(params, p.user, p.item);
          loss += weight * bce_with_logit(logit, p.label) * inv_n;
          accumulate_raw_gradient(params, p.user, p.item,
                                  weight * bce_logit_derivative(logit, p.label) * inv_n, grads);
        }
        if (!std::isfinite(loss)) throw Error("divergence", "non-finite loss");
        add_l2(grads, params, cfg.l2);
        apply_update(params, adam, std::move(grads), cfg.lr);
        return std::pair{loss, 0.0};
      },
      [&] { return scorer_for(params); },
      [&](int, double) { best = params; },
      out);
  out.best_f = std::move(best);
  return out;
}

ScalarGameTrace scalar_game_gda(double x0, double y0, double eta, double gamma, int steps,
                                double curvature, double tolerance) {
  if (!(gamma >= 1.0)) throw Error("bad_argument", "gamma must be >= 1");
  ScalarGameTrace trace;
  double x = x0, y = y0;
  for (int t = 0; t < steps; ++t) {
    // dL/dx = y, dL/dy = x - curvature * y, both at the current iterate.
    const double gx = y;
    const double gy = x - curvature * y;
    x -= (eta / gamma) * gx;
    y += eta * gy;
    const double d = std::hypot(x, y);
    trace.distance.push_back(d);
    if (trace.first_within < 0 && d < tolerance) trace.first_within = t + 1;
    if (!std::isfinite(d)) break;
  }
  trace.x = x;
  trace.y = y;
  return trace;
}

}  // namespace dtrec
