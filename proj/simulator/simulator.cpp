#include "dtrec/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dtrec/error.hpp"
#include "dtrec/models.hpp"

namespace dtrec {

namespace {

ModelParams fresh_mcf(std::int32_t n_users, std::int32_t n_items, const SimFitConfig& cfg) {
  if (cfg.dim < 1 || cfg.epochs < 0 || !(cfg.lr > 0.0) || cfg.batch_size < 1)
    throw Error("bad_config", "invalid simulator fit config");
  ModelShape shape;
  shape.kind = ModelKind::mcf;
  shape.output = OutputRange::logit;
  shape.n_users = n_users;
  shape.n_items = n_items;
  shape.dim = cfg.dim;
  Rng rng(mix_seed(cfg.seed, 41));
  return init_model(shape, rng);
}

void add_l2_rows(Gradients& g, const ModelParams& p, double l2) {
  if (l2 <= 0.0) return;
  for (auto& [r, v] : g.user_table.rows) v += l2 * p.user_table.row(r).transpose();
  for (auto& [r, v] : g.item_table.rows) v += l2 * p.item_table.row(r).transpose();
}

// Minibatch Adam over `n` examples; `grad_of(k, params, grads)` accumulates
// example k's gradient (already divided by the batch size) and returns its loss.
template <typename GradOf>
void fit_loop(ModelParams& params, std::size_t n, const SimFitConfig& cfg, GradOf&& grad_of) {
  auto adam = init_adam(params);
  Rng rng(mix_seed(cfg.seed, 42));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(end - start);
      auto grads = zero_gradients(params);
      double loss = 0.0;
      for (std::size_t k = start; k < end; ++k) loss += grad_of(order[k], params, grads, inv);
      if (!std::isfinite(loss)) throw Error("divergence", "simulator fit diverged");
      add_l2_rows(grads, params, cfg.l2);
      apply_update(params, adam, std::move(grads), cfg.lr);
    }
  }
}

ProbTable all_raw_scores(const ModelParams& params) {
  ProbTable out(params.n_users(), params.n_items());
  for (std::int32_t u = 0; u < params.n_users(); ++u) out.row(u) = raw_item_scores(params, u).transpose();
  return out;
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).mean();
    const double var = (m.col(c).array() - mean).square().mean();
    const double sd = std::sqrt(var);
    out.col(c) = (m.col(c).array() - mean) / (sd > 1e-12 ? sd : 1.0);
  }
  return out;
}

ClickResult emit_log(SyntheticGroundTruth truth, const std::vector<std::vector<ItemId>>& clicked,
                     Rng& rng) {
  std::vector<Interaction> records;
  std::size_t total = 0;
  for (std::int32_t u = 0; u < truth.n_users(); ++u) {
    auto items = clicked[static_cast<std::size_t>(u)];
    // Synthetic histories carry no temporal signal.
    std::shuffle(items.begin(), items.end(), rng);
    for (std::size_t k = 0; k < items.size(); ++k) {
      Interaction r;
      r.user = u;
      r.item = items[k];
      r.label = 1;
      r.order = static_cast<std::int64_t>(k);
      r.rating = std::numeric_limits<double>::quiet_NaN();
      records.push_back(r);
    }
    total += items.size();
  }
  ClickResult out;
  out.realized_ratio = static_cast<double>(total) /
                       (static_cast<double>(truth.n_users()) * static_cast<double>(truth.n_items()));
  out.log = make_log(std::move(records), truth.n_users(), truth.n_items());
  out.truth = std::move(truth);
  return out;
}

void check_truth(const SyntheticGroundTruth& truth, double ratio) {
  if (truth.relevance.size() == 0 || truth.relevance.rows() != truth.exposure.rows() ||
      truth.relevance.cols() != truth.exposure.cols())
    throw Error("bad_argument", "relevance and exposure tables differ in shape");
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("bad_argument", "click ratio must lie in (0, 1)");
}

}  // namespace

ProbTable relevance_from_predictions(const ProbTable& r_hat, double u, double p) {
  if (!std::isfinite(u) || !(p > 0.0) || !std::isfinite(p))
    throw Error("bad_argument", "relevance transform needs finite u and p > 0");
  return r_hat.unaryExpr([&](double r) { return std::pow(sigmoid(r - u), p); });
}

ProbTable fit_relevance(const InteractionLog& ratings, const SimFitConfig& cfg, double u, double p) {
  if (!ratings.has_ratings) throw Error("missing_ratings", "relevance fit needs explicit ratings");
  if (ratings.empty()) throw Error("empty_log", "no interactions");
  auto params = fresh_mcf(ratings.n_users, ratings.n_items, cfg);
  double mean = 0.0;
  for (const auto& r : ratings.records) mean += r.rating;
  params.global_bias = mean / static_cast<double>(ratings.size());
  fit_loop(params, ratings.size(), cfg,
           [&](std::size_t k, const ModelParams& m, Gradients& g, double inv) {
             const auto& r = ratings.records[k];
             const double err = raw_score(m, r.user, r.item) - r.rating;
             accumulate_raw_gradient(m, r.user, r.item, 2.0 * err * inv, g);
             return err * err;
           });
  return relevance_from_predictions(all_raw_scores(params), u, p);
}

Mlp make_exposure_mlp(int input_size, std::uint64_t seed) {
  Rng rng(seed);
  return make_mlp(input_size, {32, 16, 1}, false, MlpInit::scaled_normal, rng);
}

ProbTable exposure_from_embeddings(const Eigen::MatrixXd& users, const Eigen::MatrixXd& items,
                                   const Mlp& mlp) {
  if (users.cols() != items.cols() || mlp.input_size() != users.cols() + items.cols())
    throw Error("bad_argument", "exposure network input does not match the embeddings");
  const Eigen::MatrixXd us = standardize_columns(users);
  const Eigen::MatrixXd is = standardize_columns(items);
  const auto d = users.cols();
  const auto& first = mlp.layers.front().weight;
  // The first layer splits over the two halves of the input.
  const Eigen::MatrixXd user_part = us * first.leftCols(d).transpose();
  const Eigen::MatrixXd item_part = is * first.rightCols(d).transpose();
  ProbTable out(users.rows(), items.rows());
  for (Eigen::Index u = 0; u < users.rows(); ++u) {
    for (Eigen::Index i = 0; i < items.rows(); ++i) {
      Eigen::VectorXd h = (user_part.row(u) + item_part.row(i)).transpose();
      if (mlp.layers.front().bias.size() > 0) h += mlp.layers.front().bias;
      for (std::size_t l = 1; l < mlp.layers.size(); ++l) {
        h = h.cwiseMax(0.0);
        h = mlp.layers[l].weight * h;
        if (mlp.layers[l].bias.size() > 0) h += mlp.layers[l].bias;
      }
      out(u, i) = sigmoid(h(0));
    }
  }
  return out;
}

ProbTable fit_exposure(const InteractionLog& indicator, const SimFitConfig& cfg,
                       std::uint64_t mlp_seed) {
  if (indicator.empty()) throw Error("empty_log", "no interactions");
  auto params = fresh_mcf(indicator.n_users, indicator.n_items, cfg);
  std::vector<char> observed(static_cast<std::size_t>(indicator.n_users) *
                                 static_cast<std::size_t>(indicator.n_items),
                             0);
  const auto n_items = static_cast<std::size_t>(indicator.n_items);
  for (const auto& r : indicator.records)
    observed[static_cast<std::size_t>(r.user) * n_items + static_cast<std::size_t>(r.item)] = 1;
  fit_loop(params, observed.size(), cfg,
           [&](std::size_t k, const ModelParams& m, Gradients& g, double inv) {
             const auto user = static_cast<UserId>(k / n_items);
             const auto item = static_cast<ItemId>(k % n_items);
             const double y = observed[k];
             const double s = raw_score(m, user, item);
             accumulate_raw_gradient(m, user, item, (sigmoid(s) - y) * inv, g);
             return std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
           });
  const auto mlp = make_exposure_mlp(2 * cfg.dim, mlp_seed);
  return exposure_from_embeddings(params.user_table, params.item_table, mlp);
}

double source_click_ratio(const InteractionLog& ratings) {
  if (ratings.n_users < 1 || ratings.n_items < 1) throw Error("empty_log", "no interactions");
  std::size_t clicks = 0;
  for (const auto& r : ratings.records) clicks += r.label == 1 ? 1 : 0;
  return static_cast<double>(clicks) /
         (static_cast<double>(ratings.n_users) * static_cast<double>(ratings.n_items));
}

ClickResult generate_clicks(SyntheticGroundTruth truth, double source_ratio, Rng& rng) {
  check_truth(truth, source_ratio);
  const ProbTable click = truth.click_prob();
  std::vector<double> values(click.data(), click.data() + click.size());
  const auto n = values.size();
  const auto target = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(source_ratio * static_cast<double>(n))));
  // Exact quantile: the target-th largest click probability.
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(target - 1), values.end(),
                   std::greater<double>());
  const double cutoff = values[target - 1];
  std::vector<std::vector<ItemId>> clicked(static_cast<std::size_t>(truth.n_users()));
  std::size_t count = 0;
  for (std::int32_t u = 0; u < truth.n_users(); ++u) {
    for (std::int32_t i = 0; i < truth.n_items(); ++i) {
      if (click(u, i) >= cutoff) {
        clicked[static_cast<std::size_t>(u)].push_back(i);
        ++count;
      }
    }
  }
  const double realized = static_cast<double>(count) / static_cast<double>(n);
  if (std::abs(realized - source_ratio) > 0.01 * source_ratio) {
    throw Error("ratio_unreachable", "click probabilities are too tied to reach ratio " +
                                         std::to_string(source_ratio) + " (got " +
                                         std::to_string(realized) + ")");
  }
  truth.cutoff = cutoff;
  return emit_log(std::move(truth), clicked, rng);
}

ClickResult generate_clicks_bernoulli(SyntheticGroundTruth truth, double source_ratio, Rng& rng) {
  check_truth(truth, source_ratio);
  const ProbTable click = truth.click_prob();
  const double total = click.sum();
  if (!(total > 0.0)) throw Error("ratio_unreachable", "all click probabilities are zero");
  const double scale = source_ratio * static_cast<double>(click.size()) / total;
  std::vector<std::vector<ItemId>> clicked(static_cast<std::size_t>(truth.n_users()));
  for (std::int32_t u = 0; u < truth.n_users(); ++u)
    for (std::int32_t i = 0; i < truth.n_items(); ++i)
      if (uniform01(rng) < std::min(1.0, scale * click(u, i))) clicked[static_cast<std::size_t>(u)].push_back(i);
  truth.cutoff = std::numeric_limits<double>::quiet_NaN();
  return emit_log(std::move(truth), clicked, rng);
}

InteractionLog make_toy_ratings(std::int32_t n_users, std::int32_t n_items, std::uint64_t seed,
                                double density, int min_per_user) {
  if (n_users < 1 || n_items < 1 || !(density > 0.0 && density < 1.0) || min_per_user > n_items)
    throw Error("bad_argument", "invalid toy rating dimensions");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr int kFactors = 6;
  Eigen::MatrixXd uf(n_users, kFactors), vf(n_items, kFactors);
  for (Eigen::Index r = 0; r < uf.size(); ++r) uf.data()[r] = normal(rng) / std::sqrt(std::sqrt(double{kFactors}));
  for (Eigen::Index r = 0; r < vf.size(); ++r) vf.data()[r] = normal(rng) / std::sqrt(std::sqrt(double{kFactors}));
  Eigen::VectorXd user_bias(n_users), quality(n_items), log_pop(n_items);
  for (auto& v : user_bias) v = 0.3 * normal(rng);
  for (auto& v : quality) v = 0.5 * normal(rng);
  for (auto& v : log_pop) v = normal(rng);

  ProbTable rating(n_users, n_items);
  for (std::int32_t u = 0; u < n_users; ++u) {
    for (std::int32_t i = 0; i < n_items; ++i) {
      const double s = 3.2 + 0.9 * uf.row(u).dot(vf.row(i)) + quality(i) + user_bias(u) + 0.3 * normal(rng);
      rating(u, i) = std::clamp(std::round(s), 1.0, 5.0);
    }
  }
  // Popular items and liked items are more likely to be rated.
  auto observe_logit = [&](std::int32_t u, std::int32_t i) {
    return log_pop(i) + 0.8 * (rating(u, i) - 3.0);
  };
  double lo = -20.0, hi = 20.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (std::int32_t u = 0; u < n_users; ++u)
      for (std::int32_t i = 0; i < n_items; ++i) mean += sigmoid(mid + observe_logit(u, i));
    mean /= static_cast<double>(n_users) * n_items;
    (mean < density ? lo : hi) = mid;
  }
  const double offset = 0.5 * (lo + hi);

  std::vector<Interaction> records;
  for (std::int32_t u = 0; u < n_users; ++u) {
    std::vector<std::pair<double, ItemId>> unobserved;
    std::vector<ItemId> chosen;
    for (std::int32_t i = 0; i < n_items; ++i) {
      const double pr = sigmoid(offset + observe_logit(u, i));
      if (uniform01(rng) < pr) {
        chosen.push_back(i);
      } else {
        unobserved.emplace_back(-pr, i);
      }
    }
    std::sort(unobserved.begin(), unobserved.end());
    for (std::size_t k = 0; static_cast<int>(chosen.size()) < min_per_user; ++k)
      chosen.push_back(unobserved[k].second);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      Interaction r;
      r.user = u;
      r.item = chosen[k];
      r.rating = rating(u, chosen[k]);
      r.label = r.rating > kRatingCutoff ? 1 : 0;
      r.order = static_cast<std::int64_t>(k);
      records.push_back(r);
    }
  }
  return make_log(std::move(records), n_users, n_items, true);
}

ClickResult simulate(const InteractionLog& ratings, const SimulationConfig& cfg) {
  SyntheticGroundTruth truth;
  auto rel_cfg = cfg.relevance_fit;
  rel_cfg.seed = mix_seed(cfg.seed, 1);
  auto exp_cfg = cfg.exposure_fit;
  exp_cfg.seed = mix_seed(cfg.seed, 2);
  truth.relevance = fit_relevance(ratings, rel_cfg, cfg.u, cfg.p);
  truth.exposure = fit_exposure(ratings, exp_cfg, mix_seed(cfg.seed, 3));
  truth.seed = cfg.seed;
  truth.u = cfg.u;
  truth.p = cfg.p;
  const double ratio = cfg.click_ratio > 0.0 ? cfg.click_ratio : source_click_ratio(ratings);
  Rng rng(mix_seed(cfg.seed, 4));
  return cfg.bernoulli ? generate_clicks_bernoulli(std::move(truth), ratio, rng)
                       : generate_clicks(std::move(truth), ratio, rng);
}

std::filesystem::path ground_truth_sidecar(const std::filesystem::path& tsv_path) {
  auto side = tsv_path;
  side.replace_extension(".json");
  return side;
}

void save_ground_truth(const SyntheticGroundTruth& truth, const std::filesystem::path& tsv_path) {
  std::ofstream out(tsv_path);
  if (!out) throw Error("io_error", "cannot write '" + tsv_path.string() + "'");
  out << std::setprecision(17);
  for (std::int32_t u = 0; u < truth.n_users(); ++u)
    for (std::int32_t i = 0; i < truth.n_items(); ++i)
      out << u << '\t' << i << '\t' << truth.relevance(u, i) << '\t' << truth.exposure(u, i) << '\n';
  nlohmann::json side = {{"cutoff", std::isnan(truth.cutoff) ? nlohmann::json(nullptr) : nlohmann::json(truth.cutoff)},
                         {"seed", truth.seed},
                         {"u", truth.u},
                         {"p", truth.p},
                         {"n_users", truth.n_users()},
                         {"n_items", truth.n_items()}};
  std::ofstream js(ground_truth_sidecar(tsv_path));
  if (!js) throw Error("io_error", "cannot write ground-truth sidecar");
  js << side.dump(2) << '\n';
}

SyntheticGroundTruth load_ground_truth(const std::filesystem::path& tsv_path) {
  std::ifstream js(ground_truth_sidecar(tsv_path));
  if (!js) throw Error("missing_file", "missing ground-truth sidecar for '" + tsv_path.string() + "'");
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse_error", std::string("ground-truth sidecar: ") + e.what());
  }
  SyntheticGroundTruth truth;
  const auto n_users = side.at("n_users").get<std::int32_t>();
  const auto n_items = side.at("n_items").get<std::int32_t>();
  truth.cutoff = side.at("cutoff").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                             : side.at("cutoff").get<double>();
  truth.seed = side.at("seed").get<std::uint64_t>();
  truth.u = side.at("u").get<double>();
  truth.p = side.at("p").get<double>();
  truth.relevance = ProbTable::Constant(n_users, n_items, std::numeric_limits<double>::quiet_NaN());
  truth.exposure = truth.relevance;
  std::ifstream in(tsv_path);
  if (!in) throw Error("missing_file", "cannot open '" + tsv_path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::int32_t u = -1, i = -1;
    double rel = 0.0, exp = 0.0;
    if (!(row >> u >> i >> rel >> exp) || u < 0 || u >= n_users || i < 0 || i >= n_items)
      throw Error("parse_error", tsv_path.string() + ": line " + std::to_string(line_no) + ": bad ground-truth row");
    truth.relevance(u, i) = rel;
    truth.exposure(u, i) = exp;
  }
  if (truth.relevance.hasNaN()) throw Error("missing_relevance", "ground truth does not cover every pair");
  return truth;
}

RelevanceTable align_to_log(const ProbTable& table, const InteractionLog& log) {
  auto original = [](const std::string& id, Eigen::Index bound, const char* what) {
    std::size_t used = 0;
    long long v = -1;
    try {
      v = std::stoll(id, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != id.size() || v < 0 || v >= bound)
      throw Error("missing_relevance", std::string(what) + " '" + id + "' is not covered by the ground truth");
    return static_cast<Eigen::Index>(v);
  };
  RelevanceTable out;
  out.values.resize(log.n_users, log.n_items);
  for (std::int32_t u = 0; u < log.n_users; ++u) {
    const auto row = original(log.users.to_original(u), table.rows(), "user");
    for (std::int32_t i = 0; i < log.n_items; ++i)
      out.values(u, i) = table(row, original(log.items.to_original(i), table.cols(), "item"));
  }
  return out;
}

}  // namespace dtrec
