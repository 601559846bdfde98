#include "dtrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dtrec/error.hpp"
#include "dtrec/reco.hpp"

namespace dtrec {

ItemScorer scorer_for(const ModelParams& model) {
  return [&model](UserId user) { return raw_item_scores(model, user); };
}

namespace {

bool excluded(std::span<const ItemId> exclusions, ItemId item) {
  return std::binary_search(exclusions.begin(), exclusions.end(), item);
}

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

std::vector<ItemId> rank_full(std::span<const double> scores, std::span<const ItemId> exclusions) {
  std::vector<ItemId> order;
  order.reserve(scores.size());
  for (ItemId i = 0; i < static_cast<ItemId>(scores.size()); ++i)
    if (!excluded(exclusions, i)) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    return ranks_above(scores[static_cast<std::size_t>(a)], a, scores[static_cast<std::size_t>(b)], b);
  });
  return order;
}

HitNdcg hit_ndcg_at_rank(int rank, int k) {
  if (rank < 1) throw Error("bad_argument", "rank is 1-based");
  HitNdcg out;
  out.rank = rank;
  if (rank <= k) {
    out.hit = 1.0;
    out.ndcg = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  }
  return out;
}

HitNdcg hit_ndcg_sampled(std::span<const double> scores, ItemId target, int k, int n_negatives,
                         Rng& rng, std::span<const ItemId> exclusions) {
  const auto negatives = sample_candidates(static_cast<std::int32_t>(scores.size()), target,
                                           n_negatives, exclusions, rng);
  return hit_ndcg_at_rank(1 + count_above(scores, target, negatives), k);
}

double rel_at_k(std::span<const double> scores, int k, std::span<const double> relevance,
                std::span<const ItemId> exclusions) {
  if (relevance.size() != scores.size())
    throw Error("missing_relevance", "relevance lookup does not cover the catalog");
  const auto ranking = rank_full(scores, exclusions);
  double total = 0.0;
  const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), ranking.size());
  for (std::size_t r = 0; r < top; ++r) total += relevance[static_cast<std::size_t>(ranking[r])];
  return total;
}

std::string to_string(RelevanceSource source) {
  return source == RelevanceSource::true_relevance ? "true_relevance" : "observed_label";
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"rel_at_k", r.rel_at_k},     {"hit_at_k", r.hit_at_k},
          {"ndcg_at_k", r.ndcg_at_k},   {"k", r.k},
          {"n_users", r.n_users},       {"n_short_pool", r.n_short_pool}, {"mode", r.mode},
          {"relevance_source", to_string(r.relevance_source)},
          {"seed", r.seed},             {"model_id", r.model_id},
          {"config_hash", r.config_hash}};
}

MetricsReport report_from_json(const nlohmann::json& doc) {
  MetricsReport r;
  r.rel_at_k = doc.at("rel_at_k").get<double>();
  r.hit_at_k = doc.at("hit_at_k").get<double>();
  r.ndcg_at_k = doc.at("ndcg_at_k").get<double>();
  r.k = doc.at("k").get<int>();
  r.n_users = doc.at("n_users").get<int>();
  r.n_short_pool = doc.value("n_short_pool", 0);
  r.mode = doc.at("mode").get<std::string>();
  r.relevance_source = doc.at("relevance_source").get<std::string>() == "true_relevance"
                           ? RelevanceSource::true_relevance
                           : RelevanceSource::observed_label;
  r.seed = doc.value("seed", std::uint64_t{0});
  r.model_id = doc.value("model_id", "");
  r.config_hash = doc.value("config_hash", "");
  return r;
}

std::string format_table(std::span<const std::string> labels, std::span<const MetricsReport> reports) {
  if (labels.size() != reports.size()) throw Error("bad_argument", "labels and reports differ");
  std::size_t width = 6;
  for (const auto& l : labels) width = std::max(width, l.size());
  std::ostringstream out;
  const int k = reports.empty() ? 10 : reports.front().k;
  out << std::left << std::setw(static_cast<int>(width)) << "method" << std::right
      << std::setw(12) << ("Rel@" + std::to_string(k)) << std::setw(12)
      << ("Hit@" + std::to_string(k)) << std::setw(12) << ("NDCG@" + std::to_string(k)) << '\n';
  out << std::fixed << std::setprecision(2);
  for (std::size_t r = 0; r < reports.size(); ++r) {
    out << std::left << std::setw(static_cast<int>(width)) << labels[r] << std::right
        << std::setw(12) << 100.0 * reports[r].rel_at_k << std::setw(12)
        << 100.0 * reports[r].hit_at_k << std::setw(12) << 100.0 * reports[r].ndcg_at_k << '\n';
  }
  return out.str();
}

MetricsReport evaluate(const ItemScorer& scorer, const SplitDataset& split,
                       const RelevanceTable* truth, const EvalConfig& cfg, EvalTarget target) {
  if (cfg.k < 1) throw Error("bad_config", "K must be >= 1");
  const auto& held_out = target == EvalTarget::test ? split.test : split.validation;
  if (held_out.empty()) throw Error("empty_split", "no held-out interactions to evaluate");
  if (truth && (truth->n_users() != split.n_users || truth->n_items() != split.n_items))
    throw Error("missing_relevance", "relevance table does not cover the catalog");

  MetricsReport report;
  report.k = cfg.k;
  report.mode = cfg.mode == EvalMode::sampled ? "sampled_" + std::to_string(cfg.n_negatives)
                                              : "full_rank";
  report.relevance_source =
      truth ? RelevanceSource::true_relevance : RelevanceSource::observed_label;
  report.seed = cfg.seed;

  std::vector<std::vector<ItemId>> validation_items(static_cast<std::size_t>(split.n_users));
  if (target == EvalTarget::test) {
    for (const auto& v : split.validation.records)
      validation_items[static_cast<std::size_t>(v.user)].push_back(v.item);
  }
  std::vector<double> relevance(static_cast<std::size_t>(split.n_items), 0.0);
  double rel_sum = 0.0, hit_sum = 0.0, ndcg_sum = 0.0;
  for (const auto& record : held_out.records) {
    const UserId user = record.user;
    const Eigen::VectorXd scores = scorer(user);
    if (scores.size() != split.n_items) throw Error("bad_scorer", "scorer returned wrong length");
    // Exclusions for ranking: items already seen before the held-out record.
    std::vector<ItemId> seen = split.train_items[static_cast<std::size_t>(user)];
    const auto& extra = validation_items[static_cast<std::size_t>(user)];
    seen.insert(seen.end(), extra.begin(), extra.end());
    seen.erase(std::remove(seen.begin(), seen.end(), record.item), seen.end());
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());

    double gain = 0.0;
    if (truth) {
      const auto row = truth->values.row(user);
      for (ItemId i = 0; i < split.n_items; ++i) relevance[static_cast<std::size_t>(i)] = row(i);
      gain = row(record.item);
    } else {
      std::fill(relevance.begin(), relevance.end(), 0.0);
      relevance[static_cast<std::size_t>(record.item)] = record.label;
      gain = record.label;
    }
    rel_sum += rel_at_k(as_span(scores), cfg.k, relevance, seen);

    HitNdcg hn;
    if (cfg.mode == EvalMode::sampled) {
      // Negatives never include anything the user interacted with.
      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(user)));
      const auto& interacted = split.all_items[static_cast<std::size_t>(user)];
      const bool target_listed = std::binary_search(interacted.begin(), interacted.end(), record.item);
      const int pool = split.n_items - static_cast<int>(interacted.size()) - (target_listed ? 0 : 1);
      int n_negatives = cfg.n_negatives;
      if (pool < n_negatives) {
        n_negatives = pool;
        ++report.n_short_pool;
      }
      hn = hit_ndcg_sampled(as_span(scores), record.item, cfg.k, n_negatives, rng, interacted);
    } else {
      hn = hit_ndcg_at_rank(1 + count_above(as_span(scores), record.item,
                                            rank_full(as_span(scores), seen)),
                            cfg.k);
    }
    hit_sum += gain * hn.hit;
    ndcg_sum += gain * hn.ndcg;
    ++report.n_users;
  }
  report.rel_at_k = rel_sum / report.n_users;
  report.hit_at_k = hit_sum / report.n_users;
  report.ndcg_at_k = ndcg_sum / report.n_users;
  return report;
}

std::vector<WeightRow> weight_analysis(const ModelParams& weight_model, const ModelParams& scorer,
                                       const SplitDataset& split, const RelevanceTable* exposure,
                                       int k, double max_weight, int negatives_per_positive,
                                       Rng& rng) {
  std::vector<WeightRow> rows;
  std::vector<Eigen::VectorXd> user_scores(static_cast<std::size_t>(split.n_users));
  auto scores_of = [&](UserId u) -> const Eigen::VectorXd& {
    auto& s = user_scores[static_cast<std::size_t>(u)];
    if (s.size() == 0) s = raw_item_scores(scorer, u);
    return s;
  };
  auto add_row = [&](UserId u, ItemId i, int label) {
    WeightRow row;
    row.user = u;
    row.item = i;
    row.label = label;
    row.weight = weight_of(weight_model, u, i, max_weight);
    const auto& s = scores_of(u);
    row.score = sigmoid(s(i));
    row.in_top_k = topk_exact(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())),
                              i, k, {});
    if (exposure) row.exposure = exposure->values(u, i);
    rows.push_back(row);
  };
  for (const auto& r : split.train.records) {
    add_row(r.user, r.item, r.label);
    if (r.label != 1) continue;
    for (int j = 0; j < negatives_per_positive; ++j)
      add_row(r.user, sample_negative_item(split, r.user, rng), 0);
  }
  return rows;
}

void write_weight_table(std::span<const WeightRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write '" + path.string() + "'");
  out << "user\titem\tweight\tscore\tlabel\tin_top_k\texposure\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.user << '\t' << r.item << '\t' << r.weight << '\t' << r.score << '\t' << r.label
        << '\t' << r.in_top_k << '\t';
    if (r.exposure) {
      out << *r.exposure;
    } else {
      out << "NA";
    }
    out << '\n';
  }
}

WeightSummary summarize_weights(std::span<const WeightRow> rows) {
  WeightSummary s;
  for (const auto& r : rows) {
    if (r.label == 1) {
      s.mean_positive += r.weight;
      ++s.n_positive;
    } else {
      s.mean_negative += r.weight;
      ++s.n_negative;
    }
    if (r.in_top_k) {
      s.mean_in_top_k += r.weight;
      ++s.n_in_top_k;
    } else {
      s.mean_outside_top_k += r.weight;
      ++s.n_outside_top_k;
    }
  }
  auto finish = [](double& sum, std::size_t n) { sum = n ? sum / static_cast<double>(n) : 0.0; };
  finish(s.mean_positive, s.n_positive);
  finish(s.mean_negative, s.n_negative);
  finish(s.mean_in_top_k, s.n_in_top_k);
  finish(s.mean_outside_top_k, s.n_outside_top_k);
  return s;
}

}  // namespace dtrec
