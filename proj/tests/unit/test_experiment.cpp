#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "dtrec/experiment.hpp"
#include "support.hpp"

using namespace dtrec;
using namespace dtrec::test;

namespace {

std::string fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ConfigValues small_experiment(const std::filesystem::path& outdir) {
  return resolve_config({{"data.toy_users", "30"},
                         {"data.toy_items", "40"},
                         {"sim.fit_dim", "4"},
                         {"sim.relevance_epochs", "3"},
                         {"sim.exposure_epochs", "3"},
                         {"train.dim", "4"},
                         {"train.hidden", "8,4"},
                         {"train.batch_size", "64"},
                         {"train.max_epochs", "2"},
                         {"train.lr", "0.01"},
                         {"reco.n_samples", "8"},
                         {"reco.top_k", "5"},
                         {"eval.k", "5"},
                         {"eval.n_negatives", "10"},
                         {"run.n_runs", "2"},
                         {"run.outdir", outdir.string()}});
}

}  // namespace

TEST_CASE("config files") {
  std::istringstream in(
      "# comment\n[gda]\nlambda = 0.3   # trailing\nstep_ratio = \"1:5:5\"\n\n[run]\noutdir = \"a b\"\n");
  const auto v = parse_config(in);
  CHECK(v.at("gda.lambda") == "0.3");
  CHECK(v.at("gda.step_ratio") == "1:5:5");
  CHECK(v.at("run.outdir") == "a b");

  const auto resolved = resolve_config(v, {{"gda.lambda", "0.5"}});
  CHECK(resolved.at("gda.lambda") == "0.5");
  CHECK(resolved.at("gda.gamma") == default_config().at("gda.gamma"));
  DTREC_CHECK_CODE(resolve_config({{"gda.lamda", "1"}}), "bad_config");
  DTREC_CHECK_CODE(resolve_config({}, {{"nope.key", "1"}}), "bad_config");

  // The hash is FNV-1a over the canonical dump, which parses back to itself.
  CHECK(fnv1a("a") == "af63dc4c8601ec8c");
  CHECK(config_hash(resolved) == fnv1a(dump_config(resolved)));
  std::istringstream again(dump_config(resolved));
  CHECK(parse_config(again) == resolved);
  CHECK(config_hash(resolved) != config_hash(resolve_config(v)));

  const auto [k, val] = parse_assignment("gda.lambda=0.1");
  CHECK(k == "gda.lambda");
  CHECK(val == "0.1");
  DTREC_CHECK_CODE(parse_assignment("=3"), "bad_config");

  auto exp = experiment_from_values(resolve_config({}, {{"gda.step_ratio", "2:3:4"}, {"method.name", "IPW-MF"}}));
  CHECK(exp.gda.step_ratio.w == 3);
  CHECK(exp.method == Method::ipw_mf);
  CHECK(exp.hash == config_hash(exp.values));
  DTREC_CHECK_CODE(experiment_from_values(resolve_config({}, {{"gda.eta", "abc"}})), "bad_config");
  DTREC_CHECK_CODE(experiment_from_values(resolve_config({}, {{"method.name", "SVD"}})), "bad_config");
  DTREC_CHECK_CODE(experiment_from_values(resolve_config({}, {{"ipw.clip", "0"}, {"method.name", "IPW-MF"}})), "bad_config");
}

TEST_CASE("popularity and propensity weights") {
  // Item 0 is in every user's train positives.
  std::vector<Interaction> recs;
  for (UserId u = 0; u < 4; ++u) {
    std::int64_t order = 0;
    recs.push_back({u, 0, 1, order++, std::nan("")});
    for (ItemId i = 1; i <= 3; ++i) recs.push_back({u, static_cast<ItemId>((u + i) % 6), 1, order++, std::nan("")});
  }
  const auto split = leave_last_out_split(make_log(std::move(recs), 4, 6));
  const auto pop = popularity_scores(split);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(6);
  for (const auto& r : split.train.records) expect(r.item) += 1;
  CHECK(pop == expect);
  CHECK(pop(0) == 4);

  PropensityConfig pc;
  const auto w = ipw_item_weights(split, pc);
  for (int i = 0; i < 6; ++i) {
    const double prop = std::max(pc.clip, std::pow(expect(i) / 4.0, pc.exponent));
    CHECK(w[static_cast<std::size_t>(i)] == doctest::Approx(1.0 / prop));
  }
  pc.clip = 1.0;
  for (const double x : ipw_item_weights(split, pc)) CHECK(x == 1.0);
}

TEST_CASE("IPW-MF with clip 1 is plain MCF") {
  const auto split = random_split(10, 15, 6, 4);
  ErmConfig erm;
  erm.dim = 3;
  erm.hidden = {4};
  erm.batch_size = 8;
  erm.max_epochs = 2;
  erm.lr = 0.01;
  erm.top_k = 3;
  PropensityConfig pc;
  pc.clip = 1.0;
  const auto a = train_ipw_mf(split, erm, pc);
  const auto b = train_erm(split, erm, ModelKind::mcf);
  CHECK(flatten(a.best_f) == flatten(b.best_f));
}

TEST_CASE("experiment runs and sweeps") {
  const auto dir = std::filesystem::temp_directory_path() / "dtrec_test_exp";
  std::filesystem::remove_all(dir);
  const auto base = small_experiment(dir);

  auto cfg = experiment_from_values(base);
  const auto data = load_dataset(cfg.data);
  REQUIRE(data.truth);
  const auto summary = run_experiment(cfg, data);
  CHECK(summary.n_ok == 2);
  CHECK(summary.label == "DT-M/M/M");
  for (const auto& run : summary.runs) {
    CHECK(run.ok);
    for (const auto* f : {"report.json", "train.log.jsonl", "checkpoint.bin", "weights.tsv"})
      CHECK(std::filesystem::exists(run.dir / f));
    CHECK(run.report.relevance_source == RelevanceSource::true_relevance);
    CHECK(run.validation.relevance_source == RelevanceSource::observed_label);
  }
  CHECK(summary.mean.rel_at_k ==
        doctest::Approx((summary.runs[0].report.rel_at_k + summary.runs[1].report.rel_at_k) / 2));
  const auto j = to_json(summary);
  CHECK(j["runs"].size() == 2);

  auto ablation = experiment_from_values(resolve_config(base, {{"gda.lambda", "0"}, {"run.n_runs", "1"}}));
  CHECK(run_experiment(ablation, data).label == "ablation: no transport");

  auto pop = experiment_from_values(resolve_config(base, {{"method.name", "Pop"}, {"run.n_runs", "1"}}));
  const auto ps = run_experiment(pop, data);
  CHECK(ps.n_ok == 1);
  const auto direct = run_pop_baseline(data.split, &*data.truth, pop.eval);
  CHECK(ps.mean.rel_at_k == doctest::Approx(direct.rel_at_k));

  const auto axis = parse_sweep_axis("gda.lambda=0,0.1");
  CHECK(axis.key == "gda.lambda");
  CHECK(axis.values == std::vector<std::string>{"0", "0.1"});
  DTREC_CHECK_CODE(run_sweep(base, {}), "nothing_to_sweep");
  DTREC_CHECK_CODE(run_sweep(base, {SweepAxis{"gda.lambda", {}}}), "nothing_to_sweep");
  DTREC_CHECK_CODE(run_sweep(base, {SweepAxis{"gda.nope", {"1"}}}), "bad_config");

  const auto table = run_sweep(resolve_config(base, {{"run.n_runs", "1"}, {"method.name", "MCF"}}),
                               {SweepAxis{"train.lr", {"0.01", "-1"}}});
  REQUIRE(table.cells.size() == 2);
  CHECK(table.cells[0].ok);
  CHECK_FALSE(table.cells[1].ok);
  CHECK_FALSE(table.cells[1].error.empty());
  CHECK(format_sweep(table).find("train.lr") != std::string::npos);
  std::filesystem::remove_all(dir);
}
