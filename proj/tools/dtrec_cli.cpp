// dtrec command-line front end. Every command prints JSON (or a table for
// sweeps) on stdout; failures print {"error": {...}} on stderr and exit
// nonzero.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtrec/bandit.hpp"
#include "dtrec/checkpoint.hpp"
#include "dtrec/error.hpp"
#include "dtrec/experiment.hpp"
#include "dtrec/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dtrec;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("io_error", "cannot write '" + path.string() + "'");
}

// Config plumbing shared by every config-driven command: --config FILE,
// repeated --set section.key=value, and one flag per config key.
struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  std::map<std::string, std::string> alias_values;

  void attach(CLI::App& app) {
    app.add_option("-c,--config", file, "TOML-style config file")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override, section.key=value (repeatable)");
    for (const auto& [key, def] : default_config()) {
      app.add_option("--" + key, flag_values[key], "default: " + (def.empty() ? "\"\"" : def))
          ->group("Config keys");
    }
    app.add_option("--topk", alias_values["reco.top_k"], "alias of --reco.top_k");
    app.add_option("--neg-eval-samples", alias_values["reco.n_samples"], "alias of --reco.n_samples");
    app.add_option("--reco-temperature", alias_values["reco.temperature"],
                   "alias of --reco.temperature");
    app.add_option("-o,--outdir", alias_values["run.outdir"], "alias of --run.outdir");
    app.add_option("--seed", alias_values["run.seed_base"], "alias of --run.seed_base");
  }

  // Flags given on the command line, later ones winning over --set.
  ConfigValues overrides(const CLI::App& app) const {
    ConfigValues out;
    for (const auto& s : sets) {
      auto [key, value] = parse_assignment(s);
      out[key] = value;
    }
    for (const auto& [key, value] : flag_values)
      if (app.count("--" + key) > 0) out[key] = value;
    static const std::map<std::string, std::string> aliases = {
        {"reco.top_k", "--topk"},      {"reco.n_samples", "--neg-eval-samples"},
        {"reco.temperature", "--reco-temperature"}, {"run.outdir", "--outdir"},
        {"run.seed_base", "--seed"}};
    for (const auto& [key, flag] : aliases)
      if (app.count(flag) > 0) out[key] = alias_values.at(key);
    return out;
  }

  ConfigValues resolve(const CLI::App& app) const {
    const ConfigValues from_file = file.empty() ? ConfigValues{} : load_config(file);
    return resolve_config(from_file, overrides(app));
  }
};

json data_summary(const SplitDataset& split) {
  return {{"n_users", split.n_users},
          {"n_items", split.n_items},
          {"n_train", split.train.size()},
          {"n_validation", split.validation.size()},
          {"n_test", split.test.size()}};
}

int cmd_ingest(const std::string& input, const std::string& schema, int min_count,
               bool drop_short, const std::string& out) {
  auto log = load_interactions(input, parse_schema(schema));
  const auto n_raw = log.records.size();
  if (min_count > 1) log = filter_min_activity(log, min_count);
  SplitOptions opts;
  opts.drop_short_users = drop_short;
  const auto split = leave_last_out_split(log, opts);
  json doc = {{"input", input}, {"n_records_raw", n_raw}, {"n_records", log.records.size()},
              {"split", data_summary(split)}};
  if (!out.empty()) {
    fs::create_directories(out);
    write_interactions(log, fs::path(out) / "interactions.tsv", FileSchema::labeled);
    write_file(fs::path(out) / "ingest.json", doc.dump(2) + "\n");
  }
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_simulate(const ConfigValues& values, const std::string& out, const std::string& ratings_out) {
  const auto cfg = experiment_from_values(values);
  const auto& spec = cfg.data;
  InteractionLog ratings = spec.path.empty()
                               ? make_toy_ratings(spec.toy_users, spec.toy_items, spec.toy_seed)
                               : load_interactions(spec.path, parse_schema(spec.schema));
  if (spec.min_count > 1) ratings = filter_min_activity(ratings, spec.min_count);
  if (!ratings_out.empty()) write_interactions(ratings, ratings_out, FileSchema::rated);
  const auto result = simulate(ratings, spec.sim);
  const fs::path dir = out.empty() ? cfg.outdir / "simulate" : fs::path(out);
  fs::create_directories(dir);
  write_interactions(result.log, dir / "clicks.tsv", FileSchema::labeled);
  save_ground_truth(result.truth, dir / "truth.tsv");
  json doc = {{"source_ratio", source_click_ratio(ratings)},
              {"realized_ratio", result.realized_ratio},
              {"n_clicks", result.log.records.size()},
              {"n_users", result.truth.n_users()},
              {"n_items", result.truth.n_items()},
              {"config_hash", cfg.hash},
              {"config", values}};
  if (std::isfinite(result.truth.cutoff)) doc["cutoff"] = result.truth.cutoff;
  write_file(dir / "simulate.json", doc.dump(2) + "\n");
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_train(const ConfigValues& values) {
  const auto cfg = experiment_from_values(values);
  const auto summary = run_experiment(cfg);
  auto doc = to_json(summary);
  doc["config_hash"] = cfg.hash;
  std::cout << doc.dump(2) << '\n';
  if (summary.n_ok == 0) throw Error("run_failed", "every run failed; see report.json files");
  return 0;
}

Checkpoint load_checked(const std::string& path, const ExperimentConfig& cfg, bool any_config) {
  auto ckpt = load_checkpoint(path);
  if (!any_config && !ckpt.config_hash.empty() && ckpt.config_hash != cfg.hash)
    throw Error("config_mismatch", "checkpoint was trained under config " + ckpt.config_hash +
                                       ", current config is " + cfg.hash +
                                       " (pass --any-config to evaluate anyway)");
  return ckpt;
}

int cmd_evaluate(const ConfigValues& values, const std::string& checkpoint, bool any_config) {
  const auto cfg = experiment_from_values(values);
  const auto ckpt = load_checked(checkpoint, cfg, any_config);
  const auto it = ckpt.models.find("f");
  if (it == ckpt.models.end()) throw Error("bad_checkpoint", "checkpoint has no scoring model 'f'");
  const auto data = load_dataset(cfg.data);
  const RelevanceTable* truth = data.truth ? &*data.truth : nullptr;
  const auto scorer = scorer_for(it->second);
  auto test = evaluate(scorer, data.split, truth, cfg.eval, EvalTarget::test);
  auto val = evaluate(scorer, data.split, nullptr, cfg.eval, EvalTarget::validation);
  test.config_hash = val.config_hash = cfg.hash;
  test.model_id = val.model_id = checkpoint;
  std::cout << json{{"checkpoint", checkpoint}, {"test", to_json(test)}, {"validation", to_json(val)}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_weights(const ConfigValues& values, const std::string& checkpoint, const std::string& out,
                bool any_config) {
  const auto cfg = experiment_from_values(values);
  const auto ckpt = load_checked(checkpoint, cfg, any_config);
  if (!ckpt.models.count("f") || !ckpt.models.count("w"))
    throw Error("bad_checkpoint", "weight analysis needs models 'f' and 'w' (a DT checkpoint)");
  const auto data = load_dataset(cfg.data);
  const RelevanceTable* exposure = data.exposure ? &*data.exposure : nullptr;
  Rng rng(mix_seed(cfg.seed_base, 99));
  const auto rows = weight_analysis(ckpt.models.at("w"), ckpt.models.at("f"), data.split, exposure,
                                    cfg.gda.reco.top_k, cfg.gda.max_weight,
                                    cfg.gda.negatives_per_positive, rng);
  if (!out.empty()) write_weight_table(rows, out);
  const auto s = summarize_weights(rows);
  std::cout << json{{"n_rows", rows.size()},
                    {"mean_positive", s.mean_positive},
                    {"mean_negative", s.mean_negative},
                    {"mean_in_top_k", s.mean_in_top_k},
                    {"mean_outside_top_k", s.mean_outside_top_k},
                    {"n_positive", s.n_positive},
                    {"n_negative", s.n_negative},
                    {"n_in_top_k", s.n_in_top_k},
                    {"n_outside_top_k", s.n_outside_top_k}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_sweep(const ConfigValues& values, const std::vector<std::string>& axes_text, bool as_json) {
  std::vector<SweepAxis> axes;
  for (const auto& a : axes_text) axes.push_back(parse_sweep_axis(a));
  const auto table = run_sweep(values, axes);
  if (as_json)
    std::cout << to_json(table).dump(2) << '\n';
  else
    std::cout << format_sweep(table);
  for (const auto& c : table.cells)
    if (!c.ok) return kExitFailure;
  return 0;
}

BanditInstance resolve_instance(const std::string& name) {
  if (fs::exists(name)) return load_bandit(name);
  return builtin_bandit(name);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw Error("bad_argument", "not a number: '" + part + "'");
    }
  }
  if (out.empty()) throw Error("bad_argument", "empty list");
  return out;
}

int cmd_bandit(const std::string& mode, const std::string& instance, const std::string& lambdas,
               int resolution, int samples, int replications, std::uint64_t seed) {
  const auto inst = resolve_instance(instance);
  if (mode == "consistency") {
    const auto report = consistency_check(inst, parse_list(lambdas), resolution);
    std::cout << to_json(report).dump(2) << '\n';
    return 0;
  }
  if (inst.target.size() == 0) throw Error("bad_argument", "instance '" + inst.name + "' has no target policy");
  Rng rng(seed);
  const auto diag = iw_overlap_diagnostic(inst, inst.target, samples, replications, rng);
  std::cout << to_json(diag).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transport-regularized recommendation: data, simulation, training, evaluation"};
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "load, filter and split an interaction file");
  std::string ingest_input, ingest_schema = "automatic", ingest_out;
  int ingest_min = 1;
  bool ingest_keep_short = false;
  ingest->add_option("input", ingest_input, "interaction TSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--schema", ingest_schema, "automatic, rated, labeled or implicit");
  ingest->add_option("--min-count", ingest_min, "iterative min activity filter");
  ingest->add_flag("--keep-short-users", ingest_keep_short, "reject users with < 3 records instead of dropping");
  ingest->add_option("-o,--out", ingest_out, "write interactions.tsv and ingest.json here");

  auto* sim = app.add_subcommand("simulate", "generate semi-synthetic clicks and ground truth");
  ConfigFlags sim_cfg;
  sim_cfg.attach(*sim);
  std::string sim_out, sim_ratings;
  bool sim_bernoulli = false;
  sim->add_option("--to", sim_out, "output directory (default <outdir>/simulate)");
  sim->add_flag("--bernoulli", sim_bernoulli, "Bernoulli clicks instead of thresholding");
  sim->add_option("--ratings-out", sim_ratings, "also write the rating matrix that was simulated from");

  auto* train_cmd = app.add_subcommand("train", "train and evaluate n_runs seeds of one method");
  ConfigFlags train_cfg;
  train_cfg.attach(*train_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint's scoring model");
  ConfigFlags eval_cfg;
  eval_cfg.attach(*eval_cmd);
  std::string eval_ckpt;
  bool eval_any = false;
  eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint.bin or .json")->required()->check(CLI::ExistingFile);
  eval_cmd->add_flag("--any-config", eval_any, "skip the config hash check");

  auto* sweep = app.add_subcommand("sweep", "cross-product of parameter axes");
  ConfigFlags sweep_cfg;
  sweep_cfg.attach(*sweep);
  std::vector<std::string> sweep_axes;
  bool sweep_json = false;
  sweep->add_option("-a,--axis", sweep_axes, "section.key=v1,v2,... (repeatable)");
  sweep->add_flag("--json", sweep_json, "print JSON instead of a table");

  auto* bandit = app.add_subcommand("bandit-check", "population-level bandit consistency / IW diagnostics");
  std::string b_mode = "consistency", b_instance = "2x2", b_lambdas = "0,0.1,0.3,1,3,10";
  int b_resolution = 21, b_samples = 1000, b_reps = 200;
  std::uint64_t b_seed = 0;
  bandit->add_option("--mode", b_mode, "consistency or iw")
      ->check(CLI::IsMember({"consistency", "iw"}));
  bandit->add_option("--instance", b_instance, "builtin name or JSON file");
  bandit->add_option("--lambdas", b_lambdas, "comma-separated lambda grid");
  bandit->add_option("--resolution", b_resolution, "grid points per simplex edge");
  bandit->add_option("--samples", b_samples, "logged samples per replication (iw)");
  bandit->add_option("--replications", b_reps, "replications (iw)");
  bandit->add_option("--seed", b_seed, "rng seed (iw)");

  auto* weights = app.add_subcommand("weights", "weight-analysis table from a DT checkpoint");
  ConfigFlags weights_cfg;
  weights_cfg.attach(*weights);
  std::string w_ckpt, w_out;
  bool w_any = false;
  weights->add_option("checkpoint", w_ckpt, "checkpoint with models f and w")->required()->check(CLI::ExistingFile);
  weights->add_option("--table", w_out, "write the per-record TSV here");
  weights->add_flag("--any-config", w_any, "skip the config hash check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (*ingest) return cmd_ingest(ingest_input, ingest_schema, ingest_min, !ingest_keep_short, ingest_out);
    if (*sim) {
      auto values = sim_cfg.resolve(*sim);
      if (sim_bernoulli) values["sim.bernoulli"] = "true";
      return cmd_simulate(values, sim_out, sim_ratings);
    }
    if (*train_cmd) return cmd_train(train_cfg.resolve(*train_cmd));
    if (*eval_cmd) return cmd_evaluate(eval_cfg.resolve(*eval_cmd), eval_ckpt, eval_any);
    if (*sweep) return cmd_sweep(sweep_cfg.resolve(*sweep), sweep_axes, sweep_json);
    if (*bandit) return cmd_bandit(b_mode, b_instance, b_lambdas, b_resolution, b_samples, b_reps, b_seed);
    if (*weights) return cmd_weights(weights_cfg.resolve(*weights), w_ckpt, w_out, w_any);
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
