#include "dtrec/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dtrec/checkpoint.hpp"
#include "dtrec/error.hpp"

namespace dtrec {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    if (line[k] == '"') quoted = !quoted;
    if (line[k] == '#' && !quoted) return line.substr(0, k);
  }
  return line;
}

const std::string& value_of(const ConfigValues& v, const std::string& key) {
  const auto it = v.find(key);
  if (it == v.end()) throw Error("bad_config", "missing config key '" + key + "'");
  return it->second;
}

double get_double(const ConfigValues& v, const std::string& key) {
  const auto& text = value_of(v, key);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw Error("bad_config", "key '" + key + "': expected a number, got '" + text + "'");
  return out;
}

long long get_int(const ConfigValues& v, const std::string& key) {
  const auto& text = value_of(v, key);
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw Error("bad_config", "key '" + key + "': expected an integer, got '" + text + "'");
  return out;
}

std::uint64_t get_seed(const ConfigValues& v, const std::string& key) {
  const auto x = get_int(v, key);
  if (x < 0) throw Error("bad_config", "key '" + key + "': seeds are nonnegative");
  return static_cast<std::uint64_t>(x);
}

bool get_bool(const ConfigValues& v, const std::string& key) {
  const auto& text = value_of(v, key);
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error("bad_config", "key '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<int> get_int_list(const ConfigValues& v, const std::string& key) {
  std::vector<int> out;
  std::istringstream in(value_of(v, key));
  std::string part;
  while (std::getline(in, part, ',')) {
    ConfigValues one{{key, trim(part)}};
    out.push_back(static_cast<int>(get_int(one, key)));
  }
  return out;
}

std::optional<double> get_optional_double(const ConfigValues& v, const std::string& key) {
  if (value_of(v, key).empty()) return std::nullopt;
  return get_double(v, key);
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (const char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
  return out;
}

}  // namespace

ConfigValues parse_config(std::istream& in, const std::string& source) {
  ConfigValues out;
  std::string section;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(strip_comment(line));
    if (text.empty()) continue;
    auto fail = [&](const std::string& msg) {
      return Error("parse_error", source + ": line " + std::to_string(line_no) + ": " + msg);
    };
    if (text.front() == '[') {
      if (text.back() != ']') throw fail("unterminated section header");
      section = trim(text.substr(1, text.size() - 2));
      if (section.empty()) throw fail("empty section name");
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw fail("expected 'key = value'");
    const auto key = trim(text.substr(0, eq));
    if (key.empty()) throw fail("empty key");
    const auto full = section.empty() ? key : section + "." + key;
    if (out.count(full)) throw fail("duplicate key '" + full + "'");
    out[full] = unquote(trim(text.substr(eq + 1)));
  }
  return out;
}

ConfigValues load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "cannot open config '" + path.string() + "'");
  return parse_config(in, path.string());
}

ConfigValues default_config() {
  return {
      {"data.source", "simulate"},
      {"data.path", ""},
      {"data.schema", "automatic"},
      {"data.truth", ""},
      {"data.min_count", "1"},
      {"data.drop_short_users", "true"},
      {"data.toy_users", "200"},
      {"data.toy_items", "300"},
      {"data.toy_seed", "7"},
      {"sim.u", "3"},
      {"sim.p", "2"},
      {"sim.seed", "11"},
      {"sim.bernoulli", "false"},
      {"sim.click_ratio", "0"},
      {"sim.fit_dim", "32"},
      {"sim.fit_lr", "0.01"},
      {"sim.fit_l2", "0.0001"},
      {"sim.relevance_epochs", "40"},
      {"sim.exposure_epochs", "10"},
      {"method.name", "DT"},
      {"method.kinds", "M/M/M"},
      {"train.batch_size", "1024"},
      {"train.max_epochs", "50"},
      {"train.patience", "5"},
      {"train.negatives", "3"},
      {"train.dim", "32"},
      {"train.hidden", "64,32,16"},
      {"train.l2", "0"},
      {"train.clip_norm", "5"},
      {"train.lr", "0.001"},
      {"gda.lambda", "0.1"},
      {"gda.eta", "0.01"},
      {"gda.gamma", "10"},
      {"gda.lr_f", ""},
      {"gda.lr_w", ""},
      {"gda.step_ratio", "1:10:10"},
      {"gda.max_weight", "1"},
      {"gda.normalization", "self_normalized"},
      {"gda.penalty", "gradient_penalty"},
      {"gda.penalty_coef", "10"},
      {"gda.n_interpolates", "0"},
      {"reco.top_k", "10"},
      {"reco.n_samples", "100"},
      {"reco.temperature", "0.1"},
      {"ipw.exponent", "0.5"},
      {"ipw.clip", "0.1"},
      {"eval.k", "10"},
      {"eval.n_negatives", "100"},
      {"eval.mode", "sampled"},
      {"eval.seed", "2022"},
      {"run.n_runs", "1"},
      {"run.outdir", "runs"},
      {"run.seed_base", "0"},
      {"run.weights", "true"},
  };
}

ConfigValues resolve_config(const ConfigValues& file, const ConfigValues& overrides) {
  auto out = default_config();
  for (const auto* layer : {&file, &overrides}) {
    for (const auto& [k, v] : *layer) {
      if (!out.count(k)) throw Error("bad_config", "unknown config key '" + k + "'");
      out[k] = v;
    }
  }
  return out;
}

std::string dump_config(const ConfigValues& values) {
  std::ostringstream out;
  std::string section;
  for (const auto& [full, value] : values) {
    const auto dot = full.find('.');
    const auto sec = dot == std::string::npos ? std::string() : full.substr(0, dot);
    const auto key = dot == std::string::npos ? full : full.substr(dot + 1);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << key << " = \"" << value << "\"\n";
  }
  return out.str();
}

std::string config_hash(const ConfigValues& values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : dump_config(values)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error("bad_config", "expected section.key=value, got '" + text + "'");
  return {trim(text.substr(0, eq)), unquote(trim(text.substr(eq + 1)))};
}

std::string to_string(Method method) {
  switch (method) {
    case Method::pop: return "Pop";
    case Method::mcf: return "MCF";
    case Method::ncf: return "NCF";
    case Method::ipw_mf: return "IPW-MF";
    case Method::dt: return "DT";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  std::string lower;
  for (const char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "pop") return Method::pop;
  if (lower == "mcf" || lower == "mf") return Method::mcf;
  if (lower == "ncf") return Method::ncf;
  if (lower == "ipw-mf" || lower == "ipw_mf" || lower == "ipw") return Method::ipw_mf;
  if (lower == "dt") return Method::dt;
  throw Error("bad_config", "unknown method '" + name + "' (Pop, MCF, NCF, IPW-MF, DT)");
}

void PropensityConfig::validate() const {
  if (!(exponent > 0.0 && exponent <= 1.0)) throw Error("bad_config", "ipw.exponent must lie in (0, 1]");
  if (!(clip > 0.0 && clip <= 1.0)) throw Error("bad_config", "ipw.clip must lie in (0, 1]");
}

ExperimentConfig experiment_from_values(const ConfigValues& resolved) {
  const auto& v = resolved;
  for (const auto& [k, _] : v)
    if (!default_config().count(k)) throw Error("bad_config", "unknown config key '" + k + "'");
  ExperimentConfig cfg;
  cfg.values = v;
  cfg.hash = config_hash(v);

  auto& d = cfg.data;
  d.source = value_of(v, "data.source");
  if (d.source != "file" && d.source != "simulate")
    throw Error("bad_config", "data.source must be 'file' or 'simulate'");
  d.path = value_of(v, "data.path");
  d.schema = value_of(v, "data.schema");
  parse_schema(d.schema);
  d.truth = value_of(v, "data.truth");
  d.min_count = static_cast<int>(get_int(v, "data.min_count"));
  if (d.min_count < 1) throw Error("bad_config", "data.min_count must be >= 1");
  d.drop_short_users = get_bool(v, "data.drop_short_users");
  d.toy_users = static_cast<std::int32_t>(get_int(v, "data.toy_users"));
  d.toy_items = static_cast<std::int32_t>(get_int(v, "data.toy_items"));
  d.toy_seed = get_seed(v, "data.toy_seed");
  if (d.source == "file" && d.path.empty()) throw Error("bad_config", "data.path is required for file sources");

  auto& s = d.sim;
  s.u = get_double(v, "sim.u");
  s.p = get_double(v, "sim.p");
  s.seed = get_seed(v, "sim.seed");
  s.bernoulli = get_bool(v, "sim.bernoulli");
  s.click_ratio = get_double(v, "sim.click_ratio");
  for (auto* fit : {&s.relevance_fit, &s.exposure_fit}) {
    fit->dim = static_cast<int>(get_int(v, "sim.fit_dim"));
    fit->lr = get_double(v, "sim.fit_lr");
    fit->l2 = get_double(v, "sim.fit_l2");
  }
  s.relevance_fit.epochs = static_cast<int>(get_int(v, "sim.relevance_epochs"));
  s.exposure_fit.epochs = static_cast<int>(get_int(v, "sim.exposure_epochs"));

  cfg.method = parse_method(value_of(v, "method.name"));
  cfg.kinds = parse_model_kinds(value_of(v, "method.kinds"));

  const int batch = static_cast<int>(get_int(v, "train.batch_size"));
  const int epochs = static_cast<int>(get_int(v, "train.max_epochs"));
  const int patience = static_cast<int>(get_int(v, "train.patience"));
  const int negatives = static_cast<int>(get_int(v, "train.negatives"));
  const int dim = static_cast<int>(get_int(v, "train.dim"));
  const auto hidden = get_int_list(v, "train.hidden");
  const double l2 = get_double(v, "train.l2");
  const double clip = get_double(v, "train.clip_norm");

  auto& e = cfg.erm;
  e.lr = get_double(v, "train.lr");
  e.l2 = l2;
  e.batch_size = batch;
  e.max_epochs = epochs;
  e.patience = patience;
  e.negatives_per_positive = negatives;
  e.top_k = static_cast<int>(get_int(v, "reco.top_k"));
  e.adam.clip_norm = clip;
  e.dim = dim;
  e.hidden = hidden;
  if (!(e.lr > 0.0)) throw Error("bad_config", "train.lr must be > 0");
  if (batch < 1 || epochs < 0 || patience < 1 || negatives < 0 || dim < 1)
    throw Error("bad_config", "invalid [train] settings");

  auto& g = cfg.gda;
  g.lambda = get_double(v, "gda.lambda");
  g.eta = get_double(v, "gda.eta");
  g.gamma = get_double(v, "gda.gamma");
  g.lr_f = get_optional_double(v, "gda.lr_f");
  g.lr_w = get_optional_double(v, "gda.lr_w");
  g.step_ratio = parse_step_ratio(value_of(v, "gda.step_ratio"));
  g.batch_size = batch;
  g.max_epochs = epochs;
  g.patience = patience;
  g.negatives_per_positive = negatives;
  g.max_weight = get_double(v, "gda.max_weight");
  g.l2 = l2;
  g.reco.top_k = e.top_k;
  g.reco.n_samples = static_cast<int>(get_int(v, "reco.n_samples"));
  g.reco.temperature = get_double(v, "reco.temperature");
  const auto& norm = value_of(v, "gda.normalization");
  if (norm == "self_normalized") {
    g.normalization = IpmNormalization::self_normalized;
  } else if (norm == "raw_sum") {
    g.normalization = IpmNormalization::raw_sum;
  } else {
    throw Error("bad_config", "gda.normalization must be self_normalized or raw_sum");
  }
  const auto& pen = value_of(v, "gda.penalty");
  if (pen == "gradient_penalty") {
    g.penalty.mode = LipschitzMode::gradient_penalty;
  } else if (pen == "weight_clip") {
    g.penalty.mode = LipschitzMode::weight_clip;
  } else {
    throw Error("bad_config", "gda.penalty must be gradient_penalty or weight_clip");
  }
  g.penalty.coefficient = get_double(v, "gda.penalty_coef");
  g.penalty.n_interpolates = static_cast<int>(get_int(v, "gda.n_interpolates"));
  g.adam.clip_norm = clip;
  g.dim = dim;
  g.hidden = hidden;
  g.validate();

  cfg.propensity.exponent = get_double(v, "ipw.exponent");
  cfg.propensity.clip = get_double(v, "ipw.clip");
  if (cfg.method == Method::ipw_mf) cfg.propensity.validate();

  cfg.eval.k = static_cast<int>(get_int(v, "eval.k"));
  cfg.eval.n_negatives = static_cast<int>(get_int(v, "eval.n_negatives"));
  const auto& mode = value_of(v, "eval.mode");
  if (mode == "sampled") {
    cfg.eval.mode = EvalMode::sampled;
  } else if (mode == "full_rank") {
    cfg.eval.mode = EvalMode::full_rank;
  } else {
    throw Error("bad_config", "eval.mode must be sampled or full_rank");
  }
  cfg.eval.seed = get_seed(v, "eval.seed");

  cfg.n_runs = static_cast<int>(get_int(v, "run.n_runs"));
  if (cfg.n_runs < 1) throw Error("bad_config", "run.n_runs must be >= 1");
  cfg.outdir = value_of(v, "run.outdir");
  cfg.seed_base = get_seed(v, "run.seed_base");
  cfg.write_weights = get_bool(v, "run.weights");
  return cfg;
}

LoadedData load_dataset(const DatasetSpec& spec) {
  LoadedData out;
  SplitOptions opts;
  opts.drop_short_users = spec.drop_short_users;
  if (spec.source == "file") {
    auto log = load_interactions(spec.path, parse_schema(spec.schema));
    if (spec.min_count > 1) log = filter_min_activity(log, spec.min_count);
    if (!spec.truth.empty()) {
      const auto truth = load_ground_truth(spec.truth);
      out.truth = align_to_log(truth.relevance, log);
      out.exposure = align_to_log(truth.exposure, log);
    }
    out.split = leave_last_out_split(log, opts);
    out.description = "file " + spec.path;
    return out;
  }
  InteractionLog ratings = spec.path.empty()
                               ? make_toy_ratings(spec.toy_users, spec.toy_items, spec.toy_seed)
                               : load_interactions(spec.path, parse_schema(spec.schema));
  if (spec.min_count > 1) ratings = filter_min_activity(ratings, spec.min_count);
  const auto sim = simulate(ratings, spec.sim);
  out.truth = sim.truth.relevance_table();
  out.exposure = sim.truth.exposure_table();
  out.split = leave_last_out_split(sim.log, opts);
  out.description = "simulated from " + (spec.path.empty() ? std::string("toy ratings") : spec.path);
  return out;
}

Eigen::VectorXd popularity_scores(const SplitDataset& split) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(split.n_items);
  for (const auto& r : split.train.records)
    if (r.label == 1) counts(r.item) += 1.0;
  return counts;
}

MetricsReport run_pop_baseline(const SplitDataset& split, const RelevanceTable* truth,
                               const EvalConfig& cfg) {
  const Eigen::VectorXd counts = popularity_scores(split);
  auto report = evaluate([&](UserId) { return counts; }, split, truth, cfg, EvalTarget::test);
  report.model_id = "Pop";
  return report;
}

std::vector<double> ipw_item_weights(const SplitDataset& split, const PropensityConfig& cfg) {
  cfg.validate();
  const Eigen::VectorXd counts = popularity_scores(split);
  const double max_count = std::max(1.0, counts.maxCoeff());
  std::vector<double> w(static_cast<std::size_t>(split.n_items));
  for (std::int32_t i = 0; i < split.n_items; ++i) {
    const double propensity = std::max(cfg.clip, std::pow(counts(i) / max_count, cfg.exponent));
    w[static_cast<std::size_t>(i)] = 1.0 / propensity;
  }
  return w;
}

TrainedModel train_ipw_mf(const SplitDataset& split, const ErmConfig& erm, const PropensityConfig& cfg) {
  const auto weights = ipw_item_weights(split, cfg);
  return train_erm(split, erm, ModelKind::mcf, weights);
}

namespace {

MetricsReport aggregate(const std::vector<MetricsReport>& rs, bool stddev) {
  MetricsReport out;
  if (rs.empty()) return out;
  out = rs.front();
  auto stat = [&](auto field) {
    double mean = 0.0;
    for (const auto& r : rs) mean += r.*field;
    mean /= static_cast<double>(rs.size());
    if (!stddev) return mean;
    if (rs.size() < 2) return 0.0;
    double var = 0.0;
    for (const auto& r : rs) var += (r.*field - mean) * (r.*field - mean);
    return std::sqrt(var / static_cast<double>(rs.size() - 1));
  };
  out.rel_at_k = stat(&MetricsReport::rel_at_k);
  out.hit_at_k = stat(&MetricsReport::hit_at_k);
  out.ndcg_at_k = stat(&MetricsReport::ndcg_at_k);
  return out;
}

std::string method_label(const ExperimentConfig& cfg) {
  if (cfg.method != Method::dt) return to_string(cfg.method);
  if (cfg.gda.lambda == 0.0) return "ablation: no transport";
  return "DT-" + to_string(cfg.kinds);
}

nlohmann::json config_json(const ConfigValues& v) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, val] : v) j[k] = val;
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write '" + path.string() + "'");
  out << text;
}

RunRecord run_once(const ExperimentConfig& cfg, const LoadedData& data, std::uint64_t seed,
                   const std::filesystem::path& dir) {
  RunRecord rec;
  rec.seed = seed;
  rec.dir = dir;
  std::filesystem::create_directories(dir);
  const RelevanceTable* truth = data.truth ? &*data.truth : nullptr;
  const auto& split = data.split;
  const std::string label = method_label(cfg);
  try {
    TrainedModel trained;
    bool has_model = true;
    if (cfg.method == Method::pop) {
      has_model = false;
    } else if (cfg.method == Method::dt) {
      auto g = cfg.gda;
      g.seed = seed;
      g.reco.seed = seed;
      trained = train(split, g, cfg.kinds);
    } else {
      auto e = cfg.erm;
      e.seed = seed;
      trained = cfg.method == Method::ipw_mf
                    ? train_ipw_mf(split, e, cfg.propensity)
                    : train_erm(split, e, cfg.method == Method::ncf ? ModelKind::ncf : ModelKind::mcf);
    }
    if (has_model) {
      std::ostringstream log;
      for (const auto& entry : trained.log) log << to_json(entry).dump() << '\n';
      write_text(dir / "train.log.jsonl", log.str());
      Checkpoint ckpt;
      ckpt.config_hash = cfg.hash;
      ckpt.models["f"] = trained.best_f;
      if (trained.best_w) ckpt.models["w"] = *trained.best_w;
      if (trained.best_g) ckpt.models["g"] = *trained.best_g;
      save_checkpoint_binary(ckpt, dir / "checkpoint.bin");
      rec.report = evaluate(scorer_for(trained.best_f), split, truth, cfg.eval, EvalTarget::test);
      // Validation drives tuning, so it only ever sees observed labels.
      rec.validation = evaluate(scorer_for(trained.best_f), split, nullptr, cfg.eval, EvalTarget::validation);
      rec.best_epoch = trained.best_epoch;
      rec.diverged = trained.diverged;
      if (cfg.write_weights && trained.best_w) {
        Rng rng(mix_seed(seed, 99));
        const RelevanceTable* exposure = data.exposure ? &*data.exposure : nullptr;
        const auto rows = weight_analysis(*trained.best_w, trained.best_f, split, exposure,
                                          cfg.gda.reco.top_k, cfg.gda.max_weight,
                                          cfg.gda.negatives_per_positive, rng);
        write_weight_table(rows, dir / "weights.tsv");
      }
    } else {
      const Eigen::VectorXd counts = popularity_scores(split);
      const ItemScorer pop = [&](UserId) { return counts; };
      rec.report = evaluate(pop, split, truth, cfg.eval, EvalTarget::test);
      rec.validation = evaluate(pop, split, nullptr, cfg.eval, EvalTarget::validation);
    }
    rec.report.model_id = label + "/" + std::to_string(seed);
    rec.report.config_hash = cfg.hash;
    rec.validation.model_id = rec.report.model_id;
    rec.validation.config_hash = cfg.hash;
    rec.ok = true;
  } catch (const Error& e) {
    rec.error = e.code() + ": " + e.what();
  } catch (const std::exception& e) {
    rec.error = std::string("internal: ") + e.what();
  }
  nlohmann::json report = {{"method", to_string(cfg.method)},
                           {"label", label},
                           {"seed", seed},
                           {"ok", rec.ok},
                           {"config_hash", cfg.hash},
                           {"config", config_json(cfg.values)}};
  if (rec.ok) {
    report["test"] = to_json(rec.report);
    report["validation"] = to_json(rec.validation);
    report["best_epoch"] = rec.best_epoch;
    report["diverged"] = rec.diverged;
  } else {
    report["error"] = rec.error;
  }
  write_text(dir / "report.json", report.dump(2) + "\n");
  return rec;
}

}  // namespace

nlohmann::json to_json(const ExperimentSummary& s) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : s.runs) {
    nlohmann::json j = {{"seed", r.seed}, {"ok", r.ok}, {"dir", r.dir.generic_string()}};
    if (r.ok) {
      j["test"] = to_json(r.report);
      j["validation"] = to_json(r.validation);
      j["best_epoch"] = r.best_epoch;
      j["diverged"] = r.diverged;
    } else {
      j["error"] = r.error;
    }
    runs.push_back(j);
  }
  nlohmann::json out = {{"method", s.method}, {"label", s.label}, {"n_ok", s.n_ok}, {"runs", runs}};
  if (s.n_ok > 0) {
    out["mean"] = to_json(s.mean);
    out["std"] = to_json(s.stddev);
    out["validation_mean"] = to_json(s.validation_mean);
  }
  return out;
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, load_dataset(cfg.data));
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg, const LoadedData& data) {
  ExperimentSummary summary;
  summary.method = to_string(cfg.method);
  summary.label = method_label(cfg);
  const auto method_dir = cfg.outdir / sanitize(summary.method);
  std::vector<MetricsReport> tests, vals;
  for (int r = 0; r < cfg.n_runs; ++r) {
    const auto seed = cfg.seed_base + static_cast<std::uint64_t>(r);
    auto rec = run_once(cfg, data, seed, method_dir / std::to_string(seed));
    if (rec.ok) {
      tests.push_back(rec.report);
      vals.push_back(rec.validation);
      ++summary.n_ok;
    }
    summary.runs.push_back(std::move(rec));
  }
  summary.mean = aggregate(tests, false);
  summary.stddev = aggregate(tests, true);
  summary.validation_mean = aggregate(vals, false);
  for (auto* m : {&summary.mean, &summary.stddev, &summary.validation_mean}) {
    m->model_id = summary.label;
    m->config_hash = cfg.hash;
  }
  std::filesystem::create_directories(method_dir);
  auto doc = to_json(summary);
  doc["config_hash"] = cfg.hash;
  doc["config"] = config_json(cfg.values);
  write_text(method_dir / "summary.json", doc.dump(2) + "\n");
  return summary;
}

SweepAxis parse_sweep_axis(const std::string& text) {
  const auto [key, list] = parse_assignment(text);
  SweepAxis axis;
  axis.key = key;
  std::istringstream in(list);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (!part.empty()) axis.values.push_back(part);
  }
  if (axis.values.empty()) throw Error("nothing_to_sweep", "nothing to sweep");
  return axis;
}

SweepTable run_sweep(const ConfigValues& base, const std::vector<SweepAxis>& axes) {
  if (axes.empty()) throw Error("nothing_to_sweep", "nothing to sweep");
  for (const auto& a : axes) {
    if (a.values.empty()) throw Error("nothing_to_sweep", "nothing to sweep");
    if (!default_config().count(a.key)) throw Error("bad_config", "unknown sweep key '" + a.key + "'");
  }
  const auto base_resolved = resolve_config(base);
  const auto base_outdir = std::filesystem::path(value_of(base_resolved, "run.outdir"));
  std::map<std::string, LoadedData> data_cache;

  SweepTable table;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    SweepCell cell;
    auto values = base_resolved;
    std::string name;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const auto& val = axes[a].values[idx[a]];
      cell.setting[axes[a].key] = val;
      values[axes[a].key] = val;
      name += (name.empty() ? "" : "__") + sanitize(axes[a].key + "=" + val);
    }
    values["run.outdir"] = (base_outdir / "sweep" / name).generic_string();
    try {
      const auto cfg = experiment_from_values(values);
      ConfigValues data_keys;
      for (const auto& [k, v] : values)
        if (k.rfind("data.", 0) == 0 || k.rfind("sim.", 0) == 0) data_keys[k] = v;
      const auto key = config_hash(data_keys);
      if (!data_cache.count(key)) data_cache.emplace(key, load_dataset(cfg.data));
      cell.summary = run_experiment(cfg, data_cache.at(key));
      cell.ok = cell.summary.n_ok == cfg.n_runs;
      if (!cell.ok) cell.error = "some runs failed";
    } catch (const Error& e) {
      cell.error = e.code() + ": " + e.what();
    } catch (const std::exception& e) {
      cell.error = std::string("internal: ") + e.what();
    }
    table.cells.push_back(std::move(cell));
    std::size_t a = axes.size();
    while (a > 0 && ++idx[a - 1] == axes[a - 1].values.size()) idx[--a] = 0;
    if (a == 0) break;
  }
  std::filesystem::create_directories(base_outdir / "sweep");
  write_text(base_outdir / "sweep" / "sweep.json", to_json(table).dump(2) + "\n");
  return table;
}

nlohmann::json to_json(const SweepTable& table) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : table.cells) {
    nlohmann::json j = {{"setting", c.setting}, {"ok", c.ok}};
    if (!c.error.empty()) j["error"] = c.error;
    if (c.summary.n_ok > 0) {
      j["label"] = c.summary.label;
      j["mean"] = to_json(c.summary.mean);
      j["std"] = to_json(c.summary.stddev);
      j["validation_mean"] = to_json(c.summary.validation_mean);
    }
    cells.push_back(j);
  }
  return {{"cells", cells}};
}

std::string format_sweep(const SweepTable& table) {
  std::vector<std::string> labels;
  std::vector<MetricsReport> reports;
  std::ostringstream failed;
  for (const auto& c : table.cells) {
    std::string label;
    for (const auto& [k, v] : c.setting) label += (label.empty() ? "" : " ") + k + "=" + v;
    if (c.summary.n_ok > 0) {
      labels.push_back(label);
      reports.push_back(c.summary.mean);
    }
    if (!c.ok) failed << "FAILED " << label << ": " << c.error << '\n';
  }
  return format_table(labels, reports) + failed.str();
}

}  // namespace dtrec
