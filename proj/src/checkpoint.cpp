#include "dtrec/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dtrec/error.hpp"

namespace dtrec {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

struct Layout {
  ModelKind kind;
  OutputRange output;
  std::int64_t n_users, n_items, dim;
  bool mlp_bias;
  std::vector<std::int64_t> widths;  // output width per MLP layer
};

Layout layout_of(const ModelParams& p) {
  Layout l{p.kind, p.output, p.n_users(), p.n_items(), p.dim(), false, {}};
  for (const auto& layer : p.mlp.layers) {
    l.widths.push_back(layer.weight.rows());
    l.mlp_bias = layer.bias.size() > 0;
  }
  return l;
}

ModelParams params_from(const Layout& l) {
  if (l.n_users < 1 || l.n_items < 1 || l.dim < 1)
    throw Error("bad_checkpoint", "invalid model shape");
  ModelParams p;
  p.kind = l.kind;
  p.output = l.output;
  p.user_table = EmbeddingTable::Zero(l.n_users, l.dim);
  p.item_table = EmbeddingTable::Zero(l.n_items, l.dim);
  if (l.kind == ModelKind::mcf) {
    p.user_bias = Eigen::VectorXd::Zero(l.n_users);
    p.item_bias = Eigen::VectorXd::Zero(l.n_items);
  }
  Eigen::Index fan_in = 2 * l.dim;
  for (const auto w : l.widths) {
    DenseLayer layer{Eigen::MatrixXd::Zero(w, fan_in),
                     l.mlp_bias ? Eigen::VectorXd::Zero(w) : Eigen::VectorXd()};
    p.mlp.layers.push_back(std::move(layer));
    fan_in = w;
  }
  return p;
}

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("bad_checkpoint", "truncated checkpoint");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1u << 20)) throw Error("bad_checkpoint", "implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error("bad_checkpoint", "truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint_binary(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write '" + path.string() + "'");
  out.write(kMagic, 4);
  put(out, kVersion);
  put_string(out, ckpt.config_hash);
  put<std::uint64_t>(out, ckpt.models.size());
  for (const auto& [name, p] : ckpt.models) {
    put_string(out, name);
    const auto l = layout_of(p);
    put<std::int32_t>(out, static_cast<std::int32_t>(l.kind));
    put<std::int32_t>(out, static_cast<std::int32_t>(l.output));
    put(out, l.n_users);
    put(out, l.n_items);
    put(out, l.dim);
    put<std::uint8_t>(out, l.mlp_bias ? 1 : 0);
    put<std::uint64_t>(out, l.widths.size());
    for (const auto w : l.widths) put(out, w);
    const auto flat = flatten(p);
    put<std::uint64_t>(out, flat.size());
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
  }
  if (!out) throw Error("io_error", "failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing_file", "cannot open '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw Error("bad_checkpoint", "'" + path.string() + "' is not a checkpoint");
  if (get<std::uint32_t>(in) != kVersion) throw Error("bad_checkpoint", "unsupported version");
  Checkpoint ckpt;
  ckpt.config_hash = get_string(in);
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t k = 0; k < count; ++k) {
    auto name = get_string(in);
    Layout l{};
    l.kind = static_cast<ModelKind>(get<std::int32_t>(in));
    l.output = static_cast<OutputRange>(get<std::int32_t>(in));
    l.n_users = get<std::int64_t>(in);
    l.n_items = get<std::int64_t>(in);
    l.dim = get<std::int64_t>(in);
    l.mlp_bias = get<std::uint8_t>(in) != 0;
    const auto n_layers = get<std::uint64_t>(in);
    for (std::uint64_t j = 0; j < n_layers; ++j) l.widths.push_back(get<std::int64_t>(in));
    auto p = params_from(l);
    const auto n = get<std::uint64_t>(in);
    std::vector<double> flat(n);
    in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw Error("bad_checkpoint", "truncated checkpoint");
    unflatten(p, flat);
    ckpt.models.emplace(std::move(name), std::move(p));
  }
  return ckpt;
}

void save_checkpoint_json(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["format"] = "dtrec-checkpoint";
  doc["version"] = kVersion;
  doc["config_hash"] = ckpt.config_hash;
  for (const auto& [name, p] : ckpt.models) {
    const auto l = layout_of(p);
    nlohmann::json m;
    m["kind"] = to_string(l.kind);
    m["output"] = static_cast<int>(l.output);
    m["n_users"] = l.n_users;
    m["n_items"] = l.n_items;
    m["dim"] = l.dim;
    m["mlp_bias"] = l.mlp_bias;
    m["mlp_widths"] = l.widths;
    m["values"] = flatten(p);
    doc["models"][name] = std::move(m);
  }
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write '" + path.string() + "'");
  out << doc.dump(1) << '\n';
}

Checkpoint load_checkpoint_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "cannot open '" + path.string() + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_checkpoint", std::string("invalid checkpoint json: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.config_hash = doc.value("config_hash", "");
  for (const auto& [name, m] : doc.at("models").items()) {
    Layout l{};
    l.kind = parse_model_kind(m.at("kind").get<std::string>());
    l.output = static_cast<OutputRange>(m.at("output").get<int>());
    l.n_users = m.at("n_users").get<std::int64_t>();
    l.n_items = m.at("n_items").get<std::int64_t>();
    l.dim = m.at("dim").get<std::int64_t>();
    l.mlp_bias = m.at("mlp_bias").get<bool>();
    l.widths = m.at("mlp_widths").get<std::vector<std::int64_t>>();
    auto p = params_from(l);
    unflatten(p, m.at("values").get<std::vector<double>>());
    ckpt.models.emplace(name, std::move(p));
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return path.extension() == ".json" ? load_checkpoint_json(path)
                                     : load_checkpoint_binary(path);
}

}  // namespace dtrec
