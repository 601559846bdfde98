#include "dtrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "dtrec/error.hpp"

namespace dtrec {

std::int32_t IdMap::intern(const std::string& original) {
  auto it = dense_.find(original);
  if (it != dense_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(originals_.size());
  originals_.push_back(original);
  dense_.emplace(original, id);
  return id;
}

std::int32_t IdMap::to_dense(const std::string& original) const {
  auto it = dense_.find(original);
  if (it == dense_.end()) throw Error("unknown_id", "unknown id '" + original + "'");
  return it->second;
}

const std::string& IdMap::to_original(std::int32_t dense) const {
  if (dense < 0 || dense >= size())
    throw Error("id_out_of_range", "dense id " + std::to_string(dense) + " out of range");
  return originals_[static_cast<std::size_t>(dense)];
}

FileSchema parse_schema(const std::string& name) {
  if (name == "auto" || name == "automatic") return FileSchema::automatic;
  if (name == "rated") return FileSchema::rated;
  if (name == "labeled") return FileSchema::labeled;
  if (name == "implicit") return FileSchema::implicit;
  throw Error("bad_schema", "unknown file schema '" + name + "'");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(const std::string& text, double& value) {
  if (text.empty()) return false;
  char* end = nullptr;
  value = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size() && std::isfinite(value);
}

Error parse_error(const std::string& source, std::size_t line_no,
                  const std::string& what) {
  return Error("parse_error", source + ": line " + std::to_string(line_no) + ": " + what);
}

struct RawRecord {
  std::int32_t user;
  std::int32_t item;
  int label;
  double rating;
  double timestamp;
  std::size_t line_no;
};

// Assigns per-user orders from (timestamp, line number) and sorts.
InteractionLog finalize(std::vector<RawRecord> raw, IdMap users, IdMap items,
                        bool has_ratings, const std::string& source) {
  std::sort(raw.begin(), raw.end(), [](const RawRecord& a, const RawRecord& b) {
    return std::tie(a.user, a.timestamp, a.line_no) <
           std::tie(b.user, b.timestamp, b.line_no);
  });
  std::set<std::tuple<std::int32_t, std::int32_t, double>> seen;
  InteractionLog log;
  log.records.reserve(raw.size());
  std::int64_t order = 0;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const auto& r = raw[k];
    if (!seen.emplace(r.user, r.item, r.timestamp).second) {
      throw Error("duplicate_interaction",
                  source + ": line " + std::to_string(r.line_no) +
                      ": duplicate (user, item, timestamp) triple");
    }
    if (k == 0 || raw[k - 1].user != r.user) order = 0;
    log.records.push_back({r.user, r.item, r.label, order++, r.rating});
  }
  log.n_users = users.size();
  log.n_items = items.size();
  log.users = std::move(users);
  log.items = std::move(items);
  log.has_ratings = has_ratings;
  return log;
}

}  // namespace

InteractionLog parse_interactions(std::istream& in, FileSchema schema,
                                  const std::string& source_name) {
  IdMap users;
  IdMap items;
  std::vector<RawRecord> raw;
  std::string line;
  std::size_t line_no = 0;
  FileSchema resolved = schema;
  // Four columns under `automatic` are ratings unless every third-column
  // value is 0 or 1, in which case they are labels.
  bool guessed_rated = false;
  bool all_binary = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split_tabs(line);
    if (resolved == FileSchema::automatic) {
      if (cols.size() == 4) {
        resolved = FileSchema::rated;
        guessed_rated = true;
      } else if (cols.size() == 3) {
        resolved = FileSchema::implicit;
      } else {
        throw parse_error(source_name, line_no, "expected 3 or 4 tab-separated columns");
      }
    }
    const std::size_t want = resolved == FileSchema::implicit ? 3 : 4;
    if (cols.size() != want) {
      throw parse_error(source_name, line_no,
                        "expected " + std::to_string(want) + " columns, got " +
                            std::to_string(cols.size()));
    }
    if (cols[0].empty() || cols[1].empty())
      throw parse_error(source_name, line_no, "empty user or item id");
    RawRecord rec{};
    rec.line_no = line_no;
    rec.rating = std::numeric_limits<double>::quiet_NaN();
    rec.label = 1;
    double ts = 0.0;
    if (!parse_double(cols[want - 1], ts))
      throw parse_error(source_name, line_no, "non-numeric timestamp '" + cols[want - 1] + "'");
    rec.timestamp = ts;
    if (resolved != FileSchema::implicit) {
      double value = 0.0;
      if (!parse_double(cols[2], value))
        throw parse_error(source_name, line_no, "non-numeric rating '" + cols[2] + "'");
      if (resolved == FileSchema::rated) {
        if (value != 0.0 && value != 1.0) all_binary = false;
        rec.rating = value;
        rec.label = value > kRatingCutoff ? 1 : 0;
      } else {
        if (value != 0.0 && value != 1.0)
          throw parse_error(source_name, line_no, "label must be 0 or 1");
        rec.label = static_cast<int>(value);
      }
    }
    rec.user = users.intern(cols[0]);
    rec.item = items.intern(cols[1]);
    raw.push_back(rec);
  }
  if (raw.empty()) throw Error("empty_log", source_name + ": no interactions");
  if (guessed_rated && all_binary) {
    resolved = FileSchema::labeled;
    for (auto& r : raw) {
      r.label = static_cast<int>(r.rating);
      r.rating = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return finalize(std::move(raw), std::move(users), std::move(items),
                  resolved == FileSchema::rated, source_name);
}

InteractionLog load_interactions(const std::filesystem::path& path,
                                 FileSchema schema) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "cannot open '" + path.string() + "'");
  return parse_interactions(in, schema, path.string());
}

InteractionLog make_log(std::vector<Interaction> records, std::int32_t n_users,
                        std::int32_t n_items, bool has_ratings) {
  InteractionLog log;
  for (const auto& r : records) {
    if (r.user < 0 || r.user >= n_users || r.item < 0 || r.item >= n_items)
      throw Error("id_out_of_range", "record id outside declared counts");
  }
  std::sort(records.begin(), records.end(), [](const Interaction& a, const Interaction& b) {
    return std::tie(a.user, a.order) < std::tie(b.user, b.order);
  });
  for (std::size_t k = 1; k < records.size(); ++k) {
    if (records[k].user == records[k - 1].user && records[k].order == records[k - 1].order)
      throw Error("duplicate_interaction", "duplicate order within user " +
                                               std::to_string(records[k].user));
  }
  for (std::int32_t u = 0; u < n_users; ++u) log.users.intern(std::to_string(u));
  for (std::int32_t i = 0; i < n_items; ++i) log.items.intern(std::to_string(i));
  log.records = std::move(records);
  log.n_users = n_users;
  log.n_items = n_items;
  log.has_ratings = has_ratings;
  return log;
}

void write_interactions(const InteractionLog& log, const std::filesystem::path& path,
                        FileSchema schema) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write '" + path.string() + "'");
  out.precision(17);
  for (const auto& r : log.records) {
    out << log.users.to_original(r.user) << '\t' << log.items.to_original(r.item) << '\t';
    switch (schema) {
      case FileSchema::rated:
        out << r.rating << '\t';
        break;
      case FileSchema::implicit:
        break;
      default:
        out << r.label << '\t';
    }
    out << r.order << '\n';
  }
}

InteractionLog filter_min_activity(const InteractionLog& log, int min_count) {
  if (min_count < 1) throw Error("bad_argument", "min_count must be >= 1");
  std::vector<char> keep(log.records.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<int> user_count(static_cast<std::size_t>(log.n_users), 0);
    std::vector<int> item_count(static_cast<std::size_t>(log.n_items), 0);
    for (std::size_t k = 0; k < log.records.size(); ++k) {
      if (!keep[k]) continue;
      ++user_count[static_cast<std::size_t>(log.records[k].user)];
      ++item_count[static_cast<std::size_t>(log.records[k].item)];
    }
    for (std::size_t k = 0; k < log.records.size(); ++k) {
      if (!keep[k]) continue;
      const auto& r = log.records[k];
      if (user_count[static_cast<std::size_t>(r.user)] < min_count ||
          item_count[static_cast<std::size_t>(r.item)] < min_count) {
        keep[k] = 0;
        changed = true;
      }
    }
  }

  // Surviving ids keep their relative dense order.
  std::vector<std::int32_t> user_remap(static_cast<std::size_t>(log.n_users), -1);
  std::vector<std::int32_t> item_remap(static_cast<std::size_t>(log.n_items), -1);
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    if (!keep[k]) continue;
    user_remap[static_cast<std::size_t>(log.records[k].user)] = 0;
    item_remap[static_cast<std::size_t>(log.records[k].item)] = 0;
  }
  InteractionLog out;
  out.has_ratings = log.has_ratings;
  for (std::int32_t u = 0; u < log.n_users; ++u)
    if (user_remap[static_cast<std::size_t>(u)] == 0)
      user_remap[static_cast<std::size_t>(u)] = out.users.intern(log.users.to_original(u));
  for (std::int32_t i = 0; i < log.n_items; ++i)
    if (item_remap[static_cast<std::size_t>(i)] == 0)
      item_remap[static_cast<std::size_t>(i)] = out.items.intern(log.items.to_original(i));
  for (std::size_t k = 0; k < log.records.size(); ++k) {
    if (!keep[k]) continue;
    auto r = log.records[k];
    r.user = user_remap[static_cast<std::size_t>(r.user)];
    r.item = item_remap[static_cast<std::size_t>(r.item)];
    out.records.push_back(r);
  }
  if (out.records.empty()) throw Error("empty_after_filter", "filtering removed all data");
  out.n_users = out.users.size();
  out.n_items = out.items.size();
  // Remapping is monotone, so the (user, order) sort is preserved.
  return out;
}

bool SplitDataset::is_train_positive(UserId user, ItemId item) const {
  const auto& v = train_positives[static_cast<std::size_t>(user)];
  return std::binary_search(v.begin(), v.end(), item);
}

namespace {

InteractionLog empty_like(const InteractionLog& log) {
  InteractionLog out;
  out.n_users = log.n_users;
  out.n_items = log.n_items;
  out.users = log.users;
  out.items = log.items;
  out.has_ratings = log.has_ratings;
  return out;
}

void sort_unique(std::vector<ItemId>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

SplitDataset leave_last_out_split(const InteractionLog& log, SplitOptions options) {
  SplitDataset split;
  split.train = empty_like(log);
  split.validation = empty_like(log);
  split.test = empty_like(log);
  split.n_users = log.n_users;
  split.n_items = log.n_items;
  const auto nu = static_cast<std::size_t>(log.n_users);
  split.train_items.assign(nu, {});
  split.train_positives.assign(nu, {});
  split.all_items.assign(nu, {});

  std::size_t begin = 0;
  while (begin < log.records.size()) {
    std::size_t end = begin;
    const UserId user = log.records[begin].user;
    while (end < log.records.size() && log.records[end].user == user) ++end;
    const std::size_t count = end - begin;
    if (count < 3) {
      if (!options.drop_short_users) {
        throw Error("short_user", "user '" + log.users.to_original(user) + "' has " +
                                      std::to_string(count) +
                                      " interactions; leave-last-out needs at least 3");
      }
      begin = end;
      continue;
    }
    // Records are sorted by order within the user.
    for (std::size_t k = begin; k + 2 < end; ++k) split.train.records.push_back(log.records[k]);
    split.validation.records.push_back(log.records[end - 2]);
    split.test.records.push_back(log.records[end - 1]);
    auto& train_items = split.train_items[static_cast<std::size_t>(user)];
    auto& positives = split.train_positives[static_cast<std::size_t>(user)];
    auto& all = split.all_items[static_cast<std::size_t>(user)];
    for (std::size_t k = begin; k < end; ++k) {
      const auto& r = log.records[k];
      all.push_back(r.item);
      if (k + 2 < end) {
        train_items.push_back(r.item);
        if (r.label == 1) positives.push_back(r.item);
      }
    }
    sort_unique(train_items);
    sort_unique(positives);
    sort_unique(all);
    begin = end;
  }
  if (split.test.records.empty())
    throw Error("empty_split", "no user has enough interactions for leave-last-out");
  return split;
}

ItemId sample_negative_item(const SplitDataset& split, UserId user, Rng& rng) {
  const auto& positives = split.train_positives[static_cast<std::size_t>(user)];
  const auto n_free = static_cast<std::int64_t>(split.n_items) -
                      static_cast<std::int64_t>(positives.size());
  if (n_free <= 0)
    throw Error("catalog_too_small", "no negative items available for user " +
                                         std::to_string(user));
  if (n_free * 4 >= split.n_items) {
    while (true) {
      const auto item = static_cast<ItemId>(uniform_int(rng, 0, split.n_items - 1));
      if (!std::binary_search(positives.begin(), positives.end(), item)) return item;
    }
  }
  // Dense positives: index directly into the complement.
  auto k = uniform_int(rng, 0, n_free - 1);
  ItemId item = 0;
  for (const auto p : positives) {
    if (item + k < p) break;
    k -= p - item;
    item = p + 1;
  }
  return static_cast<ItemId>(item + k);
}

namespace {

void append_with_negatives(const SplitDataset& split, const Interaction& r,
                           int negatives_per_positive, Rng& rng, Batch& out) {
  out.push_back({r.user, r.item, static_cast<double>(r.label)});
  if (r.label != 1) return;
  for (int k = 0; k < negatives_per_positive; ++k)
    out.push_back({r.user, sample_negative_item(split, r.user, rng), 0.0});
}

}  // namespace

Batch sample_training_batch(const SplitDataset& split, int batch_size,
                            int negatives_per_positive, Rng& rng) {
  if (negatives_per_positive < 0) throw Error("bad_argument", "negatives_per_positive must be >= 0");
  if (batch_size < 1) throw Error("bad_argument", "batch_size must be >= 1");
  std::vector<std::size_t> positives;
  for (std::size_t k = 0; k < split.train.records.size(); ++k)
    if (split.train.records[k].label == 1) positives.push_back(k);
  if (positives.empty()) throw Error("empty_train", "train split has no positives");
  const auto want = std::clamp<std::size_t>(
      static_cast<std::size_t>(batch_size / (1 + negatives_per_positive)), 1, positives.size());
  const auto chosen = sample_without_replacement(std::move(positives), want, rng);
  Batch batch;
  batch.reserve(want * static_cast<std::size_t>(1 + negatives_per_positive));
  for (const auto k : chosen)
    append_with_negatives(split, split.train.records[k], negatives_per_positive, rng, batch);
  return batch;
}

std::vector<Batch> sample_epoch(const SplitDataset& split, int batch_size,
                                int negatives_per_positive, Rng& rng) {
  if (negatives_per_positive < 0) throw Error("bad_argument", "negatives_per_positive must be >= 0");
  if (batch_size < 1) throw Error("bad_argument", "batch_size must be >= 1");
  if (split.train.records.empty()) throw Error("empty_train", "train split is empty");
  Batch all;
  all.reserve(split.train.records.size() * static_cast<std::size_t>(1 + negatives_per_positive));
  for (const auto& r : split.train.records)
    append_with_negatives(split, r, negatives_per_positive, rng, all);
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < all.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto stop = std::min(all.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(start),
                         all.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

}  // namespace dtrec
