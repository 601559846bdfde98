#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "dtrec/rng.hpp"

namespace dtrec {

using UserId = std::int32_t;
using ItemId = std::int32_t;

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  int label = 1;
  // Position within the user's history; strictly increasing per user.
  std::int64_t order = 0;
  // Explicit rating when the source carried one, NaN otherwise.
  double rating = 0.0;
};

// Bijection between original string ids and dense 0-based ids.
class IdMap {
 public:
  std::int32_t size() const { return static_cast<std::int32_t>(originals_.size()); }
  std::int32_t intern(const std::string& original);
  std::int32_t to_dense(const std::string& original) const;
  const std::string& to_original(std::int32_t dense) const;
  bool contains(const std::string& original) const {
    return dense_.count(original) != 0;
  }

 private:
  std::vector<std::string> originals_;
  std::unordered_map<std::string, std::int32_t> dense_;
};

struct InteractionLog {
  // Sorted by (user, order).
  std::vector<Interaction> records;
  std::int32_t n_users = 0;
  std::int32_t n_items = 0;
  IdMap users;
  IdMap items;
  bool has_ratings = false;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

// Column layout of an interaction TSV.
//   rated:    user, item, rating, timestamp   (label = rating > 3)
//   labeled:  user, item, label in {0,1}, timestamp
//   implicit: user, item, timestamp          (label = 1)
// `automatic` picks implicit for 3 columns and rated for 4, or labeled
// when every third-column value is 0 or 1.
enum class FileSchema { automatic, rated, labeled, implicit };

FileSchema parse_schema(const std::string& name);

// Explicit rating threshold for implicit conversion: rating > 3 is a click.
inline constexpr double kRatingCutoff = 3.0;

InteractionLog load_interactions(const std::filesystem::path& path,
                                 FileSchema schema = FileSchema::automatic);
InteractionLog parse_interactions(std::istream& in, FileSchema schema,
                                  const std::string& source_name = "<stream>");

// Builds a log from records whose ids are already dense; id maps become the
// identity on decimal strings. Records are re-sorted by (user, order).
InteractionLog make_log(std::vector<Interaction> records, std::int32_t n_users,
                        std::int32_t n_items, bool has_ratings = false);

void write_interactions(const InteractionLog& log,
                        const std::filesystem::path& path,
                        FileSchema schema = FileSchema::labeled);

// Removes users and items with fewer than `min_count` records, repeated
// until nothing changes. Dense ids are recomputed.
InteractionLog filter_min_activity(const InteractionLog& log, int min_count);

struct SplitOptions {
  // Users with fewer than three records are dropped instead of rejected.
  bool drop_short_users = false;
};

struct SplitDataset {
  InteractionLog train;
  InteractionLog validation;
  InteractionLog test;
  std::int32_t n_users = 0;
  std::int32_t n_items = 0;
  // Per-user sorted item ids seen in train (any label).
  std::vector<std::vector<ItemId>> train_items;
  // Per-user sorted item ids of train positives.
  std::vector<std::vector<ItemId>> train_positives;
  // Per-user sorted item ids across train, validation and test.
  std::vector<std::vector<ItemId>> all_items;

  bool is_train_positive(UserId user, ItemId item) const;
};

SplitDataset leave_last_out_split(const InteractionLog& log,
                                  SplitOptions options = {});

struct LabeledPair {
  UserId user = 0;
  ItemId item = 0;
  double label = 0.0;
};

using Batch = std::vector<LabeledPair>;

// Uniform negative item for `user` that is not one of its train positives.
ItemId sample_negative_item(const SplitDataset& split, UserId user, Rng& rng);

// One batch of about `batch_size` records: train positives drawn without
// replacement, each followed by `negatives_per_positive` sampled negatives.
Batch sample_training_batch(const SplitDataset& split, int batch_size,
                            int negatives_per_positive, Rng& rng);

// A full pass over the train log with fresh negatives, shuffled and chunked.
// Observed label-0 train records are included as-is.
std::vector<Batch> sample_epoch(const SplitDataset& split, int batch_size,
                                int negatives_per_positive, Rng& rng);

}  // namespace dtrec
