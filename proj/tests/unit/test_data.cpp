#include <doctest.h>

#include <map>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace dtrec;
using namespace dtrec::test;

namespace {

InteractionLog parse(const std::string& text, FileSchema schema = FileSchema::automatic) {
  std::istringstream in(text);
  return parse_interactions(in, schema, "t");
}

using Pair = std::pair<std::string, std::string>;

std::set<Pair> original_pairs(const InteractionLog& log) {
  std::set<Pair> out;
  for (const auto& r : log.records) out.insert({log.users.to_original(r.user), log.items.to_original(r.item)});
  return out;
}

// Iterate-until-stable over plain string pairs.
std::set<Pair> brute_filter(std::set<Pair> pairs, int k) {
  while (true) {
    std::map<std::string, int> uc, ic;
    for (const auto& [u, i] : pairs) {
      ++uc[u];
      ++ic[i];
    }
    std::set<Pair> kept;
    for (const auto& p : pairs)
      if (uc[p.first] >= k && ic[p.second] >= k) kept.insert(p);
    if (kept == pairs) return kept;
    pairs = kept;
  }
}

}  // namespace

TEST_CASE("parsing") {
  const auto log = parse("u1\ti1\t5\t10\nu1\ti2\t2\t11\nu2\ti1\t4\t3\n");
  CHECK(log.n_users == 2);
  CHECK(log.n_items == 2);
  CHECK(log.size() == 3);
  CHECK(log.has_ratings);
  CHECK(log.records[0].label == 1);
  CHECK(log.records[1].label == 0);
  CHECK(log.records[1].rating == 2.0);

  DTREC_CHECK_CODE(parse(""), "empty_log");
  DTREC_CHECK_CODE(parse("# only a comment\n"), "empty_log");
  try {
    parse("u1\ti1\tx\t5\n");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == "parse_error");
    CHECK(std::string(e.what()).find("line 1:") != std::string::npos);
  }
  DTREC_CHECK_CODE(parse("u1\ti1\t5\t1\nu1\ti1\t4\t1\n"), "duplicate_interaction");
  DTREC_CHECK_CODE(load_interactions("/nonexistent/file.tsv"), "missing_file");
}

TEST_CASE("schema detection") {
  const auto implicit = parse("a\tx\t1\nb\ty\t2\n");
  CHECK(implicit.records[0].label == 1);
  CHECK_FALSE(implicit.has_ratings);
  // Four columns of 0/1 values are labels, not ratings.
  const auto labeled = parse("a\tx\t1\t0\na\ty\t0\t1\n");
  CHECK_FALSE(labeled.has_ratings);
  CHECK(labeled.records[0].label == 1);
  CHECK(labeled.records[1].label == 0);
  const auto rated = parse("a\tx\t1\t0\na\ty\t4\t1\n");
  CHECK(rated.has_ratings);
  CHECK(rated.records[0].label == 0);
  DTREC_CHECK_CODE(parse("a\tx\t3\t0\n", FileSchema::labeled), "parse_error");
}

TEST_CASE("order ties break by line number and ids round-trip") {
  const auto log = parse("u\tb\t5\t7\nu\ta\t5\t7\nu\tc\t5\t1\n");
  REQUIRE(log.size() == 3);
  CHECK(log.items.to_original(log.records[0].item) == "c");
  CHECK(log.items.to_original(log.records[1].item) == "b");
  CHECK(log.items.to_original(log.records[2].item) == "a");
  for (std::int32_t i = 0; i < log.n_items; ++i) CHECK(log.items.to_dense(log.items.to_original(i)) == i);
}

TEST_CASE("min-activity filter matches the brute-force fixpoint") {
  // i3 survives the first item pass but loses u5 (1 record), then falls
  // below 2 and takes u4 with it.
  const std::string text =
      "u1\ti1\t5\t1\nu1\ti2\t5\t2\nu2\ti1\t5\t1\nu2\ti2\t5\t2\nu3\ti1\t5\t1\nu3\ti2\t5\t2\n"
      "u4\ti3\t5\t1\nu4\ti4\t5\t2\nu5\ti3\t5\t1\n";
  const auto log = parse(text);
  const auto filtered = filter_min_activity(log, 2);
  CHECK(original_pairs(filtered) == brute_filter(original_pairs(log), 2));
  CHECK(filtered.n_users == 3);
  CHECK(original_pairs(filter_min_activity(filtered, 2)) == original_pairs(filtered));
  DTREC_CHECK_CODE(filter_min_activity(log, 10), "empty_after_filter");

  Rng rng(3);
  std::ostringstream random_log;
  std::set<Pair> seen;
  for (int k = 0; k < 60; ++k) {
    const auto u = "u" + std::to_string(uniform_int(rng, 0, 14));
    const auto i = "i" + std::to_string(uniform_int(rng, 0, 19));
    if (seen.insert({u, i}).second) random_log << u << '\t' << i << "\t4\t" << k << '\n';
  }
  const auto rlog = parse(random_log.str());
  for (int kmin = 1; kmin <= 3; ++kmin)
    CHECK(original_pairs(filter_min_activity(rlog, kmin)) == brute_filter(original_pairs(rlog), kmin));
}

TEST_CASE("leave-last-out split agrees with a per-user sort") {
  Rng rng(8);
  std::vector<Interaction> recs;
  for (UserId u = 0; u < 10; ++u) {
    const auto n = uniform_int(rng, 3, 7);
    std::vector<ItemId> items(20);
    std::iota(items.begin(), items.end(), 0);
    items = sample_without_replacement(items, static_cast<std::size_t>(n), rng);
    for (int k = 0; k < n; ++k) recs.push_back({u, items[static_cast<std::size_t>(k)], 1, 100 - 7 * k, std::nan("")});
  }
  const auto log = make_log(recs, 10, 20);
  const auto split = leave_last_out_split(log);
  CHECK(split.train.size() + split.validation.size() + split.test.size() == log.size());
  for (UserId u = 0; u < 10; ++u) {
    std::vector<Interaction> mine;
    for (const auto& r : recs)
      if (r.user == u) mine.push_back(r);
    std::sort(mine.begin(), mine.end(), [](auto& a, auto& b) { return a.order > b.order; });
    CHECK(split.test.records[static_cast<std::size_t>(u)].item == mine[0].item);
    CHECK(split.validation.records[static_cast<std::size_t>(u)].item == mine[1].item);
    CHECK(split.train_items[static_cast<std::size_t>(u)].size() == mine.size() - 2);
  }

  const auto three = make_log({{0, 0, 1, 1}, {0, 1, 1, 2}, {0, 2, 1, 3}}, 1, 3);
  const auto s3 = leave_last_out_split(three);
  CHECK(s3.train.records[0].order == 1);
  CHECK(s3.validation.records[0].order == 2);
  CHECK(s3.test.records[0].order == 3);

  const auto short_log = make_log({{0, 0, 1, 1}, {0, 1, 1, 2}, {1, 0, 1, 1}, {1, 1, 1, 2}, {1, 2, 1, 3}}, 2, 3);
  DTREC_CHECK_CODE(leave_last_out_split(short_log), "short_user");
  SplitOptions lenient;
  lenient.drop_short_users = true;
  CHECK(leave_last_out_split(short_log, lenient).test.size() == 1);
}

TEST_CASE("negative sampling") {
  const auto split = random_split(6, 15, 8, 4);
  Rng a(9), b(9);
  const auto b1 = sample_training_batch(split, 64, 3, a);
  const auto b2 = sample_training_batch(split, 64, 3, b);
  REQUIRE(b1.size() == b2.size());
  for (std::size_t k = 0; k < b1.size(); ++k) {
    CHECK(b1[k].user == b2[k].user);
    CHECK(b1[k].item == b2[k].item);
  }
  int negatives = 0;
  for (const auto& p : b1) {
    if (p.label == 0.0) {
      ++negatives;
      CHECK_FALSE(split.is_train_positive(p.user, p.item));
    }
  }
  CHECK(negatives == 3 * (static_cast<int>(b1.size()) / 4));
  Rng c(1);
  for (const auto& p : sample_training_batch(split, 64, 0, c)) CHECK(p.label == 1.0);

  // Train positives covering the whole catalog leave nothing to sample.
  const auto full = leave_last_out_split(
      make_log({{0, 0, 1, 1}, {0, 1, 1, 2}, {0, 2, 1, 3}, {0, 0, 1, 4}, {0, 1, 1, 5}}, 1, 3));
  Rng d(2);
  DTREC_CHECK_CODE(sample_negative_item(full, 0, d), "catalog_too_small");
}
