#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

#include "dtrec/data.hpp"
#include "dtrec/error.hpp"
#include "dtrec/models.hpp"
#include "dtrec/rng.hpp"

namespace dtrec::test {

// Every user gets `per_user` distinct random items, all positive, in a
// random order.
inline SplitDataset random_split(std::int32_t n_users, std::int32_t n_items, int per_user,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Interaction> recs;
  std::vector<ItemId> all(static_cast<std::size_t>(n_items));
  std::iota(all.begin(), all.end(), 0);
  for (UserId u = 0; u < n_users; ++u) {
    const auto items = sample_without_replacement(all, static_cast<std::size_t>(per_user), rng);
    for (int k = 0; k < per_user; ++k)
      recs.push_back({u, items[static_cast<std::size_t>(k)], 1, k, std::nan("")});
  }
  return leave_last_out_split(make_log(std::move(recs), n_users, n_items));
}

// Central differences of `fn` at `x`.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& fn,
                                            std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = fn(x);
    x[i] = keep - h;
    const double down = fn(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// |a - b| / max(|a|, |b|) over whole vectors; 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

inline ModelShape tiny_shape(ModelKind kind, OutputRange out, std::int32_t users = 4,
                             std::int32_t items = 6) {
  ModelShape s;
  s.kind = kind;
  s.output = out;
  s.n_users = users;
  s.n_items = items;
  s.dim = 3;
  s.hidden = {5, 4};
  return s;
}

// Parameters moved away from the near-zero init so that every term is
// exercised.
inline ModelParams spread_model(const ModelShape& shape, Rng& rng, double scale = 0.5) {
  auto p = init_model(shape, rng);
  auto flat = flatten(p);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : flat) v += n(rng);
  unflatten(p, flat);
  return p;
}

}  // namespace dtrec::test

#define DTREC_CHECK_CODE(expr, expected)            \
  do {                                              \
    std::string dtrec_code_;                        \
    try {                                           \
      (void)(expr);                                 \
    } catch (const ::dtrec::Error& e) {             \
      dtrec_code_ = e.code();                       \
    }                                               \
    CHECK(dtrec_code_ == std::string(expected));    \
  } while (0)
