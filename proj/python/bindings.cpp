#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dtrec/bandit.hpp"
#include "dtrec/error.hpp"
#include "dtrec/experiment.hpp"
#include "dtrec/metrics.hpp"
#include "dtrec/simulator.hpp"
#include "dtrec/trainer.hpp"
#include "dtrec/transport.hpp"

namespace py = pybind11;
using namespace dtrec;

namespace {

// JSON documents cross the boundary as Python objects via the json module.
py::object to_python(const nlohmann::json& doc) {
  return py::module_::import("json").attr("loads")(doc.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Transport-regularized recommendation: core bindings";

  static py::handle error = py::exception<Error>(m, "DtrecError", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (e.code() + ": " + e.what()).c_str());
    }
  });

  // Configs and experiments.
  m.def("default_config", &default_config);
  m.def("resolve_config", &resolve_config, py::arg("file"), py::arg("overrides") = ConfigValues{});
  m.def("load_config", [](const std::string& path) { return load_config(path); });
  m.def("config_hash", &config_hash);
  m.def(
      "run_experiment",
      [](const ConfigValues& overrides) {
        return to_python(to_json(run_experiment(experiment_from_values(resolve_config({}, overrides)))));
      },
      py::arg("overrides"), "Resolve defaults plus `overrides`, run every seed and return the summary.");

  // Metrics.
  m.def("hit_ndcg_at_rank", [](int rank, int k) {
    const auto r = hit_ndcg_at_rank(rank, k);
    return py::make_tuple(r.hit, r.ndcg);
  });
  m.def(
      "rel_at_k",
      [](const std::vector<double>& scores, int k, const std::vector<double>& relevance,
         const std::vector<ItemId>& exclusions) { return rel_at_k(scores, k, relevance, exclusions); },
      py::arg("scores"), py::arg("k"), py::arg("relevance"), py::arg("exclusions") = std::vector<ItemId>{});
  m.def(
      "rank_full",
      [](const std::vector<double>& scores, const std::vector<ItemId>& exclusions) {
        return rank_full(scores, exclusions);
      },
      py::arg("scores"), py::arg("exclusions") = std::vector<ItemId>{});

  // Transport.
  m.def(
      "exact_ot",
      [](const std::vector<double>& p, const std::vector<double>& q, const Eigen::MatrixXd& cost) {
        return exact_ot(p, q, cost);
      },
      py::arg("p"), py::arg("q"), py::arg("cost"));
  m.def(
      "scalar_game",
      [](double x0, double y0, double eta, double gamma, int steps, double curvature) {
        const auto t = scalar_game_gda(x0, y0, eta, gamma, steps, curvature);
        py::dict out;
        out["x"] = t.x;
        out["y"] = t.y;
        out["first_within"] = t.first_within;
        out["distance"] = t.distance;
        return out;
      },
      py::arg("x0") = 1.0, py::arg("y0") = 1.0, py::arg("eta") = 0.5, py::arg("gamma") = 10.0,
      py::arg("steps") = 5000, py::arg("curvature") = 0.1);

  // Bandits.
  m.def("builtin_bandits", &builtin_bandit_names);
  m.def("bandit_instance", [](const std::string& name) { return to_python(to_json(builtin_bandit(name))); });
  m.def(
      "consistency_check",
      [](const std::string& name, const std::vector<double>& lambdas, int resolution) {
        return to_python(to_json(consistency_check(builtin_bandit(name), lambdas, resolution)));
      },
      py::arg("instance"), py::arg("lambdas"), py::arg("resolution") = 21);
  m.def(
      "iw_diagnostic",
      [](const std::string& name, int n_samples, int replications, std::uint64_t seed) {
        const auto inst = builtin_bandit(name);
        Rng rng(seed);
        return to_python(to_json(iw_overlap_diagnostic(inst, inst.target, n_samples, replications, rng)));
      },
      py::arg("instance"), py::arg("n_samples") = 1000, py::arg("replications") = 200, py::arg("seed") = 0);

  // Simulator.
  m.def(
      "simulate_toy",
      [](std::int32_t users, std::int32_t items, std::uint64_t toy_seed, std::uint64_t sim_seed) {
        SimulationConfig cfg;
        cfg.seed = sim_seed;
        const auto ratings = make_toy_ratings(users, items, toy_seed);
        const auto res = simulate(ratings, cfg);
        py::dict out;
        out["relevance"] = Eigen::MatrixXd(res.truth.relevance);
        out["exposure"] = Eigen::MatrixXd(res.truth.exposure);
        out["source_ratio"] = source_click_ratio(ratings);
        out["realized_ratio"] = res.realized_ratio;
        out["n_clicks"] = res.log.size();
        return out;
      },
      py::arg("users") = 200, py::arg("items") = 300, py::arg("toy_seed") = 7, py::arg("sim_seed") = 0);
}
