#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>
#include <vector>

#include "ssd/config.hpp"
#include "ssd/data.hpp"
#include "ssd/harness.hpp"
#include "ssd/memory.hpp"
#include "ssd/summarizer.hpp"
#include "ssd/verify.hpp"

namespace py = pybind11;

// The bindings compile against the 64-bit core; runs requesting f32 go to the
// 32-bit build, declared here by hand.
namespace ssd::f32 {
ExperimentResult run_experiment(const RunConfig& config, std::ostream* log);
std::vector<AblationRow> ablation_suite(const RunConfig& config, std::ostream* log);
}  // namespace ssd::f32

namespace {

using namespace ssd;

RunConfig to_config(const std::map<std::string, py::object>& values) {
  ConfigMap map;
  for (const auto& [k, v] : values) {
    if (py::isinstance<py::bool_>(v)) {
      map[k] = v.cast<bool>() ? "true" : "false";
    } else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      std::string joined;
      for (const auto& item : v) joined += (joined.empty() ? "" : ",") + py::str(item).cast<std::string>();
      map[k] = joined;
    } else {
      map[k] = py::str(v).cast<std::string>();
    }
  }
  RunConfig c;
  c.apply(map);
  c.check();
  return c;
}

py::dict experiment_dict(const ExperimentResult& r) {
  py::dict out;
  py::list seeds;
  for (const auto& s : r.runs) {
    py::dict d;
    d["seed"] = s.seed;
    d["avg_end"] = s.metrics.average_end();
    d["summarize_events"] = s.summarize_events;
    d["summarized_slots"] = s.summarized_slots;
    d["filled"] = s.filled;
    d["violations"] = s.violations;
    d["seconds"] = s.seconds;
    d["metrics_csv"] = s.metrics.to_csv();
    seeds.append(d);
  }
  out["runs"] = seeds;
  out["mean"] = r.average_end.mean;
  out["std"] = r.average_end.stddev;
  return out;
}

py::dict run(const std::map<std::string, py::object>& values) {
  const RunConfig c = to_config(values);
  py::gil_scoped_release release;
  const auto r = c.precision == "f64" ? f64::run_experiment(c, nullptr) : f32::run_experiment(c, nullptr);
  py::gil_scoped_acquire acquire;
  return experiment_dict(r);
}

py::dict ablate(const std::map<std::string, py::object>& values) {
  const RunConfig c = to_config(values);
  std::vector<AblationRow> rows;
  {
    py::gil_scoped_release release;
    rows = c.precision == "f64" ? f64::ablation_suite(c, nullptr) : f32::ablation_suite(c, nullptr);
  }
  py::dict out;
  for (const auto& row : rows) out[py::str(row.name)] = experiment_dict(row.result);
  out["csv"] = ablation_csv(rows);
  return out;
}

/// (images [N,C,H,W] float64, labels [N]) for the train and test splits.
py::tuple synthetic(int classes, int per_class, int test_per_class, int size, std::uint64_t seed, double noise) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.per_class = per_class;
  spec.test_per_class = test_per_class;
  spec.shape = {3, size, size};
  spec.seed = seed;
  spec.noise = noise;
  const Dataset d = generate_synthetic(spec);
  auto split = [&](const std::vector<Example>& ex) {
    py::array_t<double> images({static_cast<py::ssize_t>(ex.size()), py::ssize_t{3}, py::ssize_t{size},
                                py::ssize_t{size}});
    py::array_t<int> labels(static_cast<py::ssize_t>(ex.size()));
    auto im = images.mutable_data();
    auto lb = labels.mutable_data();
    const auto per = static_cast<std::size_t>(spec.shape.numel());
    for (std::size_t i = 0; i < ex.size(); ++i) {
      std::copy(ex[i].pixels->begin(), ex[i].pixels->end(), im + i * per);
      lb[i] = ex[i].label;
    }
    return py::make_tuple(images, labels);
  };
  return py::make_tuple(split(d.train), split(d.test));
}

py::list verify(std::uint64_t seed) {
  py::list out;
  const CheckOutcome checks[] = {verify_gradients(seed), verify_second_order(seed + 1),
                                 verify_identity_collapse(seed + 2), verify_reservoir(seed + 3),
                                 verify_summarization_descent(seed + 4)};
  for (const auto& c : checks) out.append(py::make_tuple(c.name, c.passed, c.detail));
  return out;
}

}  // namespace

PYBIND11_MODULE(ssd_stream, m) {
  m.doc() = "Online class-incremental learning with a summarized replay memory";
  m.def("config_keys", [] {
    std::vector<std::string> keys;
    for (const auto& k : config_keys()) keys.push_back(k.name);
    return keys;
  });
  m.def("default_config", [] { return RunConfig().to_map(); });
  m.def("run", &run, py::arg("config"), "Train every configured seed; returns per-seed results, mean and std.");
  m.def("ablate", &ablate, py::arg("config"), "The none / D / D+S / D+S+P component table.");
  m.def("generate_synthetic", &synthetic, py::arg("classes") = 10, py::arg("per_class") = 500,
        py::arg("test_per_class") = 100, py::arg("size") = 16, py::arg("seed") = 7, py::arg("noise") = 0.08);
  m.def("per_class_budget", [](std::int64_t capacity, int classes) { return f64::per_class_budget(capacity, classes); });
  m.def("pixel_learning_rate", &f64::pixel_learning_rate, py::arg("images_per_class"));
  m.def("verify", &verify, py::arg("seed") = 0, "Run the numeric self-checks in 64-bit precision.");
}
