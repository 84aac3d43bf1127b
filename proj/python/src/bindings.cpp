#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tractcloud/baselines.hpp"
#include "tractcloud/checkpoint.hpp"
#include "tractcloud/crl.hpp"
#include "tractcloud/errors.hpp"
#include "tractcloud/metrics.hpp"
#include "tractcloud/synthgen.hpp"
#include "tractcloud/trainer.hpp"
#include "tractcloud/tract_io.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace tractcloud;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T>
void take(const py::dict& d, const char* key, T& field) {
  if (d.contains(key)) field = d[key].cast<T>();
}

void reject_unknown(const py::dict& d, std::initializer_list<const char*> known) {
  for (const auto& item : d) {
    const auto key = item.first.cast<std::string>();
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown option '" + key + "'");
  }
}

SynthConfig synth_config(const py::dict& d) {
  reject_unknown(d, {"subjects", "seed", "streamlines_min", "streamlines_max", "points_min", "points_max", "noise",
                     "train_fraction", "write_labels", "a0", "a1", "a2", "region_radius", "region_offset_min",
                     "region_offset_max"});
  SynthConfig c;
  take(d, "subjects", c.subject_count);
  take(d, "seed", c.seed);
  take(d, "streamlines_min", c.streamlines_min);
  take(d, "streamlines_max", c.streamlines_max);
  take(d, "points_min", c.points_min);
  take(d, "points_max", c.points_max);
  take(d, "noise", c.noise_std);
  take(d, "train_fraction", c.train_fraction);
  take(d, "write_labels", c.write_labels);
  take(d, "a0", c.a0);
  take(d, "a1", c.a1);
  take(d, "a2", c.a2);
  take(d, "region_radius", c.critical_region.radius);
  take(d, "region_offset_min", c.regional_offset_min);
  take(d, "region_offset_max", c.regional_offset_max);
  return c;
}

TrainConfig train_config(const py::dict& d) {
  reject_unknown(d, {"epochs", "lr", "batch_pairs", "w", "points", "decay", "seed", "eval_every", "target"});
  TrainConfig c;
  take(d, "epochs", c.epochs);
  take(d, "lr", c.lr);
  take(d, "batch_pairs", c.batch_pairs);
  take(d, "w", c.loss_weight);
  take(d, "points", c.sample_points);
  take(d, "decay", c.weight_decay);
  take(d, "seed", c.seed);
  take(d, "eval_every", c.eval_every);
  if (d.contains("target")) {
    const auto t = d["target"].cast<std::string>();
    if (t == "raw") c.target_mode = TargetMode::raw;
    else if (t == "standardized") c.target_mode = TargetMode::standardized;
    else throw ConfigError("target must be raw or standardized");
  }
  return c;
}

py::array_t<double> table_array(const PointTable& t) {
  py::array_t<double> out({static_cast<py::ssize_t>(t.rows()), static_cast<py::ssize_t>(kPointChannels)});
  std::copy(t.values.begin(), t.values.end(), out.mutable_data());
  return out;
}

Tract tract_from_arrays(const std::string& id, const std::vector<std::pair<DoubleArray, DoubleArray>>& lines) {
  Tract t{id, {}};
  for (const auto& [pts, fa] : lines) {
    if (pts.ndim() != 2 || pts.shape(1) != 3) throw ShapeError("points must be n x 3");
    if (fa.ndim() != 1 || fa.shape(0) != pts.shape(0)) throw ShapeError("fa must have one value per point");
    Streamline s;
    for (py::ssize_t i = 0; i < pts.shape(0); ++i) {
      s.points.push_back({static_cast<float>(pts.at(i, 0)), static_cast<float>(pts.at(i, 1)),
                          static_cast<float>(pts.at(i, 2))});
      s.fa.push_back(static_cast<float>(fa.at(i)));
    }
    t.streamlines.push_back(std::move(s));
  }
  t.validate();
  return t;
}

Design design_from(const DoubleArray& x) {
  if (x.ndim() != 2) throw ShapeError("X must be two-dimensional");
  Design d;
  d.rows = static_cast<std::size_t>(x.shape(0));
  d.cols = static_cast<std::size_t>(x.shape(1));
  d.values.assign(x.data(), x.data() + x.size());
  return d;
}

py::dict model_dict(const LinearModel& m) {
  py::dict d;
  d["coefficients"] = m.raw_coefficients();
  d["intercept"] = m.raw_intercept();
  d["converged"] = m.converged;
  d["iterations"] = m.iterations;
  return d;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["mae"] = r.mae;
  d["mae_std"] = r.mae_std;
  d["r"] = r.pearson_r;
  d["degenerate"] = r.degenerate;
  d["n"] = r.n;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tractcloud, m) {
  m.doc() = "Tract point-cloud regression, critical region localization and baselines";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConsistencyError>(m, "ConsistencyError", base.ptr());
  py::register_exception<SingularMatrixError>(m, "SingularMatrixError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def(
      "synth",
      [](const fs::path& out, const py::dict& options) {
        const auto cfg = synth_config(options);
        cfg.validate();
        py::gil_scoped_release nogil;
        write_cohort(generate_cohort(cfg), out);
        return out / "manifest.csv";
      },
      py::arg("out"), py::arg("options") = py::dict(),
      "Generate a synthetic cohort under `out`; returns the manifest path.");

  m.def(
      "read_points",
      [](const fs::path& path) { return table_array(flatten_points(read_tract(path))); }, py::arg("path"),
      "Flattened P x 5 point table (x, y, z, fa, nos) of a WMPC file.");

  m.def(
      "write_tract",
      [](const fs::path& path, const std::vector<std::pair<DoubleArray, DoubleArray>>& streamlines) {
        write_tract(tract_from_arrays(path.stem().string(), streamlines), path);
      },
      py::arg("path"), py::arg("streamlines"), "Write [(points n x 3, fa n), ...] as a WMPC file.");

  m.def(
      "train",
      [](const fs::path& manifest, const fs::path& out, const py::dict& options) {
        const auto cfg = train_config(options);
        const auto rows = read_manifest(manifest);
        TrainResult result;
        {
          py::gil_scoped_release nogil;
          result = train(rows, cfg);
        }
        save_checkpoint(result.checkpoint, out);
        py::list log;
        for (const auto& e : result.log) {
          py::dict row;
          row["epoch"] = e.epoch;
          row["L_total"] = e.total;
          row["L_pre"] = e.pre;
          row["L_ps"] = e.ps;
          row["train_mae"] = e.train_mae;
          row["test_mae"] = e.test_mae ? py::cast(*e.test_mae) : py::none();
          row["test_r"] = e.test_r ? py::cast(*e.test_r) : py::none();
          log.append(row);
        }
        return log;
      },
      py::arg("manifest"), py::arg("out"), py::arg("options") = py::dict(),
      "Train on the manifest's train split, save the checkpoint to `out`, return the epoch log.");

  py::class_<Predictor>(m, "Predictor")
      .def(py::init([](const fs::path& path) { return Predictor(load_checkpoint(path)); }), py::arg("checkpoint"))
      .def(
          "predict",
          [](const Predictor& p, const fs::path& tract, std::size_t repeats, std::optional<std::uint64_t> seed) {
            return p.predict(read_tract(tract), repeats, seed);
          },
          py::arg("tract"), py::arg("repeats") = 1, py::arg("seed") = py::none())
      .def_property_readonly("sample_points", &Predictor::sample_points);

  m.def(
      "localize",
      [](const fs::path& checkpoint, const fs::path& tract, std::size_t set_size, std::size_t repeats,
         double top_fraction, std::uint64_t seed) {
        CrlConfig cfg{set_size, repeats, top_fraction, seed};
        CrlWeightMap map;
        {
          const auto ckpt = load_checkpoint(checkpoint);
          const auto t = read_tract(tract);
          py::gil_scoped_release nogil;
          map = localize(ckpt, t, cfg);
        }
        const std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(map.weights.size())};
        py::array_t<std::uint64_t> w(shape, map.weights.data());
        py::array_t<bool> crit(shape);
        for (std::size_t i = 0; i < map.critical.size(); ++i) crit.mutable_at(i) = map.critical[i] != 0;
        py::dict d;
        d["weights"] = w;
        d["critical"] = crit;
        return d;
      },
      py::arg("checkpoint"), py::arg("tract"), py::arg("set_size") = 2048, py::arg("repeats") = 10,
      py::arg("top_fraction") = 0.05, py::arg("seed") = 0, "Per-point CRL weights and the critical mask.");

  m.def(
      "evaluate",
      [](const std::vector<double>& pred, const std::vector<double>& truth) { return report_dict(evaluate(pred, truth)); },
      py::arg("pred"), py::arg("truth"));
  m.def(
      "pearson_r", [](const std::vector<double>& a, const std::vector<double>& b) { return pearson_r(a, b).r; },
      py::arg("a"), py::arg("b"));

  m.def(
      "mean_features", [](const fs::path& tract) { return mean_features(read_tract(tract)).values; },
      py::arg("tract"));
  m.def(
      "tract_profile",
      [](const fs::path& tract, std::size_t nodes) { return tract_profile(read_tract(tract), nodes).values; },
      py::arg("tract"), py::arg("nodes") = kProfileNodes);

  m.def(
      "fit_ols",
      [](const DoubleArray& x, const std::vector<double>& y, double jitter) {
        return model_dict(fit_ols(design_from(x), y, jitter));
      },
      py::arg("X"), py::arg("y"), py::arg("jitter") = 1e-10);
  m.def(
      "fit_elastic_net",
      [](const DoubleArray& x, const std::vector<double>& y, double alpha, double l1_ratio, std::size_t max_iter,
         double tol) { return model_dict(fit_elastic_net(design_from(x), y, alpha, l1_ratio, max_iter, tol)); },
      py::arg("X"), py::arg("y"), py::arg("alpha"), py::arg("l1_ratio") = 0.5, py::arg("max_iter") = 10000,
      py::arg("tol") = 1e-8);

  m.def(
      "run_baseline",
      [](const fs::path& manifest, const std::string& kind, const std::string& model, std::uint64_t seed) {
        BaselineOptions opts;
        opts.seed = seed;
        const auto report =
            run_baseline(read_manifest(manifest), parse_feature_kind(kind), parse_regressor_kind(model), opts);
        return py::module_::import("json").attr("loads")(report.to_json().dump());
      },
      py::arg("manifest"), py::arg("kind") = "mean", py::arg("model") = "lr", py::arg("seed") = 0);
}
