// Python bindings: the pipeline commands, the run config and the scoring
// metrics. Masks cross the boundary as numpy integer arrays, 2D (y, x) or
// 3D (z, y, x); reports come back as plain dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nnqc/config.hpp"
#include "nnqc/errors.hpp"
#include "nnqc/metrics.hpp"
#include "nnqc/pipeline.hpp"

namespace py = pybind11;
using namespace nnqc;

namespace {

using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

MaskGrid2D to_mask2d(const IntArray& arr) {
  if (arr.ndim() != 2) throw ShapeError("expected a 2D integer mask array");
  MaskGrid2D m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), m.data.begin());
  return m;
}

MaskGrid3D to_mask3d(const IntArray& arr) {
  if (arr.ndim() != 3)
    throw ShapeError("expected a 3D integer mask array (z, y, x)");
  // Grid3D stores x fastest, matching a C-ordered (z, y, x) array.
  MaskGrid3D m(static_cast<int>(arr.shape(2)), static_cast<int>(arr.shape(1)),
               static_cast<int>(arr.shape(0)));
  std::copy(arr.data(), arr.data() + arr.size(), m.data.begin());
  return m;
}

py::dict report_to_dict(const metrics::QCReport& r) {
  py::list pairs;
  for (const auto& p : r.pairs) {
    py::dict d;
    d["subject_id"] = p.subject_id;
    d["metric"] = p.metric;
    d["tag"] = p.tag;
    d["pseudo_score"] = p.pseudo_score;
    d["real_score"] = p.real_score;
    d["real_available"] = p.real_available;
    d["flagged"] = p.flagged;
    pairs.append(d);
  }
  py::dict summary;
  const auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) summary[key] = *v;
  };
  put("pearson_dsc", r.pearson_dsc);
  put("mae_dsc", r.mae_dsc);
  put("pearson_hd95", r.pearson_hd95);
  put("mae_hd95", r.mae_hd95);
  put("kendall_tau", r.kendall);

  py::dict out;
  out["pairs"] = pairs;
  out["summary"] = summary;
  out["extra"] = r.extra;
  out["t_test_variant"] = r.t_test_variant;
  return out;
}

double dsc_any(const IntArray& a, const IntArray& b) {
  if (a.ndim() == 2) return metrics::dsc(to_mask2d(a), to_mask2d(b));
  return metrics::dsc(to_mask3d(a), to_mask3d(b));
}

py::tuple hd95_any(const IntArray& a, const IntArray& b,
                   const std::vector<double>& spacing) {
  metrics::Hd95Result r;
  if (a.ndim() == 2) {
    const double sx = spacing.empty() ? 1.0 : spacing[0];
    const double sy = spacing.size() > 1 ? spacing[1] : sx;
    r = metrics::hd95(to_mask2d(a), to_mask2d(b), sx, sy);
  } else {
    Spacing s{1.0, 1.0, 1.0};
    for (std::size_t i = 0; i < std::min<std::size_t>(3, spacing.size()); ++i)
      s[i] = spacing[i];
    r = metrics::hd95(to_mask3d(a), to_mask3d(b), s);
  }
  return py::make_tuple(r.value, r.defined());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "segmentation QC via pseudo-ground-truth restoration";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<PrerequisiteError>(m, "PrerequisiteError",
                                            PyExc_RuntimeError);
  py::register_exception<TrainingDivergence>(m, "TrainingDivergence",
                                             PyExc_RuntimeError);
  py::register_exception<BandUnreachable>(m, "BandUnreachable",
                                          PyExc_RuntimeError);

  py::class_<config::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("load", &config::RunConfig::load, py::arg("path"))
      .def_static("from_yaml", &config::RunConfig::from_yaml, py::arg("text"))
      .def("to_yaml", &config::RunConfig::to_yaml)
      .def("digest", &config::RunConfig::digest)
      .def("validate", &config::RunConfig::validate)
      .def_readwrite("dataset_name", &config::RunConfig::dataset_name)
      .def_readwrite("dataset_dir", &config::RunConfig::dataset_dir)
      .def_readwrite("out_dir", &config::RunConfig::out_dir)
      .def_readwrite("seed", &config::RunConfig::seed)
      .def_readwrite("eval_fraction", &config::RunConfig::eval_fraction);

  // pipeline stages (release the GIL: training runs for minutes)
  m.def("phantom_gen", &pipeline::cmd_phantom_gen, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("fingerprint", &pipeline::cmd_fingerprint, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("train_vae", &pipeline::cmd_train_vae, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("train_ldm", &pipeline::cmd_train_ldm, py::arg("config"),
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "qc",
      [](const config::RunConfig& cfg, const std::string& image,
         const std::string& mask, const std::string& gt,
         const std::string& metric, int steps, std::uint64_t seed,
         const std::string& out, bool force, bool save_pgt) {
        pipeline::QcOptions opt;
        opt.image_path = image;
        opt.mask_path = mask;
        opt.gt_path = gt;
        opt.metric = metric;
        opt.steps = steps;
        opt.seed = seed;
        opt.out_prefix = out;
        opt.force = force;
        opt.save_pgt = save_pgt;
        metrics::QCReport report;
        {
          py::gil_scoped_release release;
          report = pipeline::cmd_qc(cfg, opt);
        }
        return report_to_dict(report);
      },
      py::arg("config"), py::arg("image"), py::arg("mask"),
      py::arg("gt") = "", py::arg("metric") = "all", py::arg("steps") = 0,
      py::arg("seed") = 0, py::arg("out") = "", py::arg("force") = false,
      py::arg("save_pgt") = false,
      "Score one mask volume against a freshly sampled pseudo-GT.");

  const auto eval_like = [](auto command) {
    return [command](const config::RunConfig& cfg, const std::string& metric,
                     int steps, std::uint64_t seed, const std::string& out,
                     bool force) {
      pipeline::EvaluateOptions opt;
      opt.metric = metric;
      opt.steps = steps;
      opt.seed = seed;
      opt.out_prefix = out;
      opt.force = force;
      metrics::QCReport report;
      {
        py::gil_scoped_release release;
        report = command(cfg, opt);
      }
      return report_to_dict(report);
    };
  };
  m.def("evaluate", eval_like(&pipeline::cmd_evaluate), py::arg("config"),
        py::arg("metric") = "all", py::arg("steps") = 0, py::arg("seed") = 0,
        py::arg("out") = "", py::arg("force") = false,
        "Pseudo-vs-real agreement over the eval split.");
  m.def("rank", eval_like(&pipeline::cmd_rank), py::arg("config"),
        py::arg("metric") = "all", py::arg("steps") = 0, py::arg("seed") = 0,
        py::arg("out") = "", py::arg("force") = false,
        "Rank synthetic models without ground truth.");

  // metrics on numpy masks
  m.def("dsc", &dsc_any, py::arg("a"), py::arg("b"),
        "Mean foreground Dice between two integer masks, 2D (y, x) or 3D "
        "(z, y, x).");
  m.def("hd95", &hd95_any, py::arg("a"), py::arg("b"),
        py::arg("spacing") = std::vector<double>{},
        "(value, defined) 95th-percentile boundary distance in mm.");
  m.def("pearson_r", &metrics::pearson_r, py::arg("x"), py::arg("y"));
  m.def("mae", &metrics::mae, py::arg("x"), py::arg("y"));
  m.def("kendall_tau", &metrics::kendall_tau, py::arg("a"), py::arg("b"));
}
