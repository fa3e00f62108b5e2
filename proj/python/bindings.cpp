#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "relrefine/cost.hpp"
#include "relrefine/graph.hpp"
#include "relrefine/metrics.hpp"
#include "relrefine/pipeline.hpp"
#include "relrefine/scene_io.hpp"

namespace py = pybind11;
using namespace relrefine;

namespace {

RunConfig config_from(const std::string& ini) {
  if (ini.empty()) return RunConfig{};
  std::istringstream is(ini);
  return parse_config(is);
}

std::vector<Point2> points_from(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw std::invalid_argument("points must have shape (n, 2)");
  auto r = a.unchecked<2>();
  std::vector<Point2> pts(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) pts[i] = {r(i, 0), r(i, 1)};
  return pts;
}

}  // namespace

PYBIND11_MODULE(_relrefine, m) {
  m.doc() = "Detection refinement on simulated driving scenes";

  py::class_<Box3D>(m, "Box3D")
      .def(py::init<>())
      .def(py::init([](double cx, double cy, double cz, double l, double w, double h, double yaw) {
             Box3D b;
             b.cx = cx;
             b.cy = cy;
             b.cz = cz;
             b.length = l;
             b.width = w;
             b.height = h;
             b.yaw = yaw;
             return b;
           }),
           py::arg("cx"), py::arg("cy"), py::arg("cz") = 0.0, py::arg("length") = 1.0,
           py::arg("width") = 1.0, py::arg("height") = 1.0, py::arg("yaw") = 0.0)
      .def_readwrite("cx", &Box3D::cx)
      .def_readwrite("cy", &Box3D::cy)
      .def_readwrite("cz", &Box3D::cz)
      .def_readwrite("length", &Box3D::length)
      .def_readwrite("width", &Box3D::width)
      .def_readwrite("height", &Box3D::height)
      .def_readwrite("yaw", &Box3D::yaw)
      .def_readwrite("vx", &Box3D::vx)
      .def_readwrite("vy", &Box3D::vy)
      .def("__repr__", [](const Box3D& b) {
        std::ostringstream os;
        os << "Box3D(cx=" << b.cx << ", cy=" << b.cy << ", length=" << b.length
           << ", width=" << b.width << ", yaw=" << b.yaw << ")";
        return os.str();
      });

  m.def("bev_iou", &bev_iou, py::arg("a"), py::arg("b"));
  m.def("heading_delta", &heading_delta);

  m.def(
      "radius_graph",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> points, double r) {
        const auto pts = points_from(points);
        const SparseGraph g = build_radius_graph(pts, r);
        std::vector<std::vector<std::size_t>> out(g.n);
        for (std::size_t i = 0; i < g.n; ++i) {
          const auto nb = neighbors(g, i);
          out[i].assign(nb.begin(), nb.end());
        }
        return out;
      },
      py::arg("points"), py::arg("radius"),
      "Neighbor lists (ascending, self excluded) of the radius graph over (n, 2) centers.");

  m.def("count_intra", &count_intra, py::arg("n"), py::arg("c_x") = 128, py::arg("m") = 4,
        py::arg("avg_degree") = 6.0);
  m.def("count_inter", &count_inter, py::arg("n"), py::arg("seq_len"), py::arg("c_enc") = 256,
        py::arg("heads") = 16);
  m.def("count_dense_gnn", &count_dense_gnn, py::arg("n"), py::arg("seq_len"),
        py::arg("c_enc") = 256);

  m.def(
      "default_config", [] { return config_to_ini(RunConfig{}); },
      "The default run configuration as INI text.");

  m.def(
      "simulate",
      [](const std::string& path, const std::string& split, const std::string& config,
         std::uint64_t seed) {
        RunConfig cfg = config_from(config);
        cfg.seed = seed;
        if (split != "train" && split != "eval") throw std::invalid_argument("split must be train or eval");
        const auto frames = simulate(cfg, split == "train" ? Split::Train : Split::Eval);
        write_scene(path, frames);
        return frames.size();
      },
      py::arg("path"), py::arg("split") = "eval", py::arg("config") = "", py::arg("seed") = 1,
      "Writes a simulated scene (JSONL) and returns its frame count.");

  m.def(
      "evaluate_scene",
      [](const std::string& path) {
        const auto frames = read_scene(path);
        py::gil_scoped_release nogil;
        return metrics_report_json({evaluate(frames, "raw")});
      },
      py::arg("path"), "Metrics report (JSON text) of the detections in a scene file.");

  m.def(
      "run_pipeline",
      [](const std::string& config, std::uint64_t seed, const std::string& out_dir) {
        RunConfig cfg = config_from(config);
        cfg.seed = seed;
        keep_heap_warm();
        py::gil_scoped_release nogil;
        return run_pipeline(cfg, {}, out_dir).report_json;
      },
      py::arg("config") = "", py::arg("seed") = 1, py::arg("out_dir") = "",
      "simulate -> train -> track -> train -> evaluate; returns the report as JSON text.");
}
