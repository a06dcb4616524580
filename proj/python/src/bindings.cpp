#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "singrav/apps.hpp"
#include "singrav/dataset.hpp"
#include "singrav/error.hpp"
#include "singrav/metrics.hpp"
#include "singrav/pyramid.hpp"
#include "singrav/renderer.hpp"
#include "singrav/trainer.hpp"
#include "singrav/volume.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace singrav {
namespace {

// Tensors cross the boundary as float32 numpy copies; no dependency on torch's python ABI.
py::array_t<float> to_numpy(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), sizeof(float) * c.numel());
  return out;
}

torch::Tensor from_numpy(py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

torch::Tensor from_numpy64(py::array_t<double, py::array::c_style | py::array::forcecast> a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

Bounds make_bounds(const std::array<double, 3>& lo, const std::array<double, 3>& hi) {
  Bounds b;
  b.lo = lo;
  b.hi = hi;
  return b;
}

Box make_box(const std::array<double, 3>& lo, const std::array<double, 3>& hi) {
  Box b;
  b.lo = lo;
  b.hi = hi;
  return b;
}

py::dict render_dict(const RenderOutput& r) {
  py::dict d;
  d["color"] = to_numpy(r.color);
  d["depth"] = to_numpy(r.depth);
  d["opacity"] = to_numpy(r.opacity);
  return d;
}

PyramidConfig pyramid_from_json(const std::string& text) {
  PyramidConfig c;
  if (!text.empty()) from_json(json::parse(text), c);
  c.validate();
  return c;
}

}  // namespace
}  // namespace singrav

PYBIND11_MODULE(_core, m) {
  using namespace singrav;
  m.doc() = "singrav core bindings";

  static py::exception<Error> base(m, "SingravError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string msg = std::string(errc_name(e.code())) + ": " + e.what();
      switch (e.code()) {
        case Errc::kInvalidArgument:
        case Errc::kUnsupportedConfig:
          PyErr_SetString(PyExc_ValueError, msg.c_str());
          break;
        case Errc::kNotFound:
          PyErr_SetString(PyExc_FileNotFoundError, msg.c_str());
          break;
        case Errc::kIo:
          PyErr_SetString(PyExc_OSError, msg.c_str());
          break;
        default:
          py::set_error(base, msg.c_str());
      }
    }
  });

  py::class_<Bounds>(m, "Bounds")
      .def(py::init(&make_bounds), py::arg("lo") = std::array<double, 3>{-1, -1, -1},
           py::arg("hi") = std::array<double, 3>{1, 1, 1})
      .def_readwrite("lo", &Bounds::lo)
      .def_readwrite("hi", &Bounds::hi)
      .def("__eq__", [](const Bounds& a, const Bounds& b) { return a == b; })
      .def("__repr__", [](const Bounds& b) { return "Bounds(" + json(b.lo).dump() + ", " + json(b.hi).dump() + ")"; });

  py::class_<Box>(m, "Box")
      .def(py::init(&make_box), py::arg("lo"), py::arg("hi"))
      .def_static("parse", &parse_box, py::arg("text"))
      .def_readwrite("lo", &Box::lo)
      .def_readwrite("hi", &Box::hi)
      .def("__repr__", [](const Box& b) { return json(b).dump(); });

  py::class_<RadianceVolume>(m, "Volume")
      .def(py::init([](py::array_t<float, py::array::c_style | py::array::forcecast> values, const Bounds& bounds) {
             return RadianceVolume(from_numpy(values), bounds);
           }),
           py::arg("values"), py::arg("bounds") = Bounds{})
      .def_static(
          "filled",
          [](std::array<int64_t, 3> dims, std::array<float, 4> value, const Bounds& bounds) {
            return RadianceVolume::filled(Dims{dims[0], dims[1], dims[2]}, value, bounds);
          },
          py::arg("dims"), py::arg("value"), py::arg("bounds") = Bounds{})
      .def_static("load", &load_sgrv, py::arg("path"))
      .def("save", [](const RadianceVolume& v, const std::filesystem::path& p) { save_sgrv(v, p); }, py::arg("path"))
      .def_static("decode", [](py::bytes b) { return decode_sgrv(std::string(b)); })
      .def("encode", [](const RadianceVolume& v) { return py::bytes(encode_sgrv(v)); })
      .def_property_readonly("values", [](const RadianceVolume& v) { return to_numpy(v.values()); })
      .def_property_readonly("bounds", &RadianceVolume::bounds)
      .def_property_readonly("dims",
                             [](const RadianceVolume& v) {
                               const auto d = v.dims();
                               return std::array<int64_t, 3>{d.w, d.h, d.u};
                             })
      .def("voxel_center", &RadianceVolume::voxel_center)
      .def("voxel_size", &RadianceVolume::voxel_size)
      .def("bitwise_equal", &RadianceVolume::bitwise_equal)
      .def(
          "sample",
          [](const RadianceVolume& v, py::array_t<double, py::array::c_style | py::array::forcecast> points) {
            return to_numpy(sample_trilinear(v, from_numpy64(points).to(v.values().dtype())));
          },
          py::arg("points"))
      .def("resample", [](const RadianceVolume& v, std::array<int64_t, 3> d) {
        return resample_volume(v, Dims{d[0], d[1], d[2]});
      });

  py::class_<Camera>(m, "Camera")
      .def(py::init([](int64_t width, int64_t height, double fov_deg, double near, double far) {
             Camera c;
             c.width = width;
             c.height = height;
             c.fov_deg = fov_deg;
             c.near = near;
             c.far = far;
             return c;
           }),
           py::arg("width") = 32, py::arg("height") = 32, py::arg("fov_deg") = 33.40, py::arg("near") = 1.5,
           py::arg("far") = 5.5)
      .def_static(
          "look_at",
          [](std::array<double, 3> eye, std::array<double, 3> target, std::array<double, 3> up, int64_t width,
             int64_t height, double fov_deg, double near, double far) {
            Camera c;
            c.pose = look_at(eye, target, up);
            c.width = width;
            c.height = height;
            c.fov_deg = fov_deg;
            c.near = near;
            c.far = far;
            c.validate();
            return c;
          },
          py::arg("eye"), py::arg("target") = std::array<double, 3>{0, 0, 0},
          py::arg("up") = std::array<double, 3>{0, 0, 1}, py::arg("width") = 32, py::arg("height") = 32,
          py::arg("fov_deg") = 33.40, py::arg("near") = 1.5, py::arg("far") = 5.5)
      .def_readwrite("width", &Camera::width)
      .def_readwrite("height", &Camera::height)
      .def_readwrite("fov_deg", &Camera::fov_deg)
      .def_readwrite("near", &Camera::near)
      .def_readwrite("far", &Camera::far)
      .def_readwrite("pose", &Camera::pose)
      .def_property_readonly("position", &Camera::position)
      .def_property_readonly("forward", &Camera::forward)
      .def("focal", &Camera::focal)
      .def("validate", &Camera::validate)
      .def("to_json", [](const Camera& c) { return json(c).dump(); })
      .def_static("from_json", [](const std::string& s) { return json::parse(s).get<Camera>(); });

  m.def(
      "render",
      [](const RadianceVolume& v, const Camera& c, int64_t samples) {
        RaySampleSpec spec;
        spec.samples = samples;
        torch::NoGradGuard guard;
        return render_dict(render(v, c, spec));
      },
      py::arg("volume"), py::arg("camera"), py::arg("samples") = 64,
      "Differentiable volume rendering; returns color [3,H,W], depth and opacity [H,W].");

  m.def("csg_grid", [](std::array<int64_t, 3> d) { return to_numpy(make_csg_grid(Dims{d[0], d[1], d[2]})); });

  // editing
  m.def("default_empty_sample", &default_empty_sample);
  m.def("voxel_range", [](const RadianceVolume& v, const Box& b) {
    const auto r = voxel_range(v, b);
    return std::make_pair(r.begin, r.end);
  });
  m.def(
      "edit_remove",
      [](const RadianceVolume& v, const Box& b, std::optional<VoxelValue> empty) {
        return edit_remove(v, b, empty ? *empty : default_empty_sample(v));
      },
      py::arg("volume"), py::arg("box"), py::arg("empty") = py::none());
  m.def("edit_duplicate", &edit_duplicate, py::arg("volume"), py::arg("src"), py::arg("dst"));
  m.def(
      "edit_move",
      [](const RadianceVolume& v, const Box& s, const Box& d, std::optional<VoxelValue> empty) {
        return edit_move(v, s, d, empty ? *empty : default_empty_sample(v));
      },
      py::arg("volume"), py::arg("src"), py::arg("dst"), py::arg("empty") = py::none());
  m.def(
      "compose",
      [](const std::vector<std::pair<RadianceVolume, Box>>& sources, const RadianceVolume& target,
         const std::vector<Box>& destinations) {
        std::vector<ComposeSource> src;
        for (const auto& [v, b] : sources) src.push_back({v, b});
        return compose(src, target, destinations);
      },
      py::arg("sources"), py::arg("target"), py::arg("destinations"));

  m.def(
      "export_mesh",
      [](const RadianceVolume& v, double threshold, const std::string& format) {
        const auto mesh = export_mesh(v, threshold);
        if (format == "obj") return py::bytes(encode_obj(mesh));
        if (format == "stl") return py::bytes(encode_stl(mesh));
        fail(Errc::kInvalidArgument, "mesh format must be obj or stl");
      },
      py::arg("volume"), py::arg("threshold") = 0.5, py::arg("format") = "obj");

  // pyramid and generation
  m.def(
      "scale_schedule",
      [](const std::string& config_json) {
        const auto s = scale_schedule(pyramid_from_json(config_json));
        py::dict d;
        d["volume_res"] = s.volume_res;
        d["image_res"] = s.image_res;
        d["final_image_res"] = s.final_image_res;
        d["ray_samples"] = s.ray_samples;
        return d;
      },
      py::arg("config_json") = "");
  m.def("default_pyramid_config", [] { return json(PyramidConfig{}).dump(); });

  py::class_<GeneratorStack>(m, "GeneratorStack")
      .def(py::init([](const std::string& config_json, uint64_t seed) {
             return GeneratorStack(pyramid_from_json(config_json), seed);
           }),
           py::arg("config_json") = "", py::arg("seed") = 0)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("sample",
           [](GeneratorStack& s, uint64_t seed) {
             torch::NoGradGuard guard;
             return sample_scene(s, seed).volume;
           },
           py::arg("seed"))
      .def("reconstruction", [](GeneratorStack& s) {
        torch::NoGradGuard guard;
        return reconstruction_volume(s);
      })
      .def(
          "render",
          [](GeneratorStack& s, const RadianceVolume& v, const Camera& c, int64_t samples) {
            torch::NoGradGuard guard;
            return to_numpy(render_final(s, v, c, samples));
          },
          py::arg("volume"), py::arg("camera"), py::arg("samples") = 0)
      .def(
          "harmonize",
          [](GeneratorStack& s, const RadianceVolume& v, std::optional<uint64_t> seed) {
            torch::NoGradGuard guard;
            return harmonize(s, v, seed);
          },
          py::arg("volume"), py::arg("fresh_noise_seed") = py::none());

  // data
  m.def(
      "synthetic_scene",
      [](const std::string& kind, int64_t volume_res, int64_t views, int64_t image_res, int64_t samples,
         uint64_t seed) {
        SyntheticOptions o;
        o.kind = parse_scene_kind(kind);
        o.volume_res = volume_res;
        o.rig.count = views;
        o.rig.width = image_res;
        o.rig.height = image_res;
        o.rig.seed = seed;
        o.samples = samples;
        o.seed = seed;
        torch::NoGradGuard guard;
        auto scene = make_synthetic_scene(o);
        py::list out;
        for (const auto& v : scene.dataset.views) {
          py::dict d;
          d["camera"] = v.camera;
          d["rgb"] = to_numpy(v.rgb);
          if (v.depth) d["depth"] = to_numpy(*v.depth);
          out.append(d);
        }
        return py::make_tuple(scene.volume, out);
      },
      py::arg("kind") = "spheres", py::arg("volume_res") = 32, py::arg("views") = 8, py::arg("image_res") = 64,
      py::arg("samples") = 128, py::arg("seed") = 0);

  // metrics
  m.def(
      "sifid",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
         py::array_t<double, py::array::c_style | py::array::forcecast> b, double eps) {
        return sifid(from_numpy64(a), from_numpy64(b), eps);
      },
      py::arg("features_a"), py::arg("features_b"), py::arg("eps") = 1e-6,
      "Frechet distance between Gaussian fits of two feature sets laid out [channels, positions].");
  m.def("sha256", [](py::bytes b) { return sha256_hex(std::string(b)); });
}
