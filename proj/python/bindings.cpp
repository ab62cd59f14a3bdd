#include <optional>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "precodec/codec.hpp"
#include "precodec/config.hpp"
#include "precodec/gradcheck.hpp"
#include "precodec/imageio.hpp"
#include "precodec/metrics.hpp"
#include "precodec/pipeline.hpp"
#include "precodec/rarn.hpp"
#include "precodec/resample.hpp"
#include "precodec/synth.hpp"
#include "precodec/trainer.hpp"

namespace py = pybind11;
using namespace precodec;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// [C,H,W] or [H,W] array -> [1,C,H,W] tensor.
Tensor to_tensor(const F64& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw InvalidShape("expected a [C,H,W] or [H,W] array");
  const Index c = a.ndim() == 3 ? a.shape(0) : 1;
  const Index h = a.shape(a.ndim() - 2), w = a.shape(a.ndim() - 1);
  return Tensor::from({1, c, h, w}, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t, bool squeeze_channel) {
  const Shape& s = t.shape();
  std::vector<py::ssize_t> shape;
  if (!(squeeze_channel && s[1] == 1)) shape.push_back(s[1]);
  shape.push_back(s[2]);
  shape.push_back(s[3]);
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Filter filter_of(const std::string& name) {
  if (name == "bicubic") return Filter::kBicubic;
  if (name == "lanczos") return Filter::kLanczos;
  throw ConfigError("filter must be 'bicubic' or 'lanczos', got '" + name + "'");
}

RdCurve curve_of(const std::vector<double>& rates, const std::vector<double>& quality) {
  if (rates.size() != quality.size()) throw InvalidArgument("rates and qualities differ in length");
  RdCurve c;
  for (std::size_t i = 0; i < rates.size(); ++i) c.points.push_back({rates[i], quality[i], {}});
  c.validate();
  return c;
}

py::array_t<std::uint8_t> plane_array(const std::vector<std::uint8_t>& p, int w, int h) {
  py::array_t<std::uint8_t> a({h, w});
  std::copy(p.begin(), p.end(), a.mutable_data());
  return a;
}

Frame frame_of(const U8& y, const U8& u, const U8& v) {
  if (y.ndim() != 2 || u.ndim() != 2 || v.ndim() != 2) throw InvalidShape("planes must be 2-D");
  Frame f(int(y.shape(1)), int(y.shape(0)));
  if (u.shape(0) != f.chroma_height() || u.shape(1) != f.chroma_width() || v.shape(0) != f.chroma_height() ||
      v.shape(1) != f.chroma_width())
    throw InvalidShape("chroma planes must be ceil(H/2) x ceil(W/2)");
  f.y.assign(y.data(), y.data() + y.size());
  f.u.assign(u.data(), u.data() + u.size());
  f.v.assign(v.data(), v.data() + v.size());
  return f;
}

py::tuple frame_tuple(const Frame& f) {
  return py::make_tuple(plane_array(f.y, f.width, f.height), plane_array(f.u, f.chroma_width(), f.chroma_height()),
                        plane_array(f.v, f.chroma_width(), f.chroma_height()));
}

// RARN parameters plus the architecture they imply.
struct Rarn {
  ParamSet params;
  RarnConfig config;

  py::tuple precode_image(const F64& img, Index out_h, Index out_w) const {
    const Tensor x = to_tensor(img);
    RarnOutput o = precode(x, make_plan(x.dim(2), x.dim(3), out_h, out_w), params, config);
    return py::make_tuple(to_array(o.y, false), o.rate_bits.item());
  }
};

}  // namespace

PYBIND11_MODULE(_precodec, m) {
  m.doc() = "Learned precoding for standard video codecs (C++ core).";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InvalidShape>(m, "InvalidShape", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ModelError>(m, "ModelError", base.ptr());
  py::register_exception<InsufficientPoints>(m, "InsufficientPoints", base.ptr());
  py::register_exception<NoOverlap>(m, "NoOverlap", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def(
      "resize",
      [](const F64& img, Index out_h, Index out_w, const std::string& filter) {
        const Tensor t = to_tensor(img);
        return to_array(resize_to(t, out_h, out_w, filter_of(filter)), img.ndim() == 2);
      },
      py::arg("img"), py::arg("out_h"), py::arg("out_w"), py::arg("filter") = "bicubic",
      "Resample a [C,H,W] or [H,W] float image (Keys bicubic or Lanczos-3, edge clamp).");
  m.def(
      "output_size", [](Index h, Index w, double scale) {
        const ScalePlan p = plan_for_scale(h, w, scale);
        return py::make_tuple(p.out_h, p.out_w);
      },
      py::arg("height"), py::arg("width"), py::arg("scale"));

  m.def(
      "psnr", [](const F64& a, const F64& b, double peak) { return psnr(to_tensor(a), to_tensor(b), peak); }, py::arg("a"),
      py::arg("b"), py::arg("peak") = 1.0);
  m.def(
      "ssim",
      [](const F64& a, const F64& b) {
        if (a.ndim() != 2 || b.ndim() != 2 || a.shape(0) != b.shape(0) || a.shape(1) != b.shape(1))
          throw InvalidShape("ssim expects two equal 2-D planes");
        return ssim_plane(std::vector<double>(a.data(), a.data() + a.size()), std::vector<double>(b.data(), b.data() + b.size()),
                          int(a.shape(1)), int(a.shape(0)));
      },
      py::arg("a"), py::arg("b"), "Gaussian-window SSIM of two 2-D planes on the 0..255 scale.");

  m.def(
      "bd_rate", [](const std::vector<double>& ar, const std::vector<double>& aq, const std::vector<double>& tr,
                    const std::vector<double>& tq) { return bd_rate(curve_of(ar, aq), curve_of(tr, tq)); },
      py::arg("anchor_rates"), py::arg("anchor_quality"), py::arg("test_rates"), py::arg("test_quality"));
  m.def(
      "bd_quality", [](const std::vector<double>& ar, const std::vector<double>& aq, const std::vector<double>& tr,
                       const std::vector<double>& tq) { return bd_quality(curve_of(ar, aq), curve_of(tr, tq)); },
      py::arg("anchor_rates"), py::arg("anchor_quality"), py::arg("test_rates"), py::arg("test_quality"));
  m.def(
      "bd_report_json", [](const std::vector<double>& ar, const std::vector<double>& aq, const std::vector<double>& tr,
                           const std::vector<double>& tq) { return bd_report(curve_of(ar, aq), curve_of(tr, tq)).to_json(); },
      py::arg("anchor_rates"), py::arg("anchor_quality"), py::arg("test_rates"), py::arg("test_quality"));

  m.def(
      "mock_code_frame",
      [](const U8& y, const U8& u, const U8& v, int qp) {
        MockFrameResult r = mock_code_frame(frame_of(y, u, v), qp);
        return py::make_tuple(frame_tuple(r.decoded), r.bits);
      },
      py::arg("y"), py::arg("u"), py::arg("v"), py::arg("qp"), "Mock intra codec on 8-bit 4:2:0 planes; returns ((y,u,v), bits).");
  m.def("qp_step", &qp_step, py::arg("qp"));

  m.def(
      "read_y4m",
      [](const std::filesystem::path& path) {
        const VideoSeq s = read_y4m(path);
        py::list frames;
        for (const Frame& f : s.frames) frames.append(frame_tuple(f));
        return py::make_tuple(frames, s.fps_num, s.fps_den);
      },
      py::arg("path"), "Returns ([(y,u,v), ...], fps_num, fps_den).");
  m.def(
      "write_y4m",
      [](const std::filesystem::path& path, const std::vector<std::tuple<U8, U8, U8>>& frames, int fps_num, int fps_den) {
        VideoSeq s;
        s.fps_num = fps_num;
        s.fps_den = fps_den;
        for (const auto& [y, u, v] : frames) s.frames.push_back(frame_of(y, u, v));
        write_y4m(s, path);
      },
      py::arg("path"), py::arg("frames"), py::arg("fps_num") = 30, py::arg("fps_den") = 1);

  py::class_<Rarn>(m, "Rarn", "A RARN precoder: parameters plus the architecture they imply.")
      .def_static(
          "init",
          [](const std::string& config_json, std::uint64_t seed) {
            const RunConfig c = parse_run_config(config_json.empty() ? "{}" : config_json);
            return Rarn{init_rarn(c.rarn, seed), c.rarn};
          },
          py::arg("config_json") = "", py::arg("seed") = 1, "Fresh parameters for the run-config's rarn section.")
      .def_static(
          "load",
          [](const std::filesystem::path& path) {
            ParamSet p = load_checkpoint(path);
            return Rarn{p, infer_rarn_config(p)};
          },
          py::arg("path"))
      .def("save", [](const Rarn& r, const std::filesystem::path& path) { save_checkpoint(r.params, path); }, py::arg("path"))
      .def_property(
          "lightweight", [](const Rarn& r) { return r.config.lightweight; }, [](Rarn& r, bool v) { r.config.lightweight = v; })
      .def_property_readonly("num_params", [](const Rarn& r) { return r.params.count(); })
      .def("precode", &Rarn::precode_image, py::arg("img"), py::arg("out_h"), py::arg("out_w"),
           "Eval-mode precode of a [3,H,W] YUV image in [0,1]; returns (y [3,h,w], side-rate bits).");

  m.def(
      "validate_config",
      [](const std::string& text) {
        const RunConfig c = parse_run_config(text);
        return py::make_tuple(canonical_json(c), config_hash(c));
      },
      py::arg("config_json"), "Parse and validate a run config; returns (canonical JSON, hash).");

  m.def(
      "train_toy",
      [](const std::string& config_json) {
        const RunConfig c = parse_run_config(config_json);
        std::vector<std::vector<Tensor>> data;
        for (const auto& path : c.inputs)
          for (const Frame& f : read_y4m(path).frames) data.push_back({frame_to_tensor(f)});
        if (data.empty())
          for (int i = 0; i < c.synthetic.count; ++i)
            data.push_back({synthetic_image(c.synthetic.seed + std::uint64_t(i), c.synthetic.size, c.synthetic.size)});
        TrainConfig tc = c.train;
        tc.checkpoint_dir.clear();
        tc.checkpoint_every = 0;
        std::optional<TrainResult> r_;
        {
          py::gil_scoped_release release;
          r_ = alternate_train(data, c.rarn, c.tvc, tc);
        }
        const TrainResult& r = *r_;
        return py::make_tuple(Rarn{r.rarn, c.rarn}, r.report.csv(), r.report.json_summary());
      },
      py::arg("config_json"), "alternate_train on the config's inputs (or synthetic images); returns (Rarn, csv, json).");

  m.def(
      "grad_check",
      [](const std::vector<std::string>& only) {
        py::list out;
        for (const auto& s : gradient_suites()) {
          if (!only.empty() && std::find(only.begin(), only.end(), s.name) == only.end()) continue;
          for (const auto& r : s.run()) out.append(py::make_tuple(s.name, r.name, r.max_rel_error, r.passed));
        }
        return out;
      },
      py::arg("suites") = std::vector<std::string>{}, "Finite-difference gradient suites: [(suite, check, max_rel_err, passed)].");
}
