#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sadreg/checks.hpp"
#include "sadreg/io.hpp"
#include "sadreg/layers.hpp"
#include "sadreg/losses.hpp"
#include "sadreg/metrics.hpp"
#include "sadreg/model.hpp"
#include "sadreg/registration.hpp"
#include "sadreg/sart.hpp"
#include "sadreg/synth.hpp"

namespace py = pybind11;
using namespace sadreg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array &a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor &t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::list points(const std::vector<reg::Point> &pts) {
    py::list l;
    for (const auto &p : pts) l.append(py::make_tuple(p.x, p.y));
    return l;
}

std::vector<reg::Point> to_points(const std::vector<std::pair<double, double>> &v) {
    std::vector<reg::Point> out;
    for (const auto &[x, y] : v) out.push_back({x, y});
    return out;
}

Padding parse_padding(const std::string &p) {
    if (p == "same") return Padding::same;
    if (p == "valid") return Padding::valid;
    throw std::invalid_argument("padding must be 'same' or 'valid'");
}

py::dict pair_dict(const synth::SyntheticPair &p) {
    py::dict d;
    d["image_a"] = to_array(p.image_a);
    d["image_b"] = to_array(p.image_b);
    d["truth"] = to_array(p.truth.data);
    d["landmarks_a"] = points(p.landmarks_a);
    d["landmarks_b"] = points(p.landmarks_b);
    d["seed"] = p.seed;
    return d;
}

} // namespace

PYBIND11_MODULE(_sadreg, m) {
    m.doc() = "Appearance-disentangled registration core";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<io::DatasetError>(m, "DatasetError", PyExc_IOError);

    m.def("conv2d", [](const Array &x, const Array &k, const Array &b, const std::string &padding) {
        return to_array(ops::conv2d(to_tensor(x), to_tensor(k), to_tensor(b), parse_padding(padding)));
    }, py::arg("input"), py::arg("kernel"), py::arg("bias"), py::arg("padding") = "same");
    m.def("instance_norm", [](const Array &x, double eps) { return to_array(nn::instance_norm(to_tensor(x), eps)); },
          py::arg("x"), py::arg("eps") = nn::kNormEps);
    m.def("ncc", [](const Array &x, const Array &y) { return loss::ncc(to_tensor(x), to_tensor(y)); });
    m.def("bilinear_warp", [](const Array &img, const Array &field) {
        return to_array(reg::bilinear_warp(to_tensor(img), to_tensor(field)));
    });
    m.def("estimate_field",
          [](const Array &fixed, const Array &moving, std::size_t levels, std::size_t iterations, double lr,
             double lambda_reg) {
              reg::FieldConfig c;
              c.levels = levels;
              c.iterations = iterations;
              c.learning_rate = lr;
              c.lambda_reg = lambda_reg;
              const auto r = reg::estimate_field(to_tensor(fixed), to_tensor(moving), c);
              return py::make_tuple(to_array(r.field.data), r.converged, r.initial_objective, r.final_objective());
          },
          py::arg("fixed"), py::arg("moving"), py::arg("levels") = 3, py::arg("iterations") = 200,
          py::arg("learning_rate") = 0.5, py::arg("lambda_reg") = 0.1);
    m.def("transform_landmarks", [](const Array &field, const std::vector<std::pair<double, double>> &pts) {
        return points(reg::transform_landmarks({to_tensor(field)}, to_points(pts)).points);
    });

    m.def("rtre", [](std::pair<double, double> est, std::pair<double, double> target, std::size_t h, std::size_t w) {
        return metrics::rtre({est.first, est.second}, {target.first, target.second}, h, w);
    });
    m.def("evaluate_pair",
          [](const std::vector<std::pair<double, double>> &a, const std::vector<std::pair<double, double>> &b,
             const Array &field) {
              const auto e = metrics::evaluate_pair(to_points(a), to_points(b), {to_tensor(field)});
              py::dict d;
              d["rtre_initial"] = e.rtre_initial;
              d["rtre_final"] = e.rtre_final;
              d["median_initial"] = e.median_initial;
              d["median_final"] = e.median_final;
              d["robustness"] = e.robustness;
              return d;
          });

    m.def("make_pair", [](std::uint64_t seed, std::size_t size) {
        synth::SynthConfig c;
        c.size = size;
        return pair_dict(synth::make_pair(seed, c));
    }, py::arg("seed"), py::arg("size") = 64);
    m.def("pair_seed", &synth::pair_seed);

    m.def("read_sart", [](const std::filesystem::path &p) { return to_array(sart::load(p)); });
    m.def("write_sart", [](const std::filesystem::path &p, const Array &a) { sart::save(p, to_tensor(a)); });

    m.def("gradcheck", [](const std::string &scope, std::optional<double> tol) {
        const auto s = checks::parse_scope(scope);
        py::list out;
        for (const auto &c : checks::run_gradchecks(s, tol.value_or(checks::default_tolerance(s))))
            out.append(py::make_tuple(c.name, c.report.worst, c.report.pass));
        return out;
    }, py::arg("scope"), py::arg("tol") = py::none());

    py::class_<model::Model>(m, "Model")
        .def_static("load", [](const std::filesystem::path &p) { return io::load_checkpoint(p).model; })
        .def_static("create",
                    [](std::size_t base, std::size_t levels, std::size_t scene, std::size_t appearance,
                       std::size_t image_size, std::uint64_t seed) {
                        model::ModelConfig c;
                        c.base_channels = base;
                        c.levels = levels;
                        c.scene_channels = scene;
                        c.appearance_channels = appearance;
                        c.image_size = image_size;
                        c.seed = seed;
                        return model::Model::create(c);
                    },
                    py::arg("base_channels") = 32, py::arg("levels") = 3, py::arg("scene_channels") = 64,
                    py::arg("appearance_channels") = 32, py::arg("image_size") = 64, py::arg("seed") = 0)
        .def_property_readonly("parameter_count", [](const model::Model &m) { return m.params.scalar_count(); })
        .def("save", [](const model::Model &m, const std::filesystem::path &dir) { io::save_checkpoint(dir, m, {}); })
        .def("evaluate_pair", [](const model::Model &m, const Array &a, const Array &b) {
            const auto r = model::evaluate_pair(m, to_tensor(a), to_tensor(b));
            py::dict d;
            d["scene_a"] = to_array(r.scene_a);
            d["scene_b"] = to_array(r.scene_b);
            d["appearance_a"] = to_array(r.appearance_a);
            d["appearance_b"] = to_array(r.appearance_b);
            d["recon_a"] = to_array(r.recon_a);
            d["recon_b"] = to_array(r.recon_b);
            d["b_to_a"] = to_array(r.b_to_a);
            d["a_to_b"] = to_array(r.a_to_b);
            return d;
        });
}
