// Python bindings: images as numpy arrays, networks and configs as classes.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "ganproj/corruption.hpp"
#include "ganproj/error.hpp"
#include "ganproj/metrics.hpp"
#include "ganproj/recovery.hpp"
#include "ganproj/selfcheck.hpp"
#include "ganproj/sharpness.hpp"
#include "ganproj/training.hpp"
#include "ganproj/weights_io.hpp"

namespace py = pybind11;
using namespace ganproj;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(shape, data);
}

py::array_t<double> from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.data(), t.size() * sizeof(double));
    return out;
}

// (H, W) or (H, W, C) uint8 array.
Image to_image(const U8& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw ShapeError("image array must be (H, W) or (H, W, C)");
    const std::size_t h = a.shape(0), w = a.shape(1), c = a.ndim() == 3 ? a.shape(2) : 1;
    return Image(w, h, c, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

py::array_t<std::uint8_t> from_image(const Image& img) {
    py::array_t<std::uint8_t> out({py::ssize_t(img.height()), py::ssize_t(img.width()), py::ssize_t(img.channels())});
    std::memcpy(out.mutable_data(), img.pixels().data(), img.size());
    return out;
}

LatentVector to_latent(const F64& a) {
    if (a.ndim() != 1) throw ShapeError("latent vector must be one-dimensional");
    return LatentVector(std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> from_latent(const LatentVector& z) {
    py::array_t<double> out(py::ssize_t(z.dim()));
    std::memcpy(out.mutable_data(), z.values().data(), z.dim() * sizeof(double));
    return out;
}

}  // namespace

PYBIND11_MODULE(_ganproj, m) {
    m.doc() = "Latent-vector recovery on a small DCGAN generator";

    auto base = py::register_exception<Error>(m, "GanprojError", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<NumericError>(m, "NumericError", base);
    py::register_exception<IoError>(m, "IoError", base);
    auto fmt = py::register_exception<FormatError>(m, "FormatError", base);
    py::register_exception<CorruptionError>(m, "CorruptionError", fmt);
    py::register_exception<VersionError>(m, "VersionError", fmt);

    py::class_<GeneratorNet>(m, "Generator")
        .def_property_readonly("input_dim", &GeneratorNet::input_dim)
        .def_property_readonly("image_shape",
                               [](const GeneratorNet& g) {
                                   const auto& s = g.image_shape();
                                   return py::make_tuple(s.height, s.width, s.channels);
                               })
        .def(
            "forward", [](const GeneratorNet& g, const F64& z) { return from_tensor(gen_forward(g, to_latent(z))); },
            py::arg("z"), "phi(z) as an (H, W, C) array in [-1, 1]")
        .def(
            "loss_and_grad",
            [](const GeneratorNet& g, const F64& z, const F64& target) {
                const LossAndGrad lg = gen_loss_and_grad_z(g, to_latent(z), to_tensor(target));
                return py::make_tuple(lg.loss, from_latent(LatentVector(lg.grad)));
            },
            py::arg("z"), py::arg("target"))
        .def("save", [](const GeneratorNet& g, const std::filesystem::path& p) { save_weights(g, p); });

    m.def("load_weights", &load_weights, py::arg("path"));
    m.def(
        "make_generator",
        [](std::size_t latent_dim, std::size_t channels, std::uint64_t seed) {
            return make_dcgan_generator({latent_dim, channels}, seed);
        },
        py::arg("latent_dim") = 16, py::arg("channels") = 1, py::arg("seed") = 1);
    m.def("make_random_toy_generator", &make_random_toy_generator, py::arg("seed"), py::arg("latent_dim") = 16);
    m.def("make_identity_generator", &make_identity_generator, py::arg("dim"));
    m.def(
        "make_linear_generator",
        [](const F64& a, const F64& b, std::size_t height, std::size_t width, std::size_t channels) {
            return make_linear_generator(to_tensor(a), to_tensor(b), {height, width, channels});
        },
        py::arg("a"), py::arg("b"), py::arg("height"), py::arg("width"), py::arg("channels") = 1);

    m.def("normalize", [](const U8& img) { return from_tensor(normalize(to_image(img))); });
    m.def("denormalize", [](const F64& t) { return from_image(denormalize(to_tensor(t))); });
    m.def("read_image", [](const std::filesystem::path& p) { return from_image(read_image(p)); });
    m.def("write_image", [](const U8& img, const std::filesystem::path& p) { write_image(to_image(img), p); });

    py::class_<RecoveryConfig>(m, "RecoveryConfig")
        .def(py::init([](const std::string& strategy, double step_size, std::size_t max_iters, double tol,
                         std::size_t stall_window, std::size_t restarts, std::uint64_t seed) {
                 RecoveryConfig c{parse_strategy(strategy), step_size, max_iters, tol, stall_window, restarts, seed};
                 c.validate();
                 return c;
             }),
             py::arg("strategy") = "stochastic", py::arg("step_size") = 0.5, py::arg("max_iters") = 5000,
             py::arg("tol") = 1e-8, py::arg("stall_window") = 100, py::arg("restarts") = 3, py::arg("seed") = 0)
        .def_property(
            "strategy", [](const RecoveryConfig& c) { return to_string(c.strategy); },
            [](RecoveryConfig& c, const std::string& s) { c.strategy = parse_strategy(s); })
        .def_readwrite("step_size", &RecoveryConfig::step_size)
        .def_readwrite("max_iters", &RecoveryConfig::max_iters)
        .def_readwrite("tol", &RecoveryConfig::tol)
        .def_readwrite("stall_window", &RecoveryConfig::stall_window)
        .def_readwrite("restarts", &RecoveryConfig::restarts)
        .def_readwrite("seed", &RecoveryConfig::seed);

    py::class_<RecoveryResult>(m, "RecoveryResult")
        .def_property_readonly("z_hat", [](const RecoveryResult& r) { return from_latent(r.z_hat); })
        .def_readonly("final_loss", &RecoveryResult::final_loss)
        .def_readonly("iterations_used", &RecoveryResult::iterations_used)
        .def_readonly("loss_trace", &RecoveryResult::loss_trace)
        .def_readonly("restart_index", &RecoveryResult::restart_index);

    m.def(
        "recover",
        [](const GeneratorNet& g, const F64& target, const RecoveryConfig& cfg, std::uint64_t image_id) {
            const Tensor t = to_tensor(target);
            py::gil_scoped_release release;
            return recover(g, t, cfg, image_id);
        },
        py::arg("generator"), py::arg("target"), py::arg("config") = RecoveryConfig{}, py::arg("image_id") = 0);
    m.def(
        "denoise",
        [](const GeneratorNet& g, const U8& noisy, const RecoveryConfig& cfg, std::uint64_t image_id) {
            const Image img = to_image(noisy);
            Denoised d;
            {
                py::gil_scoped_release release;
                d = denoise(g, img, cfg, image_id);
            }
            return py::make_tuple(from_image(d.image), d.result);
        },
        py::arg("generator"), py::arg("noisy"), py::arg("config") = RecoveryConfig{}, py::arg("image_id") = 0);
    m.def("clip_projected", [](const F64& z) { return from_latent(clip_projected(to_latent(z))); });

    m.def(
        "add_gaussian_noise",
        [](const U8& img, double sigma, std::uint64_t seed, std::uint64_t image_id) {
            const NoiseModel model{sigma, seed};
            model.validate();
            const NoisyImage n = add_gaussian_noise(to_image(img), model, image_id);
            return py::make_tuple(from_tensor(n.target), from_image(n.preview));
        },
        py::arg("image"), py::arg("sigma"), py::arg("seed") = 0, py::arg("image_id") = 0,
        "Returns (unclamped target tensor, clamped uint8 preview).");

    m.def("mse_pixels", [](const U8& a, const U8& b) { return mse_pixels(to_image(a), to_image(b)); });
    m.def("psnr", [](const U8& a, const U8& b) { return psnr(to_image(a), to_image(b)); });

    py::class_<SharpnessAttribute>(m, "SharpnessAttribute")
        .def_readonly("sigma", &SharpnessAttribute::sigma)
        .def_readonly("vector", &SharpnessAttribute::vector)
        .def_readonly("n_samples", &SharpnessAttribute::n_samples)
        .def_readonly("seed", &SharpnessAttribute::seed)
        .def("save", [](const SharpnessAttribute& a, const std::filesystem::path& p) { save_sharpness(a, p); });
    m.def("load_sharpness", &load_sharpness);
    m.def(
        "estimate_sharpness",
        [](const GeneratorNet& g, const std::vector<double>& sigmas, std::size_t n, const RecoveryConfig& cfg,
           std::uint64_t seed, double latent_scale) {
            py::gil_scoped_release release;
            return estimate_sharpness(g, sigmas, n, cfg, seed, {latent_scale, 0});
        },
        py::arg("generator"), py::arg("sigmas"), py::arg("n"), py::arg("config") = RecoveryConfig{},
        py::arg("seed") = 0, py::arg("latent_scale") = 1.0);
    m.def(
        "apply_sharpness",
        [](const F64& z, const SharpnessAttribute& a) { return from_latent(apply_sharpness(to_latent(z), a)); },
        py::arg("z_hat"), py::arg("attr"));

    m.def(
        "toy_dataset",
        [](std::size_t count, std::uint64_t seed) {
            ToyDatasetSpec spec;
            spec.count = count;
            spec.seed = seed;
            py::list out;
            for (const auto& img : make_toy_dataset(spec)) out.append(from_image(img));
            return out;
        },
        py::arg("count") = 1000, py::arg("seed") = 1);

    m.def(
        "selfcheck",
        [](std::uint64_t seed, std::size_t triples, const std::string& inject_fault) {
            SelfcheckOptions opt;
            opt.seed = seed;
            opt.triples = triples;
            opt.inject_fault = inject_fault;
            SelfcheckReport r;
            {
                py::gil_scoped_release release;
                r = run_selfcheck(opt);
            }
            return py::make_tuple(r.passed(), r.text());
        },
        py::arg("seed") = 1, py::arg("triples") = 200, py::arg("inject_fault") = "",
        "Returns (passed, report text).");
}
