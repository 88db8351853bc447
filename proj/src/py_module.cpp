#include "covfk/berezin.hpp"
#include "covfk/cli.hpp"
#include "covfk/fk.hpp"
#include "covfk/paths.hpp"
#include "covfk/spin.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace covfk;

namespace {

Manifold make_manifold(const std::string& kind, double radius,
                       const std::vector<double>& periods) {
    if (kind == "circle") return Manifold::circle(radius);
    if (kind == "flat_torus") return Manifold::flat_torus(periods);
    if (kind == "sphere2") return Manifold::sphere2(radius);
    throw std::invalid_argument("kind must be circle, flat_torus or sphere2");
}

Point make_point(const Manifold& M, const std::vector<double>& coords) {
    if (M.kind() == ManifoldKind::Sphere2) {
        if (coords.size() != 3)
            throw std::invalid_argument("sphere points take 3 embedded coordinates");
        return M.point_embedded(Vector3d(coords[0], coords[1], coords[2]));
    }
    VectorXd c(M.dim());
    for (int i = 0; i < M.dim(); ++i) c[i] = coords[static_cast<std::size_t>(i)];
    return M.point(c);
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Monte Carlo estimators for covariant semigroups, kernels, traces and "
              "Chern-character pieces on compact model geometries";
    m.attr("__version__") = COVFK_VERSION;

    m.def(
        "run_json",
        [](const std::string& command, const std::string& config_text) {
            auto result = run_command(command, nlohmann::json::parse(config_text));
            return py::make_tuple(result.doc.dump(2), result.ok);
        },
        py::arg("command"), py::arg("config_json"),
        "Run an fk/trace/chern/validate command; returns (result_json, ok)");

    m.def(
        "heat_kernel",
        [](const std::string& kind, double radius, const std::vector<double>& periods,
           const std::vector<double>& x, const std::vector<double>& y, double t) {
            auto M = make_manifold(kind, radius, periods);
            return M.heat_kernel(make_point(M, x), make_point(M, y), t);
        },
        py::arg("kind"), py::arg("radius"), py::arg("periods"), py::arg("x"), py::arg("y"),
        py::arg("t"));

    m.def(
        "distance",
        [](const std::string& kind, double radius, const std::vector<double>& periods,
           const std::vector<double>& x, const std::vector<double>& y) {
            auto M = make_manifold(kind, radius, periods);
            return M.distance(make_point(M, x), make_point(M, y));
        },
        py::arg("kind"), py::arg("radius"), py::arg("periods"), py::arg("x"), py::arg("y"));

    m.def(
        "bm_endpoints",
        [](const std::string& kind, double radius, const std::vector<double>& periods,
           const std::vector<double>& x, double t, double dt, std::uint64_t seed, long n) {
            auto M = make_manifold(kind, radius, periods);
            const Point p = make_point(M, x);
            const bool sphere = M.kind() == ManifoldKind::Sphere2;
            Eigen::MatrixXd out(n, sphere ? 3 : M.dim());
            auto streams = split_streams(RngConfig{seed, 0}, static_cast<std::size_t>(n));
            for (long i = 0; i < n; ++i) {
                auto path = sample_bm(M, p, t, dt, streams[static_cast<std::size_t>(i)]);
                if (sphere)
                    out.row(i) = path.embedded.row(path.steps());
                else
                    out.row(i) = path.coords.row(path.steps());
            }
            return out;
        },
        py::arg("kind"), py::arg("radius"), py::arg("periods"), py::arg("x"), py::arg("t"),
        py::arg("dt"), py::arg("seed"), py::arg("n"),
        "Endpoints of n Brownian paths (embedded coordinates on the sphere)");

    m.def("perturbation_identity_check",
          py::overload_cast<const CMat&, const CMat&, double>(&perturbation_identity_check),
          py::arg("H"), py::arg("P"), py::arg("t"),
          "|| theta-part of e^{-t(H + theta P)} + int_0^t e^{-sH} P e^{-(t-s)H} ds ||");

    m.def(
        "dirac_eigenvalues",
        [](int level) { return dirac_truncation(level).eigenvalues; }, py::arg("level"),
        "Eigenvalues of the unit-sphere Dirac truncation (exact +-(k+1) shells)");

    m.def(
        "gaussian_table",
        [](std::uint64_t seed, std::uint64_t stream, long n) {
            CounterRng rng(RngConfig{seed, stream});
            Eigen::VectorXd v(n);
            for (long i = 0; i < n; ++i) v[i] = rng.gaussian(static_cast<std::uint64_t>(i));
            return v;
        },
        py::arg("seed"), py::arg("stream"), py::arg("n"));
}
