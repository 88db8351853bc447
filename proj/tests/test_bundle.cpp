#include "doctest.h"

#include "covfk/bundle.hpp"
#include "covfk/rng.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>

using namespace covfk;

namespace {

constexpr double kPi = 3.14159265358979323846;

// deterministic closed loop around the circle
PathSample circle_loop(const Manifold& c, int n) {
    PathSample p;
    p.t = 1.0;
    p.dt = 1.0 / n;
    p.coords.resize(n + 1, 1);
    p.charts.assign(n + 1, 0);
    p.frames = MatrixXd::Ones(n + 1, 1);
    p.increments = MatrixXd::Zero(n, 1);
    const double L = c.periods()[0];
    for (int i = 0; i <= n; ++i) p.coords(i, 0) = std::fmod(L * i / n, L);
    return p;
}

// deterministic latitude circle at polar angle theta0 on the sphere
PathSample latitude_loop(const Manifold& s, double theta0, int n) {
    PathSample p;
    p.t = 1.0;
    p.dt = 1.0 / n;
    p.coords.resize(n + 1, 2);
    p.charts.assign(n + 1, 0);
    p.embedded.resize(n + 1, 3);
    p.frames.resize(2 * (n + 1), 2);
    p.increments = MatrixXd::Zero(n, 2);
    const double r = s.radius();
    for (int i = 0; i <= n; ++i) {
        const double phi = 2 * kPi * i / n;
        Point q = s.point_embedded(
            Vector3d(r * std::sin(theta0) * std::cos(phi),
                     r * std::sin(theta0) * std::sin(phi), r * std::cos(theta0)));
        p.coords.row(i) = q.coords.transpose();
        p.charts[static_cast<std::size_t>(i)] = q.chart;
        p.embedded.row(i) = q.embedded.transpose();
        p.frames.middleRows(2 * i, 2) = s.orthonormal_frame(q);
    }
    return p;
}

PathSample slice_path(const PathSample& p, int j) {
    PathSample out;
    const int n = p.steps();
    const int m = p.dim();
    out.t = p.t - j * p.dt;
    out.dt = p.dt;
    out.coords = p.coords.bottomRows(n + 1 - j);
    out.charts.assign(p.charts.begin() + j, p.charts.end());
    if (p.embedded.size() > 0) out.embedded = p.embedded.bottomRows(n + 1 - j);
    out.frames = p.frames.bottomRows((n + 1 - j) * m);
    out.increments = p.increments.bottomRows(n - j);
    return out;
}

CMat random_cmat(int n, std::uint64_t seed) {
    CounterRng rng(RngConfig{seed, 0});
    CMat m(n, n);
    std::uint64_t c = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = cplx(rng.gaussian(c++), rng.gaussian(c++));
    return m;
}

} // namespace

TEST_SUITE_BEGIN("bundle");

TEST_CASE("exp_anti_hermitian matches the dense exponential") {
    for (std::uint64_t s = 0; s < 6; ++s) {
        CMat X = random_cmat(2, 100 + s);
        FiberMat A = 0.5 * (X - X.adjoint()).eval(); // anti-Hermitian
        CHECK((CMat(exp_anti_hermitian(A)) - CMat(A).exp()).norm() < 1e-13);
    }
    FiberMat a(1, 1);
    a(0, 0) = cplx(0, 1.3);
    CHECK(std::abs(exp_anti_hermitian(a)(0, 0) - std::exp(cplx(0, 1.3))) < 1e-15);
}

TEST_CASE("trivial connection transports identically") {
    auto s = Manifold::sphere2(1.0);
    auto path = sample_bm(s, s.point_embedded(Vector3d(0, 0, 1)), 0.3, 1e-3, RngConfig{3, 0});
    auto seq = parallel_transport(s, trivial_bundle(2), path);
    for (int i = 0; i <= seq.steps(); i += 50)
        CHECK((CMat(seq.at(i)) - CMat::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("U(1) holonomy around the circle is exp(-2 pi i a)") {
    auto c = Manifold::circle(1.0);
    const double a = 0.37;
    auto path = circle_loop(c, 10000);
    auto seq = parallel_transport(c, u1_flat(a), path);
    const cplx hol = CMat(seq.at(seq.steps()))(0, 0);
    CHECK(std::abs(hol - std::exp(-2 * kPi * kI * a)) < 1e-8);
}

TEST_CASE("sphere tangent holonomy at polar angle pi/3 is rotation by pi") {
    auto s = Manifold::sphere2(1.0);
    auto path = latitude_loop(s, kPi / 3, 20000);
    auto seq = parallel_transport(s, tangent_s2(s), path);
    // 2 pi (1 - cos theta0) = pi: the loop holonomy is -I
    CHECK((CMat(seq.at(seq.steps())) + CMat::Identity(2, 2)).norm() < 1e-6);
}

TEST_CASE("sphere tangent transport matches embedded ODE integration") {
    auto s = Manifold::sphere2(1.0);
    const double theta0 = 1.0;
    const int n = 20000;
    auto path = latitude_loop(s, theta0, n);
    auto seq = parallel_transport(s, tangent_s2(s), path);

    // independent oracle: transport embedded tangent vectors with
    // V' = -(V . c') c / r^2 along the latitude curve, RK4 in phi
    const double r = 1.0;
    auto curve = [&](double phi) {
        return Vector3d(r * std::sin(theta0) * std::cos(phi),
                        r * std::sin(theta0) * std::sin(phi), r * std::cos(theta0));
    };
    auto dcurve = [&](double phi) {
        return Vector3d(-r * std::sin(theta0) * std::sin(phi),
                        r * std::sin(theta0) * std::cos(phi), 0.0);
    };
    Point p0 = s.point_embedded(curve(0));
    MatrixXd F0 = s.orthonormal_frame(p0);
    Eigen::Matrix<double, 3, 2> J0;
    {
        const double h = 1e-7;
        for (int j = 0; j < 2; ++j) {
            Vector2d up = Vector2d(p0.coords), um = up;
            up[j] += h;
            um[j] -= h;
            J0.col(j) = (s.embed(p0.chart, up) - s.embed(p0.chart, um)) / (2 * h);
        }
    }
    Eigen::Matrix<double, 3, 2> E = J0 * F0;
    const int steps = 200000;
    const double dphi = 2 * kPi / steps;
    auto rhs = [&](double phi, const Eigen::Matrix<double, 3, 2>& V) {
        Eigen::Matrix<double, 3, 2> out;
        const Vector3d c = curve(phi), dc = dcurve(phi);
        for (int j = 0; j < 2; ++j) out.col(j) = -(V.col(j).dot(dc)) * c / (r * r);
        return out;
    };
    for (int i = 0; i < steps; ++i) {
        const double phi = i * dphi;
        auto k1 = rhs(phi, E);
        auto k2 = rhs(phi + dphi / 2, (E + dphi / 2 * k1).eval());
        auto k3 = rhs(phi + dphi / 2, (E + dphi / 2 * k2).eval());
        auto k4 = rhs(phi + dphi, (E + dphi * k3).eval());
        E += dphi / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    const double sig = s.conformal_sigma(p0.chart, Vector2d(p0.coords));
    MatrixXd expected = (J0.transpose() * E) / sig; // orthonormal frame components
    CMat got = seq.at(seq.steps());
    CHECK((got.real() - expected).norm() < 1e-6);
    CHECK(got.imag().norm() < 1e-12);

    // and the classical closed form: rotation by +2 pi (1 - cos theta0)
    const double alpha = 2 * kPi * (1 - std::cos(theta0));
    MatrixXd rot(2, 2);
    rot << std::cos(alpha), -std::sin(alpha), std::sin(alpha), std::cos(alpha);
    CHECK((got.real() - rot).norm() < 1e-6);
}

TEST_CASE("transport_conjugate basics and spectrum preservation") {
    auto s = Manifold::sphere2(1.0);
    auto path = sample_bm(s, s.point_embedded(Vector3d(1, 0, 0)), 0.2, 1e-3, RngConfig{5, 2});
    auto seq = parallel_transport(s, spinor_s2(s), path);
    const int i = seq.steps() / 2;

    CHECK((transport_conjugate(spinor_s2(s), seq, i, CMat::Identity(2, 2)) -
           CMat::Identity(2, 2))
              .norm() < 1e-12);

    auto trivial_seq = parallel_transport(s, trivial_bundle(2), path);
    CMat X = random_cmat(2, 42);
    CHECK((transport_conjugate(trivial_bundle(2), trivial_seq, i, X) - X).norm() < 1e-13);

    CMat Y = transport_conjugate(spinor_s2(s), seq, i, X);
    Eigen::ComplexEigenSolver<CMat> ex(X), ey(Y);
    auto sx = ex.eigenvalues(), sy = ey.eigenvalues();
    std::vector<cplx> vx(sx.data(), sx.data() + 2), vy(sy.data(), sy.data() + 2);
    auto key = [](const cplx& a, const cplx& b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    };
    std::sort(vx.begin(), vx.end(), key);
    std::sort(vy.begin(), vy.end(), key);
    CHECK(std::abs(vx[0] - vy[0]) < 1e-10);
    CHECK(std::abs(vx[1] - vy[1]) < 1e-10);
}

TEST_CASE("per-step unitarity along Brownian paths") {
    auto s = Manifold::sphere2(1.0);
    auto path = sample_bm(s, s.point_embedded(Vector3d(0, 1, 0)), 0.5, 1e-3, RngConfig{6, 1});
    for (auto b : {tangent_s2(s), spinor_s2(s)}) {
        auto seq = parallel_transport(s, b, path);
        double worst = 0;
        for (int i = 0; i <= seq.steps(); ++i) {
            CMat U = seq.at(i);
            worst = std::max(worst, (U.adjoint() * U - CMat::Identity(2, 2)).norm());
        }
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("composition: concatenated transport equals the product of parts") {
    auto s = Manifold::sphere2(1.0);
    auto b = tangent_s2(s);
    auto path = sample_bm(s, s.point_embedded(Vector3d(0, 0, 1)), 0.4, 2e-3, RngConfig{8, 0});
    const int j = path.steps() / 2;
    auto full = parallel_transport(s, b, path);
    auto second = parallel_transport(s, b, slice_path(path, j));
    CMat lhs = full.at(full.steps());
    CMat rhs = CMat(second.at(second.steps())) * CMat(full.at(j));
    CHECK((lhs - rhs).norm() < 1e-13);
}

TEST_CASE("gauge covariance under a constant unitary change") {
    auto s = Manifold::sphere2(1.0);
    auto base = spinor_s2(s);
    CMat X = random_cmat(2, 77);
    CMat G = exp_anti_hermitian(FiberMat(0.5 * (X - X.adjoint()))); // unitary

    BundleSpec gauged = base;
    gauged.connection = [base, G](const Point& p, const CoordVec& v, FiberMat& out) {
        FiberMat A;
        base.connection(p, v, A);
        out = FiberMat(G) * A * FiberMat(G).adjoint();
    };
    gauged.transition = [base, G](int f, int t, const Point& p, FiberMat& out) {
        FiberMat g0;
        base.transition(f, t, p, g0);
        out = FiberMat(G) * g0 * FiberMat(G).adjoint();
    };

    auto path = sample_bm(s, s.point_embedded(Vector3d(0.6, 0, 0.8)), 0.3, 1e-3,
                          RngConfig{9, 0});
    auto a = parallel_transport(s, base, path);
    auto g = parallel_transport(s, gauged, path);
    const int n = a.steps();
    CHECK((CMat(g.at(n)) - G * CMat(a.at(n)) * G.adjoint()).norm() < 1e-12);
}

TEST_CASE("preset connections are anti-Hermitian and transitions unitary") {
    auto s = Manifold::sphere2(1.0);
    CounterRng rng(RngConfig{11, 0});
    for (auto b : {tangent_s2(s), spinor_s2(s)}) {
        for (int trial = 0; trial < 10; ++trial) {
            Vector3d raw(rng.gaussian(3 * trial), rng.gaussian(3 * trial + 1),
                         rng.gaussian(3 * trial + 2));
            Point p = s.point_embedded(raw / raw.norm());
            CoordVec v(2);
            v << rng.gaussian(100 + trial), rng.gaussian(200 + trial);
            FiberMat A;
            b.connection(p, v, A);
            CHECK((A + A.adjoint()).norm() < 1e-12);

            FiberMat g01, g10;
            b.transition(0, 1, p, g01);
            b.transition(1, 0, p, g10);
            CHECK((g01 * g01.adjoint() - FiberMat::Identity(2, 2)).norm() < 1e-12);
            CHECK((g01 * g10 - FiberMat::Identity(2, 2)).norm() < 1e-12);
        }
    }
}

TEST_SUITE_END();
