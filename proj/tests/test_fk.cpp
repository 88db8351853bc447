#include "doctest.h"

#include "covfk/fk.hpp"
#include "covfk/spectral.hpp"

#include <cmath>

using namespace covfk;

namespace {

constexpr double kPi = 3.14159265358979323846;

Point circle_point(const Manifold& c, double theta) {
    VectorXd v(1);
    v[0] = theta;
    return c.point(v);
}

// Q = a d/dtheta + V on the circle line bundle
FirstOrderOp circle_op(cplx a, cplx V) {
    FirstOrderOp op;
    op.rank = 1;
    if (a != cplx(0, 0))
        op.sigma1 = [a](const Point&, const CoordVec& v, FiberMat& out) {
            out.resize(1, 1);
            out(0, 0) = a * v[0];
        };
    if (V != cplx(0, 0))
        op.q0 = [V](const Point&, FiberMat& out) {
            out.resize(1, 1);
            out(0, 0) = V;
        };
    return op;
}

SectionFn fourier_section(int k) {
    SectionFn psi;
    psi.rank = 1;
    psi.eval = [k](const Point& p) {
        CVec v(1);
        v[0] = std::exp(kI * static_cast<double>(k) * p.coords[0]);
        return v;
    };
    return psi;
}

} // namespace

TEST_SUITE_BEGIN("fk");

TEST_CASE("Q = 0 gives the identity Q-process exactly") {
    auto c = Manifold::circle(1.0);
    auto path = sample_bm(c, circle_point(c, 0.3), 0.5, 1e-2, RngConfig{1, 0});
    auto tr = parallel_transport(c, trivial_bundle(2), path);
    FirstOrderOp zero;
    zero.rank = 2;
    CHECK((solve_q_process(c, trivial_bundle(2), zero, path, tr) - CMat::Identity(2, 2))
              .norm() == 0.0);
}

TEST_CASE("constant real q0: scheme equals (1 - c dt)^n, within C dt of e^{-ct}") {
    auto c = Manifold::circle(1.0);
    const double cc = 0.8, t = 1.0, dt = 1e-3;
    auto path = sample_bm(c, circle_point(c, 0), t, dt, RngConfig{2, 0});
    auto tr = parallel_transport(c, trivial_bundle(1), path);
    auto q = solve_q_process(c, trivial_bundle(1), circle_op(0.0, cc), path, tr);
    CHECK(std::abs(q(0, 0) - std::pow(1 - cc * dt, 1000)) < 1e-12);
    CHECK(std::abs(q(0, 0) - std::exp(-cc * t)) < 1.0 * dt);
}

TEST_CASE("geometric Brownian weight: E[Q(t)] = e^{-Vt}") {
    auto c = Manifold::circle(1.0);
    const double a = 1.0, V = 0.4, t = 1.0;
    McConfig mc;
    mc.n_paths = 20000;
    mc.dt = 1e-3;
    mc.seed = 11;
    SectionFn one;
    one.rank = 1;
    one.eval = [](const Point&) { return CVec::Ones(1); };
    auto est = fk_estimate(c, trivial_bundle(1), circle_op(a, V), one, circle_point(c, 0), t,
                           mc);
    CHECK(std::abs(est.mean(0, 0) - std::exp(-V * t)) <
          3 * est.std_error(0, 0) + 2e-3);
}

TEST_CASE("trivial estimator: constant section comes back exactly, stderr 0") {
    auto c = Manifold::circle(1.0);
    McConfig mc;
    mc.n_paths = 500;
    mc.dt = 1e-2;
    SectionFn psi;
    psi.rank = 2;
    psi.eval = [](const Point&) {
        CVec v(2);
        v << cplx(0.3, -1.0), cplx(2.0, 0.5);
        return v;
    };
    FirstOrderOp zero;
    zero.rank = 2;
    auto est = fk_estimate(c, trivial_bundle(2), zero, psi, circle_point(c, 1.0), 0.5, mc);
    CHECK(std::abs(est.mean(0, 0) - cplx(0.3, -1.0)) < 1e-14);
    CHECK(std::abs(est.mean(1, 0) - cplx(2.0, 0.5)) < 1e-14);
    CHECK(est.std_error.maxCoeff() == 0.0);
}

TEST_CASE("circle a d + V vs the Fourier oracle") {
    auto c = Manifold::circle(1.0);
    const cplx a(1.0, 0.0);
    const cplx V(0.5, 0.8);
    const int k = 1;
    const double t = 0.5, x = 0.9;
    McConfig mc;
    mc.n_paths = 40000;
    mc.dt = 1e-3;
    mc.seed = 5;
    auto est = fk_estimate(c, trivial_bundle(1), circle_op(a, V), fourier_section(k),
                           circle_point(c, x), t, mc);
    const cplx oracle =
        std::exp(-t * (0.5 * k * k + kI * static_cast<double>(k) * a + V)) *
        std::exp(kI * static_cast<double>(k) * x);
    CHECK(std::abs(est.mean(0, 0) - oracle) < 3 * est.std_error(0, 0) + 2.0 * mc.dt);
}

TEST_CASE("nilpotent q0: exact (I - tN)w with zero variance") {
    auto c = Manifold::circle(1.0);
    FirstOrderOp op;
    op.rank = 2;
    op.q0 = [](const Point&, FiberMat& out) {
        out.setZero(2, 2);
        out(0, 1) = 1.0;
    };
    SectionFn psi;
    psi.rank = 2;
    psi.eval = [](const Point&) {
        CVec v(2);
        v << cplx(1.0, 0.0), cplx(-0.5, 2.0);
        return v;
    };
    const double t = 0.7;
    McConfig mc;
    mc.n_paths = 2000;
    mc.dt = 1e-3;
    auto est = fk_estimate(c, trivial_bundle(2), op, psi, circle_point(c, 0), t, mc);
    CMat N = CMat::Zero(2, 2);
    N(0, 1) = 1.0;
    CVec w(2);
    w << cplx(1.0, 0.0), cplx(-0.5, 2.0);
    CVec expect = (CMat::Identity(2, 2) - t * N) * w;
    // (I - N dt)^n = I - t N exactly because N^2 = 0
    CHECK((est.mean - expect).norm() < 1e-12);
    CHECK(est.std_error.maxCoeff() < 1e-14);
}

TEST_CASE("kernel estimator: trivial data reproduces the heat kernel") {
    auto c = Manifold::circle(1.0);
    FirstOrderOp zero;
    zero.rank = 1;
    McConfig mc;
    mc.n_paths = 4000;
    mc.dt = 2e-3;
    const double t = 0.8;
    auto x = circle_point(c, 0.0), y = circle_point(c, 1.1);
    auto est = kernel_estimate(c, trivial_bundle(1), zero, x, y, t, mc);
    const double pt = c.heat_kernel(x, y, t);
    // self-normalization makes this exact up to roundoff
    CHECK(std::abs(est.mean(0, 0) - pt) < 1e-12);
    CHECK(est.std_error(0, 0) < 1e-12);
}

TEST_CASE("kernel estimator: constant scalar potential") {
    auto c = Manifold::circle(1.0);
    const double V = 0.8, t = 0.8;
    McConfig mc;
    mc.n_paths = 4000;
    mc.dt = 1e-3;
    mc.seed = 3;
    auto x = circle_point(c, 0.0), y = circle_point(c, 0.7);
    auto est = kernel_estimate(c, trivial_bundle(1), circle_op(0.0, V), x, y, t, mc);
    const double pt = c.heat_kernel(x, y, t);
    const double delta = default_bridge_delta(mc, t);
    CHECK(std::abs(est.mean(0, 0) - std::exp(-V * t) * pt) <
          3 * est.std_error(0, 0) + 2 * pt * (mc.dt + delta));

    // delta extrapolation shrinks the frozen-tail bias
    auto ex = kernel_estimate_extrapolated(c, trivial_bundle(1), circle_op(0.0, V), x, y, t,
                                           mc);
    CHECK(std::abs(ex.mean(0, 0) - std::exp(-V * t) * pt) <
          std::abs(est.mean(0, 0) - std::exp(-V * t) * pt) + 3 * ex.std_error(0, 0));
}

TEST_CASE("kernel reconstruction: quadrature against fk_estimate") {
    auto c = Manifold::circle(1.0);
    const double t = 0.8;
    const cplx V(0.5, 0.0);
    auto op = circle_op(0.0, V);
    const auto x = circle_point(c, 0.4);

    McConfig mc_fk;
    mc_fk.n_paths = 20000;
    mc_fk.dt = 2e-3;
    mc_fk.seed = 21;
    auto direct = fk_estimate(c, trivial_bundle(1), op, fourier_section(1), x, t, mc_fk);

    McConfig mc_k;
    mc_k.n_paths = 1500;
    mc_k.dt = 2e-3;
    mc_k.seed = 22;
    cplx integral(0, 0);
    double se2 = 0;
    for (auto& [y, w] : c.quadrature_grid(32)) {
        auto kest = kernel_estimate(c, trivial_bundle(1), op, x, y, t, mc_k);
        integral += w * kest.mean(0, 0) * std::exp(kI * y.coords[0]);
        se2 += w * w * kest.std_error(0, 0) * kest.std_error(0, 0);
    }
    const double tol = 3 * (std::sqrt(se2) + direct.std_error(0, 0)) + 0.02 * (mc_k.dt + t / 100);
    CHECK(std::abs(integral - direct.mean(0, 0)) < tol);
}

TEST_CASE("moment diagnostic basics") {
    auto c = Manifold::circle(1.0);
    std::vector<Point> grid = {circle_point(c, 0.0), circle_point(c, 2.0)};
    McConfig mc;
    mc.n_paths = 2000;
    mc.dt = 1e-3;
    const double t = 0.5;

    FirstOrderOp zero;
    zero.rank = 1;
    auto m0 = moment_diagnostic(c, trivial_bundle(1), zero, grid, t, mc);
    CHECK(m0.supremum == 1.0);

    const double cc = 0.6;
    auto mc1 = moment_diagnostic(c, trivial_bundle(1), circle_op(0.0, cc), grid, t, mc);
    CHECK(std::abs(mc1.supremum - std::exp(-2 * cc * t)) < 3e-3);
}

TEST_CASE("Itô correction: pure anti-selfadjoint symbol is NOT unitary") {
    // d|Q|^2 = a^2 |Q|^2 dt for sigma1 = i a, so E|Q(t)|^2 = e^{a^2 t}; the
    // compensated magnetic operator q0 = a^2/2 restores pathwise unitarity
    auto c = Manifold::circle(1.0);
    std::vector<Point> grid = {circle_point(c, 0.0)};
    const double a = 1.0, t = 1.0;
    McConfig mc;
    mc.n_paths = 20000;
    mc.dt = 5e-4;
    mc.seed = 7;

    auto pure = moment_diagnostic(c, trivial_bundle(1), circle_op(cplx(0, a), 0.0), grid, t,
                                  mc);
    CHECK(std::abs(pure.per_point[0] - std::exp(a * a * t)) <
          3 * pure.std_error[0] + 10 * mc.dt);

    auto comp = moment_diagnostic(c, trivial_bundle(1),
                                  circle_op(cplx(0, a), cplx(a * a / 2, 0.0)), grid, t, mc);
    CHECK(std::abs(comp.per_point[0] - 1.0) < 3 * comp.std_error[0] + 10 * mc.dt);
}

TEST_CASE("pathwise contraction for self-adjoint q0 bounded below") {
    auto c = Manifold::circle(1.0);
    const double kappa = 0.3, t = 0.6, dt = 1e-3;
    FirstOrderOp op;
    op.rank = 2;
    op.q0 = [kappa](const Point& p, FiberMat& out) {
        // Hermitian, eigenvalues kappa + shift -+ sqrt(s^2 + |c|^2) >= kappa
        const double s = std::sin(p.coords[0]);
        const cplx c(0.2, 0.1);
        const double shift = std::sqrt(1.0 + std::norm(c));
        out.resize(2, 2);
        out(0, 0) = kappa + shift + s;
        out(1, 1) = kappa + shift - s;
        out(0, 1) = c;
        out(1, 0) = std::conj(c);
    };
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        auto path = sample_bm(c, circle_point(c, 1.0), t, dt, RngConfig{50, trial});
        auto tr = parallel_transport(c, trivial_bundle(2), path);
        auto q = solve_q_process(c, trivial_bundle(2), op, path, tr);
        Eigen::JacobiSVD<CMat> svd(q);
        CHECK(svd.singularValues()(0) <= std::exp(-kappa * t) * (1 + 2 * dt));
    }
}

TEST_CASE("factorization discrepancy vanishes in the degenerate cases") {
    auto c = Manifold::circle(1.0);
    auto path = sample_bm(c, circle_point(c, 0.2), 0.5, 1e-2, RngConfig{31, 0});
    auto tr = parallel_transport(c, trivial_bundle(1), path);

    CHECK(factorization_check(c, trivial_bundle(1), circle_op(0.0, cplx(0.7, 0.2)), path,
                              tr) < 1e-12);
    CHECK(factorization_check(c, trivial_bundle(1), circle_op(cplx(0.9, 0.1), 0.0), path,
                              tr) < 1e-12);
}

TEST_CASE("factorization discrepancy decreases at order >= 0.9 under dt halving") {
    auto c = Manifold::circle(1.0);
    auto op = circle_op(cplx(1.0, 0.0), kI); // a = 1, V = i
    std::vector<double> errs;
    for (double dt : {4e-3, 2e-3, 1e-3, 5e-4}) {
        // average over paths to stabilize the slope
        double sum = 0;
        const int reps = 64;
        for (std::uint64_t r = 0; r < reps; ++r) {
            auto path = sample_bm(c, circle_point(c, 0.0), 0.5, dt, RngConfig{600, r});
            auto tr = parallel_transport(c, trivial_bundle(1), path);
            sum += factorization_check(c, trivial_bundle(1), op, path, tr);
        }
        errs.push_back(sum / reps);
    }
    // aggregate order over the three halvings
    const double order = std::log2(errs.front() / errs.back()) / 3.0;
    CHECK(order > 0.9);
    CHECK(errs.back() < errs.front());
}

TEST_CASE("kato diagnostic: constants and the 1 + cos field") {
    auto c = Manifold::circle(1.0);
    std::vector<Point> grid;
    for (int i = 0; i < 8; ++i) grid.push_back(circle_point(c, 2 * kPi * i / 8));
    const double t = 1.0;
    McConfig mc;
    mc.n_paths = 5000;
    mc.dt = 2e-3;
    mc.seed = 9;

    auto con = kato_estimate(
        c, [](const Point&) { return 0.7; }, t, grid, mc);
    CHECK(std::abs(con.sup_integral - 0.7 * t) < 1e-12);
    for (double se : con.integral_se) CHECK(se < 1e-12);

    auto w = [](const Point& p) { return 1.0 + std::cos(p.coords[0]); };
    auto res = kato_estimate(c, w, t, grid, mc);
    // bounded field: result below ||w||_inf * t + noise
    CHECK(res.sup_integral <= 2.0 * t + 3 * res.integral_se[0] + 1e-6);
    // E int_0^t (1 + cos b_s) ds = t + 2 cos(x)(1 - e^{-t/2}), peak at x = 0
    const double expect = t + 2 * (1 - std::exp(-t / 2));
    CHECK(std::abs(res.integral[0] - expect) < 3 * res.integral_se[0] + 5e-3);
    CHECK(std::abs(res.sup_integral - expect) < 3 * res.integral_se[0] + 5e-3);

    // Khashminskii moment is finite and at least e^{E}
    CHECK(res.sup_exp_moment >= std::exp(res.sup_integral) - 3 * res.exp_moment_se[0]);
    CHECK(std::isfinite(res.sup_exp_moment));
}

TEST_CASE("determinism: same seed, different worker counts, identical bits") {
    auto c = Manifold::circle(1.0);
    McConfig mc1;
    mc1.n_paths = 9000;
    mc1.dt = 5e-3;
    mc1.seed = 77;
    mc1.workers = 1;
    McConfig mc2 = mc1;
    mc2.workers = 2;
    auto op = circle_op(cplx(0.6, 0.1), cplx(0.2, -0.3));
    auto a = fk_estimate(c, trivial_bundle(1), op, fourier_section(2), circle_point(c, 0.5),
                         0.4, mc1);
    auto b = fk_estimate(c, trivial_bundle(1), op, fourier_section(2), circle_point(c, 0.5),
                         0.4, mc2);
    CHECK(a.mean == b.mean);
    CHECK(a.std_error == b.std_error);
}

TEST_CASE("non-finite samples abort by default and are counted otherwise") {
    auto c = Manifold::circle(1.0);
    FirstOrderOp bad;
    bad.rank = 1;
    bad.q0 = [](const Point&, FiberMat& out) {
        out.resize(1, 1);
        out(0, 0) = std::numeric_limits<double>::quiet_NaN();
    };
    SectionFn one;
    one.rank = 1;
    one.eval = [](const Point&) { return CVec::Ones(1); };
    McConfig mc;
    mc.n_paths = 64;
    mc.dt = 1e-2;
    CHECK_THROWS_AS(
        fk_estimate(c, trivial_bundle(1), bad, one, circle_point(c, 0), 0.1, mc),
        NumericError);
    mc.abort_on_nonfinite = false;
    auto est = fk_estimate(c, trivial_bundle(1), bad, one, circle_point(c, 0), 0.1, mc);
    CHECK(est.rejected == 64);
    CHECK(est.n_paths == 0);
}

TEST_SUITE_END();
