#include "covfk/fk.hpp"

#include "mc_internal.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace covfk {

using detail::Accumulator;
using detail::inv_small;
using detail::path_stream;
using detail::PathFn;
using detail::run_paths;

double default_bridge_delta(const McConfig& mc, double t) {
    return mc.bridge_delta > 0 ? mc.bridge_delta : std::max(mc.dt, t / 100.0);
}

CMat solve_q_process(const Manifold& M, const BundleSpec& B, const FirstOrderOp& Q,
                     const PathSample& path, const TransportSequence& transport) {
    const int d = B.rank;
    const int n = path.steps();
    const double dt = path.dt;

    FiberMat q = FiberMat::Identity(d, d);
    FiberMat inner(d, d), tmp(d, d), coeff(d, d), tr(d, d), tri(d, d);
    CoordVec v;
    for (int i = 0; i < n; ++i) {
        const Point p = path.point_at(M, i);
        inner.setZero(d, d);
        if (Q.sigma1) {
            v.noalias() = path.frame_at(i) * path.increments.row(i).transpose();
            Q.sigma1(p, v, coeff);
            inner += coeff;
        }
        if (Q.q0) {
            Q.q0(p, coeff);
            inner += dt * coeff;
        }
        tr = transport.at(i);
        inv_small(tr, tri);
        tmp.noalias() = tri * inner;
        inner.noalias() = tmp * tr;
        tmp.noalias() = q * inner;
        q -= tmp;
    }
    return CMat(q);
}

Estimate fk_estimate(const Manifold& M, const BundleSpec& B, const FirstOrderOp& Q,
                     const SectionFn& psi, const Point& x, double t, const McConfig& mc) {
    if (!(t > 0)) throw std::domain_error("fk_estimate: t must be positive");
    const int d = B.rank;
    const auto t0 = std::chrono::steady_clock::now();

    PathFn fn = [&](long i, CMat& sample, double&) {
        auto path = sample_bm(M, x, t, mc.dt, path_stream(mc.seed, i));
        auto transport = parallel_transport(M, B, path);
        CMat q = solve_q_process(M, B, Q, path, transport);
        const int n = path.steps();
        FiberMat tr = transport.at(n), tri;
        inv_small(tr, tri);
        CVec end = psi.eval(path.point_at(M, n));
        sample.noalias() = q * (CMat(tri) * end);
        return true;
    };
    auto acc = run_paths(mc.n_paths, mc.workers, d, 1, fn, mc.abort_on_nonfinite);

    Estimate est;
    est.mean = acc.mean_n;
    est.std_error = (acc.n > 1)
                        ? ((acc.m2_n / static_cast<double>(acc.n - 1)).cwiseSqrt() /
                           std::sqrt(static_cast<double>(acc.n)))
                              .eval()
                        : Eigen::MatrixXd::Zero(d, 1).eval();
    est.n_paths = acc.n;
    est.dt = mc.dt;
    est.seed = mc.seed;
    est.rejected = acc.rejected;
    est.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return est;
}

namespace {

// self-normalized ratio R = mean(w V) / mean(w) with delta-method errors
Estimate ratio_estimate(const Accumulator& acc, double scale, double dt,
                        std::uint64_t seed) {
    Estimate est;
    const double n = static_cast<double>(acc.n);
    const double wbar = acc.mean_w;
    CMat R = acc.mean_n / wbar;
    est.mean = scale * R;
    Eigen::MatrixXd var(acc.mean_n.rows(), acc.mean_n.cols());
    if (acc.n > 1) {
        const double denom = n - 1;
        for (Eigen::Index i = 0; i < var.rows(); ++i)
            for (Eigen::Index j = 0; j < var.cols(); ++j) {
                const double vn = acc.m2_n(i, j) / denom;
                const double vw = acc.m2_w / denom;
                const double cv = (std::conj(R(i, j)) * acc.comoment(i, j)).real() / denom;
                var(i, j) = std::max(0.0, vn - 2 * cv + std::norm(R(i, j)) * vw);
            }
        est.std_error = std::abs(scale) / (wbar * std::sqrt(n)) * var.cwiseSqrt();
    } else {
        est.std_error = Eigen::MatrixXd::Zero(var.rows(), var.cols());
    }
    est.n_paths = acc.n;
    est.dt = dt;
    est.seed = seed;
    est.rejected = acc.rejected;
    return est;
}

} // namespace

Estimate kernel_estimate(const Manifold& M, const BundleSpec& B, const FirstOrderOp& Q,
                         const Point& x, const Point& y, double t, const McConfig& mc) {
    if (!(t > 0)) throw std::domain_error("kernel_estimate: t must be positive");
    const int d = B.rank;
    const double delta = default_bridge_delta(mc, t);
    const auto t0 = std::chrono::steady_clock::now();
    const double pt = M.heat_kernel(x, y, t);

    PathFn fn = [&](long i, CMat& sample, double& w) {
        auto br = sample_bridge(M, x, y, t, mc.dt, delta, path_stream(mc.seed, i));
        auto transport = parallel_transport(M, B, br.path);
        CMat q = solve_q_process(M, B, Q, br.path, transport);
        FiberMat tr = transport.at(br.path.steps()), tri;
        inv_small(tr, tri);
        w = br.weight;
        sample.noalias() = w * (q * CMat(tri));
        return true;
    };
    auto acc = run_paths(mc.n_paths, mc.workers, d, d, fn, mc.abort_on_nonfinite);
    Estimate est = ratio_estimate(acc, pt, mc.dt, mc.seed);
    est.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return est;
}

Estimate kernel_estimate_extrapolated(const Manifold& M, const BundleSpec& B,
                                      const FirstOrderOp& Q, const Point& x, const Point& y,
                                      double t, const McConfig& mc) {
    McConfig base = mc;
    base.bridge_delta = default_bridge_delta(mc, t);
    McConfig half = base;
    half.bridge_delta = base.bridge_delta / 2;
    half.seed = mc.seed + 1;
    Estimate a = kernel_estimate(M, B, Q, x, y, t, base);
    Estimate b = kernel_estimate(M, B, Q, x, y, t, half);
    Estimate out = b;
    out.mean = 2.0 * b.mean - a.mean;
    out.std_error = (4.0 * b.std_error.cwiseAbs2() + a.std_error.cwiseAbs2()).cwiseSqrt();
    return out;
}

MomentDiagnostic moment_diagnostic(const Manifold& M, const BundleSpec& B,
                                   const FirstOrderOp& Q, const std::vector<Point>& grid,
                                   double t, const McConfig& mc) {
    if (grid.empty()) throw std::invalid_argument("moment_diagnostic: empty grid");
    MomentDiagnostic out;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const Point& x = grid[g];
        PathFn fn = [&](long i, CMat& sample, double&) {
            auto path = sample_bm(M, x, t, mc.dt, path_stream(mc.seed + g, i));
            auto transport = parallel_transport(M, B, path);
            CMat q = solve_q_process(M, B, Q, path, transport);
            double norm2;
            if (B.rank == 1) {
                norm2 = std::norm(q(0, 0));
            } else {
                Eigen::JacobiSVD<CMat> svd(q);
                norm2 = svd.singularValues()(0) * svd.singularValues()(0);
            }
            sample(0, 0) = norm2;
            return true;
        };
        auto acc = run_paths(mc.n_paths, mc.workers, 1, 1, fn, mc.abort_on_nonfinite);
        out.per_point.push_back(acc.mean_n(0, 0).real());
        out.std_error.push_back(acc.n > 1
                                    ? std::sqrt(acc.m2_n(0, 0) /
                                                static_cast<double>(acc.n - 1) /
                                                static_cast<double>(acc.n))
                                    : 0.0);
    }
    out.supremum = *std::max_element(out.per_point.begin(), out.per_point.end());
    return out;
}

double factorization_check(const Manifold& M, const BundleSpec& B, const FirstOrderOp& Q,
                           const PathSample& path, const TransportSequence& transport) {
    const int d = B.rank;
    const int n = path.steps();
    const double dt = path.dt;

    const CMat q_full = solve_q_process(M, B, Q, path, transport);

    FiberMat q1 = FiberMat::Identity(d, d); // sigma1-only Itô factor
    FiberMat q2 = FiberMat::Identity(d, d); // conjugated drift ODE factor
    FiberMat s(d, d), v0(d, d), tr(d, d), tri(d, d), q1i(d, d), tmp(d, d), tmp2(d, d);
    CoordVec v;
    for (int i = 0; i < n; ++i) {
        const Point p = path.point_at(M, i);
        tr = transport.at(i);
        inv_small(tr, tri);

        // dQ2 = -Q2 [Q1 //^{-1} q0 // Q1^{-1}] dt, with Q1 at the same time
        if (Q.q0) {
            Q.q0(p, v0);
            inv_small(q1, q1i);
            tmp.noalias() = tri * v0;
            tmp2.noalias() = tmp * tr;
            tmp.noalias() = q1 * tmp2;
            tmp2.noalias() = tmp * q1i;
            tmp.noalias() = q2 * tmp2;
            q2 -= dt * tmp;
        }
        if (Q.sigma1) {
            v.noalias() = path.frame_at(i) * path.increments.row(i).transpose();
            Q.sigma1(p, v, s);
            tmp.noalias() = tri * s;
            tmp2.noalias() = tmp * tr;
            tmp.noalias() = q1 * tmp2;
            q1 -= tmp;
        }
    }
    return (q_full - CMat(q2 * q1)).norm();
}

KatoDiagnostic kato_estimate(const Manifold& M, const std::function<double(const Point&)>& w,
                             double t, const std::vector<Point>& grid, const McConfig& mc,
                             double exponent) {
    if (!(t > 0)) throw std::domain_error("kato_estimate: t must be positive");
    if (grid.empty()) throw std::invalid_argument("kato_estimate: empty grid");
    KatoDiagnostic out;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const Point& x = grid[g];
        PathFn fn = [&](long i, CMat& sample, double&) {
            auto path = sample_bm(M, x, t, mc.dt, path_stream(mc.seed + g, i));
            const int n = path.steps();
            // trapezoid in s of |w(b_s)|
            double acc = 0.5 * (std::abs(w(path.point_at(M, 0))) +
                                std::abs(w(path.point_at(M, n))));
            for (int j = 1; j < n; ++j) acc += std::abs(w(path.point_at(M, j)));
            acc *= path.dt;
            sample(0, 0) = acc;
            sample(1, 0) = std::exp(exponent * acc);
            return true;
        };
        auto acc = run_paths(mc.n_paths, mc.workers, 2, 1, fn, mc.abort_on_nonfinite);
        out.integral.push_back(acc.mean_n(0, 0).real());
        out.exp_moment.push_back(acc.mean_n(1, 0).real());
        const double n = static_cast<double>(acc.n);
        out.integral_se.push_back(acc.n > 1 ? std::sqrt(acc.m2_n(0, 0) / (n - 1) / n) : 0.0);
        out.exp_moment_se.push_back(acc.n > 1 ? std::sqrt(acc.m2_n(1, 0) / (n - 1) / n)
                                              : 0.0);
    }
    out.sup_integral = *std::max_element(out.integral.begin(), out.integral.end());
    out.sup_exp_moment = *std::max_element(out.exp_moment.begin(), out.exp_moment.end());
    return out;
}

} // namespace covfk
