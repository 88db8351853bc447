#pragma once

#include "covfk/bundle.hpp"
#include "covfk/paths.hpp"
#include "covfk/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace covfk {

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Differential operator of order <= 1, decomposed as q0 + sigma1 * nabla.
// sigma1(p, v) is the principal symbol paired with the tangent vector v via
// the metric; it must be linear in v. Null callbacks mean zero.
struct FirstOrderOp {
    int rank = 1;
    std::function<void(const Point&, const CoordVec&, FiberMat&)> sigma1;
    std::function<void(const Point&, FiberMat&)> q0;
};

struct SectionFn {
    int rank = 1;
    std::function<CVec(const Point&)> eval; // chart-referenced fiber coordinates
    std::string smoothness = "smooth";
};

// Monte Carlo result; std_error is the per-entry sample standard deviation
// divided by sqrt(n_paths). Means are bit-identical for equal (seed, n_paths,
// dt) regardless of the worker count.
struct Estimate {
    CMat mean;
    Eigen::MatrixXd std_error;
    long n_paths = 0;
    double dt = 0;
    std::uint64_t seed = 0;
    long rejected = 0;
    double wall_seconds = 0;
};

struct McConfig {
    long n_paths = 10000;
    double dt = 1e-2;
    std::uint64_t seed = 0;
    double bridge_delta = 0; // 0 selects max(dt, t/100)
    int workers = 0;         // 0 selects hardware concurrency
    bool abort_on_nonfinite = true;
};

double default_bridge_delta(const McConfig& mc, double t);

// Itô Euler scheme for the Q-process along a sampled path:
// Q_{i+1} = Q_i - Q_i //_i^{-1} (sigma1(p_i, F_i xi_i) + q0(p_i) dt) //_i
CMat solve_q_process(const Manifold& M, const BundleSpec& B, const FirstOrderOp& Q,
                     const PathSample& path, const TransportSequence& transport);

// E[Q(t) //(t)^{-1} Psi(b_t)], the semigroup applied to Psi at x
Estimate fk_estimate(const Manifold& M, const BundleSpec& B, const FirstOrderOp& Q,
                     const SectionFn& psi, const Point& x, double t, const McConfig& mc);

// p(t,x,y) * selfnormalized bridge mean of Q(t-delta) //(t-delta)^{-1}; the
// final delta-subinterval of Q and // is frozen (O(delta) bias)
Estimate kernel_estimate(const Manifold& M, const BundleSpec& B, const FirstOrderOp& Q,
                         const Point& x, const Point& y, double t, const McConfig& mc);

// two-point Richardson in delta: 2 * K(delta/2) - K(delta)
Estimate kernel_estimate_extrapolated(const Manifold& M, const BundleSpec& B,
                                      const FirstOrderOp& Q, const Point& x, const Point& y,
                                      double t, const McConfig& mc);

struct MomentDiagnostic {
    std::vector<double> per_point; // E[|Q(t)|^2], operator (spectral) norm
    std::vector<double> std_error;
    double supremum = 0;
};

MomentDiagnostic moment_diagnostic(const Manifold& M, const BundleSpec& B,
                                   const FirstOrderOp& Q, const std::vector<Point>& grid,
                                   double t, const McConfig& mc);

// same-noise discrepancy |Q - Q2 Q1| of the two-stage factorization
double factorization_check(const Manifold& M, const BundleSpec& B, const FirstOrderOp& Q,
                           const PathSample& path, const TransportSequence& transport);

struct KatoDiagnostic {
    std::vector<double> integral;     // E int_0^t |w(b_s)| ds per grid point
    std::vector<double> integral_se;
    std::vector<double> exp_moment;   // E exp(p int_0^t |w(b_s)| ds)
    std::vector<double> exp_moment_se;
    double sup_integral = 0;
    double sup_exp_moment = 0;
};

KatoDiagnostic kato_estimate(const Manifold& M, const std::function<double(const Point&)>& w,
                             double t, const std::vector<Point>& grid, const McConfig& mc,
                             double exponent = 1.0);

} // namespace covfk
