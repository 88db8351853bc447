#include "covfk/berezin.hpp"

#include "covfk/fault.hpp"
#include "mc_internal.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <chrono>
#include <cmath>

namespace covfk {

GrassmannMatrix grassmann_mul(const GrassmannMatrix& X, const GrassmannMatrix& Y) {
    if (X.a.cols() != Y.a.rows())
        throw std::invalid_argument("grassmann_mul: dimension mismatch");
    return {X.a * Y.a, X.a * Y.b + X.b * Y.a};
}

CMat berezin_integral(const GrassmannMatrix& X) { return X.b; }

GrassmannMatrix grassmann_semigroup(const CMat& H, const CMat& P, double t) {
    if (H.rows() != P.rows() || H.cols() != P.cols())
        throw std::invalid_argument("grassmann_semigroup: dimension mismatch");
    const Eigen::Index n = H.rows();
    CMat block = CMat::Zero(2 * n, 2 * n);
    block.topLeftCorner(n, n) = H;
    block.bottomRightCorner(n, n) = H;
    block.bottomLeftCorner(n, n) = P;
    CMat E = (-t * block).exp();
    return {E.topLeftCorner(n, n), E.bottomLeftCorner(n, n)};
}

double perturbation_identity_check(const CMat& H, const CMat& P, double t) {
    const CMat theta_part = berezin_integral(grassmann_semigroup(H, P, t));
    const CMat duh = duhamel_quadrature(H, P, t);
    if (active_fault() == Fault::berezin_sign) return (theta_part - duh).norm();
    return (theta_part + duh).norm();
}

double perturbation_identity_check(const FourierTruncation& T, const CMat& P, double t) {
    return perturbation_identity_check(T.H, P, t);
}

Estimate trace_formula_mc(const Manifold& M, const BundleSpec& B, const ZerothOrderFn& V,
                          const FirstOrderOp& P, const ZerothOrderFn& Vt, double t,
                          const McConfig& mc, int grid_order) {
    if (!(t > 0)) throw std::domain_error("trace_formula_mc: t must be positive");
    const int d = B.rank;
    const double delta = default_bridge_delta(mc, t);
    const auto t0 = std::chrono::steady_clock::now();

    const auto grid = M.quadrature_grid(grid_order);

    cplx total(0, 0);
    double var_total = 0;
    long paths_total = 0, rejected_total = 0;

    FiberMat vt_x(d, d);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto& [x, wq] = grid[g];
        const double pt = M.heat_kernel(x, x, t);
        if (Vt)
            Vt(x, vt_x);
        else
            vt_x = FiberMat::Identity(d, d);
        const CMat vt_fixed = vt_x;

        detail::PathFn fn = [&](long i, CMat& sample, double& w) {
            auto br = sample_bridge(M, x, x, t, mc.dt, delta,
                                    detail::path_stream(mc.seed + g, i));
            const auto& path = br.path;
            auto transport = parallel_transport(M, B, path);
            const int n = path.steps();
            const double dt = path.dt;

            FiberMat vproc = FiberMat::Identity(d, d); // Q-process of V alone
            FiberMat S = FiberMat::Zero(d, d);         // accumulated insertion
            FiberMat inner(d, d), coeff(d, d), tr(d, d), tri(d, d), tmp(d, d);
            CoordVec vv;
            for (int k = 0; k < n; ++k) {
                const Point p = path.point_at(M, k);
                tr = transport.at(k);
                detail::inv_small(tr, tri);

                inner.setZero(d, d);
                if (P.sigma1) {
                    vv.noalias() = path.frame_at(k) * path.increments.row(k).transpose();
                    P.sigma1(p, vv, coeff);
                    inner += coeff;
                }
                if (P.q0) {
                    P.q0(p, coeff);
                    inner += dt * coeff;
                }
                tmp.noalias() = tri * inner;
                inner.noalias() = tmp * tr;
                S += inner;

                if (V) {
                    V(p, coeff);
                    tmp.noalias() = tri * coeff;
                    coeff.noalias() = tmp * tr;
                    tmp.noalias() = vproc * coeff;
                    vproc -= dt * tmp;
                }
            }
            tr = transport.at(n);
            detail::inv_small(tr, tri);
            tmp.noalias() = vproc * S;
            FiberMat val = tmp * tri;
            w = br.weight;
            sample(0, 0) = w * (vt_fixed * CMat(val)).trace();
            return true;
        };
        auto acc = detail::run_paths(mc.n_paths, mc.workers, 1, 1, fn,
                                     mc.abort_on_nonfinite);
        paths_total += acc.n;
        rejected_total += acc.rejected;

        const double wbar = acc.mean_w;
        const cplx R = acc.mean_n(0, 0) / wbar;
        total += wq * pt * R;
        if (acc.n > 1) {
            const double nn = static_cast<double>(acc.n);
            const double vn = acc.m2_n(0, 0) / (nn - 1);
            const double vw = acc.m2_w / (nn - 1);
            const double cv = (std::conj(R) * acc.comoment(0, 0)).real() / (nn - 1);
            const double var_r =
                std::max(0.0, vn - 2 * cv + std::norm(R) * vw) / (nn * wbar * wbar);
            var_total += wq * wq * pt * pt * var_r;
        }
    }

    Estimate est;
    est.mean = CMat::Constant(1, 1, total);
    est.std_error = Eigen::MatrixXd::Constant(1, 1, std::sqrt(var_total));
    est.n_paths = paths_total;
    est.dt = mc.dt;
    est.seed = mc.seed;
    est.rejected = rejected_total;
    est.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return est;
}

} // namespace covfk
