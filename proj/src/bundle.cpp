#include "covfk/bundle.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>

namespace covfk {

namespace {

// omega^1_2(v) for the conformal orthonormal frame, phi = log sigma
double omega12(const Manifold& M, const Point& p, const CoordVec& v) {
    const Vector2d d = M.conformal_grad_log_sigma(p.chart, p.coords);
    return d[1] * v[0] - d[0] * v[1];
}

// complex phase z/|z| of the chart-0 coordinate; transition angle is
// theta = pi - 2 arg z
cplx chart0_phase(const Manifold& M, const Point& p) {
    const Vector2d u = M.coords_in_chart(p, 0);
    const double n = std::hypot(u[0], u[1]);
    return cplx(u[0] / n, u[1] / n);
}

} // namespace

FiberMat exp_anti_hermitian(const FiberMat& A) {
    const int d = static_cast<int>(A.rows());
    if (d == 1) {
        // A = i*lambda with lambda real
        return (FiberMat(1, 1) << std::exp(A(0, 0))).finished();
    }
    if (d == 2) {
        // A = i H, H Hermitian: H = alpha I + B with tr B = 0,
        // exp(iH) = e^{i alpha} (cos(beta) I + i sin(beta)/beta * B)
        const cplx a00 = -kI * A(0, 0), a11 = -kI * A(1, 1), a01 = -kI * A(0, 1);
        const double alpha = 0.5 * (a00.real() + a11.real());
        const double b3 = a00.real() - alpha;
        const double beta = std::sqrt(b3 * b3 + std::norm(a01));
        FiberMat out(2, 2);
        const cplx phase = std::exp(kI * alpha);
        if (beta < 1e-300) {
            out.setZero();
            out(0, 0) = out(1, 1) = phase;
            return out;
        }
        const double c = std::cos(beta), s = std::sin(beta) / beta;
        out(0, 0) = phase * (c + kI * s * b3);
        out(1, 1) = phase * (c - kI * s * b3);
        out(0, 1) = phase * kI * s * a01;
        out(1, 0) = phase * kI * s * std::conj(a01);
        return out;
    }
    CMat big = A;
    return FiberMat(big.exp());
}

BundleSpec trivial_bundle(int rank) {
    BundleSpec b;
    b.rank = rank;
    b.name = "trivial(" + std::to_string(rank) + ")";
    b.connection = [rank](const Point&, const CoordVec&, FiberMat& out) {
        out.setZero(rank, rank);
    };
    b.transition = [rank](int, int, const Point&, FiberMat& out) {
        out = FiberMat::Identity(rank, rank);
    };
    return b;
}

BundleSpec u1_flat(double a) {
    BundleSpec b;
    b.rank = 1;
    b.name = "u1_flat";
    b.connection = [a](const Point&, const CoordVec& v, FiberMat& out) {
        out.resize(1, 1);
        out(0, 0) = kI * a * v[0];
    };
    b.transition = [](int, int, const Point&, FiberMat& out) { out = FiberMat::Identity(1, 1); };
    return b;
}

BundleSpec tangent_s2(const Manifold& M) {
    if (M.kind() != ManifoldKind::Sphere2)
        throw std::domain_error("tangent_s2 needs a Sphere2 geometry");
    BundleSpec b;
    b.rank = 2;
    b.name = "tangent_s2";
    b.connection = [M](const Point& p, const CoordVec& v, FiberMat& out) {
        const double q = omega12(M, p, v);
        out.setZero(2, 2);
        out(0, 1) = q;
        out(1, 0) = -q;
    };
    b.transition = [M](int from, int to, const Point& p, FiberMat& out) {
        if (from == to) {
            out = FiberMat::Identity(2, 2);
            return;
        }
        // rotation by theta = pi - 2 arg z; e^{i theta} = -conj(z)^2/|z|^2
        const cplx ph = chart0_phase(M, p);
        const cplx e = -std::conj(ph) * std::conj(ph);
        out.resize(2, 2);
        out(0, 0) = e.real();
        out(0, 1) = -e.imag();
        out(1, 0) = e.imag();
        out(1, 1) = e.real();
        if (from == 1) out.transposeInPlace(); // inverse rotation
    };
    return b;
}

BundleSpec spinor_s2(const Manifold& M) {
    if (M.kind() != ManifoldKind::Sphere2)
        throw std::domain_error("spinor_s2 needs a Sphere2 geometry");
    BundleSpec b;
    b.rank = 2;
    b.name = "spinor_s2";
    // gamma_1 gamma_2 = diag(-i, i) in the fixed Clifford representation
    b.connection = [M](const Point& p, const CoordVec& v, FiberMat& out) {
        const double q = -0.5 * omega12(M, p, v);
        out.setZero(2, 2);
        out(0, 0) = cplx(0, -q);
        out(1, 1) = cplx(0, q);
    };
    b.transition = [M](int from, int to, const Point& p, FiberMat& out) {
        if (from == to) {
            out = FiberMat::Identity(2, 2);
            return;
        }
        // exp((theta/2) gamma_1 gamma_2) = diag(e^{-i theta/2}, e^{i theta/2})
        // with e^{-i theta/2} = -i z/|z|, single-valued on the overlap
        const cplx ph = chart0_phase(M, p);
        out.setZero(2, 2);
        out(0, 0) = -kI * ph;
        out(1, 1) = kI * std::conj(ph);
        if (from == 1) out = out.adjoint().eval();
    };
    return b;
}

TransportSequence parallel_transport(const Manifold& M, const BundleSpec& B,
                                     const PathSample& path, TransportRule rule) {
    const int d = B.rank;
    const int n = path.steps();
    const int m = path.dim();
    TransportSequence seq;
    seq.rank = d;
    seq.mats.resize(static_cast<long>(n + 1) * d, d);

    FiberMat cur = FiberMat::Identity(d, d);
    seq.mats.topRows(d) = cur;

    FiberMat A(d, d), U(d, d), g(d, d);
    CoordVec dx(m), half(m);
    for (int i = 0; i < n; ++i) {
        Point p = path.point_at(M, i);
        dx = chart_increment(M, path, i);
        if (rule == TransportRule::StratonovichMidpoint) {
            Point pm;
            if (M.kind() == ManifoldKind::Sphere2) {
                half = 0.5 * dx;
                Point mid = M.exp_step(p, half);
                pm.chart = p.chart;
                pm.coords = M.coords_in_chart(mid, p.chart);
                pm.embedded = mid.embedded;
            } else {
                pm = M.point((p.coords + 0.5 * dx).eval());
            }
            B.connection(pm, dx, A);
        } else {
            B.connection(p, dx, A);
        }
        U = exp_anti_hermitian((-A).eval());
        cur = (U * cur).eval();
        const int c_next = path.charts[static_cast<std::size_t>(i) + 1];
        if (c_next != p.chart) {
            B.transition(p.chart, c_next, path.point_at(M, i + 1), g);
            cur = (g * cur).eval();
        }
        seq.mats.middleRows(static_cast<long>(i + 1) * d, d) = cur;
    }
    return seq;
}

CMat transport_conjugate(const BundleSpec&, const TransportSequence& seq, int i,
                         const CMat& X) {
    if (i > seq.steps()) throw std::out_of_range("transport_conjugate: index past path end");
    const CMat M = seq.at(i);
    return M.inverse() * X * M;
}

} // namespace covfk
