#include "covfk/spin.hpp"

#include "mc_internal.hpp"

#include <chrono>
#include <cmath>

namespace covfk {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_surface(const Manifold& M) {
    if (M.dim() != 2)
        throw std::domain_error("spin operations need a 2-dimensional geometry");
}

double sigma_of(const Manifold& M, int chart, const Vector2d& u) {
    return M.kind() == ManifoldKind::Sphere2 ? M.conformal_sigma(chart, u) : 1.0;
}

Vector2d gradlog_of(const Manifold& M, int chart, const Vector2d& u) {
    return M.kind() == ManifoldKind::Sphere2 ? M.conformal_grad_log_sigma(chart, u)
                                             : Vector2d::Zero();
}

Point point_in_chart(const Manifold& M, int chart, const Vector2d& u) {
    if (M.kind() == ManifoldKind::Sphere2) return M.chart_point(chart, u);
    VectorXd c(2);
    c << u[0], u[1];
    return M.point(c);
}

// spin connection coefficients A_a = -(1/2) omega^1_2(d_a) gamma_1 gamma_2
// with omega^1_2 = (d_2 log sigma) dx^1 - (d_1 log sigma) dx^2 and
// gamma_1 gamma_2 = diag(-i, i); a_diag holds the (0,0) entries, the (1,1)
// entries are their negatives
void spin_connection(const Manifold& M, int chart, const Vector2d& u, cplx a_diag[2]) {
    const Vector2d d = gradlog_of(M, chart, u);
    a_diag[0] = cplx(0, 0.5 * d[1]);
    a_diag[1] = cplx(0, -0.5 * d[0]);
}

void form_components(const FormFn& f, const Point& p, cplx& c0, Eigen::Vector2cd& c1,
                     cplx& c2) {
    c0 = f.deg0 ? f.deg0(p) : cplx(0, 0);
    c1 = f.deg1 ? f.deg1(p) : Eigen::Vector2cd::Zero().eval();
    c2 = f.deg2 ? f.deg2(p) : cplx(0, 0);
}

// c0 I + c1_a gamma_a + c2 gamma_1 gamma_2 into a 2x2 buffer
void clifford_into(FiberMat& out, cplx c0, const Eigen::Vector2cd& c1, cplx c2) {
    out.resize(2, 2);
    out(0, 0) = c0 - kI * c2;
    out(1, 1) = c0 + kI * c2;
    out(0, 1) = kI * c1[0] + c1[1];
    out(1, 0) = kI * c1[0] - c1[1];
}

using detail::inv_small;
using detail::path_stream;
using detail::run_paths;

constexpr double kFormH = 1e-5;

cplx eval0(const FormFn& f, const Point& p) { return f.deg0 ? f.deg0(p) : cplx(0, 0); }
Eigen::Vector2cd eval1(const FormFn& f, const Point& p) {
    return f.deg1 ? f.deg1(p) : Eigen::Vector2cd::Zero().eval();
}
cplx eval2(const FormFn& f, const Point& p) { return f.deg2 ? f.deg2(p) : cplx(0, 0); }

// d of a 0-form: components e_a(f) = sigma^{-1} d_a f
Eigen::Vector2cd fd_d0(const Manifold& M, const FormFn& f, const Point& p, double h) {
    Eigen::Vector2cd out;
    const double s = sigma_of(M, p.chart, Vector2d(p.coords));
    for (int a = 0; a < 2; ++a) {
        Vector2d up = Vector2d(p.coords), um = up;
        up[a] += h;
        um[a] -= h;
        out[a] = (eval0(f, point_in_chart(M, p.chart, up)) -
                  eval0(f, point_in_chart(M, p.chart, um))) /
                 (2 * h * s);
    }
    return out;
}

// d of a 1-form: (d_1(sigma a_2) - d_2(sigma a_1)) / sigma^2 on e^1 ^ e^2
cplx fd_d1(const Manifold& M, const FormFn& f, const Point& p, double h) {
    auto coord_comp = [&](const Vector2d& u, int a) {
        const Point q = point_in_chart(M, p.chart, u);
        return sigma_of(M, p.chart, u) * eval1(f, q)[a];
    };
    Vector2d u = Vector2d(p.coords);
    Vector2d u1p = u, u1m = u, u2p = u, u2m = u;
    u1p[0] += h;
    u1m[0] -= h;
    u2p[1] += h;
    u2m[1] -= h;
    const double s = sigma_of(M, p.chart, u);
    return ((coord_comp(u1p, 1) - coord_comp(u1m, 1)) -
            (coord_comp(u2p, 0) - coord_comp(u2m, 0))) /
           (2 * h * s * s);
}

// d^dagger of a 1-form: -(1/sigma^2) sum_a d_a (sigma a_a)
cplx fd_codiff1(const Manifold& M, const FormFn& f, const Point& p, double h) {
    auto coord_comp = [&](const Vector2d& u, int a) {
        const Point q = point_in_chart(M, p.chart, u);
        return sigma_of(M, p.chart, u) * eval1(f, q)[a];
    };
    Vector2d u = Vector2d(p.coords);
    cplx acc(0, 0);
    for (int a = 0; a < 2; ++a) {
        Vector2d up = u, um = u;
        up[a] += h;
        um[a] -= h;
        acc += coord_comp(up, a) - coord_comp(um, a);
    }
    const double s = sigma_of(M, p.chart, u);
    return -acc / (2 * h * s * s);
}

// d^dagger of F = f e^1 ^ e^2: components (e_2 f, -e_1 f)
Eigen::Vector2cd fd_codiff2(const Manifold& M, const FormFn& f, const Point& p, double h) {
    Eigen::Vector2cd df;
    const double s = sigma_of(M, p.chart, Vector2d(p.coords));
    for (int a = 0; a < 2; ++a) {
        Vector2d up = Vector2d(p.coords), um = up;
        up[a] += h;
        um[a] -= h;
        df[a] = (eval2(f, point_in_chart(M, p.chart, up)) -
                 eval2(f, point_in_chart(M, p.chart, um))) /
                (2 * h * s);
    }
    return Eigen::Vector2cd(df[1], -df[0]);
}

} // namespace

CliffordAlgebra2 CliffordAlgebra2::standard() {
    CliffordAlgebra2 alg;
    alg.gamma1 = CMat::Zero(2, 2);
    alg.gamma1(0, 1) = kI;
    alg.gamma1(1, 0) = kI;
    alg.gamma2 = CMat::Zero(2, 2);
    alg.gamma2(0, 1) = 1.0;
    alg.gamma2(1, 0) = -1.0;
    alg.grading = kI * alg.gamma1 * alg.gamma2;
    return alg;
}

FormFn form_zero() { return {}; }

FormFn form_const(cplx c) {
    FormFn f;
    f.deg0 = [c](const Point&) { return c; };
    return f;
}

FormFn form_coordinate(const Manifold& M, int axis) {
    if (M.kind() != ManifoldKind::Sphere2)
        throw std::domain_error("form_coordinate: sphere only");
    if (axis < 0 || axis > 2) throw std::domain_error("form_coordinate: axis 0..2");
    FormFn f;
    f.deg0 = [axis](const Point& p) { return cplx(p.embedded[axis], 0.0); };
    return f;
}

FormFn form_dcoordinate(const Manifold& M, int axis) {
    if (M.kind() != ManifoldKind::Sphere2)
        throw std::domain_error("form_dcoordinate: sphere only");
    if (axis < 0 || axis > 2) throw std::domain_error("form_dcoordinate: axis 0..2");
    const double r = M.radius();
    FormFn f;
    f.deg1 = [M, axis](const Point& p) {
        const auto J = M.embedding_jacobian(p.chart, Vector2d(p.coords));
        const double s = M.conformal_sigma(p.chart, Vector2d(p.coords));
        return Eigen::Vector2cd(J(axis, 0) / s, J(axis, 1) / s);
    };
    // coordinate functions are l = 1 eigenfunctions: d^dag d X = (2/r^2) X
    f.codiff1 = [axis, r](const Point& p) {
        return cplx(2.0 * p.embedded[axis] / (r * r), 0.0);
    };
    return f;
}

FormFn form_volume(cplx c) {
    FormFn f;
    f.deg2 = [c](const Point&) { return c; };
    return f;
}

CMat clifford_mult(const CliffordAlgebra2& alg, cplx c0, const Eigen::Vector2cd& c1,
                   cplx c2) {
    return c0 * CMat::Identity(2, 2) + c1[0] * alg.gamma1 + c1[1] * alg.gamma2 +
           c2 * (alg.gamma1 * alg.gamma2);
}

CMat clifford_mult(const CliffordAlgebra2& alg, const FormFn& alpha, const Point& p) {
    cplx c0, c2;
    Eigen::Vector2cd c1;
    form_components(alpha, p, c0, c1, c2);
    return clifford_mult(alg, c0, c1, c2);
}

SpinorField spinor_from_chart0(const Manifold& M,
                               std::function<Eigen::Vector2cd(const Vector2d&)> f) {
    if (M.kind() != ManifoldKind::Sphere2) {
        return SpinorField{[f = std::move(f)](int, const Vector2d& u) { return f(u); }};
    }
    auto b = spinor_s2(M);
    return SpinorField{[M, b, f = std::move(f)](int chart, const Vector2d& u) -> Eigen::Vector2cd {
        if (chart == 0) return f(u);
        const Point p = M.chart_point(1, u);
        FiberMat g;
        b.transition(0, 1, p, g);
        const Vector2d u0 = M.coords_in_chart(p, 0);
        return Eigen::Vector2cd(CMat(g) * f(u0));
    }};
}

Eigen::Vector2cd dirac_apply(const Manifold& M, const SpinorField& phi, const Point& p,
                             double h) {
    require_surface(M);
    const Vector2d u = Vector2d(p.coords);
    const double s = sigma_of(M, p.chart, u);
    cplx adiag[2];
    spin_connection(M, p.chart, u, adiag);
    const Eigen::Vector2cd phi0 = phi.eval(p.chart, u);

    Eigen::Vector2cd cov[2];
    for (int a = 0; a < 2; ++a) {
        Vector2d up = u, um = u;
        up[a] += h;
        um[a] -= h;
        cov[a] = (phi.eval(p.chart, up) - phi.eval(p.chart, um)) / (2 * h);
        cov[a][0] += adiag[a] * phi0[0];
        cov[a][1] -= adiag[a] * phi0[1];
    }
    // gamma_1 v = (i v_1, i v_0), gamma_2 v = (v_1, -v_0)
    Eigen::Vector2cd out;
    out[0] = (kI * cov[0][1] + cov[1][1]) / s;
    out[1] = (kI * cov[0][0] - cov[1][0]) / s;
    return out;
}

Eigen::Vector2cd covariant_derivative(const Manifold& M, const SpinorField& phi,
                                      const Point& p, int frame_axis, double h) {
    require_surface(M);
    const Vector2d u = Vector2d(p.coords);
    const double s = sigma_of(M, p.chart, u);
    cplx adiag[2];
    spin_connection(M, p.chart, u, adiag);
    Vector2d up = u, um = u;
    up[frame_axis] += h;
    um[frame_axis] -= h;
    Eigen::Vector2cd out = (phi.eval(p.chart, up) - phi.eval(p.chart, um)) / (2 * h);
    const Eigen::Vector2cd phi0 = phi.eval(p.chart, u);
    out[0] += adiag[frame_axis] * phi0[0];
    out[1] -= adiag[frame_axis] * phi0[1];
    return out / s;
}

Eigen::Vector2cd bochner_apply(const Manifold& M, const SpinorField& phi, const Point& p,
                               double h) {
    require_surface(M);
    const Vector2d u = Vector2d(p.coords);
    const double s = sigma_of(M, p.chart, u);
    cplx adiag[2];
    spin_connection(M, p.chart, u, adiag);
    const Eigen::Vector2cd phi0 = phi.eval(p.chart, u);

    // sum_a d_a A_a = 0 for the conformal spin connection, so
    // nabla^dag nabla = -sigma^{-2} [sum_a d_a^2 + 2 A_a d_a + A_a^2]
    Eigen::Vector2cd acc = Eigen::Vector2cd::Zero();
    for (int a = 0; a < 2; ++a) {
        Vector2d up = u, um = u;
        up[a] += h;
        um[a] -= h;
        const Eigen::Vector2cd fp = phi.eval(p.chart, up);
        const Eigen::Vector2cd fm = phi.eval(p.chart, um);
        acc += (fp - 2 * phi0 + fm) / (h * h);
        const Eigen::Vector2cd dphi = (fp - fm) / (2 * h);
        acc[0] += 2.0 * adiag[a] * dphi[0] + adiag[a] * adiag[a] * phi0[0];
        acc[1] += -2.0 * adiag[a] * dphi[1] + adiag[a] * adiag[a] * phi0[1];
    }
    return -acc / (s * s);
}

double lichnerowicz_check(const Manifold& M, const SpinorField& phi, const Point& p,
                          double h) {
    SpinorField dphi{[&](int chart, const Vector2d& u) {
        return dirac_apply(M, phi, point_in_chart(M, chart, u), h);
    }};
    const Eigen::Vector2cd lhs = dirac_apply(M, dphi, p, h);
    const Eigen::Vector2cd rhs =
        bochner_apply(M, phi, p, h) +
        0.25 * M.scalar_curvature(p) * phi.eval(p.chart, Vector2d(p.coords));
    return (lhs - rhs).norm();
}

Eigen::Vector2cd graded_commutator(const Manifold& M, const FormFn& alpha, int degree,
                                   const SpinorField& phi, const Point& p, double h) {
    require_surface(M);
    const auto alg = CliffordAlgebra2::standard();
    auto c_of = [&](const Point& q) -> CMat {
        switch (degree) {
            case 0:
                return clifford_mult(alg, eval0(alpha, q), Eigen::Vector2cd::Zero(), 0.0);
            case 1:
                return clifford_mult(alg, 0.0, eval1(alpha, q), 0.0);
            case 2:
                return clifford_mult(alg, 0.0, Eigen::Vector2cd::Zero(), eval2(alpha, q));
            default:
                throw std::domain_error("graded_commutator: degree 0..2");
        }
    };
    SpinorField ca_phi{[&](int chart, const Vector2d& u) {
        const Point q = point_in_chart(M, chart, u);
        return (c_of(q) * phi.eval(chart, u)).eval();
    }};
    const double sign = (degree % 2 == 0) ? 1.0 : -1.0;
    return dirac_apply(M, ca_phi, p, h) -
           sign * (c_of(p) * dirac_apply(M, phi, p, h)).eval();
}

double commutation_identity_check(const Manifold& M, const FormFn& alpha,
                                  const SpinorField& phi, const Point& p, double h) {
    require_surface(M);
    const auto alg = CliffordAlgebra2::standard();

    Eigen::Vector2cd lhs = Eigen::Vector2cd::Zero();
    if (alpha.deg0) lhs += graded_commutator(M, alpha, 0, phi, p, h);
    if (alpha.deg1) lhs += graded_commutator(M, alpha, 1, phi, p, h);
    if (alpha.deg2) lhs += graded_commutator(M, alpha, 2, phi, p, h);

    // (d + d^dagger) alpha by degree
    cplx out0(0, 0), out2(0, 0);
    Eigen::Vector2cd out1 = Eigen::Vector2cd::Zero();
    if (alpha.deg0) out1 += fd_d0(M, alpha, p, h);
    if (alpha.deg1) {
        out2 += fd_d1(M, alpha, p, h);
        out0 += alpha.codiff1 ? alpha.codiff1(p) : fd_codiff1(M, alpha, p, h);
    }
    if (alpha.deg2) out1 += alpha.codiff2 ? alpha.codiff2(p) : fd_codiff2(M, alpha, p, h);

    const Eigen::Vector2cd phi0 = phi.eval(p.chart, Vector2d(p.coords));
    Eigen::Vector2cd rhs = (clifford_mult(alg, out0, out1, out2) * phi0).eval();

    // -2 sum_a c(e_a . alpha) nabla_{e_a} phi
    const Eigen::Vector2cd a1 = eval1(alpha, p);
    const cplx f2 = eval2(alpha, p);
    for (int a = 0; a < 2; ++a) {
        const Eigen::Vector2cd cov = covariant_derivative(M, phi, p, a, h);
        Eigen::Vector2cd c1 = Eigen::Vector2cd::Zero();
        if (a == 0)
            c1[1] = f2;
        else
            c1[0] = -f2;
        rhs -= 2.0 * (clifford_mult(alg, a1[a], c1, 0.0) * cov).eval();
    }
    return (lhs - rhs).norm();
}

FirstOrderOp build_FT(const Manifold& M, const TForm& alpha) {
    require_surface(M);
    FirstOrderOp op;
    op.rank = 2;
    const FormFn prime = alpha.prime;
    const FormFn dprime = alpha.dprime;
    const bool has_prime1 = static_cast<bool>(prime.deg1);
    const bool has_prime2 = static_cast<bool>(prime.deg2);

    if (has_prime1 || has_prime2) {
        op.sigma1 = [M, prime, has_prime1, has_prime2](const Point& p, const CoordVec& v,
                                                       FiberMat& out) {
            const double s = sigma_of(M, p.chart, Vector2d(p.coords));
            const double w0 = s * v[0], w1 = s * v[1]; // frame components
            cplx m0(0, 0);
            Eigen::Vector2cd m1 = Eigen::Vector2cd::Zero();
            if (has_prime1) {
                const auto a1 = prime.deg1(p);
                m0 = a1[0] * w0 + a1[1] * w1;
            }
            if (has_prime2) {
                const cplx f2 = prime.deg2(p);
                m1[0] = -f2 * w1;
                m1[1] = f2 * w0;
            }
            clifford_into(out, 2.0 * m0, (2.0 * m1).eval(), 0.0);
        };
    }

    if (has_prime1 || has_prime2 || !dprime.empty()) {
        op.q0 = [M, prime, dprime, has_prime1, has_prime2](const Point& p, FiberMat& out) {
            cplx q0(0, 0), q2(0, 0);
            Eigen::Vector2cd q1 = Eigen::Vector2cd::Zero();
            if (has_prime1)
                q0 -= prime.codiff1 ? prime.codiff1(p) : fd_codiff1(M, prime, p, kFormH);
            if (has_prime2)
                q1 -= prime.codiff2 ? prime.codiff2(p) : fd_codiff2(M, prime, p, kFormH);
            cplx b0, b2;
            Eigen::Vector2cd b1;
            form_components(dprime, p, b0, b1, b2);
            q0 -= b0;
            q1 -= b1;
            q2 -= b2;
            clifford_into(out, q0, q1, q2);
        };
    }
    return op;
}

ZerothOrderFn build_FT_pair(const Manifold& M, const TForm& alpha0, const TForm& alpha1) {
    require_surface(M);
    auto degree_of = [](const FormFn& f) {
        const int n = (f.deg0 ? 1 : 0) + (f.deg1 ? 1 : 0) + (f.deg2 ? 1 : 0);
        if (n > 1)
            throw std::domain_error("build_FT_pair: alpha' parts must be homogeneous");
        if (f.deg1) return 1;
        if (f.deg2) return 2;
        return 0;
    };
    const int d0 = degree_of(alpha0.prime);
    const double sign = (d0 % 2 == 0) ? 1.0 : -1.0;
    const FormFn a = alpha0.prime, b = alpha1.prime;
    return [a, b, sign](const Point& p, FiberMat& out) {
        const auto alg = CliffordAlgebra2::standard();
        cplx a0, a2, b0, b2;
        Eigen::Vector2cd a1, b1;
        form_components(a, p, a0, a1, a2);
        form_components(b, p, b0, b1, b2);
        const cplx w0 = a0 * b0;
        const Eigen::Vector2cd w1 = a0 * b1 + b0 * a1;
        const cplx w2 = a0 * b2 + b0 * a2 + (a1[0] * b1[1] - a1[1] * b1[0]);
        const CMat cw = clifford_mult(alg, w0, w1, w2);
        const CMat ca = clifford_mult(alg, a0, a1, a2);
        const CMat cb = clifford_mult(alg, b0, b1, b2);
        out = sign * (cw - ca * cb);
    };
}

namespace {

struct ChernPointResult {
    cplx mean = 0;
    double var = 0;
    long n = 0;
    long rejected = 0;
};

// bridge expectation at one quadrature point: the spinor transport, the
// curvature weight, and for N=1 the accumulated insertion functional
ChernPointResult chern_point(const Manifold& M, const BundleSpec& B, const Point& x,
                             const CMat& str_weight, const TForm* alpha1, double t,
                             double delta, const McConfig& mc, std::uint64_t seed,
                             ChernRule rule) {
    const bool has_a1 = alpha1 != nullptr;
    const bool a1_deg1 = has_a1 && static_cast<bool>(alpha1->prime.deg1);
    const bool a1_deg2 = has_a1 && static_cast<bool>(alpha1->prime.deg2);
    const bool a1_dp = has_a1 && !alpha1->dprime.empty();

    detail::PathFn fn = [&](long i, CMat& sample, double& w) {
        auto br = sample_bridge(M, x, x, t, mc.dt, delta, path_stream(seed, i));
        const auto& path = br.path;
        auto transport = parallel_transport(M, B, path);
        const int n = path.steps();
        const double dt = path.dt;

        double scal_int = 0;
        FiberMat S = FiberMat::Zero(2, 2);
        FiberMat inner(2, 2), tr(2, 2), tri(2, 2), tmp(2, 2);
        for (int k = 0; k < n; ++k) {
            const Point p = path.point_at(M, k);
            scal_int += (k == 0 ? 0.5 : 1.0) * M.scalar_curvature(p) * dt;
            if (!has_a1) continue;

            tr = transport.at(k);
            inv_small(tr, tri);
            cplx m0(0, 0), m2(0, 0);
            Eigen::Vector2cd m1 = Eigen::Vector2cd::Zero();
            if (a1_deg1 || a1_deg2) {
                const double xi0 = path.increments(k, 0), xi1 = path.increments(k, 1);
                Point pc = p;
                if (rule == ChernRule::StratonovichMidpoint) {
                    CoordVec half = 0.5 * chart_increment(M, path, k);
                    Point mid = M.exp_step(p, half);
                    pc.chart = p.chart;
                    pc.coords = M.coords_in_chart(mid, p.chart);
                    pc.embedded = mid.embedded;
                }
                if (a1_deg1) {
                    const auto a1v = alpha1->prime.deg1(pc);
                    m0 += 2.0 * (a1v[0] * xi0 + a1v[1] * xi1);
                    if (rule == ChernRule::ItoForm)
                        m0 -= (alpha1->prime.codiff1
                                   ? alpha1->prime.codiff1(p)
                                   : fd_codiff1(M, alpha1->prime, p, kFormH)) *
                              dt;
                }
                if (a1_deg2) {
                    const cplx f2 = alpha1->prime.deg2(pc);
                    m1[0] += -2.0 * f2 * xi1;
                    m1[1] += 2.0 * f2 * xi0;
                    if (rule == ChernRule::ItoForm)
                        m1 -= (alpha1->prime.codiff2
                                   ? alpha1->prime.codiff2(p)
                                   : fd_codiff2(M, alpha1->prime, p, kFormH)) *
                              dt;
                }
            }
            if (a1_dp) {
                cplx b0, b2;
                Eigen::Vector2cd b1;
                form_components(alpha1->dprime, p, b0, b1, b2);
                m0 -= b0 * dt;
                m1 -= b1 * dt;
                m2 -= b2 * dt;
            }
            clifford_into(inner, m0, m1, m2);
            tmp.noalias() = tri * inner;
            inner.noalias() = tmp * tr;
            S += inner;
        }
        // frozen tail: finish the trapezoid and extend over [t-delta, t]
        const Point pe = path.point_at(M, n);
        scal_int += 0.5 * M.scalar_curvature(pe) * dt;
        scal_int += M.scalar_curvature(pe) * delta;
        const double weight = std::exp(-scal_int / 8.0);

        FiberMat tr_end = transport.at(n), tri_end(2, 2);
        inv_small(tr_end, tri_end);
        FiberMat val(2, 2);
        if (has_a1)
            val.noalias() = S * tri_end;
        else
            val = tri_end;
        w = br.weight;
        sample(0, 0) = w * weight * (str_weight * CMat(val)).trace();
        return true;
    };
    auto acc = run_paths(mc.n_paths, mc.workers, 1, 1, fn, mc.abort_on_nonfinite);

    ChernPointResult out;
    out.n = acc.n;
    out.rejected = acc.rejected;
    const double wbar = acc.mean_w;
    const cplx R = acc.mean_n(0, 0) / wbar;
    out.mean = R;
    if (acc.n > 1) {
        const double nn = static_cast<double>(acc.n);
        const double vn = acc.m2_n(0, 0) / (nn - 1);
        const double vw = acc.m2_w / (nn - 1);
        const double cv = (std::conj(R) * acc.comoment(0, 0)).real() / (nn - 1);
        out.var = std::max(0.0, vn - 2 * cv + std::norm(R) * vw) / (nn * wbar * wbar);
    }
    return out;
}

Estimate chern_quadrature(const Manifold& M, const TForm& alpha0, const TForm* alpha1,
                          double t, const McConfig& mc, int grid_order, ChernRule rule,
                          double prefactor) {
    if (M.kind() != ManifoldKind::Sphere2)
        throw std::domain_error("Chern estimators need the Sphere2 geometry");
    const auto t0 = std::chrono::steady_clock::now();
    const auto alg = CliffordAlgebra2::standard();
    const auto B = spinor_s2(M);
    const double delta = default_bridge_delta(mc, t);
    const auto grid = M.quadrature_grid(grid_order);

    cplx total(0, 0);
    double var_total = 0;
    long paths = 0, rejected = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto& [x, wq] = grid[g];
        const double pt = M.heat_kernel(x, x, t);
        const CMat strw = alg.grading * clifford_mult(alg, alpha0.prime, x);
        auto r = chern_point(M, B, x, strw, alpha1, t, delta, mc, mc.seed + g, rule);
        total += wq * pt * r.mean;
        var_total += wq * wq * pt * pt * r.var;
        paths += r.n;
        rejected += r.rejected;
    }

    Estimate est;
    est.mean = CMat::Constant(1, 1, prefactor * total);
    est.std_error =
        Eigen::MatrixXd::Constant(1, 1, std::abs(prefactor) * std::sqrt(var_total));
    est.n_paths = paths;
    est.dt = mc.dt;
    est.seed = mc.seed;
    est.rejected = rejected;
    est.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return est;
}

} // namespace

Estimate chern_N0(const Manifold& M, const TForm& alpha0, double t, const McConfig& mc,
                  int grid_order) {
    return chern_quadrature(M, alpha0, nullptr, t, mc, grid_order, ChernRule::ItoForm, 1.0);
}

Estimate chern_N1(const Manifold& M, const TForm& alpha0, const TForm& alpha1,
                  const McConfig& mc, int grid_order, double t, ChernRule rule) {
    // Ch(a0 x a1) = -Str(c(a0') int_0^1 e^{-s D^2} F_T(a1) e^{-(1-s) D^2} ds);
    // e^{-D^2} = e^{-2 H_{scal/8}} turns the s-integral into (1/2) of the
    // [0,2] bridge functional, so the estimator carries the prefactor -1/2
    return chern_quadrature(M, alpha0, &alpha1, t, mc, grid_order, rule, -0.5);
}

DiracTruncation dirac_truncation(int level) {
    if (level < 1) throw std::domain_error("dirac_truncation: level must be >= 1");
    const int J = level;

    struct Fn {
        int comp; // 0 upper, 1 lower
        int p, q;
    };
    std::vector<Fn> basis;
    for (int p = 0; p <= J; ++p)
        for (int q = 0; q <= J + 1; ++q) basis.push_back({0, p, q});
    for (int p = 0; p <= J + 1; ++p)
        for (int q = 0; q <= J; ++q) basis.push_back({1, p, q});
    const long dim = static_cast<long>(basis.size());

    // int z^a zbar^a 4 (1+|z|^2)^{-(2J+3)} dA = 4 pi a! (2J+1-a)! / (2J+2)!
    auto I = [J](int a) {
        return 4 * kPi *
               std::exp(std::lgamma(a + 1.0) + std::lgamma(2 * J + 2.0 - a) -
                        std::lgamma(2 * J + 3.0));
    };

    DiracTruncation T;
    T.level = J;
    T.dim = dim;
    T.gram = CMat::Zero(dim, dim);
    T.D = CMat::Zero(dim, dim);
    T.gamma = CMat::Zero(dim, dim);

    for (long i = 0; i < dim; ++i)
        for (long j = 0; j < dim; ++j) {
            const Fn& a = basis[static_cast<std::size_t>(i)];
            const Fn& b = basis[static_cast<std::size_t>(j)];
            if (a.comp == b.comp && a.q + b.p == a.p + b.q) {
                const double v = I(a.q + b.p);
                T.gram(i, j) = v;
                T.gamma(i, j) = (a.comp == 0) ? v : -v;
            }
            if (a.comp == 0 && b.comp == 1 && a.p + b.q + 1 == a.q + b.p) {
                // (D psi^-_{pq})_+ = i [p z^{p-1} zbar^q + (p-J-1) z^p zbar^{q+1}] W
                double v = (b.p - J - 1) * I(a.q + b.p);
                if (b.p >= 1) v += b.p * I(a.q + b.p - 1);
                T.D(i, j) = kI * v;
            }
            if (a.comp == 1 && b.comp == 0 && a.q + b.p + 1 == a.p + b.q) {
                // (D psi^+_{pq})_- = i [q z^p zbar^{q-1} + (q-J-1) z^{p+1} zbar^q] W
                double v = (b.q - J - 1) * I(a.q + b.p + 1);
                if (b.q >= 1) v += b.q * I(a.q + b.p);
                T.D(i, j) = kI * v;
            }
        }

    // assembly is Hermitian up to roundoff; symmetrize for the solver
    T.D = 0.5 * (T.D + T.D.adjoint()).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<CMat> es(T.D, T.gram);
    T.eigenvalues = es.eigenvalues();
    T.to_orthonormal = es.eigenvectors();
    return T;
}

CMat dirac_mult_matrix(const DiracTruncation& T, int which) {
    if (which == 0) return CMat::Identity(T.dim, T.dim);
    if (which != 2) throw std::domain_error("dirac_mult_matrix: which must be 0 or 2 (Z)");
    const int J = T.level;
    struct Fn {
        int comp, p, q;
    };
    std::vector<Fn> basis;
    for (int p = 0; p <= J; ++p)
        for (int q = 0; q <= J + 1; ++q) basis.push_back({0, p, q});
    for (int p = 0; p <= J + 1; ++p)
        for (int q = 0; q <= J; ++q) basis.push_back({1, p, q});

    // int z^a zbar^a Z 4 (1+)^{-(2J+4)} dA, Z = (1-|z|^2)/(1+|z|^2)
    auto I2 = [J](int a) {
        const double lg = std::lgamma(2 * J + 4.0);
        return 4 * kPi *
               (std::exp(std::lgamma(a + 1.0) + std::lgamma(2 * J + 3.0 - a) - lg) -
                std::exp(std::lgamma(a + 2.0) + std::lgamma(2 * J + 2.0 - a) - lg));
    };
    CMat Z = CMat::Zero(T.dim, T.dim);
    for (long i = 0; i < T.dim; ++i)
        for (long j = 0; j < T.dim; ++j) {
            const Fn& a = basis[static_cast<std::size_t>(i)];
            const Fn& b = basis[static_cast<std::size_t>(j)];
            if (a.comp == b.comp && a.q + b.p == a.p + b.q) Z(i, j) = I2(a.q + b.p);
        }
    return T.to_orthonormal.adjoint() * Z * T.to_orthonormal;
}

CMat dirac_gamma_matrix(const DiracTruncation& T) {
    return T.to_orthonormal.adjoint() * T.gamma * T.to_orthonormal;
}

double dirac_supertrace_heat(const DiracTruncation& T, double t) {
    const CMat g = dirac_gamma_matrix(T);
    double s = 0;
    for (long i = 0; i < T.dim; ++i)
        s += g(i, i).real() * std::exp(-t * T.eigenvalues[i] * T.eigenvalues[i]);
    return s;
}

cplx dirac_duhamel_supertrace(const DiracTruncation& T, const CMat& C0, const CMat& F) {
    CMat duh(T.dim, T.dim);
    for (long i = 0; i < T.dim; ++i)
        for (long j = 0; j < T.dim; ++j) {
            const double li = T.eigenvalues[i] * T.eigenvalues[i];
            const double lj = T.eigenvalues[j] * T.eigenvalues[j];
            if (std::abs(li - lj) < 1e-10)
                duh(i, j) = F(i, j) * std::exp(-li);
            else
                duh(i, j) = F(i, j) * (std::exp(-li) - std::exp(-lj)) / (lj - li);
        }
    const CMat g = dirac_gamma_matrix(T);
    return (g * C0 * duh).trace();
}

} // namespace covfk
