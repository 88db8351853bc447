#include "covfk/geometry.hpp"
#include "covfk/fault.hpp"

#include <atomic>
#include <cmath>

namespace covfk {

namespace {
constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kTwoPi = 2.0 * kPi;

std::atomic<Fault> g_fault{Fault::none};

double wrap(double x, double period) {
    double y = std::fmod(x, period);
    if (y < 0) y += period;
    return y;
}

// signed representative of x mod period in [-period/2, period/2)
double wrap_centered(double x, double period) {
    double y = wrap(x, period);
    if (y >= 0.5 * period) y -= period;
    return y;
}

// Jacobian of the stereographic embedding at a chart point
Eigen::Matrix<double, 3, 2> chart_jacobian(double r, int chart, const Vector2d& u) {
    const double rr = r * r;
    const double den = rr + u.squaredNorm();
    const double den2 = den * den;
    Eigen::Matrix<double, 3, 2> J;
    J(0, 0) = 2 * rr * (den - 2 * u[0] * u[0]) / den2;
    J(0, 1) = -4 * rr * u[0] * u[1] / den2;
    J(1, 0) = -4 * rr * u[0] * u[1] / den2;
    J(1, 1) = 2 * rr * (den - 2 * u[1] * u[1]) / den2;
    J(2, 0) = -4 * rr * r * u[0] / den2;
    J(2, 1) = -4 * rr * r * u[1] / den2;
    if (chart == 1) {
        J.row(1) = -J.row(1);
        J.row(2) = -J.row(2);
    }
    return J;
}
} // namespace

Fault active_fault() noexcept { return g_fault.load(std::memory_order_relaxed); }
void set_fault(Fault f) noexcept { g_fault.store(f, std::memory_order_relaxed); }

Fault fault_from_name(const std::string& name) {
    if (name.empty() || name == "none") return Fault::none;
    if (name == "christoffel_sign") return Fault::christoffel_sign;
    if (name == "berezin_sign") return Fault::berezin_sign;
    throw std::invalid_argument("unknown fault: " + name);
}

Manifold Manifold::circle(double radius) {
    if (!(radius > 0)) throw std::domain_error("circle: radius must be positive");
    Manifold m;
    m.kind_ = ManifoldKind::Circle;
    m.dim_ = 1;
    m.radius_ = radius;
    m.periods_ = {kTwoPi * radius};
    return m;
}

Manifold Manifold::flat_torus(std::vector<double> periods) {
    if (periods.empty()) throw std::domain_error("flat_torus: need at least one period");
    if (periods.size() > 8)
        throw std::domain_error("flat_torus: at most 8 dimensions supported");
    for (double p : periods)
        if (!(p > 0)) throw std::domain_error("flat_torus: periods must be positive");
    Manifold m;
    m.kind_ = ManifoldKind::FlatTorus;
    m.dim_ = static_cast<int>(periods.size());
    m.periods_ = std::move(periods);
    return m;
}

Manifold Manifold::sphere2(double radius) {
    if (!(radius > 0)) throw std::domain_error("sphere2: radius must be positive");
    Manifold m;
    m.kind_ = ManifoldKind::Sphere2;
    m.dim_ = 2;
    m.radius_ = radius;
    return m;
}

double Manifold::volume() const noexcept {
    switch (kind_) {
        case ManifoldKind::Circle: return periods_[0];
        case ManifoldKind::FlatTorus: {
            double v = 1.0;
            for (double p : periods_) v *= p;
            return v;
        }
        case ManifoldKind::Sphere2: return 4.0 * kPi * radius_ * radius_;
    }
    return 0.0;
}

Point Manifold::point(const VectorXd& coords) const {
    if (kind_ == ManifoldKind::Sphere2)
        throw std::domain_error("sphere points need chart_point or point_embedded");
    if (coords.size() != dim_) throw std::domain_error("point: coordinate size mismatch");
    Point p;
    p.chart = 0;
    p.coords.resize(dim_);
    for (int i = 0; i < dim_; ++i) p.coords[i] = wrap(coords[i], periods_[i]);
    return p;
}

Point Manifold::point_embedded(const Vector3d& x) const {
    if (kind_ != ManifoldKind::Sphere2) throw std::domain_error("point_embedded: sphere only");
    Vector3d p = x * (radius_ / x.norm());
    Point out;
    out.chart = preferred_chart(p);
    out.embedded = p;
    out.coords = chart_coords(out.chart, p);
    return out;
}

Point Manifold::chart_point(int chart, const Vector2d& u) const {
    if (kind_ != ManifoldKind::Sphere2) throw std::domain_error("chart_point: sphere only");
    if (chart != 0 && chart != 1) throw std::domain_error("chart_point: chart must be 0 or 1");
    Point out;
    out.chart = chart;
    out.coords = u;
    out.embedded = embed(chart, u);
    return out;
}

bool Manifold::in_chart_domain(const Point& p) const {
    if (kind_ != ManifoldKind::Sphere2) {
        for (int i = 0; i < dim_; ++i)
            if (p.coords[i] < 0 || p.coords[i] >= periods_[i]) return false;
        return true;
    }
    // chart domain |u| <= 2r keeps the conformal factor bounded
    return p.coords.norm() <= 2.0 * radius_ + 1e-12;
}

Vector3d Manifold::embed(int chart, const Vector2d& u) const {
    const double r = radius_;
    const double rho2 = u.squaredNorm();
    const double den = r * r + rho2;
    if (chart == 0)
        return Vector3d(2 * r * r * u[0] / den, 2 * r * r * u[1] / den,
                        r * (r * r - rho2) / den);
    return Vector3d(2 * r * r * u[0] / den, -2 * r * r * u[1] / den,
                    -r * (r * r - rho2) / den);
}

Vector2d Manifold::chart_coords(int chart, const Vector3d& p) const {
    const double r = radius_;
    if (chart == 0) {
        const double den = r + p[2];
        if (den <= 0) throw std::domain_error("chart 0 does not cover the south pole");
        return Vector2d(r * p[0] / den, r * p[1] / den);
    }
    const double den = r - p[2];
    if (den <= 0) throw std::domain_error("chart 1 does not cover the north pole");
    return Vector2d(r * p[0] / den, -r * p[1] / den);
}

int Manifold::preferred_chart(const Vector3d& p) const { return p[2] >= 0 ? 0 : 1; }

Vector2d Manifold::coords_in_chart(const Point& p, int chart) const {
    if (p.chart == chart) return p.coords;
    return chart_coords(chart, p.embedded);
}

double Manifold::conformal_sigma(int, const Vector2d& u) const {
    const double r = radius_;
    return 2 * r * r / (r * r + u.squaredNorm());
}

Eigen::Matrix<double, 3, 2> Manifold::embedding_jacobian(int chart, const Vector2d& u) const {
    if (kind_ != ManifoldKind::Sphere2)
        throw std::domain_error("embedding_jacobian: sphere only");
    return chart_jacobian(radius_, chart, u);
}

Vector2d Manifold::conformal_grad_log_sigma(int, const Vector2d& u) const {
    Vector2d g = -2.0 * u / (radius_ * radius_ + u.squaredNorm());
    if (active_fault() == Fault::christoffel_sign) g = -g;
    return g;
}

MatrixXd Manifold::metric_at(const Point& p) const {
    if (!in_chart_domain(p)) throw std::domain_error("metric_at: point outside chart domain");
    if (kind_ != ManifoldKind::Sphere2) return MatrixXd::Identity(dim_, dim_);
    const double s = conformal_sigma(p.chart, p.coords);
    return (s * s) * MatrixXd::Identity(2, 2);
}

std::vector<MatrixXd> Manifold::christoffel(const Point& p) const {
    if (!in_chart_domain(p)) throw std::domain_error("christoffel: point outside chart domain");
    std::vector<MatrixXd> gamma(dim_, MatrixXd::Zero(dim_, dim_));
    if (kind_ != ManifoldKind::Sphere2) return gamma;
    // conformal metric g = sigma^2 I: Gamma^k_{ij} = d_j delta_ik + d_i delta_jk - d_k delta_ij
    const Vector2d d = conformal_grad_log_sigma(p.chart, p.coords);
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                gamma[k](i, j) = d[j] * (i == k) + d[i] * (j == k) - d[k] * (i == j);
    return gamma;
}

Point Manifold::exp_step(const Point& p, const CoordVec& v) const {
    if (kind_ != ManifoldKind::Sphere2) {
        Point q;
        q.chart = 0;
        q.coords.resize(dim_);
        for (int i = 0; i < dim_; ++i) q.coords[i] = wrap(p.coords[i] + v[i], periods_[i]);
        return q;
    }
    const double r = radius_;
    // embedded tangent via the chart Jacobian; its norm is the Riemannian norm
    Vector3d T = chart_jacobian(r, p.chart, p.coords) * Vector2d(v[0], v[1]);
    const double s = T.norm(); // arc length of the step
    if (s < 1e-300) return p;
    const Vector3d a = p.embedded / r;
    const Vector3d b = T / s;
    const double theta = s / r;
    Vector3d q = r * (std::cos(theta) * a + std::sin(theta) * b);
    return point_embedded(q);
}

Point Manifold::exp_step(const Point& p, const TangentVector& v) const {
    return exp_step(p, v.components);
}

double Manifold::distance(const Point& p, const Point& q) const {
    if (kind_ != ManifoldKind::Sphere2) {
        double s2 = 0;
        for (int i = 0; i < dim_; ++i) {
            double d = wrap_centered(p.coords[i] - q.coords[i], periods_[i]);
            s2 += d * d;
        }
        return std::sqrt(s2);
    }
    const Vector3d a = p.embedded, b = q.embedded;
    return radius_ * std::atan2(a.cross(b).norm(), a.dot(b));
}

double Manifold::scalar_curvature(const Point&) const {
    if (kind_ != ManifoldKind::Sphere2) return 0.0;
    return 2.0 / (radius_ * radius_);
}

FrameMat Manifold::orthonormal_frame(const Point& p) const {
    if (kind_ != ManifoldKind::Sphere2) return FrameMat::Identity(dim_, dim_);
    return (1.0 / conformal_sigma(p.chart, p.coords)) * FrameMat::Identity(2, 2);
}

FrameMat Manifold::transport_frame(const Point& p, const CoordVec& v, const FrameMat& F,
                                     const Point& q) const {
    if (kind_ != ManifoldKind::Sphere2) return F;
    const double r = radius_;
    Eigen::Matrix<double, 3, 2> Jp = chart_jacobian(r, p.chart, p.coords);
    Eigen::Matrix<double, 3, 2> E = Jp * F;
    Vector3d T = Jp * Vector2d(v[0], v[1]);
    const double s = T.norm();
    Eigen::Matrix<double, 3, 2> Erot;
    if (s < 1e-300) {
        Erot = E;
    } else {
        const Vector3d a = p.embedded / r;
        const Vector3d b = T / s;
        const double theta = s / r;
        const double c = std::cos(theta), sn = std::sin(theta);
        // rotation in span(a,b): x -> x + sin(ba^T - ab^T)x + (cos-1)(aa^T+bb^T)x
        for (int i = 0; i < 2; ++i) {
            Vector3d x = E.col(i);
            const double xa = a.dot(x), xb = b.dot(x);
            Erot.col(i) = x + sn * (xa * b - xb * a) + (c - 1) * (xa * a + xb * b);
        }
    }
    Eigen::Matrix<double, 3, 2> Jq = chart_jacobian(r, q.chart, q.coords);
    const double sq = conformal_sigma(q.chart, q.coords);
    // J^T J = sigma^2 I, so chart components are sigma^{-2} J^T E
    return (Jq.transpose() * Erot) / (sq * sq);
}

double Manifold::wrapped_or_fourier_1d(double t, double delta, double period,
                                       HeatKernelRep rep) const {
    if (rep == HeatKernelRep::Auto)
        rep = (t < 1.0) ? HeatKernelRep::Wrapped : HeatKernelRep::Fourier;
    const double d = wrap_centered(delta, period);
    constexpr int kCap = 10000;
    if (rep == HeatKernelRep::Wrapped) {
        const double norm = 1.0 / std::sqrt(kTwoPi * t);
        double sum = norm * std::exp(-d * d / (2 * t));
        for (int k = 1; k < kCap; ++k) {
            const double b1 = d + k * period, b2 = d - k * period;
            const double term =
                norm * (std::exp(-b1 * b1 / (2 * t)) + std::exp(-b2 * b2 / (2 * t)));
            sum += term;
            const double next = std::abs(d) + (k + 1) * period - period / 2;
            const double bound = 2 * norm * std::exp(-next * next / (2 * t));
            // far tails underflow to zero; the sum itself may round to 0
            if (bound < 1e-14 * sum || bound < 1e-300) return sum;
        }
        throw ConvergenceError("wrapped heat kernel did not converge", 0.0);
    }
    const double omega = kTwoPi / period;
    double sum = 1.0;
    for (int n = 1; n < kCap; ++n) {
        const double lam = 0.5 * omega * omega * n * n;
        const double term = 2 * std::exp(-lam * t) * std::cos(omega * n * d);
        sum += term;
        const double nb = 0.5 * omega * omega * (n + 1) * (n + 1);
        if (2 * std::exp(-nb * t) < 1e-14 * std::abs(sum)) return sum / period;
    }
    throw ConvergenceError("fourier heat kernel did not converge", 0.0);
}

double Manifold::sphere_heat_kernel(double t, double dist) const {
    const double r = radius_;
    const double x = std::cos(dist / r);
    const double norm = 1.0 / (4 * kPi * r * r);
    constexpr int kCap = 10000;
    double pl_m1 = 1.0;      // P_0
    double pl = x;           // P_1
    double sum = norm;       // l = 0 term
    double bound = 0;
    for (int l = 1; l < kCap; ++l) {
        const double decay = std::exp(-l * (l + 1) * t / (2 * r * r));
        sum += norm * (2 * l + 1) * decay * pl;
        bound = norm * (2 * l + 3) * std::exp(-(l + 1) * (l + 2) * t / (2 * r * r));
        // kernel is nonnegative; for tiny t at large distance the alternating
        // series cancels below its own roundoff floor, clamp that to zero
        if ((bound < 1e-14 * std::abs(sum) || bound < 1e-300) && l > 3)
            return std::max(sum, 0.0);
        const double pl_p1 = ((2 * l + 1) * x * pl - l * pl_m1) / (l + 1);
        pl_m1 = pl;
        pl = pl_p1;
    }
    throw ConvergenceError("sphere heat kernel series did not converge", bound);
}

double Manifold::heat_kernel(const Point& x, const Point& y, double t,
                             HeatKernelRep rep) const {
    if (!(t > 0)) throw std::domain_error("heat_kernel: t must be positive");
    switch (kind_) {
        case ManifoldKind::Circle:
            return wrapped_or_fourier_1d(t, x.coords[0] - y.coords[0], periods_[0], rep);
        case ManifoldKind::FlatTorus: {
            double prod = 1.0;
            for (int i = 0; i < dim_; ++i)
                prod *= wrapped_or_fourier_1d(t, x.coords[i] - y.coords[i], periods_[i], rep);
            return prod;
        }
        case ManifoldKind::Sphere2:
            if (rep != HeatKernelRep::Auto)
                throw std::domain_error("sphere heat kernel has a single representation");
            return sphere_heat_kernel(t, distance(x, y));
    }
    return 0.0;
}

std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
    std::vector<double> x(n), w(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double pp = 0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) * z * p1 - j * p2) / (j + 1);
            }
            pp = n * (z * p0 - p1) / (z * z - 1);
            const double dz = p0 / pp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1 - z * z) * pp * pp);
    }
    return {x, w};
}

std::vector<std::pair<Point, double>> Manifold::quadrature_grid(int order) const {
    if (order < 1) throw std::domain_error("quadrature_grid: order must be >= 1");
    std::vector<std::pair<Point, double>> grid;
    switch (kind_) {
        case ManifoldKind::Circle: {
            const double L = periods_[0];
            for (int i = 0; i < order; ++i) {
                VectorXd c(1);
                c[0] = i * L / order;
                grid.emplace_back(point(c), L / order);
            }
            break;
        }
        case ManifoldKind::FlatTorus: {
            std::vector<int> idx(dim_, 0);
            const long total = [&] {
                long t = 1;
                for (int i = 0; i < dim_; ++i) t *= order;
                return t;
            }();
            double w = volume() / static_cast<double>(total);
            for (long n = 0; n < total; ++n) {
                VectorXd c(dim_);
                long m = n;
                for (int i = 0; i < dim_; ++i) {
                    c[i] = (m % order) * periods_[i] / order;
                    m /= order;
                }
                grid.emplace_back(point(c), w);
            }
            break;
        }
        case ManifoldKind::Sphere2: {
            auto [z, wz] = gauss_legendre(order);
            const int nphi = 2 * order;
            const double r = radius_;
            for (int i = 0; i < order; ++i) {
                const double st = std::sqrt(std::max(0.0, 1 - z[i] * z[i]));
                for (int j = 0; j < nphi; ++j) {
                    const double phi = kTwoPi * j / nphi;
                    Vector3d p(r * st * std::cos(phi), r * st * std::sin(phi), r * z[i]);
                    grid.emplace_back(point_embedded(p), r * r * wz[i] * kTwoPi / nphi);
                }
            }
            break;
        }
    }
    return grid;
}

} // namespace covfk
