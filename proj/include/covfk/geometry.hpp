#pragma once

#include "covfk/types.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace covfk {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;

struct ConvergenceError : std::runtime_error {
    double achieved;
    ConvergenceError(const std::string& what, double bound)
        : std::runtime_error(what), achieved(bound) {}
};

enum class ManifoldKind { Circle, FlatTorus, Sphere2 };

// A point in a chart. Circle: chart 0, coords = (arclength in [0, 2*pi*r)).
// FlatTorus: chart 0, coords normalized to [0, period_i). Sphere2: chart 0 is
// the stereographic chart centered at the north pole, chart 1 at the south
// pole; the embedded representative in R^3 is kept alongside.
struct Point {
    int chart = 0;
    CoordVec coords;
    Vector3d embedded = Vector3d::Zero();
};

struct TangentVector {
    Point base;
    CoordVec components; // in the chart of `base`
};

enum class HeatKernelRep { Auto, Wrapped, Fourier };

// Compact model geometry: metric data, geodesic stepping, curvature and the
// closed-form heat kernel of the semigroup generated by (1/2)*Laplacian.
class Manifold {
public:
    static Manifold circle(double radius);
    static Manifold flat_torus(std::vector<double> periods);
    static Manifold sphere2(double radius);

    ManifoldKind kind() const noexcept { return kind_; }
    int dim() const noexcept { return dim_; }
    double radius() const noexcept { return radius_; }
    const std::vector<double>& periods() const noexcept { return periods_; }
    double volume() const noexcept;

    // point constructors
    Point point(const VectorXd& coords) const;       // circle / torus (wraps)
    Point point_embedded(const Vector3d& p) const;   // sphere
    Point chart_point(int chart, const Vector2d& u) const; // sphere

    bool in_chart_domain(const Point& p) const;

    MatrixXd metric_at(const Point& p) const;
    // Gamma^k_{ij}, indexed [k](i,j)
    std::vector<MatrixXd> christoffel(const Point& p) const;
    Point exp_step(const Point& p, const CoordVec& v) const;
    Point exp_step(const Point& p, const TangentVector& v) const;
    double distance(const Point& p, const Point& q) const;
    double scalar_curvature(const Point& p) const;

    double heat_kernel(const Point& x, const Point& y, double t,
                       HeatKernelRep rep = HeatKernelRep::Auto) const;

    // orthonormal frame F at p (columns = frame vectors in chart coords),
    // F^T g F = I
    FrameMat orthonormal_frame(const Point& p) const;
    // Levi-Civita transport of frame F along the geodesic from p with initial
    // tangent v; q must be exp_step(p, v). Result is in q's chart.
    FrameMat transport_frame(const Point& p, const CoordVec& v, const FrameMat& F,
                               const Point& q) const;

    // sphere chart plumbing
    Vector3d embed(int chart, const Vector2d& u) const;
    Vector2d chart_coords(int chart, const Vector3d& p) const;
    int preferred_chart(const Vector3d& p) const;
    // coordinates of p expressed in `chart` (sphere); p itself may be stored
    // in the other chart
    Vector2d coords_in_chart(const Point& p, int chart) const;
    // conformal factor sigma with g = sigma^2 * I, and grad log(sigma)
    double conformal_sigma(int chart, const Vector2d& u) const;
    Vector2d conformal_grad_log_sigma(int chart, const Vector2d& u) const;
    // d embed / d u at a chart point
    Eigen::Matrix<double, 3, 2> embedding_jacobian(int chart, const Vector2d& u) const;

    // quadrature grid with weights summing to volume(); circle/torus grids are
    // uniform (exact for trig polynomials below the grid order), the sphere
    // grid is Gauss-Legendre in cos(theta) x uniform in phi
    std::vector<std::pair<Point, double>> quadrature_grid(int order) const;

private:
    Manifold() = default;

    double wrapped_or_fourier_1d(double t, double delta, double period,
                                 HeatKernelRep rep) const;
    double sphere_heat_kernel(double t, double geodesic_distance) const;

    ManifoldKind kind_ = ManifoldKind::Circle;
    int dim_ = 1;
    double radius_ = 1.0;
    std::vector<double> periods_;
};

// nodes/weights for n-point Gauss-Legendre on [-1, 1]
std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n);

} // namespace covfk
