#pragma once

#include "covfk/geometry.hpp"
#include "covfk/rng.hpp"

#include <vector>

namespace covfk {

// Discretized Brownian path from the geodesic Euler scheme. The grid is
// uniform with step dt = t/n where n is chosen so dt matches the requested
// step within rounding. increments.row(i) holds the frame-coordinate Gaussian
// step already scaled by sqrt(dt); frames are Levi-Civita transported along
// each geodesic step, so no explosion handling is needed (all supported
// geometries are compact).
struct PathSample {
    double t = 0;
    double dt = 0;
    MatrixXd coords;         // (n+1) x m chart coordinates
    std::vector<int> charts; // n+1 chart ids
    MatrixXd embedded;       // (n+1) x 3 for the sphere, else empty
    MatrixXd frames;         // (n+1)*m x m, frame i stacked at row block i
    MatrixXd increments;     // n x m

    int steps() const { return static_cast<int>(increments.rows()); }
    int dim() const { return static_cast<int>(increments.cols()); }
    auto frame_at(int i) const { return frames.middleRows(i * dim(), dim()); }
    Point point_at(const Manifold& M, int i) const;
};

struct BridgeSample {
    PathSample path;  // unconditioned path on [0, t - delta]
    Point target;     // y
    double t = 0;
    double delta = 0;
    double weight = 0; // p(delta, endpoint, y) / p(t, x, y)
};

PathSample sample_bm(const Manifold& M, const Point& x, double t, double dt, RngConfig rng);

// Bridge by terminal reweighting: an unconditioned path on [0, t-delta] plus
// the density ratio weight; expectations of horizon-(t-delta) functionals F
// under the bridge measure are estimated as mean(F * weight) / mean(weight).
BridgeSample sample_bridge(const Manifold& M, const Point& x, const Point& y, double t,
                           double dt, double delta, RngConfig rng);

// chart increment of step i expressed in the chart of point i (wrap-aware on
// flat geometries)
CoordVec chart_increment(const Manifold& M, const PathSample& path, int i);

} // namespace covfk
