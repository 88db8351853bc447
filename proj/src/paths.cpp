#include "covfk/paths.hpp"

#include <cmath>

namespace covfk {

Point PathSample::point_at(const Manifold& M, int i) const {
    Point p;
    p.chart = charts[static_cast<std::size_t>(i)];
    p.coords = coords.row(i).transpose();
    if (M.kind() == ManifoldKind::Sphere2) p.embedded = embedded.row(i).transpose();
    return p;
}

PathSample sample_bm(const Manifold& M, const Point& x, double t, double dt, RngConfig rng) {
    if (!(t > 0) || !(dt > 0)) throw std::domain_error("sample_bm: t and dt must be positive");
    if (dt > t * (1 + 1e-12)) throw std::domain_error("sample_bm: dt must not exceed t");
    const int n = std::max<int>(1, static_cast<int>(std::ceil(t / dt - 1e-9)));
    const double h = t / n;
    const int m = M.dim();

    PathSample out;
    out.t = t;
    out.dt = h;
    out.coords.resize(n + 1, m);
    out.charts.assign(n + 1, x.chart);
    out.frames.resize((n + 1) * m, m);
    out.increments.resize(n, m);
    const bool sphere = M.kind() == ManifoldKind::Sphere2;
    if (sphere) out.embedded.resize(n + 1, 3);

    CounterRng gen(rng);
    const double sqrt_h = std::sqrt(h);

    Point p = x;
    FrameMat F = M.orthonormal_frame(p);
    out.coords.row(0) = p.coords.transpose();
    out.charts[0] = p.chart;
    out.frames.topRows(m) = F;
    if (sphere) out.embedded.row(0) = p.embedded.transpose();

    CoordVec xi(m), v(m);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j)
            xi[j] = sqrt_h * gen.gaussian(static_cast<std::uint64_t>(i) * m + j);
        out.increments.row(i) = xi.transpose();
        v.noalias() = F * xi;
        Point q = M.exp_step(p, v);
        F = M.transport_frame(p, v, F, q);
        p = q;
        out.coords.row(i + 1) = p.coords.transpose();
        out.charts[static_cast<std::size_t>(i) + 1] = p.chart;
        out.frames.middleRows((i + 1) * m, m) = F;
        if (sphere) out.embedded.row(i + 1) = p.embedded.transpose();
    }
    return out;
}

BridgeSample sample_bridge(const Manifold& M, const Point& x, const Point& y, double t,
                           double dt, double delta, RngConfig rng) {
    if (!(delta > 0) || !(delta < t))
        throw std::domain_error("sample_bridge: need 0 < delta < t");
    BridgeSample out;
    out.t = t;
    out.delta = delta;
    out.target = y;
    out.path = sample_bm(M, x, t - delta, dt, rng);
    const Point end = out.path.point_at(M, out.path.steps());
    out.weight = M.heat_kernel(end, y, delta) / M.heat_kernel(x, y, t);
    return out;
}

CoordVec chart_increment(const Manifold& M, const PathSample& path, int i) {
    const int m = M.dim();
    CoordVec d(m);
    if (M.kind() == ManifoldKind::Sphere2) {
        Point p = path.point_at(M, i);
        Point q = path.point_at(M, i + 1);
        Vector2d qc = M.coords_in_chart(q, p.chart);
        d[0] = qc[0] - p.coords[0];
        d[1] = qc[1] - p.coords[1];
        return d;
    }
    for (int j = 0; j < m; ++j) {
        const double period = M.periods()[static_cast<std::size_t>(j)];
        double raw = std::fmod(path.coords(i + 1, j) - path.coords(i, j), period);
        if (raw < -0.5 * period) raw += period;
        if (raw >= 0.5 * period) raw -= period;
        d[j] = raw;
    }
    return d;
}

} // namespace covfk
