#include "covfk/spectral.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <functional>

namespace covfk {

namespace {
constexpr double kTwoPi = 6.28318530717958647692528676655900577;

std::vector<double> manifold_periods(const Manifold& M) {
    if (M.kind() == ManifoldKind::Sphere2)
        throw std::domain_error("Fourier truncations require Circle or FlatTorus");
    return M.periods();
}

// modes k in [-K, K]^m, axis 0 fastest
std::vector<int> mode_of_flat(long flat, int dim, int K) {
    std::vector<int> k(dim);
    const int width = 2 * K + 1;
    for (int j = 0; j < dim; ++j) {
        k[j] = static_cast<int>(flat % width) - K;
        flat /= width;
    }
    return k;
}

long flat_of_mode(const std::vector<int>& k, int K) {
    const int width = 2 * K + 1;
    long flat = 0;
    for (int j = static_cast<int>(k.size()) - 1; j >= 0; --j) {
        if (std::abs(k[j]) > K) return -1;
        flat = flat * width + (k[j] + K);
    }
    return flat;
}

TrigMatPoly convolve(const TrigMatPoly& a, const TrigMatPoly& b) {
    TrigMatPoly out = TrigMatPoly::zero(a.dim, a.rank);
    for (const auto& [ka, ca] : a.coeffs)
        for (const auto& [kb, cb] : b.coeffs) {
            std::vector<int> k(ka.size());
            for (std::size_t j = 0; j < k.size(); ++j) k[j] = ka[j] + kb[j];
            out.add(k, ca * cb);
        }
    return out;
}

cplx kappa(const std::vector<int>& k, int axis, const std::vector<double>& periods) {
    return cplx(kTwoPi * k[axis] / periods[axis], 0.0);
}

// H[k,l] += dscale(l) * C_{k-l} over all modes l and coefficients C
void accumulate(CMat& H, const TrigMatPoly& coeff, int K, int dim, int rank,
                const std::function<cplx(const std::vector<int>&)>& dscale) {
    long nmodes = 1;
    for (int j = 0; j < dim; ++j) nmodes *= 2 * K + 1;
    for (long lf = 0; lf < nmodes; ++lf) {
        const auto l = mode_of_flat(lf, dim, K);
        const cplx s = dscale(l);
        if (s == cplx(0, 0)) continue;
        for (const auto& [m, C] : coeff.coeffs) {
            std::vector<int> k(l.size());
            bool inside = true;
            for (std::size_t j = 0; j < k.size(); ++j) {
                k[j] = l[j] + m[j];
                if (std::abs(k[j]) > K) inside = false;
            }
            if (!inside) continue;
            H.block(flat_of_mode(k, K) * rank, lf * rank, rank, rank) += s * C;
        }
    }
}
} // namespace

TrigMatPoly TrigMatPoly::zero(int dim, int rank) {
    TrigMatPoly p;
    p.dim = dim;
    p.rank = rank;
    return p;
}

TrigMatPoly TrigMatPoly::constant(int dim, const CMat& c) {
    TrigMatPoly p;
    p.dim = dim;
    p.rank = static_cast<int>(c.rows());
    p.add(std::vector<int>(dim, 0), c);
    return p;
}

TrigMatPoly& TrigMatPoly::add(const std::vector<int>& mode, const CMat& c) {
    if (static_cast<int>(mode.size()) != dim)
        throw std::invalid_argument("TrigMatPoly::add: mode dimension mismatch");
    auto it = coeffs.find(mode);
    if (it == coeffs.end())
        coeffs.emplace(mode, c);
    else
        it->second += c;
    return *this;
}

CMat TrigMatPoly::evaluate(const std::vector<double>& periods, const VectorXd& x) const {
    CMat v = CMat::Zero(rank, rank);
    for (const auto& [k, c] : coeffs) {
        double phase = 0;
        for (int j = 0; j < dim; ++j) phase += kTwoPi * k[j] / periods[j] * x[j];
        v += c * std::exp(kI * phase);
    }
    return v;
}

long FourierTruncation::modes() const {
    long m = 1;
    for (int j = 0; j < dim; ++j) m *= 2 * K + 1;
    return m;
}

long FourierTruncation::index_of(const std::vector<int>& k, int fiber) const {
    const long flat = flat_of_mode(k, K);
    if (flat < 0) throw std::out_of_range("mode outside truncation");
    return flat * rank + fiber;
}

CVec FourierTruncation::evaluate(const CVec& coeffs, const VectorXd& x) const {
    double vol = 1;
    for (double L : periods) vol *= L;
    const double norm = 1.0 / std::sqrt(vol);
    CVec out = CVec::Zero(rank);
    for (long flat = 0; flat < modes(); ++flat) {
        auto k = mode_of_flat(flat, dim, K);
        double phase = 0;
        for (int j = 0; j < dim; ++j) phase += kTwoPi * k[j] / periods[j] * x[j];
        const cplx e = norm * std::exp(kI * phase);
        for (int a = 0; a < rank; ++a) out[a] += coeffs[flat * rank + a] * e;
    }
    return out;
}

CVec FourierTruncation::plane_wave(const std::vector<int>& k, const CVec& w) const {
    double vol = 1;
    for (double L : periods) vol *= L;
    CVec c = CVec::Zero(size());
    const long flat = flat_of_mode(k, K);
    if (flat < 0) throw std::out_of_range("plane_wave: mode outside truncation");
    for (int a = 0; a < rank; ++a) c[flat * rank + a] = std::sqrt(vol) * w[a];
    return c;
}

CMat assemble_first_order(const Manifold& M, const FourierOperatorData& op, int K) {
    const auto periods = manifold_periods(M);
    const int dim = M.dim(), rank = op.rank;
    if (!op.connection.empty() && static_cast<int>(op.connection.size()) != dim)
        throw std::invalid_argument("connection needs one component per axis");
    if (!op.sigma1.empty() && static_cast<int>(op.sigma1.size()) != dim)
        throw std::invalid_argument("sigma1 needs one component per axis");

    long nmodes = 1;
    for (int j = 0; j < dim; ++j) nmodes *= 2 * K + 1;
    CMat H = CMat::Zero(nmodes * rank, nmodes * rank);

    for (int j = 0; j < dim; ++j) {
        if (op.sigma1.empty() || op.sigma1[j].empty()) continue;
        // S_j (d_j + A_j)
        accumulate(H, op.sigma1[j], K, dim, rank,
                   [&](const std::vector<int>& l) { return kI * kappa(l, j, periods); });
        if (!op.connection.empty() && !op.connection[j].empty())
            accumulate(H, convolve(op.sigma1[j], op.connection[j]), K, dim, rank,
                       [](const std::vector<int>&) { return cplx(1, 0); });
    }
    if (!op.q0.empty())
        accumulate(H, op.q0, K, dim, rank, [](const std::vector<int>&) { return cplx(1, 0); });
    return H;
}

FourierTruncation assemble_H(const Manifold& M, const FourierOperatorData& op, int K) {
    const auto periods = manifold_periods(M);
    const int dim = M.dim(), rank = op.rank;

    FourierTruncation T;
    T.dim = dim;
    T.rank = rank;
    T.K = K;
    T.periods = periods;
    T.H = assemble_first_order(M, op, K);

    // -(1/2) sum_j (d_j + A_j)^2 = (1/2)|kappa|^2 - (1/2)[(d_j A_j) + 2 A_j d_j + A_j^2]
    for (long lf = 0; lf < T.modes(); ++lf) {
        const auto l = mode_of_flat(lf, dim, K);
        double lap = 0;
        for (int j = 0; j < dim; ++j) {
            const double kj = kTwoPi * l[j] / periods[j];
            lap += kj * kj;
        }
        T.H.block(lf * rank, lf * rank, rank, rank) += 0.5 * lap * CMat::Identity(rank, rank);
    }
    if (!op.connection.empty()) {
        for (int j = 0; j < dim; ++j) {
            if (op.connection[j].empty()) continue;
            TrigMatPoly dA = TrigMatPoly::zero(dim, rank);
            for (const auto& [m, C] : op.connection[j].coeffs)
                dA.add(m, (kI * kappa(m, j, periods) * C).eval());
            accumulate(T.H, dA, K, dim, rank,
                       [](const std::vector<int>&) { return cplx(-0.5, 0); });
            accumulate(T.H, op.connection[j], K, dim, rank, [&](const std::vector<int>& l) {
                return -kI * kappa(l, j, periods);
            });
            accumulate(T.H, convolve(op.connection[j], op.connection[j]), K, dim, rank,
                       [](const std::vector<int>&) { return cplx(-0.5, 0); });
        }
    }
    return T;
}

CMat semigroup_matrix(const FourierTruncation& T, double t) {
    if (t < 0) throw std::domain_error("semigroup_matrix: t must be nonnegative");
    return (-t * T.H).exp();
}

CVec semigroup_apply(const FourierTruncation& T, double t, const CVec& coeffs) {
    if (coeffs.size() != T.size())
        throw std::invalid_argument("semigroup_apply: coefficient size mismatch");
    if (t == 0) return coeffs;
    return semigroup_matrix(T, t) * coeffs;
}

CMat duhamel_quadrature(const CMat& H, const CMat& P, double t) {
    if (H.rows() != P.rows() || H.cols() != P.cols())
        throw std::invalid_argument("duhamel_quadrature: dimension mismatch");
    Eigen::ComplexEigenSolver<CMat> es(H);
    const CMat V = es.eigenvectors();
    const CVec lam = es.eigenvalues();

    Eigen::JacobiSVD<CMat> svd(V);
    const double cond =
        svd.singularValues()(0) / svd.singularValues()(svd.singularValues().size() - 1);
    if (!(cond < 1e10)) {
        // defective truncation; documented fallback tolerance ~1e-8 * scale
        auto [xs, ws] = gauss_legendre(256);
        CMat acc = CMat::Zero(H.rows(), H.cols());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double s = 0.5 * t * (xs[i] + 1.0);
            acc += (0.5 * t * ws[i]) * ((-s * H).exp() * P * (-(t - s) * H).exp()).eval();
        }
        return acc;
    }

    const CMat Vinv = V.inverse();
    const CMat Pt = Vinv * P * V;
    CMat F(H.rows(), H.cols());
    for (Eigen::Index i = 0; i < H.rows(); ++i)
        for (Eigen::Index j = 0; j < H.cols(); ++j) {
            const cplx li = lam(i), lj = lam(j);
            if (std::abs(lj - li) < 1e-10)
                F(i, j) = t * std::exp(-li * t);
            else
                F(i, j) = (std::exp(-li * t) - std::exp(-lj * t)) / (lj - li);
        }
    return V * Pt.cwiseProduct(F) * Vinv;
}

double SphereScalarTruncation::heat_trace(double t) const {
    double s = 0;
    for (int l = 0; l <= L; ++l) s += multiplicity(l) * std::exp(-eigenvalue(l) * t);
    return s;
}

std::vector<cplx> sphere_scalar_semigroup(const SphereScalarTruncation& T, double t,
                                          const std::vector<cplx>& coeffs) {
    if (static_cast<int>(coeffs.size()) != T.L + 1)
        throw std::invalid_argument("sphere_scalar_semigroup: one coefficient per degree");
    std::vector<cplx> out(coeffs.size());
    for (int l = 0; l <= T.L; ++l) out[l] = coeffs[l] * std::exp(-T.eigenvalue(l) * t);
    return out;
}

} // namespace covfk
