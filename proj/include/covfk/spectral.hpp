#pragma once

#include "covfk/geometry.hpp"
#include "covfk/types.hpp"

#include <map>
#include <vector>

namespace covfk {

// Matrix-valued trigonometric polynomial sum_k C_k exp(i <kappa_k, x>) with
// kappa_j = 2*pi*k_j / L_j; finite Fourier data makes the Galerkin assembly
// below exact (no aliasing).
struct TrigMatPoly {
    int dim = 1;
    int rank = 1;
    std::map<std::vector<int>, CMat> coeffs;

    static TrigMatPoly zero(int dim, int rank);
    static TrigMatPoly constant(int dim, const CMat& c);
    TrigMatPoly& add(const std::vector<int>& mode, const CMat& c);
    bool empty() const { return coeffs.empty(); }
    CMat evaluate(const std::vector<double>& periods, const VectorXd& x) const;
};

// Oracle-expressible operator on a trivial rank-d bundle over Circle/FlatTorus:
// nabla = d + A with A_j anti-Hermitian trig polynomials, Q = q0 + sum_j
// sigma1_j nabla_j.
struct FourierOperatorData {
    int dim = 1;
    int rank = 1;
    std::vector<TrigMatPoly> connection; // empty means trivial
    std::vector<TrigMatPoly> sigma1;     // empty means zero
    TrigMatPoly q0;                      // may be empty
};

struct FourierTruncation {
    int dim = 1;
    int rank = 1;
    int K = 0;
    std::vector<double> periods;
    CMat H; // dimension rank * (2K+1)^dim

    long modes() const;
    long size() const { return rank * modes(); }
    long index_of(const std::vector<int>& k, int fiber) const;
    // value of a coefficient vector as a section at chart point x
    CVec evaluate(const CVec& coeffs, const VectorXd& x) const;
    // coefficient vector of the section e^{i <kappa_k, x>} * w
    CVec plane_wave(const std::vector<int>& k, const CVec& w) const;
};

// Exact Galerkin matrix of nabla^dagger nabla / 2 + sigma1(Q) nabla + q0 on
// the Fourier x fiber basis at mode cutoff K.
FourierTruncation assemble_H(const Manifold& M, const FourierOperatorData& op, int K);

// Galerkin matrix of the order <= 1 operator alone (no Laplacian), same basis
CMat assemble_first_order(const Manifold& M, const FourierOperatorData& op, int K);

// e^{-tH} coeffs by dense scaling-and-squaring matrix exponential
CVec semigroup_apply(const FourierTruncation& T, double t, const CVec& coeffs);
CMat semigroup_matrix(const FourierTruncation& T, double t);

// int_0^t e^{-sH} P e^{-(t-s)H} ds via eigendecomposition with the
// difference-quotient formula; entries with |lambda_i - lambda_j| < 1e-10 use
// the confluent limit t e^{-lambda t}. Falls back to 256-node Gauss-Legendre
// quadrature when the eigenbasis is ill-conditioned.
CMat duhamel_quadrature(const CMat& H, const CMat& P, double t);
inline CMat duhamel_quadrature(const FourierTruncation& T, const CMat& P, double t) {
    return duhamel_quadrature(T.H, P, t);
}

// Scalar reference spectrum on Sphere2: eigenvalue l(l+1)/(2 r^2) with
// multiplicity 2l+1, l = 0..L.
struct SphereScalarTruncation {
    int L = 0;
    double radius = 1.0;

    double eigenvalue(int l) const { return l * (l + 1) / (2.0 * radius * radius); }
    int multiplicity(int l) const { return 2 * l + 1; }
    long total_multiplicity() const { return static_cast<long>(L + 1) * (L + 1); }
    // sum_l (2l+1) e^{-lambda_l t}
    double heat_trace(double t) const;
};

// entrywise e^{-lambda_l t} on per-degree coefficients
std::vector<cplx> sphere_scalar_semigroup(const SphereScalarTruncation& T, double t,
                                          const std::vector<cplx>& coeffs);

} // namespace covfk
