#pragma once

#include "covfk/fk.hpp"
#include "covfk/spectral.hpp"

namespace covfk {

// a + b*theta with matrix coefficients and theta^2 = 0
struct GrassmannMatrix {
    CMat a;
    CMat b;

    static GrassmannMatrix body(const CMat& a) { return {a, CMat::Zero(a.rows(), a.cols())}; }
};

// (a + b theta)(c + d theta) = ac + (ad + bc) theta
GrassmannMatrix grassmann_mul(const GrassmannMatrix& X, const GrassmannMatrix& Y);

// picks the theta coefficient
CMat berezin_integral(const GrassmannMatrix& X);

// e^{-t(H + theta P)} computed exactly through the block matrix [[H,0],[P,H]]
GrassmannMatrix grassmann_semigroup(const CMat& H, const CMat& P, double t);

// || berezin_integral(e^{-t(H + theta P)}) + duhamel_quadrature(H, P, t) ||_F.
// The first-order Duhamel term carries a minus sign, pinned by the H = 0 case
// where the theta part is -tP and the quadrature gives +tP.
double perturbation_identity_check(const CMat& H, const CMat& P, double t);
double perturbation_identity_check(const FourierTruncation& T, const CMat& P, double t);

using ZerothOrderFn = std::function<void(const Point&, FiberMat&)>;

// Monte Carlo value of Tr(Vt int_0^t e^{-s H_V} P e^{-(t-s) H_V} ds) via the
// bridge representation: outer quadrature over x, inner bridge expectation of
// V(t) int_0^t //^{-1}(sigma1(P) db + P_nabla ds) // //(t)^{-1}. V must be a
// central (scalar-commuting) zeroth-order operator for the factorized
// representation to apply; null V or Vt mean 0 resp. identity.
Estimate trace_formula_mc(const Manifold& M, const BundleSpec& B, const ZerothOrderFn& V,
                          const FirstOrderOp& P, const ZerothOrderFn& Vt, double t,
                          const McConfig& mc, int grid_order);

} // namespace covfk
