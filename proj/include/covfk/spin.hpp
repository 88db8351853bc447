#pragma once

#include "covfk/berezin.hpp"
#include "covfk/fk.hpp"

namespace covfk {

// gamma_i gamma_j + gamma_j gamma_i = -2 delta_ij; grading = i gamma_1 gamma_2
struct CliffordAlgebra2 {
    CMat gamma1, gamma2, grading;
    static CliffordAlgebra2 standard();
};

// Mixed-degree complex differential form on a model surface; components are
// given in the orthonormal (co)frame of the point's chart. Null members mean
// zero. The codifferential callbacks are optional analytic data used by
// build_FT; finite-difference fallbacks are applied when absent.
struct FormFn {
    std::function<cplx(const Point&)> deg0;
    std::function<Eigen::Vector2cd(const Point&)> deg1;
    std::function<cplx(const Point&)> deg2; // coefficient of e^1 wedge e^2
    std::function<cplx(const Point&)> codiff1;
    std::function<Eigen::Vector2cd(const Point&)> codiff2;

    bool empty() const { return !deg0 && !deg1 && !deg2; }
};

// T-invariant form alpha = alpha' + alpha'' dt
struct TForm {
    FormFn prime;
    FormFn dprime;
};

FormFn form_zero();
FormFn form_const(cplx c);
// embedded coordinate function X/Y/Z (axis 0/1/2) as a 0-form on the sphere
FormFn form_coordinate(const Manifold& M, int axis);
// its exterior derivative, an exact 1-form with analytic codifferential
FormFn form_dcoordinate(const Manifold& M, int axis);
FormFn form_volume(cplx c);

// Clifford action of a mixed form value: c0 I + sum_a c1_a gamma_a + c2
// gamma_1 gamma_2 (increasing-index wedge convention, see golden test)
CMat clifford_mult(const CliffordAlgebra2& alg, cplx c0, const Eigen::Vector2cd& c1,
                   cplx c2);
CMat clifford_mult(const CliffordAlgebra2& alg, const FormFn& alpha, const Point& p);

// spinor field as chart-referenced components; eval must answer in the
// requested chart (use spinor_from_chart0 to extend chart-0 data)
struct SpinorField {
    std::function<Eigen::Vector2cd(int chart, const Vector2d& u)> eval;
};

SpinorField spinor_from_chart0(const Manifold& M,
                               std::function<Eigen::Vector2cd(const Vector2d&)> f);

// D = sum_a c(e^a) nabla_{e_a} with the conformal spin connection; chart
// derivatives by central differences of step h (O(h^2))
Eigen::Vector2cd dirac_apply(const Manifold& M, const SpinorField& phi, const Point& p,
                             double h);
// Bochner Laplacian nabla^dagger nabla
Eigen::Vector2cd bochner_apply(const Manifold& M, const SpinorField& phi, const Point& p,
                               double h);
// nabla_{e_a} phi for a frame axis
Eigen::Vector2cd covariant_derivative(const Manifold& M, const SpinorField& phi,
                                      const Point& p, int frame_axis, double h);

// |D^2 phi - (nabla^dagger nabla phi + scal/4 phi)| at p
double lichnerowicz_check(const Manifold& M, const SpinorField& phi, const Point& p,
                          double h);

// [D, c(alpha)] phi = D c(alpha) phi - (-1)^degree c(alpha) D phi for a
// homogeneous degree part of alpha
Eigen::Vector2cd graded_commutator(const Manifold& M, const FormFn& alpha, int degree,
                                   const SpinorField& phi, const Point& p, double h);

// residual of [D, c(alpha)] = c((d + d^dagger) alpha) - 2 (nabla .)^sharp
// contraction, summed over the degrees of alpha
double commutation_identity_check(const Manifold& M, const FormFn& alpha,
                                  const SpinorField& phi, const Point& p, double h);

// F_T(alpha) as a first-order operator on spinors:
// sigma1(X) = 2 c(X contracted into alpha'), q0 = -c(d^dagger alpha') - c(alpha'')
FirstOrderOp build_FT(const Manifold& M, const TForm& alpha);
// two-factor piece (-1)^{|a0'|} (c(a0' ^ a1') - c(a0') c(a1')), zeroth order
ZerothOrderFn build_FT_pair(const Manifold& M, const TForm& alpha0, const TForm& alpha1);

enum class ChernRule { ItoForm, StratonovichMidpoint };

// N=0 piece: quadrature of p(t,x,x) Str(c(alpha0')(x) E^{x,x}[e^{-(1/8) int
// scal} //(t)^{-1}]) at t (default 2)
Estimate chern_N0(const Manifold& M, const TForm& alpha0, double t, const McConfig& mc,
                  int grid_order);

// N=1 piece via the bridge functional 2 c(db . alpha1') - c(d^dag alpha1') ds
// - c(alpha1'') ds (Ito form; the Stratonovich variant evaluates midpoints)
Estimate chern_N1(const Manifold& M, const TForm& alpha0, const TForm& alpha1,
                  const McConfig& mc, int grid_order, double t = 2.0,
                  ChernRule rule = ChernRule::ItoForm);

// Exact Galerkin truncation of the unit-sphere Dirac operator on the rational
// spinor basis z^p zbar^q (1+|z|^2)^{-(J+1/2)}; at level J the span contains
// the full eigenspaces +-(k+1), k <= J, so the spectrum is exact there.
struct DiracTruncation {
    int level = 0;
    long dim = 0;
    CMat D;    // Galerkin matrix, Hermitian
    CMat gram; // positive definite
    CMat gamma;
    Eigen::VectorXd eigenvalues; // of the (D, gram) pencil, ascending
    CMat to_orthonormal;         // V with V^dag gram V = I and V^dag D V diagonal
};

DiracTruncation dirac_truncation(int level);

// multiplication operators in the orthonormal eigenbasis; which: 0 -> 1,
// 2 -> the Z coordinate (axis fixed by symmetry for the test set)
CMat dirac_mult_matrix(const DiracTruncation& T, int which);
CMat dirac_gamma_matrix(const DiracTruncation& T);
// Str e^{-t D^2}
double dirac_supertrace_heat(const DiracTruncation& T, double t);
// Str(C0 int_0^1 e^{-s D^2} F e^{-(1-s) D^2} ds), matrices in the eigenbasis
cplx dirac_duhamel_supertrace(const DiracTruncation& T, const CMat& C0, const CMat& F);

} // namespace covfk
