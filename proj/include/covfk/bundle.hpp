#pragma once

#include "covfk/paths.hpp"
#include "covfk/types.hpp"

#include <functional>
#include <string>

namespace covfk {

// Metric vector bundle over a model geometry: local connection 1-forms per
// chart trivialization (anti-Hermitian values = metric connection) and unitary
// transition functions on chart overlaps.
struct BundleSpec {
    int rank = 1;
    // out = sum_i A_i(p) v_i, the connection 1-form applied to the chart
    // tangent components v at p (in p's chart trivialization)
    std::function<void(const Point& p, const CoordVec& v, FiberMat& out)> connection;
    // out = unitary change of trivialization from_chart -> to_chart at p
    std::function<void(int from_chart, int to_chart, const Point& p, FiberMat& out)> transition;
    std::string name = "custom";
};

BundleSpec trivial_bundle(int rank);
// line bundle with A = i a dx^0 on Circle/FlatTorus
BundleSpec u1_flat(double a);
// tangent bundle of Sphere2 in conformal orthonormal frames
BundleSpec tangent_s2(const Manifold& M);
// spin bundle of Sphere2; fiber C^2 with the Clifford pair of spin.hpp
BundleSpec spinor_s2(const Manifold& M);

// //_0 = I, //_i : E_x -> E_{b_i} as matrices in the trivializations of the
// respective path charts; composed by left-multiplying per-step factors.
struct TransportSequence {
    int rank = 1;
    CMat mats; // (n+1)*rank x rank stacked

    int steps() const { return static_cast<int>(mats.rows() / rank) - 1; }
    auto at(int i) const { return mats.middleRows(static_cast<long>(i) * rank, rank); }
};

enum class TransportRule {
    StratonovichMidpoint, // default: connection evaluated at the step midpoint
    ItoLeftPoint          // left-point variant for convergence studies
};

TransportSequence parallel_transport(const Manifold& M, const BundleSpec& B,
                                     const PathSample& path,
                                     TransportRule rule = TransportRule::StratonovichMidpoint);

// //_i^{-1} X //_i : the fiber-at-x representation of the endomorphism X at b_i
CMat transport_conjugate(const BundleSpec& B, const TransportSequence& seq, int i,
                         const CMat& X);

// exp(A) for anti-Hermitian A, closed forms for rank 1 and 2
FiberMat exp_anti_hermitian(const FiberMat& A);

} // namespace covfk
