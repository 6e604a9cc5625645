#pragma once

#include "ggds/common.hpp"

namespace ggds {

constexpr int kMaxShDegree = 3;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Real spherical-harmonic basis used for splat color.
/// Band 0 is the constant 1 (so a degree-0 block stores plain RGB); bands 1..3 use the
/// usual real SH polynomials of the unit direction.
template <typename Scalar> void sh_basis(int degree, const Vec3<Scalar> &dir, Scalar *out);

/// Basis values plus the gradient of each basis function w.r.t. the (unit) direction.
template <typename Scalar>
void sh_basis_with_gradient(int degree, const Vec3<Scalar> &dir, Scalar *out, Vec3<Scalar> *grad);

/// Coefficient transform for a rotation R: if `c` colors direction d, then `M * c` colors R d
/// the same way c colored d. Block-diagonal over bands.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> sh_rotation(int degree, const Mat3<Scalar> &rotation);

} // namespace ggds
