#pragma once

#include "ggds/image.hpp"

namespace ggds {

constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for [0, 1] images, capped at 99 dB.
template <typename Scalar> double psnr(const Image<Scalar> &a, const Image<Scalar> &b);

/// Mean arccos of the clamped dot product in degrees over pixels where both normals are nonzero
/// and, when `mask` is given, the mask is at least 1 - 1e-9.
template <typename Scalar>
double mean_angular_error(const Image<Scalar> &a, const Image<Scalar> &b, const Image<Scalar> *mask = nullptr);

/// Mean absolute difference of single-channel maps over the mask (all pixels without one).
template <typename Scalar>
double masked_mae(const Image<Scalar> &a, const Image<Scalar> &b, const Image<Scalar> *mask = nullptr);

/// max - min of a single-channel map over the mask.
template <typename Scalar> double masked_range(const Image<Scalar> &a, const Image<Scalar> *mask = nullptr);

} // namespace ggds
