#pragma once

#include "ggds/camera.hpp"
#include "ggds/diffusion.hpp"
#include "ggds/rasterizer.hpp"

namespace ggds {

enum class NoiseWeighting { Constant, SnrPower };

struct LossWeights {
    double lpips = 1.0; ///< perceptual term inside the generative loss
    double norm = 0.1;
    double disp = 0.1;
    double tv = 0.01;
    double distortion = 0.0;         ///< depth-distortion regularizer
    double normal_consistency = 0.0; ///< rendered normal vs normal from rendered depth
    NoiseWeighting omega = NoiseWeighting::Constant;
    double omega_power = 1.0; ///< omega(t) = (1 - alpha_bar_t)^p in SnrPower mode

    void validate() const;
    bool geometry() const { return norm > 0.0 || disp > 0.0; }
};

/// omega(t).
double noise_weight(const LossWeights &w, int t, const DiffusionSchedule &schedule);

/// Unweighted terms and the weighted total:
/// total = omega (gen_l1 + lpips perceptual) + norm normal + disp disparity + tv tv
///         + distortion distortion + normal_consistency normal_consistency.
struct LossReport {
    double total = 0.0;
    double gen_l1 = 0.0;
    double perceptual = 0.0;
    double normal = 0.0;
    double disparity = 0.0;
    double tv = 0.0;
    double distortion = 0.0;
    double normal_consistency = 0.0;
    double omega = 1.0;
    int t = 0;
    int view = -1;

    double recompose(const LossWeights &w) const;
    bool all_finite() const;
};

template <typename Scalar> struct LossResult {
    LossReport report;
    RenderAdjoint<Scalar> adjoint;
};

/// Three-level pyramid (2x2 average pooling) of per-channel gradient magnitudes, mean L1
/// difference averaged over levels.
template <typename Scalar> double perceptual_distance(const Image<Scalar> &a, const Image<Scalar> &b);

/// All loss terms and their per-pixel adjoints w.r.t. the rendered buffers. Geometry terms
/// average over pixels the mesh fully covers and vanish when `mesh` has no buffers. The camera
/// is needed only when the normal-consistency weight is positive.
template <typename Scalar>
LossResult<Scalar> compute_losses(const RenderBuffers<Scalar> &rendered, const Image<Scalar> &generated,
                                  const RenderBuffers<Scalar> &mesh, double omega, const LossWeights &weights,
                                  const Camera<Scalar> *camera = nullptr);

} // namespace ggds
