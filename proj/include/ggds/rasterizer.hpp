#pragma once

#include "ggds/camera.hpp"
#include "ggds/image.hpp"
#include "ggds/scene.hpp"

#include <cstddef>
#include <vector>

namespace ggds {

/// Output of one rasterization pass. All buffers share the camera resolution.
///
/// For every pixel alpha == 0, disparity == 0 and normal == 0 hold together. Disparity is the
/// transmittance-weighted sum of 1/depth over composited hits (not normalized by alpha); normals
/// are camera-space, flipped towards the camera, weighted the same way and renormalized.
template <typename Scalar> struct RenderBuffers {
    Image<Scalar> color;      ///< 3 channels, [0,1]
    Image<Scalar> disparity;  ///< 1 channel, 1/m
    Image<Scalar> normal;     ///< 3 channels, unit or zero
    Image<Scalar> alpha;      ///< 1 channel, [0,1]
    Image<Scalar> distortion; ///< 1 channel, sum_{i<j} w_i w_j (m_i - m_j)^2 over disparities m
    /// Per splat, half the larger side of its screen bounding box in pixels (0 when culled).
    /// Only the tiled renderer fills this.
    std::vector<Scalar> screen_radius;

    RenderBuffers() = default;
    RenderBuffers(int width, int height);
    int width() const { return color.width; }
    int height() const { return color.height; }
};

/// Per-pixel loss gradients w.r.t. each buffer. Empty images count as zero.
template <typename Scalar> struct RenderAdjoint {
    Image<Scalar> color;
    Image<Scalar> disparity;
    Image<Scalar> normal;
    Image<Scalar> alpha;
    Image<Scalar> distortion;

    static RenderAdjoint zeros(int width, int height);
};

template <typename Scalar> struct SplatGradient {
    Vec3<Scalar> center = Vec3<Scalar>::Zero();
    Vec3<Scalar> tangent_u = Vec3<Scalar>::Zero();
    Vec3<Scalar> tangent_v = Vec3<Scalar>::Zero();
    Scalar scale_u = 0;
    Scalar scale_v = 0;
    Scalar opacity = 0;
    typename Splat<Scalar>::ShBlock sh;

    bool all_finite() const;
    bool is_zero() const;
};

/// Same cardinality and order as the scene's splat list.
template <typename Scalar> struct SplatGradients {
    std::vector<SplatGradient<Scalar>> splats;
    std::size_t size() const { return splats.size(); }
};

struct RenderSettings {
    int threads = 1;                  ///< 0 uses every hardware thread
    int tile_size = 8;
    double transmittance_floor = 0.0; ///< stop compositing a pixel once T falls below this; 0 is exact
    EnvSampling env_sampling = EnvSampling::Bilinear;
};

constexpr std::size_t kReferenceSplatLimit = 10'000;

/// Tiled forward pass: ray / splat-plane intersection per pixel, truncated at 3 sigma, composited
/// front to back by intersection depth, residual transmittance filled from the environment map.
template <typename Scalar>
RenderBuffers<Scalar> render(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera,
                             const RenderSettings &settings = {});

/// Exhaustive per-pixel version of `render` used as its equivalence oracle.
template <typename Scalar>
RenderBuffers<Scalar> render_reference(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera,
                                       const RenderSettings &settings = {});

/// Analytic gradient of sum(adjoint . buffers) w.r.t. every splat parameter. Tangent gradients
/// include the Gram-Schmidt re-orthonormalization applied inside the forward pass. Reduction
/// across tiles always runs in tile order, so results are independent of the thread count.
template <typename Scalar>
SplatGradients<Scalar> backward(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera,
                                const RenderAdjoint<Scalar> &adjoint, const RenderSettings &settings = {});

/// Nearest-hit triangle rasterization of the proxy mesh: disparity, camera-facing normal and hit mask.
template <typename Scalar>
RenderBuffers<Scalar> render_mesh_buffers(const TriangleMesh &mesh, const Camera<Scalar> &camera,
                                          const RenderSettings &settings = {});

/// World-space unit ray direction through pixel (px, py).
template <typename Scalar> Vec3<Scalar> pixel_direction_world(const Camera<Scalar> &camera, int px, int py);

} // namespace ggds
