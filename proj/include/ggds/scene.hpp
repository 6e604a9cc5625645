#pragma once

#include "ggds/common.hpp"
#include "ggds/image.hpp"
#include "ggds/sh.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace ggds {

/// One oriented planar 2D Gaussian.
///
/// Color is a block of (L+1)^2 RGB rows; row 0 is the view-independent RGB and rows 1.. are
/// real-SH coefficients evaluated along the camera-to-center direction.
template <typename Scalar> struct Splat {
    using ShBlock = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

    Vec3<Scalar> center = Vec3<Scalar>::Zero();
    Vec3<Scalar> tangent_u = Vec3<Scalar>::UnitX();
    Vec3<Scalar> tangent_v = Vec3<Scalar>::UnitY();
    Scalar scale_u = Scalar(1);
    Scalar scale_v = Scalar(1);
    Scalar opacity = Scalar(1);
    ShBlock sh = ShBlock::Constant(1, 3, Scalar(0.5));

    Vec3<Scalar> normal() const { return tangent_u.cross(tangent_v); }
    int sh_degree() const;
    Vec3<Scalar> base_color() const { return sh.row(0).transpose(); }

    template <typename Other> Splat<Other> cast() const;
};

/// Unit tangents, orthogonal, positive scales, opacity in [0,1], finite everything.
template <typename Scalar> bool satisfies_invariants(const Splat<Scalar> &s, double tol = 1e-6);

/// Gram-Schmidt on the tangent pair; falls back to an arbitrary perpendicular when degenerate.
template <typename Scalar> void orthonormalize_tangents(Vec3<Scalar> &tu, Vec3<Scalar> &tv);

/// Any unit vector perpendicular to `n`.
template <typename Scalar> Vec3<Scalar> any_perpendicular(const Vec3<Scalar> &n);

enum class EnvSampling { Nearest, Bilinear };

/// Equirectangular radiance map. Rows span polar angle (0, pi] from +Z, columns span
/// azimuth (0, 2 pi] measured from +X towards +Y.
template <typename Scalar> struct EnvironmentMap {
    Image<Scalar> pixels;

    EnvironmentMap() : pixels(1, 1, 3, Scalar(0)) {}
    explicit EnvironmentMap(Image<Scalar> img);
    static EnvironmentMap uniform(int height, int width, const Vec3<Scalar> &color);

    int height() const { return pixels.height; }
    int width() const { return pixels.width; }
    void validate() const;
};

/// (phi, eta) of a nonzero direction; phi in [0, 2 pi), eta in [0, pi].
template <typename Scalar> Vec2<Scalar> direction_to_angles(const Vec3<Scalar> &dir);
template <typename Scalar> Vec3<Scalar> angles_to_direction(Scalar phi, Scalar eta);

template <typename Scalar>
Vec3<Scalar> env_query(const EnvironmentMap<Scalar> &env, const Vec3<Scalar> &direction,
                       EnvSampling sampling = EnvSampling::Bilinear);
template <typename Scalar>
Vec3<Scalar> env_query(const EnvironmentMap<Scalar> &env, Scalar phi, Scalar eta,
                       EnvSampling sampling = EnvSampling::Bilinear);

/// Indexed triangle mesh, always in double precision.
struct TriangleMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Eigen::Vector3i> faces;

    bool empty() const { return faces.empty(); }
    void validate() const;
    double face_area(std::size_t f) const;
    Eigen::Vector3d face_normal(std::size_t f) const; // unit, right-handed winding; zero if degenerate
    double surface_area() const;
};

template <typename Scalar> struct SceneModel {
    std::vector<Splat<Scalar>> splats;
    EnvironmentMap<Scalar> env;
    TriangleMesh proxy;
    std::map<std::string, std::string> metadata;
    std::size_t cap = 4'000'000;

    int sh_degree() const { return splats.empty() ? 0 : splats.front().sh_degree(); }
    void validate(bool geometry_losses_enabled = false) const;
    /// Diagonal of the axis-aligned bounds of the splat centers (1 if fewer than two splats).
    Scalar extent() const;

    template <typename Other> SceneModel<Other> cast() const;
};

struct SplatInitOptions {
    double opacity = 0.7;
    int sh_degree = 0;
    double gray = 0.5;
    /// Faces above this area (m^2) are split 1->4 at edge midpoints until below it; <= 0 disables.
    double subdivide_area = 0.0;
};

template <typename Scalar> struct MeshSplatResult {
    std::vector<Splat<Scalar>> splats;
    std::size_t skipped = 0;
};

/// One splat per non-degenerate face: centroid, t_u along the longest edge, t_u x t_v = n_F,
/// s_u * s_v = area * scale_factor with the face's bounding-extent aspect ratio.
template <typename Scalar>
MeshSplatResult<Scalar> mesh_to_splats(const TriangleMesh &mesh, double scale_factor,
                                       const SplatInitOptions &opts = {});

template <typename Scalar> struct SimilarityTransform {
    Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
    Vec3<Scalar> translation = Vec3<Scalar>::Zero();
    Scalar scale = Scalar(1);

    void validate() const;
    bool is_identity() const;
};

struct RelightOptions {
    double reference_irradiance = 1.0;
    EnvSampling sampling = EnvSampling::Bilinear;
};

/// Cosine-weighted average of env radiance over the hemisphere around `normal`,
/// from a fixed 8x8 stratified quadrature.
template <typename Scalar>
Vec3<Scalar> hemisphere_irradiance(const EnvironmentMap<Scalar> &env, const Vec3<Scalar> &normal,
                                   EnvSampling sampling = EnvSampling::Bilinear);

template <typename Scalar>
SceneModel<Scalar> compose_and_relight(const SceneModel<Scalar> &scene, const std::vector<Splat<Scalar>> &asset,
                                       const SimilarityTransform<Scalar> &transform, bool relight,
                                       const RelightOptions &opts = {});

} // namespace ggds
