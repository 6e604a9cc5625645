#include "ggds/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace ggds {

template <typename Scalar> int Splat<Scalar>::sh_degree() const {
    const int rows = int(sh.rows());
    for (int l = 0; l <= kMaxShDegree; ++l)
        if (sh_coeff_count(l) == rows)
            return l;
    throw InvalidArgument("splat color block has " + std::to_string(rows) + " rows, not (L+1)^2");
}

template <typename Scalar> template <typename Other> Splat<Other> Splat<Scalar>::cast() const {
    Splat<Other> out;
    out.center = center.template cast<Other>();
    out.tangent_u = tangent_u.template cast<Other>();
    out.tangent_v = tangent_v.template cast<Other>();
    out.scale_u = Other(scale_u);
    out.scale_v = Other(scale_v);
    out.opacity = Other(opacity);
    out.sh = sh.template cast<Other>();
    return out;
}

template <typename Scalar> bool satisfies_invariants(const Splat<Scalar> &s, double tol) {
    if (!s.center.allFinite() || !s.tangent_u.allFinite() || !s.tangent_v.allFinite() || !s.sh.allFinite())
        return false;
    if (std::abs(double(s.tangent_u.norm()) - 1.0) > tol || std::abs(double(s.tangent_v.norm()) - 1.0) > tol)
        return false;
    if (std::abs(double(s.tangent_u.dot(s.tangent_v))) > tol)
        return false;
    if (!(s.scale_u > 0) || !(s.scale_v > 0) || !std::isfinite(double(s.scale_u)) || !std::isfinite(double(s.scale_v)))
        return false;
    return s.opacity >= 0 && s.opacity <= 1;
}

template <typename Scalar> Vec3<Scalar> any_perpendicular(const Vec3<Scalar> &n) {
    const Vec3<Scalar> axis = std::abs(n.x()) < Scalar(0.9) ? Vec3<Scalar>::UnitX() : Vec3<Scalar>::UnitY();
    return n.cross(axis).normalized();
}

template <typename Scalar> void orthonormalize_tangents(Vec3<Scalar> &tu, Vec3<Scalar> &tv) {
    const Scalar nu = tu.norm();
    if (!(nu > Scalar(1e-12)) || !std::isfinite(double(nu)))
        tu = Vec3<Scalar>::UnitX();
    else
        tu /= nu;
    Vec3<Scalar> w = tv - tv.dot(tu) * tu;
    const Scalar nw = w.norm();
    if (!(nw > Scalar(1e-12)) || !std::isfinite(double(nw)))
        tv = any_perpendicular(tu);
    else
        tv = w / nw;
}

// --- environment map --------------------------------------------------------------------------

template <typename Scalar> EnvironmentMap<Scalar>::EnvironmentMap(Image<Scalar> img) : pixels(std::move(img)) {
    validate();
}

template <typename Scalar>
EnvironmentMap<Scalar> EnvironmentMap<Scalar>::uniform(int height, int width, const Vec3<Scalar> &color) {
    Image<Scalar> img(width, height, 3);
    for (Eigen::Index p = 0; p < img.pixel_count(); ++p)
        img.data.segment(3 * p, 3) = color.array();
    return EnvironmentMap(std::move(img));
}

template <typename Scalar> void EnvironmentMap<Scalar>::validate() const {
    require(pixels.width >= 1 && pixels.height >= 1, "environment map must be at least 1x1");
    require(pixels.channels == 3, "environment map must have 3 channels");
    require(pixels.data.allFinite() && (pixels.data >= Scalar(0)).all(),
            "environment map values must be finite and non-negative");
}

template <typename Scalar> Vec2<Scalar> direction_to_angles(const Vec3<Scalar> &dir) {
    const Scalar len = dir.norm();
    require(dir.allFinite(), "direction must be finite");
    require(len > Scalar(0), "zero-length direction");
    Scalar phi = std::atan2(dir.y(), dir.x());
    if (phi < 0)
        phi += 2 * pi_v<Scalar>;
    const Scalar eta = std::acos(std::clamp(dir.z() / len, Scalar(-1), Scalar(1)));
    return {phi, eta};
}

template <typename Scalar> Vec3<Scalar> angles_to_direction(Scalar phi, Scalar eta) {
    return {std::sin(eta) * std::cos(phi), std::sin(eta) * std::sin(phi), std::cos(eta)};
}

template <typename Scalar>
Vec3<Scalar> env_query(const EnvironmentMap<Scalar> &env, Scalar phi, Scalar eta, EnvSampling sampling) {
    require(std::isfinite(double(phi)) && std::isfinite(double(eta)), "direction must be finite");
    const int w = env.width(), h = env.height();
    const Scalar two_pi = 2 * pi_v<Scalar>;
    // Azimuth is meaningless on the poles; pin it so the result does not depend on phi there.
    if (std::sin(eta) == Scalar(0))
        phi = 0;
    phi = std::fmod(phi, two_pi);
    if (phi < 0)
        phi += two_pi;
    const Scalar u = phi / two_pi;
    const Scalar v = std::clamp(eta / pi_v<Scalar>, Scalar(0), Scalar(1));
    const Image<Scalar> &img = env.pixels;

    if (sampling == EnvSampling::Nearest) {
        int col = int(std::floor(u * w));
        col = ((col % w) + w) % w;
        const int row = std::clamp(int(std::floor(v * h)), 0, h - 1);
        return img.pixel(col, row).matrix();
    }

    const Scalar fx = u * w - Scalar(0.5);
    const Scalar fy = v * h - Scalar(0.5);
    const Scalar x0f = std::floor(fx), y0f = std::floor(fy);
    const Scalar tx = fx - x0f, ty = fy - y0f;
    const int x0 = ((int(x0f) % w) + w) % w;
    const int x1 = (x0 + 1) % w;
    const int y0 = std::clamp(int(y0f), 0, h - 1);
    const int y1 = std::clamp(int(y0f) + 1, 0, h - 1);
    const auto top = (1 - tx) * img.pixel(x0, y0) + tx * img.pixel(x1, y0);
    const auto bottom = (1 - tx) * img.pixel(x0, y1) + tx * img.pixel(x1, y1);
    return ((1 - ty) * top + ty * bottom).matrix();
}

template <typename Scalar>
Vec3<Scalar> env_query(const EnvironmentMap<Scalar> &env, const Vec3<Scalar> &direction, EnvSampling sampling) {
    const Vec2<Scalar> angles = direction_to_angles(direction);
    return env_query(env, angles.x(), angles.y(), sampling);
}

// --- mesh ---------------------------------------------------------------------------------------

void TriangleMesh::validate() const {
    const int n = int(vertices.size());
    for (const auto &f : faces) {
        for (int k = 0; k < 3; ++k)
            require(f[k] >= 0 && f[k] < n, "mesh face references a missing vertex");
        require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], "mesh face repeats a vertex");
    }
}

double TriangleMesh::face_area(std::size_t f) const {
    const auto &ix = faces[f];
    return 0.5 * (vertices[ix[1]] - vertices[ix[0]]).cross(vertices[ix[2]] - vertices[ix[0]]).norm();
}

Eigen::Vector3d TriangleMesh::face_normal(std::size_t f) const {
    const auto &ix = faces[f];
    const Eigen::Vector3d c = (vertices[ix[1]] - vertices[ix[0]]).cross(vertices[ix[2]] - vertices[ix[0]]);
    const double len = c.norm();
    return len > 0 ? Eigen::Vector3d(c / len) : Eigen::Vector3d::Zero();
}

double TriangleMesh::surface_area() const {
    double total = 0;
    for (std::size_t f = 0; f < faces.size(); ++f)
        total += face_area(f);
    return total;
}

// --- scene --------------------------------------------------------------------------------------

template <typename Scalar> void SceneModel<Scalar>::validate(bool geometry_losses_enabled) const {
    if (splats.size() > cap)
        throw CapacityError("scene holds " + std::to_string(splats.size()) + " splats, cap is " +
                            std::to_string(cap));
    for (std::size_t i = 0; i < splats.size(); ++i)
        if (!satisfies_invariants(splats[i]))
            throw InvalidArgument("splat " + std::to_string(i) + " violates splat invariants");
    env.validate();
    proxy.validate();
    if (geometry_losses_enabled)
        require(!proxy.empty(), "geometry losses need a proxy mesh");
}

template <typename Scalar> Scalar SceneModel<Scalar>::extent() const {
    if (splats.size() < 2)
        return Scalar(1);
    Vec3<Scalar> lo = splats.front().center, hi = lo;
    for (const auto &s : splats) {
        lo = lo.cwiseMin(s.center);
        hi = hi.cwiseMax(s.center);
    }
    const Scalar d = (hi - lo).norm();
    return d > 0 ? d : Scalar(1);
}

template <typename Scalar> template <typename Other> SceneModel<Other> SceneModel<Scalar>::cast() const {
    SceneModel<Other> out;
    out.splats.reserve(splats.size());
    for (const auto &s : splats)
        out.splats.push_back(s.template cast<Other>());
    out.env = EnvironmentMap<Other>(env.pixels.template cast<Other>());
    out.proxy = proxy;
    out.metadata = metadata;
    out.cap = cap;
    return out;
}

namespace {

void subdivide(const Eigen::Vector3d &a, const Eigen::Vector3d &b, const Eigen::Vector3d &c, double max_area,
               std::vector<std::array<Eigen::Vector3d, 3>> &out, int depth = 0) {
    const double area = 0.5 * (b - a).cross(c - a).norm();
    if (max_area <= 0 || area <= max_area || depth > 16) {
        out.push_back({a, b, c});
        return;
    }
    const Eigen::Vector3d ab = 0.5 * (a + b), bc = 0.5 * (b + c), ca = 0.5 * (c + a);
    subdivide(a, ab, ca, max_area, out, depth + 1);
    subdivide(ab, b, bc, max_area, out, depth + 1);
    subdivide(ca, bc, c, max_area, out, depth + 1);
    subdivide(ab, bc, ca, max_area, out, depth + 1);
}

} // namespace

template <typename Scalar>
MeshSplatResult<Scalar> mesh_to_splats(const TriangleMesh &mesh, double scale_factor, const SplatInitOptions &opts) {
    require(!mesh.empty(), "mesh_to_splats needs a nonempty mesh");
    require(scale_factor > 0, "scale factor must be positive");
    require(opts.opacity >= 0 && opts.opacity <= 1, "initial opacity must lie in [0,1]");
    require(opts.sh_degree >= 0 && opts.sh_degree <= kMaxShDegree, "sh degree out of range");
    mesh.validate();

    MeshSplatResult<Scalar> result;
    result.splats.reserve(mesh.faces.size());
    std::vector<std::array<Eigen::Vector3d, 3>> tris;
    for (const auto &f : mesh.faces) {
        const Eigen::Vector3d &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]], &c = mesh.vertices[f[2]];
        const Eigen::Vector3d cr = (b - a).cross(c - a);
        const double longest = std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()});
        if (!(cr.norm() > 1e-12 * longest) || longest == 0) {
            ++result.skipped;
            continue;
        }
        tris.clear();
        subdivide(a, b, c, opts.subdivide_area, tris);
        for (const auto &t : tris) {
            const Eigen::Vector3d n = (t[1] - t[0]).cross(t[2] - t[0]).normalized();
            const double area = 0.5 * (t[1] - t[0]).cross(t[2] - t[0]).norm();
            const Eigen::Vector3d centroid = (t[0] + t[1] + t[2]) / 3.0;

            const Eigen::Vector3d edges[3] = {t[1] - t[0], t[2] - t[1], t[0] - t[2]};
            int longest_edge = 0;
            for (int k = 1; k < 3; ++k)
                if (edges[k].squaredNorm() > edges[longest_edge].squaredNorm())
                    longest_edge = k;
            const Eigen::Vector3d tu = edges[longest_edge].normalized();
            const Eigen::Vector3d tv = n.cross(tu).normalized();

            double umin = 0, umax = 0, vmin = 0, vmax = 0;
            for (int k = 0; k < 3; ++k) {
                const Eigen::Vector3d d = t[k] - centroid;
                umin = std::min(umin, d.dot(tu));
                umax = std::max(umax, d.dot(tu));
                vmin = std::min(vmin, d.dot(tv));
                vmax = std::max(vmax, d.dot(tv));
            }
            const double eu = umax - umin, ev = vmax - vmin;
            const double product = area * scale_factor;

            Splat<Scalar> s;
            s.center = centroid.cast<Scalar>();
            s.tangent_u = tu.cast<Scalar>();
            s.tangent_v = tv.cast<Scalar>();
            s.scale_u = Scalar(std::sqrt(product * eu / ev));
            s.scale_v = Scalar(std::sqrt(product * ev / eu));
            s.opacity = Scalar(opts.opacity);
            s.sh = Splat<Scalar>::ShBlock::Zero(sh_coeff_count(opts.sh_degree), 3);
            s.sh.row(0).setConstant(Scalar(opts.gray));
            result.splats.push_back(std::move(s));
        }
    }
    return result;
}

// --- composition --------------------------------------------------------------------------------

template <typename Scalar> void SimilarityTransform<Scalar>::validate() const {
    require(rotation.allFinite() && translation.allFinite() && std::isfinite(double(scale)),
            "transform must be finite");
    const double orth = (rotation.template cast<double>() * rotation.template cast<double>().transpose() -
                         Eigen::Matrix3d::Identity())
                            .cwiseAbs()
                            .maxCoeff();
    require(orth <= 1e-6, "rotation is not orthonormal");
    require(std::abs(double(rotation.determinant()) - 1.0) <= 1e-6, "rotation determinant must be +1");
    require(scale > 0, "scale must be positive");
}

template <typename Scalar> bool SimilarityTransform<Scalar>::is_identity() const {
    return rotation == Mat3<Scalar>::Identity() && translation == Vec3<Scalar>::Zero() && scale == Scalar(1);
}

template <typename Scalar>
Vec3<Scalar> hemisphere_irradiance(const EnvironmentMap<Scalar> &env, const Vec3<Scalar> &normal,
                                   EnvSampling sampling) {
    constexpr int kGrid = 8;
    const Vec3<double> n = normal.template cast<double>().normalized();
    const Vec3<double> t = any_perpendicular(n);
    const Vec3<double> b = n.cross(t);
    Vec3<double> sum = Vec3<double>::Zero();
    for (int i = 0; i < kGrid; ++i) {
        for (int j = 0; j < kGrid; ++j) {
            // Malley's method: uniform disk samples lifted to the hemisphere are cosine-distributed.
            const double u1 = (i + 0.5) / kGrid, u2 = (j + 0.5) / kGrid;
            const double r = std::sqrt(u1), phi = 2 * pi_v<double> * u2;
            const Vec3<double> d = r * std::cos(phi) * t + r * std::sin(phi) * b + std::sqrt(1 - u1) * n;
            sum += env_query(env, Vec3<Scalar>(d.cast<Scalar>()), sampling).template cast<double>();
        }
    }
    return (sum / double(kGrid * kGrid)).cast<Scalar>();
}

template <typename Scalar>
SceneModel<Scalar> compose_and_relight(const SceneModel<Scalar> &scene, const std::vector<Splat<Scalar>> &asset,
                                       const SimilarityTransform<Scalar> &transform, bool relight,
                                       const RelightOptions &opts) {
    transform.validate();
    require(opts.reference_irradiance > 0, "reference irradiance must be positive");
    if (scene.splats.size() + asset.size() > scene.cap)
        throw CapacityError("composition would hold " + std::to_string(scene.splats.size() + asset.size()) +
                            " splats, cap is " + std::to_string(scene.cap));

    SceneModel<Scalar> out = scene;
    out.splats.reserve(scene.splats.size() + asset.size());
    const bool identity = transform.is_identity();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> sh_rot;
    int sh_rot_degree = -1;

    for (const auto &src : asset) {
        Splat<Scalar> s = src;
        if (!identity) {
            s.center = transform.scale * (transform.rotation * src.center) + transform.translation;
            s.tangent_u = transform.rotation * src.tangent_u;
            s.tangent_v = transform.rotation * src.tangent_v;
            s.scale_u = src.scale_u * transform.scale;
            s.scale_v = src.scale_v * transform.scale;
            const int degree = src.sh_degree();
            if (degree > 0) {
                if (degree != sh_rot_degree) {
                    sh_rot = sh_rotation<Scalar>(degree, transform.rotation);
                    sh_rot_degree = degree;
                }
                s.sh = sh_rot * src.sh;
            }
        }
        if (relight) {
            const Vec3<Scalar> irradiance = hemisphere_irradiance(scene.env, s.normal(), opts.sampling);
            s.sh.row(0) = (s.sh.row(0).array() * irradiance.transpose().array() /
                           Scalar(opts.reference_irradiance))
                              .matrix();
        }
        out.splats.push_back(std::move(s));
    }
    return out;
}

#define GGDS_INSTANTIATE_SCENE(S)                                                                           \
    template struct Splat<S>;                                                                               \
    template struct EnvironmentMap<S>;                                                                      \
    template struct SceneModel<S>;                                                                          \
    template struct SimilarityTransform<S>;                                                                 \
    template bool satisfies_invariants<S>(const Splat<S> &, double);                                        \
    template void orthonormalize_tangents<S>(Vec3<S> &, Vec3<S> &);                                         \
    template Vec3<S> any_perpendicular<S>(const Vec3<S> &);                                                 \
    template Vec2<S> direction_to_angles<S>(const Vec3<S> &);                                               \
    template Vec3<S> angles_to_direction<S>(S, S);                                                          \
    template Vec3<S> env_query<S>(const EnvironmentMap<S> &, const Vec3<S> &, EnvSampling);                 \
    template Vec3<S> env_query<S>(const EnvironmentMap<S> &, S, S, EnvSampling);                            \
    template MeshSplatResult<S> mesh_to_splats<S>(const TriangleMesh &, double, const SplatInitOptions &); \
    template Vec3<S> hemisphere_irradiance<S>(const EnvironmentMap<S> &, const Vec3<S> &, EnvSampling);     \
    template SceneModel<S> compose_and_relight<S>(const SceneModel<S> &, const std::vector<Splat<S>> &,     \
                                                  const SimilarityTransform<S> &, bool, const RelightOptions &);

GGDS_INSTANTIATE_SCENE(float)
GGDS_INSTANTIATE_SCENE(double)

template Splat<double> Splat<float>::cast<double>() const;
template Splat<float> Splat<double>::cast<float>() const;
template Splat<float> Splat<float>::cast<float>() const;
template Splat<double> Splat<double>::cast<double>() const;
template SceneModel<double> SceneModel<float>::cast<double>() const;
template SceneModel<float> SceneModel<double>::cast<float>() const;
template SceneModel<float> SceneModel<float>::cast<float>() const;
template SceneModel<double> SceneModel<double>::cast<double>() const;

} // namespace ggds
