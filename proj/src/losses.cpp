#include "ggds/losses.hpp"

#include <cmath>
#include <vector>

namespace ggds {

namespace {

constexpr double kDeadzone = 1e-5; // |residual| below this contributes no gradient
constexpr double kGradEps = 1e-3;  // smooths the gradient magnitude at flat regions
constexpr int kLevels = 3;

double dz_sign(double d) { return std::abs(d) <= kDeadzone ? 0.0 : (d > 0.0 ? 1.0 : -1.0); }

bool mesh_covers(double alpha) { return alpha >= 1.0 - 1e-9; }

struct Plane {
    int w = 0, h = 0, c = 0;
    std::vector<double> v;
    double &at(int x, int y, int k) { return v[(std::size_t(y) * w + x) * c + k]; }
    double at(int x, int y, int k) const { return v[(std::size_t(y) * w + x) * c + k]; }
};

template <typename Scalar> Plane to_plane(const Image<Scalar> &img) {
    Plane p{img.width, img.height, img.channels, std::vector<double>(std::size_t(img.size()))};
    for (Eigen::Index i = 0; i < img.size(); ++i)
        p.v[std::size_t(i)] = double(img.data[i]);
    return p;
}

Plane pool2(const Plane &p) {
    Plane q{p.w / 2, p.h / 2, p.c, {}};
    q.v.assign(std::size_t(q.w) * q.h * q.c, 0.0);
    for (int y = 0; y < q.h; ++y)
        for (int x = 0; x < q.w; ++x)
            for (int k = 0; k < p.c; ++k)
                q.at(x, y, k) = 0.25 * (p.at(2 * x, 2 * y, k) + p.at(2 * x + 1, 2 * y, k) + p.at(2 * x, 2 * y + 1, k) +
                                        p.at(2 * x + 1, 2 * y + 1, k));
    return q;
}

void pool2_backward(const Plane &dq, Plane &dp) {
    for (int y = 0; y < dq.h; ++y)
        for (int x = 0; x < dq.w; ++x)
            for (int k = 0; k < dq.c; ++k) {
                const double g = 0.25 * dq.at(x, y, k);
                dp.at(2 * x, 2 * y, k) += g;
                dp.at(2 * x + 1, 2 * y, k) += g;
                dp.at(2 * x, 2 * y + 1, k) += g;
                dp.at(2 * x + 1, 2 * y + 1, k) += g;
            }
}

struct GradMag {
    double gx, gy, m;
};

GradMag grad_mag(const Plane &p, int x, int y, int k) {
    const double gx = x + 1 < p.w ? p.at(x + 1, y, k) - p.at(x, y, k) : 0.0;
    const double gy = y + 1 < p.h ? p.at(x, y + 1, k) - p.at(x, y, k) : 0.0;
    return {gx, gy, std::sqrt(gx * gx + gy * gy + kGradEps * kGradEps)};
}

std::vector<Plane> pyramid(Plane base) {
    std::vector<Plane> levels{std::move(base)};
    for (int l = 1; l < kLevels; ++l)
        levels.push_back(pool2(levels.back()));
    return levels;
}

// Perceptual distance and, when `grad` is set, d/d(a) scaled by `scale`.
double perceptual(const Plane &a, const Plane &b, double scale, Plane *grad) {
    const auto pa = pyramid(a);
    const auto pb = pyramid(b);
    double total = 0.0;
    std::vector<Plane> g;
    if (grad)
        for (const auto &p : pa)
            g.push_back({p.w, p.h, p.c, std::vector<double>(p.v.size(), 0.0)});
    for (int l = 0; l < kLevels; ++l) {
        const Plane &A = pa[std::size_t(l)];
        const Plane &B = pb[std::size_t(l)];
        const double n = double(A.w) * A.h * A.c;
        if (n == 0.0)
            continue;
        double sum = 0.0;
        for (int y = 0; y < A.h; ++y)
            for (int x = 0; x < A.w; ++x)
                for (int k = 0; k < A.c; ++k) {
                    const GradMag ga = grad_mag(A, x, y, k);
                    const GradMag gb = grad_mag(B, x, y, k);
                    sum += std::abs(ga.m - gb.m);
                    if (!grad)
                        continue;
                    const double s = scale * dz_sign(ga.m - gb.m) / (n * kLevels);
                    if (s == 0.0)
                        continue;
                    Plane &G = g[std::size_t(l)];
                    if (x + 1 < A.w) {
                        G.at(x + 1, y, k) += s * ga.gx / ga.m;
                        G.at(x, y, k) -= s * ga.gx / ga.m;
                    }
                    if (y + 1 < A.h) {
                        G.at(x, y + 1, k) += s * ga.gy / ga.m;
                        G.at(x, y, k) -= s * ga.gy / ga.m;
                    }
                }
        total += sum / n;
    }
    if (grad) {
        for (int l = kLevels - 1; l > 0; --l)
            pool2_backward(g[std::size_t(l)], g[std::size_t(l - 1)]);
        *grad = std::move(g[0]);
    }
    return total / kLevels;
}

template <typename Scalar> void add_plane(Image<Scalar> &img, const Plane &p) {
    for (std::size_t i = 0; i < p.v.size(); ++i)
        img.data[Eigen::Index(i)] += Scalar(p.v[i]);
}

} // namespace

void LossWeights::validate() const {
    for (double w : {lpips, norm, disp, tv, distortion, normal_consistency})
        require(std::isfinite(w) && w >= 0.0, "loss weights must be finite and non-negative");
    require(std::isfinite(omega_power), "omega power must be finite");
}

double noise_weight(const LossWeights &w, int t, const DiffusionSchedule &schedule) {
    if (w.omega == NoiseWeighting::Constant)
        return 1.0;
    return std::pow(1.0 - schedule.at(t), w.omega_power);
}

double LossReport::recompose(const LossWeights &w) const {
    return omega * (gen_l1 + w.lpips * perceptual) + w.norm * normal + w.disp * disparity + w.tv * tv +
           w.distortion * distortion + w.normal_consistency * normal_consistency;
}

bool LossReport::all_finite() const {
    for (double v : {total, gen_l1, perceptual, normal, disparity, tv, distortion, normal_consistency, omega})
        if (!std::isfinite(v))
            return false;
    return true;
}

template <typename Scalar> double perceptual_distance(const Image<Scalar> &a, const Image<Scalar> &b) {
    require_same_shape(a, b, "perceptual_distance");
    return perceptual(to_plane(a), to_plane(b), 0.0, nullptr);
}

template <typename Scalar>
LossResult<Scalar> compute_losses(const RenderBuffers<Scalar> &r, const Image<Scalar> &generated,
                                  const RenderBuffers<Scalar> &mesh, double omega, const LossWeights &w,
                                  const Camera<Scalar> *camera) {
    w.validate();
    require(std::isfinite(omega) && omega >= 0.0, "compute_losses: omega must be finite and non-negative");
    const int W = r.width(), H = r.height();
    require_same_shape(r.color, generated, "compute_losses: generated image");
    const bool geometry = !mesh.alpha.empty();
    if (geometry) {
        require_same_shape(r.disparity, mesh.disparity, "compute_losses: mesh disparity");
        require_same_shape(r.normal, mesh.normal, "compute_losses: mesh normal");
        require_same_shape(r.alpha, mesh.alpha, "compute_losses: mesh alpha");
    }
    require(w.normal_consistency == 0.0 || camera != nullptr, "compute_losses: normal consistency needs the camera");

    LossResult<Scalar> out;
    out.adjoint = RenderAdjoint<Scalar>::zeros(W, H);
    LossReport &rep = out.report;
    rep.omega = omega;
    auto &adj = out.adjoint;
    const double npx = double(W) * H;

    // Generative L1.
    double sum = 0.0;
    for (Eigen::Index i = 0; i < r.color.size(); ++i) {
        const double d = double(r.color.data[i]) - double(generated.data[i]);
        sum += std::abs(d);
        adj.color.data[i] += Scalar(omega * dz_sign(d) / (3.0 * npx));
    }
    rep.gen_l1 = sum / (3.0 * npx);

    // Perceptual.
    if (w.lpips > 0.0 && omega > 0.0) {
        Plane g;
        rep.perceptual = perceptual(to_plane(r.color), to_plane(generated), omega * w.lpips, &g);
        add_plane(adj.color, g);
    } else {
        rep.perceptual = perceptual(to_plane(r.color), to_plane(generated), 0.0, nullptr);
    }

    // Geometry against the proxy, over fully covered pixels.
    if (geometry) {
        double count = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                count += mesh_covers(double(mesh.alpha(x, y)));
        if (count > 0.0) {
            double ln = 0.0, ld = 0.0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    if (!mesh_covers(double(mesh.alpha(x, y))))
                        continue;
                    for (int c = 0; c < 3; ++c) {
                        const double d = double(r.normal(x, y, c)) - double(mesh.normal(x, y, c));
                        ln += std::abs(d);
                        adj.normal(x, y, c) += Scalar(w.norm * dz_sign(d) / (3.0 * count));
                    }
                    const double d = double(r.disparity(x, y)) - double(mesh.disparity(x, y));
                    ld += std::abs(d);
                    adj.disparity(x, y) += Scalar(w.disp * dz_sign(d) / count);
                }
            rep.normal = ln / (3.0 * count);
            rep.disparity = ld / count;
        }
    }

    // Anisotropic total variation of the color buffer.
    {
        double tv = 0.0;
        const double scale = w.tv / (3.0 * npx);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c) {
                    if (x + 1 < W) {
                        const double d = double(r.color(x + 1, y, c)) - double(r.color(x, y, c));
                        tv += std::abs(d);
                        adj.color(x + 1, y, c) += Scalar(scale * dz_sign(d));
                        adj.color(x, y, c) -= Scalar(scale * dz_sign(d));
                    }
                    if (y + 1 < H) {
                        const double d = double(r.color(x, y + 1, c)) - double(r.color(x, y, c));
                        tv += std::abs(d);
                        adj.color(x, y + 1, c) += Scalar(scale * dz_sign(d));
                        adj.color(x, y, c) -= Scalar(scale * dz_sign(d));
                    }
                }
        rep.tv = tv / (3.0 * npx);
    }

    // Depth distortion.
    rep.distortion = double(r.distortion.data.template cast<double>().sum()) / npx;
    if (w.distortion > 0.0)
        adj.distortion.data += Scalar(w.distortion / npx);

    // Normal consistency: 1 - N . n_depth, with n_depth from finite differences of the points
    // P = (alpha / disparity) * ray, oriented towards the camera.
    if (w.normal_consistency > 0.0 || camera) {
        auto valid = [&](int x, int y) { return double(r.alpha(x, y)) > 0.5 && double(r.disparity(x, y)) > 0.0; };
        auto point = [&](int x, int y) {
            const Vec3<double> ray = camera->pixel_ray(x, y).template cast<double>();
            return Vec3<double>(double(r.alpha(x, y)) / double(r.disparity(x, y)) * ray);
        };
        double total = 0.0, count = 0.0;
        for (int y = 0; y + 1 < H; ++y)
            for (int x = 0; x + 1 < W; ++x)
                count += valid(x, y) && valid(x + 1, y) && valid(x, y + 1);
        if (count > 0.0) {
            const double scale = w.normal_consistency / count;
            auto back_point = [&](int x, int y, const Vec3<double> &g) {
                const Vec3<double> ray = camera->pixel_ray(x, y).template cast<double>();
                const double gd = g.dot(ray);
                const double a = double(r.alpha(x, y)), m = double(r.disparity(x, y));
                adj.alpha(x, y) += Scalar(gd / m);
                adj.disparity(x, y) += Scalar(-gd * a / (m * m));
            };
            for (int y = 0; y + 1 < H; ++y)
                for (int x = 0; x + 1 < W; ++x) {
                    if (!(valid(x, y) && valid(x + 1, y) && valid(x, y + 1)))
                        continue;
                    const Vec3<double> p = point(x, y);
                    const Vec3<double> a = point(x, y + 1) - p;
                    const Vec3<double> b = point(x + 1, y) - p;
                    const Vec3<double> c = a.cross(b);
                    const double len = c.norm();
                    if (len < 1e-30)
                        continue;
                    const double s = c.z() < 0.0 ? -1.0 : 1.0;
                    const Vec3<double> n = s * c / len;
                    const Vec3<double> N(double(r.normal(x, y, 0)), double(r.normal(x, y, 1)), double(r.normal(x, y, 2)));
                    total += 1.0 - N.dot(n);
                    if (scale == 0.0)
                        continue;
                    for (int k = 0; k < 3; ++k)
                        adj.normal(x, y, k) += Scalar(-scale * n[k]);
                    const Vec3<double> gn = -scale * N;
                    const Vec3<double> gc = s * (gn - n * n.dot(gn)) / len;
                    const Vec3<double> ga = b.cross(gc);
                    const Vec3<double> gb = gc.cross(a);
                    back_point(x, y + 1, ga);
                    back_point(x + 1, y, gb);
                    back_point(x, y, -(ga + gb));
                }
            rep.normal_consistency = total / count;
        }
    }

    rep.total = rep.recompose(w);
    return out;
}

#define GGDS_INSTANTIATE_LOSSES(S)                                                                                \
    template double perceptual_distance<S>(const Image<S> &, const Image<S> &);                                   \
    template LossResult<S> compute_losses<S>(const RenderBuffers<S> &, const Image<S> &, const RenderBuffers<S> &, \
                                             double, const LossWeights &, const Camera<S> *);

GGDS_INSTANTIATE_LOSSES(float)
GGDS_INSTANTIATE_LOSSES(double)

} // namespace ggds
