#pragma once

#include "ggds/rasterizer.hpp"
#include "ggds/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace ggds::check {

/// True when no pixel sees a hit close to a discontinuity of the forward pass: the 3 sigma
/// cutoff, a grazing plane, the near plane, or two hits at nearly equal depth.
inline bool fd_safe(const SceneModel<double> &scene, const Camera<double> &camera, double r2_margin = 0.05,
                    double depth_margin = 2e-3, double grazing = 0.05) {
    std::vector<Eigen::Vector3d> p, n, tu, tv;
    for (const auto &s : scene.splats) {
        Eigen::Vector3d a = s.tangent_u, b = s.tangent_v;
        orthonormalize_tangents(a, b);
        p.push_back(camera.to_camera(s.center));
        tu.push_back(camera.rotation * a);
        tv.push_back(camera.rotation * b);
        n.push_back(tu.back().cross(tv.back()));
    }
    std::vector<double> depths;
    for (int y = 0; y < camera.height; ++y)
        for (int x = 0; x < camera.width; ++x) {
            const Eigen::Vector3d d = camera.pixel_ray(x, y);
            depths.clear();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double denom = n[i].dot(d);
                if (std::abs(denom) < 1e-12)
                    continue;
                const double depth = n[i].dot(p[i]) / denom;
                if (depth <= 0)
                    continue;
                const Eigen::Vector3d q = depth * d - p[i];
                const double u = tu[i].dot(q) / scene.splats[i].scale_u, v = tv[i].dot(q) / scene.splats[i].scale_v;
                const double r2 = u * u + v * v;
                if (std::abs(r2 - 9.0) < r2_margin)
                    return false;
                if (r2 > 9.0)
                    continue;
                if (std::abs(denom) / d.norm() < grazing || std::abs(depth - camera.near_plane) < 1e-3)
                    return false;
                depths.push_back(depth);
            }
            std::sort(depths.begin(), depths.end());
            for (std::size_t k = 1; k < depths.size(); ++k)
                if (depths[k] - depths[k - 1] < depth_margin)
                    return false;
        }
    return true;
}

inline RenderAdjoint<double> random_adjoint(Rng &rng, int width, int height) {
    std::uniform_real_distribution<double> u(-1, 1);
    auto a = RenderAdjoint<double>::zeros(width, height);
    for (auto *img : {&a.color, &a.disparity, &a.normal, &a.alpha, &a.distortion})
        for (Eigen::Index i = 0; i < img->size(); ++i)
            img->data[i] = u(rng);
    return a;
}

inline double adjoint_dot(const RenderBuffers<double> &b, const RenderAdjoint<double> &a) {
    return (b.color.data * a.color.data).sum() + (b.disparity.data * a.disparity.data).sum() +
           (b.normal.data * a.normal.data).sum() + (b.alpha.data * a.alpha.data).sum() +
           (b.distortion.data * a.distortion.data).sum();
}

struct GroupError {
    std::string group;
    double relative_error = 0;
    double fd_norm = 0;
};

/// Relative error ||analytic - fd|| / ||fd|| per parameter group over all splats.
inline std::vector<GroupError> gradient_check(const SceneModel<double> &scene, const Camera<double> &camera,
                                              const RenderAdjoint<double> &adjoint, double step = 1e-5) {
    const RenderSettings settings;
    const auto analytic = backward(scene, camera, adjoint, settings);

    using Access = std::function<double &(Splat<double> &, int)>;
    struct Group {
        const char *name;
        int size;
        Access at;
        std::function<double(const SplatGradient<double> &, int)> grad;
    };
    const int nsh = scene.splats.empty() ? 1 : int(scene.splats.front().sh.size());
    const std::vector<Group> groups = {
        {"center", 3, [](Splat<double> &s, int k) -> double & { return s.center[k]; },
         [](const SplatGradient<double> &g, int k) { return g.center[k]; }},
        {"tangent_u", 3, [](Splat<double> &s, int k) -> double & { return s.tangent_u[k]; },
         [](const SplatGradient<double> &g, int k) { return g.tangent_u[k]; }},
        {"tangent_v", 3, [](Splat<double> &s, int k) -> double & { return s.tangent_v[k]; },
         [](const SplatGradient<double> &g, int k) { return g.tangent_v[k]; }},
        {"scale", 2, [](Splat<double> &s, int k) -> double & { return k == 0 ? s.scale_u : s.scale_v; },
         [](const SplatGradient<double> &g, int k) { return k == 0 ? g.scale_u : g.scale_v; }},
        {"opacity", 1, [](Splat<double> &s, int) -> double & { return s.opacity; },
         [](const SplatGradient<double> &g, int) { return g.opacity; }},
        {"color", nsh, [](Splat<double> &s, int k) -> double & { return s.sh.data()[k]; },
         [](const SplatGradient<double> &g, int k) { return g.sh.data()[k]; }},
    };

    std::vector<GroupError> out;
    SceneModel<double> work = scene;
    for (const auto &group : groups) {
        double diff2 = 0, fd2 = 0;
        for (std::size_t i = 0; i < scene.splats.size(); ++i) {
            for (int k = 0; k < group.size; ++k) {
                double &param = group.at(work.splats[i], k);
                const double base = param;
                param = base + step;
                const double lp = adjoint_dot(render(work, camera, settings), adjoint);
                param = base - step;
                const double lm = adjoint_dot(render(work, camera, settings), adjoint);
                param = base;
                const double fd = (lp - lm) / (2 * step);
                const double an = group.grad(analytic.splats[i], k);
                diff2 += (an - fd) * (an - fd);
                fd2 += fd * fd;
            }
        }
        GroupError e;
        e.group = group.name;
        e.fd_norm = std::sqrt(fd2);
        e.relative_error = std::sqrt(diff2) / std::max(std::sqrt(fd2), 1e-12);
        out.push_back(e);
    }
    return out;
}

/// Draws random scenes until one is safe for finite differences.
inline std::pair<SceneModel<double>, Camera<double>> fd_safe_scene(Rng &rng, int width, int height,
                                                                   const RandomSceneOptions &opts) {
    for (;;) {
        auto camera = random_camera<double>(rng, width, height);
        auto scene = random_scene<double>(rng, camera, opts);
        if (fd_safe(scene, camera))
            return {std::move(scene), camera};
    }
}

} // namespace ggds::check
