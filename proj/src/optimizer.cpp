#include "ggds/optimizer.hpp"

#include "ggds/sh.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

namespace ggds {

namespace {

// Flat parameter layout: center 3 | t_u 3 | t_v 3 | s_u | s_v | opacity | sh rows x 3.
constexpr int kCenter = 0, kTu = 3, kTv = 6, kSu = 9, kSv = 10, kOpacity = 11, kSh = 12;

template <typename Scalar> Eigen::ArrayXd pack(const Splat<Scalar> &s) {
    Eigen::ArrayXd p(kSh + s.sh.size());
    p.segment<3>(kCenter) = s.center.template cast<double>().array();
    p.segment<3>(kTu) = s.tangent_u.template cast<double>().array();
    p.segment<3>(kTv) = s.tangent_v.template cast<double>().array();
    p[kSu] = double(s.scale_u);
    p[kSv] = double(s.scale_v);
    p[kOpacity] = double(s.opacity);
    for (Eigen::Index r = 0; r < s.sh.rows(); ++r)
        for (int c = 0; c < 3; ++c)
            p[kSh + 3 * r + c] = double(s.sh(r, c));
    return p;
}

template <typename Scalar> Eigen::ArrayXd pack(const SplatGradient<Scalar> &g, Eigen::Index sh_rows) {
    Eigen::ArrayXd p = Eigen::ArrayXd::Zero(kSh + 3 * sh_rows);
    p.segment<3>(kCenter) = g.center.template cast<double>().array();
    p.segment<3>(kTu) = g.tangent_u.template cast<double>().array();
    p.segment<3>(kTv) = g.tangent_v.template cast<double>().array();
    p[kSu] = double(g.scale_u);
    p[kSv] = double(g.scale_v);
    p[kOpacity] = double(g.opacity);
    for (Eigen::Index r = 0; r < std::min(sh_rows, g.sh.rows()); ++r)
        for (int c = 0; c < 3; ++c)
            p[kSh + 3 * r + c] = double(g.sh(r, c));
    return p;
}

template <typename Scalar> void unpack(const Eigen::ArrayXd &p, Splat<Scalar> &s) {
    s.center = p.segment<3>(kCenter).matrix().template cast<Scalar>();
    s.tangent_u = p.segment<3>(kTu).matrix().template cast<Scalar>();
    s.tangent_v = p.segment<3>(kTv).matrix().template cast<Scalar>();
    s.scale_u = Scalar(p[kSu]);
    s.scale_v = Scalar(p[kSv]);
    s.opacity = Scalar(p[kOpacity]);
    for (Eigen::Index r = 0; r < s.sh.rows(); ++r)
        for (int c = 0; c < 3; ++c)
            s.sh(r, c) = Scalar(p[kSh + 3 * r + c]);
}

Eigen::ArrayXd step_vector(const StepSizes &xi, Eigen::Index n) {
    Eigen::ArrayXd lr(n);
    lr.segment<3>(kCenter).setConstant(xi.position);
    lr.segment<6>(kTu).setConstant(xi.tangent);
    lr.segment<2>(kSu).setConstant(xi.scale);
    lr[kOpacity] = xi.opacity;
    lr.tail(n - kSh).setConstant(xi.color);
    return lr;
}

template <typename Scalar> void project(Splat<Scalar> &s) {
    orthonormalize_tangents(s.tangent_u, s.tangent_v);
    const Scalar floor = Scalar(1e-6);
    s.scale_u = std::max(s.scale_u, floor);
    s.scale_v = std::max(s.scale_v, floor);
    s.opacity = std::clamp(s.opacity, Scalar(0), Scalar(1));
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

} // namespace

void GgdsConfig::validate(int T) const {
    require(steps >= 1, "config: steps must be at least 1");
    require(denoise_steps >= 1, "config: denoise_steps must be at least 1");
    require(T >= 1, "config: schedule needs at least one step");
    require(0 <= t_min_end && t_min_end <= t_min_start && t_min_start <= t_max && t_max <= T,
            "config: need 0 <= t_min_end <= t_min_start <= t_max <= T");
    weights.validate();
    for (double v : {xi.position, xi.opacity, xi.scale, xi.tangent, xi.color})
        require(finite_nonneg(v), "config: step sizes must be finite and non-negative");
    require(finite_nonneg(lambda_noise), "config: lambda_noise must be finite and non-negative");
    require(noise_decay_fraction >= 0.0 && noise_decay_fraction <= 1.0, "config: noise_decay_fraction must lie in [0, 1]");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
            "config: Adam betas must lie in [0, 1)");
    require(adam_epsilon > 0.0 && std::isfinite(adam_epsilon), "config: Adam epsilon must be positive");
    require(splat_cap >= 1, "config: splat_cap must be positive");
    require(densify_every >= 0, "config: densify_every must be non-negative");
    require(densify_until >= 0.0 && densify_until <= 1.0, "config: densify_until must lie in [0, 1]");
    require(prune_opacity >= 0.0 && prune_opacity < 1.0, "config: prune_opacity must lie in [0, 1)");
    require(finite_nonneg(prune_min_radius), "config: prune_min_radius must be non-negative");
    require(finite_nonneg(split_grad_threshold), "config: split_grad_threshold must be non-negative");
    require(finite_nonneg(split_scale_fraction), "config: split_scale_fraction must be non-negative");
    require(inversion_refine >= 0, "config: inversion_refine must be non-negative");
    require(schedule_steps >= 1, "config: schedule_steps must be positive");
    require(codec_factor >= 1, "config: codec_factor must be positive");
    require(deferred_alpha_bar > 0.0 && deferred_alpha_bar <= 1.0, "config: deferred_alpha_bar must lie in (0, 1]");
    require(jitter_views >= 0, "config: jitter_views must be non-negative");
    require(threads >= 0, "config: threads must be non-negative");
    require(checkpoint_every >= 0, "config: checkpoint_every must be non-negative");
}

DiffusionSchedule GgdsConfig::make_schedule() const {
    return schedule == ScheduleKind::Linear ? make_linear_schedule(schedule_steps) : make_cosine_schedule(schedule_steps);
}

Codec GgdsConfig::make_codec() const { return codec_factor == 1 ? Codec::identity() : Codec::pooled(codec_factor); }

int t_min_at(int k, const GgdsConfig &c) {
    require(k >= 0 && k <= c.steps, "t_min_at: step index out of range");
    return int(std::lround(c.t_min_start + double(c.t_min_end - c.t_min_start) * k / c.steps));
}

int sample_noise_level(int k, const GgdsConfig &config, Rng &rng) {
    const int lo = std::min(t_min_at(k, config), config.t_max);
    return std::uniform_int_distribution<int>(lo, config.t_max)(rng);
}

double noise_scale_at(int k, const GgdsConfig &c) {
    const double tail = c.noise_decay_fraction * c.steps;
    const double remaining = double(c.steps - k);
    if (tail <= 0.0 || remaining >= tail)
        return c.lambda_noise;
    return c.lambda_noise * std::max(0.0, remaining) / tail;
}

int splat_parameter_count(int sh_degree) { return kSh + 3 * sh_coeff_count(sh_degree); }

void AdamState::resize(std::size_t n, int params) {
    m.assign(n, Eigen::ArrayXd::Zero(params));
    v.assign(n, Eigen::ArrayXd::Zero(params));
    steps.assign(n, 0);
}

void AdamState::erase_keep(const std::vector<std::size_t> &keep) {
    std::vector<Eigen::ArrayXd> m2, v2;
    std::vector<int> s2;
    for (std::size_t i : keep) {
        m2.push_back(m[i]);
        v2.push_back(v[i]);
        s2.push_back(steps[i]);
    }
    m = std::move(m2);
    v = std::move(v2);
    steps = std::move(s2);
}

SgldParams sgld_params(const GgdsConfig &config, int k, double extent) {
    SgldParams p;
    p.xi = config.xi;
    p.xi.position = config.xi.position * extent;
    p.lambda_noise = noise_scale_at(k, config);
    p.raw_sign = config.raw_sign;
    p.preconditioner = config.preconditioner;
    p.beta1 = config.adam_beta1;
    p.beta2 = config.adam_beta2;
    p.epsilon = config.adam_epsilon;
    return p;
}

template <typename Scalar>
SgldReport sgld_update(SceneModel<Scalar> &scene, const SplatGradients<Scalar> &grads, const SgldParams &params,
                       Rng &rng, AdamState *adam) {
    require(grads.size() == scene.splats.size(), "sgld_update: gradient count does not match the scene");
    const bool use_adam = params.preconditioner == Preconditioner::Adam;
    require(!use_adam || adam != nullptr, "sgld_update: Adam preconditioning needs optimizer state");
    SgldReport report;
    if (scene.splats.empty())
        return report;
    const Eigen::Index n = splat_parameter_count(scene.sh_degree());
    if (use_adam && (adam->m.size() != scene.splats.size() || adam->m.front().size() != n))
        adam->resize(scene.splats.size(), int(n));
    const Eigen::ArrayXd lr = step_vector(params.xi, n);
    const double sign = params.raw_sign ? 1.0 : -1.0;
    std::normal_distribution<double> normal;

    for (std::size_t i = 0; i < scene.splats.size(); ++i) {
        Splat<Scalar> &s = scene.splats[i];
        const auto &g = grads.splats[i];
        if (!g.all_finite()) {
            ++report.skipped_nonfinite;
            continue;
        }
        Eigen::ArrayXd dir = pack(g, s.sh.rows());
        if (use_adam) {
            Eigen::ArrayXd &m = adam->m[i];
            Eigen::ArrayXd &v = adam->v[i];
            const int st = ++adam->steps[i];
            m = params.beta1 * m + (1.0 - params.beta1) * dir;
            v = params.beta2 * v + (1.0 - params.beta2) * dir.square();
            const double c1 = 1.0 - std::pow(params.beta1, st);
            const double c2 = 1.0 - std::pow(params.beta2, st);
            dir = (m / c1) / ((v / c2).sqrt() + params.epsilon);
        }
        const bool moves = (dir != 0.0).any();
        if (!moves && params.lambda_noise == 0.0)
            continue;
        Eigen::ArrayXd p = pack(s);
        if (moves)
            p += sign * lr * dir;
        if (params.lambda_noise > 0.0)
            for (Eigen::Index j = 0; j < n; ++j)
                p[j] += params.lambda_noise * normal(rng);
        unpack(p, s);
        project(s);
        ++report.updated;
    }
    return report;
}

void DensifyStats::resize(std::size_t n) {
    grad_accum.assign(n, 0.0);
    seen.assign(n, 0);
    max_radius.assign(n, 0.0);
}

template <typename Scalar>
void DensifyStats::accumulate(const SplatGradients<Scalar> &grads, const std::vector<Scalar> &screen_radius) {
    if (grad_accum.size() != grads.size())
        resize(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const double r = i < screen_radius.size() ? double(screen_radius[i]) : 0.0;
        if (!(r > 0.0))
            continue;
        const double gn = double(grads.splats[i].center.norm());
        if (std::isfinite(gn))
            grad_accum[i] += gn;
        ++seen[i];
        max_radius[i] = std::max(max_radius[i], r);
    }
}

template <typename Scalar>
DensifyReport densify_prune(SceneModel<Scalar> &scene, DensifyStats &stats, const GgdsConfig &config,
                            AdamState *adam) {
    DensifyReport report;
    const std::size_t n = scene.splats.size();
    if (stats.grad_accum.size() != n)
        stats.resize(n);
    const bool track_adam = adam && adam->m.size() == n;
    const double extent = double(scene.extent());

    std::vector<std::size_t> keep;
    keep.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto &s = scene.splats[i];
        const bool transparent = double(s.opacity) < config.prune_opacity;
        const bool tiny = stats.seen[i] > 0 && stats.max_radius[i] < config.prune_min_radius;
        if (!transparent && !tiny)
            keep.push_back(i);
    }
    report.pruned = n - keep.size();
    std::vector<Splat<Scalar>> kept;
    kept.reserve(keep.size());
    std::vector<double> avg_grad;
    for (std::size_t i : keep) {
        kept.push_back(scene.splats[i]);
        avg_grad.push_back(stats.seen[i] > 0 ? stats.grad_accum[i] / stats.seen[i] : 0.0);
    }
    scene.splats = std::move(kept);
    if (track_adam)
        adam->erase_keep(keep);

    const std::size_t cap = std::min(config.splat_cap, scene.cap);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < scene.splats.size(); ++i) {
        const auto &s = scene.splats[i];
        const double size = std::max(double(s.scale_u), double(s.scale_v));
        if (avg_grad[i] > config.split_grad_threshold && size > config.split_scale_fraction * extent)
            candidates.push_back(i);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return avg_grad[a] > avg_grad[b]; });
    const std::size_t room = scene.splats.size() < cap ? cap - scene.splats.size() : 0;
    if (candidates.size() > room)
        candidates.resize(room);
    for (std::size_t i : candidates) {
        Splat<Scalar> &parent = scene.splats[i];
        const Vec3<Scalar> offset = Scalar(0.5) * parent.scale_u * parent.tangent_u;
        Splat<Scalar> child = parent;
        parent.center -= offset;
        child.center += offset;
        for (Splat<Scalar> *c : {&parent, &child}) {
            c->scale_u *= Scalar(0.5);
            c->scale_v *= Scalar(0.5);
        }
        scene.splats.push_back(child);
        if (track_adam) {
            adam->m[i].setZero();
            adam->v[i].setZero();
            adam->steps[i] = 0;
            adam->m.push_back(Eigen::ArrayXd::Zero(adam->m[i].size()));
            adam->v.push_back(Eigen::ArrayXd::Zero(adam->v[i].size()));
            adam->steps.push_back(0);
        }
        ++report.split;
    }
    stats.resize(scene.splats.size());
    return report;
}

template <typename Scalar>
LossReport ggds_step(SceneModel<Scalar> &scene, int k, const GgdsProblem<Scalar> &problem, const GgdsConfig &config,
                     OptimizerState &state) {
    require(problem.denoiser && problem.schedule, "ggds_step: problem needs a denoiser and a schedule");
    require(!problem.cameras.empty(), "ggds_step: camera pool is empty");
    require(k >= 0 && k < config.steps, "ggds_step: step index out of range");
    require(!config.weights.geometry() || !scene.proxy.empty(), "ggds_step: geometry losses need a proxy mesh");
    const DiffusionSchedule &schedule = *problem.schedule;
    try {
        RenderSettings settings;
        settings.threads = config.threads;
        const int view = std::uniform_int_distribution<int>(0, int(problem.cameras.size()) - 1)(state.rng);
        const Camera<Scalar> &cam = problem.cameras[std::size_t(view)];
        const RenderBuffers<Scalar> rendered = render(scene, cam, settings);

        RenderBuffers<Scalar> mesh;
        Conditioning<Scalar> cond;
        cond.text = problem.text;
        if (!scene.proxy.empty()) {
            mesh = render_mesh_buffers(scene.proxy, cam, settings);
            cond.disparity = problem.codec.downsample(mesh.disparity);
        }

        const Image<Scalar> z0 = problem.codec.encode(rendered.color);
        const int t = sample_noise_level(k, config, state.rng);
        if (t < t_min_at(k, config) || t > config.t_max)
            throw std::logic_error("sampled noise level outside [t_min(k), t_max]");
        Image<Scalar> zt;
        if (config.noise_mode == NoiseMode::Inversion) {
            InversionOptions inv;
            inv.refine_iterations = config.inversion_refine;
            zt = ddim_invert_n(z0, t, config.denoise_steps, *problem.denoiser, cond, schedule, inv);
        } else {
            Image<Scalar> eps(z0.width, z0.height, z0.channels);
            std::normal_distribution<double> normal;
            for (Eigen::Index i = 0; i < eps.size(); ++i)
                eps.data[i] = Scalar(normal(state.rng));
            zt = add_noise(z0, eps, t, schedule);
        }
        const Image<Scalar> zhat = ddim_denoise_n(zt, t, config.denoise_steps, *problem.denoiser, cond, schedule);
        const Image<Scalar> generated = problem.codec.decode(zhat);

        const double omega = noise_weight(config.weights, t, schedule);
        const LossResult<Scalar> loss = compute_losses(rendered, generated, mesh, omega, config.weights, &cam);
        const SplatGradients<Scalar> grads = backward(scene, cam, loss.adjoint, settings);
        state.stats.accumulate(grads, rendered.screen_radius);
        sgld_update(scene, grads, sgld_params(config, k, state.extent), state.rng,
                    config.preconditioner == Preconditioner::Adam ? &state.adam : nullptr);
        if (config.densify_every > 0 && (k + 1) % config.densify_every == 0 &&
            k + 1 <= int(config.densify_until * config.steps))
            densify_prune(scene, state.stats, config, &state.adam);

        LossReport report = loss.report;
        report.t = t;
        report.view = view;
        return report;
    } catch (...) {
        std::throw_with_nested(GgdsStepError("ggds step " + std::to_string(k) + " failed", k));
    }
}

template <typename Scalar>
SceneModel<Scalar> optimize(SceneModel<Scalar> scene, const GgdsProblem<Scalar> &problem, const GgdsConfig &config,
                            const OptimizeHooks<Scalar> &hooks) {
    require(problem.schedule != nullptr, "optimize: problem needs a schedule");
    config.validate(problem.schedule->T);
    require(scene.splats.size() <= config.splat_cap, "optimize: scene already exceeds the splat cap");
    scene.cap = config.splat_cap;
    scene.validate(config.weights.geometry());

    OptimizerState state(config.seed);
    state.extent = double(scene.extent());
    for (int k = 0; k < config.steps; ++k) {
        const LossReport report = ggds_step(scene, k, problem, config, state);
        if (hooks.on_report)
            hooks.on_report(k, report);
        const bool last = k + 1 == config.steps;
        if (hooks.on_checkpoint && (last || (config.checkpoint_every > 0 && (k + 1) % config.checkpoint_every == 0)))
            hooks.on_checkpoint(k + 1, scene);
    }
    return scene;
}

int default_t_defer(const DiffusionSchedule &schedule, double threshold) {
    return schedule.last_level_at_least(threshold);
}

template <typename Scalar>
Image<Scalar> deferred_render(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera,
                              Denoiser<Scalar> &denoiser, const Codec &codec, const DiffusionSchedule &schedule,
                              int t_defer, int steps, std::uint64_t seed, const RenderSettings &settings) {
    require(t_defer >= 0 && t_defer <= schedule.T, "deferred_render: t_defer out of range");
    const RenderBuffers<Scalar> rendered = render(scene, camera, settings);
    const Image<Scalar> z0 = codec.encode(rendered.color);
    Image<Scalar> eps(z0.width, z0.height, z0.channels);
    Rng rng(seed);
    std::normal_distribution<double> normal;
    for (Eigen::Index i = 0; i < eps.size(); ++i)
        eps.data[i] = Scalar(normal(rng));
    Conditioning<Scalar> cond;
    if (!scene.proxy.empty())
        cond.disparity = codec.downsample(render_mesh_buffers(scene.proxy, camera, settings).disparity);
    const Image<Scalar> zt = add_noise(z0, eps, t_defer, schedule);
    return codec.decode(ddim_denoise_n(zt, t_defer, steps, denoiser, cond, schedule));
}

template <typename Scalar>
std::vector<Camera<Scalar>> make_camera_pool(const std::vector<Camera<Scalar>> &trajectory, int jitter,
                                             const TriangleMesh &area, Rng &rng) {
    require(jitter >= 0, "make_camera_pool: jitter count must be non-negative");
    std::vector<Camera<Scalar>> pool = trajectory;
    if (jitter == 0)
        return pool;
    require(!trajectory.empty(), "make_camera_pool: jittered views need a template camera");
    Eigen::Vector2d lo = Eigen::Vector2d::Constant(1e300), hi = -lo;
    if (!area.vertices.empty())
        for (const auto &v : area.vertices) {
            lo = lo.cwiseMin(v.head<2>());
            hi = hi.cwiseMax(v.head<2>());
        }
    else
        for (const auto &c : trajectory) {
            lo = lo.cwiseMin(c.position.template head<2>().template cast<double>());
            hi = hi.cwiseMax(c.position.template head<2>().template cast<double>());
        }
    const Camera<Scalar> &tmpl = trajectory.front();
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double pitch = -10.0 * pi_v<double> / 180.0;
    for (int i = 0; i < jitter; ++i) {
        const double x = lo.x() + (hi.x() - lo.x()) * u01(rng);
        const double y = lo.y() + (hi.y() - lo.y()) * u01(rng);
        const double z = 1.2 + 1.0 * u01(rng);
        const double yaw = 2.0 * pi_v<double> * u01(rng);
        const Vec3<Scalar> eye{Scalar(x), Scalar(y), Scalar(z)};
        const Vec3<Scalar> dir(Scalar(std::cos(yaw) * std::cos(pitch)), Scalar(std::sin(yaw) * std::cos(pitch)),
                               Scalar(std::sin(pitch)));
        Camera<Scalar> cam = Camera<Scalar>::look_at(eye, eye + dir, tmpl.fov_y, tmpl.width, tmpl.height);
        cam.near_plane = tmpl.near_plane;
        cam.far_plane = tmpl.far_plane;
        pool.push_back(cam);
    }
    return pool;
}

#define GGDS_INSTANTIATE_OPT(S)                                                                                   \
    template SgldReport sgld_update<S>(SceneModel<S> &, const SplatGradients<S> &, const SgldParams &, Rng &,      \
                                       AdamState *);                                                              \
    template void DensifyStats::accumulate<S>(const SplatGradients<S> &, const std::vector<S> &);                 \
    template DensifyReport densify_prune<S>(SceneModel<S> &, DensifyStats &, const GgdsConfig &, AdamState *);    \
    template LossReport ggds_step<S>(SceneModel<S> &, int, const GgdsProblem<S> &, const GgdsConfig &,            \
                                     OptimizerState &);                                                           \
    template SceneModel<S> optimize<S>(SceneModel<S>, const GgdsProblem<S> &, const GgdsConfig &,                 \
                                       const OptimizeHooks<S> &);                                                 \
    template Image<S> deferred_render<S>(const SceneModel<S> &, const Camera<S> &, Denoiser<S> &, const Codec &,  \
                                         const DiffusionSchedule &, int, int, std::uint64_t,                      \
                                         const RenderSettings &);                                                 \
    template std::vector<Camera<S>> make_camera_pool<S>(const std::vector<Camera<S>> &, int, const TriangleMesh &, \
                                                        Rng &);

GGDS_INSTANTIATE_OPT(float)
GGDS_INSTANTIATE_OPT(double)

} // namespace ggds
