#include "ggds/losses.hpp"
#include "ggds/metrics.hpp"
#include "ggds/optimizer.hpp"
#include "ggds/toy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ggds;

namespace {

RenderBuffers<double> flat_buffers(int w, int h, double color, const Eigen::Vector3d &normal, double disparity,
                                   double alpha) {
    RenderBuffers<double> b(w, h);
    b.color.data.setConstant(color);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                b.normal(x, y, c) = normal[c];
    b.disparity.data.setConstant(disparity);
    b.alpha.data.setConstant(alpha);
    b.distortion.data.setZero();
    return b;
}

LossWeights only(double LossWeights::*field, double value) {
    LossWeights w;
    w.lpips = w.norm = w.disp = w.tv = w.distortion = w.normal_consistency = 0.0;
    if (field)
        w.*field = value;
    return w;
}

SplatGradients<double> zero_grads(const SceneModel<double> &scene) {
    SplatGradients<double> g;
    for (const auto &s : scene.splats) {
        SplatGradient<double> sg;
        sg.sh = Splat<double>::ShBlock::Zero(s.sh.rows(), 3);
        g.splats.push_back(sg);
    }
    return g;
}

SceneModel<double> line_scene(int n) {
    SceneModel<double> scene;
    scene.cap = 1000;
    for (int i = 0; i < n; ++i) {
        Splat<double> s;
        s.center = Eigen::Vector3d(i, 0, 0);
        s.scale_u = 0.5;
        s.scale_v = 0.25;
        s.opacity = 0.5;
        scene.splats.push_back(s);
    }
    return scene;
}

bool same_bits(const SceneModel<double> &a, const SceneModel<double> &b) {
    if (a.splats.size() != b.splats.size())
        return false;
    for (std::size_t i = 0; i < a.splats.size(); ++i) {
        const auto &p = a.splats[i], &q = b.splats[i];
        if (p.center != q.center || p.tangent_u != q.tangent_u || p.tangent_v != q.tangent_v ||
            p.scale_u != q.scale_u || p.scale_v != q.scale_v || p.opacity != q.opacity || p.sh != q.sh)
            return false;
    }
    return true;
}

struct CountingDenoiser final : Denoiser<double> {
    Denoiser<double> *inner;
    int calls = 0;
    explicit CountingDenoiser(Denoiser<double> &d) : inner(&d) {}
    Image<double> predict(const Image<double> &zt, int t, double ab, const Conditioning<double> &c) override {
        ++calls;
        return inner->predict(zt, t, ab, c);
    }
};

ToyOptions small_toy() {
    ToyOptions o;
    o.cells_x = 20;
    o.cells_y = 25; // 1000 splats
    return o;
}

} // namespace

// ---- noise-level sampling ----

TEST(NoiseLevel, FirstStepCoversWholeInterval) {
    GgdsConfig c;
    Rng rng(1);
    int lo = 1 << 30, hi = -1;
    for (int i = 0; i < 100000; ++i) {
        const int t = sample_noise_level(0, c, rng);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    EXPECT_EQ(lo, c.t_min_start);
    EXPECT_EQ(hi, c.t_max);
}

TEST(NoiseLevel, LowerBoundReachesEndValue) {
    GgdsConfig c;
    EXPECT_EQ(t_min_at(c.steps, c), c.t_min_end);
    EXPECT_EQ(t_min_at(0, c), c.t_min_start);
    // Midpoint of the linear annealing, by hand: 500 + (20 - 500) * 3000 / 6000 = 260.
    EXPECT_EQ(t_min_at(3000, c), 260);
    for (int k = 1; k <= c.steps; ++k)
        ASSERT_LE(t_min_at(k, c), t_min_at(k - 1, c));
}

TEST(NoiseLevel, DegenerateIntervalIsDeterministic) {
    GgdsConfig c;
    c.t_min_start = c.t_max = 640;
    Rng rng(2);
    for (int i = 0; i < 1000; ++i)
        ASSERT_EQ(sample_noise_level(0, c, rng), 640);
}

TEST(NoiseLevel, NoiseScaleDecaysOverTail) {
    GgdsConfig c;
    c.steps = 100;
    c.lambda_noise = 1e-4;
    c.noise_decay_fraction = 0.2;
    EXPECT_EQ(noise_scale_at(0, c), 1e-4);
    EXPECT_EQ(noise_scale_at(80, c), 1e-4);
    EXPECT_NEAR(noise_scale_at(90, c), 0.5e-4, 1e-18);
    EXPECT_EQ(noise_scale_at(100, c), 0.0);
}

TEST(Config, ValidateRejectsInconsistentFields) {
    GgdsConfig c;
    EXPECT_NO_THROW(c.validate());
    auto bad = [](auto mutate) {
        GgdsConfig c;
        mutate(c);
        EXPECT_THROW(c.validate(), InvalidArgument);
    };
    bad([](GgdsConfig &c) { c.steps = 0; });
    bad([](GgdsConfig &c) { c.t_min_end = 600; });
    bad([](GgdsConfig &c) { c.t_max = 1001; });
    bad([](GgdsConfig &c) { c.weights.norm = -1; });
    bad([](GgdsConfig &c) { c.xi.opacity = NAN; });
    bad([](GgdsConfig &c) { c.splat_cap = 0; });
    bad([](GgdsConfig &c) { c.codec_factor = 0; });
}

// ---- losses ----

TEST(Losses, MatchingBuffersGiveZeroTerms) {
    const auto r = flat_buffers(8, 8, 0.4, Eigen::Vector3d(0, 0, 1), 0.5, 1.0);
    const auto out = compute_losses(r, r.color, r, 1.0, LossWeights{});
    EXPECT_EQ(out.report.gen_l1, 0.0);
    EXPECT_EQ(out.report.perceptual, 0.0);
    EXPECT_EQ(out.report.normal, 0.0);
    EXPECT_EQ(out.report.disparity, 0.0);
    EXPECT_EQ(out.report.tv, 0.0);
    EXPECT_EQ(out.report.total, 0.0);
    EXPECT_TRUE((out.adjoint.color.data == 0).all());
}

TEST(Losses, ConstantColorOffsetGivesOffset) {
    const auto r = flat_buffers(8, 6, 0.3, Eigen::Vector3d(0, 0, 1), 0.5, 1.0);
    Image<double> gen = r.color;
    gen.data += 0.125;
    const auto out = compute_losses(r, gen, RenderBuffers<double>{}, 1.0, only(nullptr, 0));
    EXPECT_NEAR(out.report.total, 0.125, 1e-15);
}

TEST(Losses, NormalTermMatchesPerPixelSum) {
    Rng rng(3);
    std::normal_distribution<double> n(0, 1);
    const int W = 9, H = 7;
    auto r = flat_buffers(W, H, 0.5, Eigen::Vector3d(0, 0, 1), 0.5, 1.0);
    auto m = r;
    double brute = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const Eigen::Vector3d a = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
            // Rotated by 90 degrees about a perpendicular axis.
            const Eigen::Vector3d axis = a.unitOrthogonal();
            const Eigen::Vector3d b = Eigen::AngleAxisd(M_PI / 2, axis) * a;
            for (int c = 0; c < 3; ++c) {
                r.normal(x, y, c) = a[c];
                m.normal(x, y, c) = b[c];
                brute += std::abs(a[c] - b[c]);
            }
        }
    brute /= 3.0 * W * H;
    const auto out = compute_losses(r, r.color, m, 1.0, only(&LossWeights::norm, 1.0));
    EXPECT_NEAR(out.report.normal, brute, 1e-14);
    EXPECT_NEAR(out.report.total, brute, 1e-14);
}

TEST(Losses, GeometryTermsIgnorePixelsTheMeshMisses) {
    auto r = flat_buffers(4, 4, 0.5, Eigen::Vector3d(0, 0, 1), 0.5, 1.0);
    auto m = r;
    m.alpha(0, 0) = 0.0;
    r.disparity(0, 0) = 10.0;
    m.disparity(1, 0) = 0.25;
    const auto out = compute_losses(r, r.color, m, 1.0, only(&LossWeights::disp, 1.0));
    EXPECT_NEAR(out.report.disparity, 0.25 / 15.0, 1e-15);
    EXPECT_EQ(out.adjoint.disparity(0, 0), 0.0);
}

TEST(Losses, TotalRecomposesFromTerms) {
    Rng rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    const int W = 16, H = 12;
    for (int trial = 0; trial < 20; ++trial) {
        auto r = flat_buffers(W, H, 0.5, Eigen::Vector3d(0, 0, 1), 0.5, 1.0);
        auto m = r;
        Image<double> gen(W, H, 3);
        for (Eigen::Index i = 0; i < r.color.size(); ++i) {
            r.color.data[i] = u(rng);
            gen.data[i] = u(rng);
            r.normal.data[i] = u(rng) - 0.5;
        }
        for (Eigen::Index i = 0; i < r.disparity.size(); ++i) {
            r.disparity.data[i] = 0.2 + u(rng);
            r.alpha.data[i] = 0.6 + 0.4 * u(rng);
            r.distortion.data[i] = 0.01 * u(rng);
        }
        LossWeights w;
        w.distortion = u(rng);
        w.normal_consistency = u(rng);
        const Camera<double> cam = Camera<double>::look_at({0, 0, 2}, {0, 0, 0}, 1.0, W, H);
        const auto out = compute_losses(r, gen, m, u(rng), w, &cam);
        EXPECT_TRUE(out.report.all_finite());
        EXPECT_NEAR(out.report.total, out.report.recompose(w), 1e-6);
    }
}

TEST(Losses, NormalConsistencyAdjointMatchesFiniteDifferences) {
    Rng rng(7);
    std::uniform_real_distribution<double> u(0, 1);
    const int W = 6, H = 5;
    auto r = flat_buffers(W, H, 0.5, Eigen::Vector3d(0, 0, 1), 0.5, 1.0);
    for (Eigen::Index i = 0; i < r.disparity.size(); ++i) {
        r.disparity.data[i] = 0.3 + 0.2 * u(rng);
        r.alpha.data[i] = 0.7 + 0.3 * u(rng);
    }
    for (Eigen::Index i = 0; i < r.normal.size(); ++i)
        r.normal.data[i] = u(rng) - 0.5;
    const Camera<double> cam = Camera<double>::look_at({0.1, -0.2, 2}, {0, 0, 0}, 0.9, W, H);
    const LossWeights w = only(&LossWeights::normal_consistency, 0.7);
    auto total = [&](const RenderBuffers<double> &b) {
        return compute_losses(b, b.color, RenderBuffers<double>{}, 0.0, w, &cam).report.total;
    };
    const auto adj = compute_losses(r, r.color, RenderBuffers<double>{}, 0.0, w, &cam).adjoint;
    const double h = 1e-6;
    auto check = [&](Image<double> RenderBuffers<double>::*buf, const Image<double> &grad) {
        for (Eigen::Index i = 0; i < grad.size(); ++i) {
            auto p = r, m = r;
            (p.*buf).data[i] += h;
            (m.*buf).data[i] -= h;
            const double fd = (total(p) - total(m)) / (2 * h);
            EXPECT_NEAR(grad.data[i], fd, 1e-7 * std::max(1.0, std::abs(fd))) << "entry " << i;
        }
    };
    check(&RenderBuffers<double>::disparity, adj.disparity);
    check(&RenderBuffers<double>::alpha, adj.alpha);
    check(&RenderBuffers<double>::normal, adj.normal);
}

TEST(Losses, NormalConsistencyVanishesForMatchingPlane) {
    // A fronto-parallel plane at depth 2: points from alpha / disparity are coplanar with normal +z.
    const int W = 8, H = 8;
    const auto r = flat_buffers(W, H, 0.5, Eigen::Vector3d(0, 0, 1), 0.5, 1.0);
    const Camera<double> cam = Camera<double>::look_at({0, 0, 2}, {0, 0, 0}, 1.0, W, H);
    const auto out = compute_losses(r, r.color, RenderBuffers<double>{}, 1.0, only(&LossWeights::normal_consistency, 1.0), &cam);
    EXPECT_NEAR(out.report.normal_consistency, 0.0, 1e-12);
}

TEST(Losses, SnrPowerWeight) {
    const auto sched = make_linear_schedule(1000);
    LossWeights w;
    w.omega = NoiseWeighting::SnrPower;
    w.omega_power = 2.0;
    EXPECT_NEAR(noise_weight(w, 400, sched), std::pow(1.0 - sched.alpha_bar[400], 2.0), 1e-15);
    w.omega = NoiseWeighting::Constant;
    EXPECT_EQ(noise_weight(w, 400, sched), 1.0);
}

TEST(Losses, PerceptualIsZeroOnlyForEqualImagesUpToOffset) {
    Rng rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    Image<double> a(16, 16, 3), b(16, 16, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i)
        a.data[i] = u(rng);
    b.data = a.data + 0.1; // gradients are unchanged by a constant shift
    EXPECT_NEAR(perceptual_distance(a, b), 0.0, 1e-12);
    b.data = a.data.reverse();
    EXPECT_GT(perceptual_distance(a, b), 0.01);
}

// ---- SGLD ----

TEST(Sgld, ZeroGradientWithoutNoiseLeavesSceneUntouched) {
    auto scene = line_scene(5);
    const auto before = scene;
    Rng rng(1);
    SgldParams p;
    const auto rep = sgld_update(scene, zero_grads(scene), p, rng);
    EXPECT_EQ(rep.updated, 0u);
    EXPECT_TRUE(same_bits(scene, before));
}

TEST(Sgld, ScalarStepDescends) {
    auto scene = line_scene(1);
    auto g = zero_grads(scene);
    g.splats[0].opacity = 2.0;
    SgldParams p;
    p.xi.opacity = 0.1;
    Rng rng(1);
    sgld_update(scene, g, p, rng);
    EXPECT_NEAR(scene.splats[0].opacity, 0.5 - 0.2, 1e-15);
    p.raw_sign = true;
    sgld_update(scene, g, p, rng);
    EXPECT_NEAR(scene.splats[0].opacity, 0.5, 1e-15);
}

TEST(Sgld, NoiseVarianceMatchesScale) {
    const int n = 1000, rounds = 1000;
    auto scene = line_scene(n);
    const auto g = zero_grads(scene);
    SgldParams p;
    p.lambda_noise = 0.01;
    Rng rng(42);
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < rounds; ++r) {
        std::vector<double> before(n);
        for (int i = 0; i < n; ++i)
            before[std::size_t(i)] = scene.splats[std::size_t(i)].center.x();
        sgld_update(scene, g, p, rng);
        for (int i = 0; i < n; ++i) {
            const double d = scene.splats[std::size_t(i)].center.x() - before[std::size_t(i)];
            sum += d;
            sum2 += d * d;
        }
    }
    const double count = double(n) * rounds;
    const double var = sum2 / count - (sum / count) * (sum / count);
    EXPECT_NEAR(var, 1e-4, 1e-5);
}

TEST(Sgld, ProjectionRestoresInvariants) {
    Rng rng(3);
    std::normal_distribution<double> nd(0, 1);
    auto scene = line_scene(50);
    auto g = zero_grads(scene);
    for (auto &sg : g.splats) {
        sg.center = Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
        sg.tangent_u = 10 * Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
        sg.tangent_v = 10 * Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
        sg.scale_u = 100 * nd(rng);
        sg.scale_v = 100 * nd(rng);
        sg.opacity = 100 * nd(rng);
        sg.sh.setConstant(nd(rng));
    }
    SgldParams p;
    p.xi = {1.0, 1.0, 1.0, 1.0, 1.0};
    p.lambda_noise = 0.5;
    sgld_update(scene, g, p, rng);
    for (const auto &s : scene.splats)
        EXPECT_TRUE(satisfies_invariants(s));
}

TEST(Sgld, NonFiniteGradientIsSkipped) {
    auto scene = line_scene(3);
    auto g = zero_grads(scene);
    g.splats[1].opacity = NAN;
    g.splats[2].opacity = 1.0;
    SgldParams p;
    p.xi.opacity = 0.1;
    Rng rng(1);
    const auto rep = sgld_update(scene, g, p, rng);
    EXPECT_EQ(rep.skipped_nonfinite, 1u);
    EXPECT_EQ(rep.updated, 1u);
    EXPECT_EQ(scene.splats[1].opacity, 0.5);
    EXPECT_NEAR(scene.splats[2].opacity, 0.4, 1e-15);
}

TEST(Sgld, AdamFirstStepMovesByStepSize) {
    auto scene = line_scene(1);
    auto g = zero_grads(scene);
    g.splats[0].opacity = 1e-7; // Adam normalizes the magnitude away
    SgldParams p;
    p.preconditioner = Preconditioner::Adam;
    p.xi.opacity = 0.05;
    AdamState adam;
    Rng rng(1);
    sgld_update(scene, g, p, rng, &adam);
    EXPECT_NEAR(scene.splats[0].opacity, 0.45, 1e-9);
    EXPECT_EQ(scene.splats[0].center, Eigen::Vector3d(0, 0, 0));
}

// ---- density control ----

TEST(Densify, CapBlocksSplits) {
    auto scene = line_scene(4);
    scene.cap = 4;
    GgdsConfig c;
    c.splat_cap = 4;
    DensifyStats stats;
    stats.resize(4);
    for (int i = 0; i < 4; ++i) {
        stats.grad_accum[std::size_t(i)] = 1e3;
        stats.seen[std::size_t(i)] = 1;
        stats.max_radius[std::size_t(i)] = 50;
    }
    const auto rep = densify_prune(scene, stats, c);
    EXPECT_EQ(rep.split, 0u);
    EXPECT_EQ(scene.splats.size(), 4u);
}

TEST(Densify, PrunesTransparentSplat) {
    auto scene = line_scene(3);
    scene.splats[1].opacity = 0.001;
    GgdsConfig c;
    DensifyStats stats;
    const auto rep = densify_prune(scene, stats, c);
    EXPECT_EQ(rep.pruned, 1u);
    ASSERT_EQ(scene.splats.size(), 2u);
    EXPECT_EQ(scene.splats[1].center.x(), 2.0);
}

TEST(Densify, SplitHalvesScalesAndStraddlesParent) {
    auto scene = line_scene(3);
    GgdsConfig c;
    DensifyStats stats;
    stats.resize(3);
    stats.grad_accum = {0.0, 1.0, 0.0};
    stats.seen = {1, 2, 1};
    stats.max_radius = {5, 5, 5};
    const auto parent = scene.splats[1];
    const auto rep = densify_prune(scene, stats, c);
    EXPECT_EQ(rep.split, 1u);
    ASSERT_EQ(scene.splats.size(), 4u);
    const auto &a = scene.splats[1], &b = scene.splats[3];
    const Eigen::Vector3d offset = 0.5 * parent.scale_u * parent.tangent_u;
    EXPECT_EQ(a.center, parent.center - offset);
    EXPECT_EQ(b.center, parent.center + offset);
    for (const auto *s : {&a, &b}) {
        EXPECT_EQ(s->scale_u, 0.5 * parent.scale_u);
        EXPECT_EQ(s->scale_v, 0.5 * parent.scale_v);
        EXPECT_EQ(s->opacity, parent.opacity);
    }
}

TEST(Densify, SplitsLimitedToRoomUnderCapByGradient) {
    auto scene = line_scene(4);
    GgdsConfig c;
    c.splat_cap = 6;
    DensifyStats stats;
    stats.resize(4);
    stats.grad_accum = {1.0, 4.0, 3.0, 2.0};
    stats.seen = {1, 1, 1, 1};
    stats.max_radius = {5, 5, 5, 5};
    const auto rep = densify_prune(scene, stats, c);
    EXPECT_EQ(rep.split, 2u);
    ASSERT_EQ(scene.splats.size(), 6u);
    EXPECT_EQ(scene.splats[1].scale_u, 0.25);
    EXPECT_EQ(scene.splats[2].scale_u, 0.25);
    EXPECT_EQ(scene.splats[0].scale_u, 0.5);
    EXPECT_EQ(scene.splats[3].scale_u, 0.5);
}

TEST(Densify, PrunesSplatsSeenOnlyAsSubpixel) {
    auto scene = line_scene(2);
    GgdsConfig c;
    DensifyStats stats;
    stats.resize(2);
    stats.seen = {3, 0};
    stats.max_radius = {0.05, 0.0};
    const auto rep = densify_prune(scene, stats, c);
    EXPECT_EQ(rep.pruned, 1u);
    EXPECT_EQ(scene.splats[0].center.x(), 1.0);
}

TEST(Densify, DefaultCapIsFourMillion) { EXPECT_EQ(GgdsConfig{}.splat_cap, 4'000'000u); }

// ---- GGDS step ----

TEST(GgdsStep, DeltaPriorAtOwnRenderIsFixedPoint) {
    const auto toy = make_toy_problem(small_toy());
    SceneModel<double> scene = toy.init;
    const auto sched = make_linear_schedule(1000);
    const Image<double> own = render(scene, toy.train).color;
    AnalyticDenoiser<double> den(AnalyticPrior<double>::delta(own), sched);
    GgdsProblem<double> prob;
    prob.denoiser = &den;
    prob.schedule = &sched;
    prob.cameras = {toy.train};
    GgdsConfig c;
    c.lambda_noise = 0.0;
    c.weights = only(&LossWeights::lpips, 1.0);
    OptimizerState state(3);
    state.extent = scene.extent();
    const auto before = scene;
    const LossReport rep = ggds_step(scene, 0, prob, c, state);
    EXPECT_NEAR(rep.gen_l1, 0.0, 1e-12);
    EXPECT_TRUE(same_bits(scene, before));
}

TEST(GgdsStep, UsesNDenoiseStepsPerIteration) {
    const auto toy = make_toy_problem(small_toy());
    SceneModel<double> scene = toy.init;
    const auto sched = make_linear_schedule(1000);
    AnalyticDenoiser<double> inner(AnalyticPrior<double>::delta(toy.target), sched);
    CountingDenoiser den(inner);
    GgdsProblem<double> prob;
    prob.denoiser = &den;
    prob.schedule = &sched;
    prob.cameras = {toy.train};
    GgdsConfig c;
    EXPECT_EQ(c.denoise_steps, 5);
    c.noise_mode = NoiseMode::Random;
    OptimizerState state(4);
    ggds_step(scene, 0, prob, c, state);
    EXPECT_EQ(den.calls, 5);
    c.noise_mode = NoiseMode::Inversion;
    den.calls = 0;
    ggds_step(scene, 1, prob, c, state);
    EXPECT_EQ(den.calls, 10);
}

TEST(GgdsStep, GeometryWeightsNeedProxy) {
    const auto toy = make_toy_problem(small_toy());
    SceneModel<double> scene = toy.init;
    scene.proxy = {};
    const auto sched = make_linear_schedule(1000);
    AnalyticDenoiser<double> den(AnalyticPrior<double>::delta(toy.target), sched);
    GgdsProblem<double> prob;
    prob.denoiser = &den;
    prob.schedule = &sched;
    prob.cameras = {toy.train};
    OptimizerState state;
    EXPECT_THROW(ggds_step(scene, 0, prob, GgdsConfig{}, state), InvalidArgument);
}

TEST(GgdsStep, DenoiserFailureIsNestedInStepError) {
    struct Failing final : Denoiser<double> {
        Image<double> predict(const Image<double> &, int, double, const Conditioning<double> &) override {
            throw std::runtime_error("predictor down");
        }
    } den;
    const auto toy = make_toy_problem(small_toy());
    SceneModel<double> scene = toy.init;
    const auto sched = make_linear_schedule(1000);
    GgdsProblem<double> prob;
    prob.denoiser = &den;
    prob.schedule = &sched;
    prob.cameras = {toy.train};
    OptimizerState state;
    try {
        ggds_step(scene, 7, prob, GgdsConfig{}, state);
        FAIL() << "expected GgdsStepError";
    } catch (const GgdsStepError &e) {
        EXPECT_EQ(e.step, 7);
        try {
            std::rethrow_if_nested(e);
            FAIL() << "cause not nested";
        } catch (const DenoiserStepError &inner) {
            EXPECT_EQ(inner.step, 0);
        }
    }
}

TEST(Optimize, ToyLossEmaHalvesWithinThreeHundredSteps) {
    const auto toy = make_toy_problem(small_toy());
    ASSERT_EQ(toy.init.splats.size(), 1000u);
    const auto sched = make_linear_schedule(1000);
    AnalyticDenoiser<double> den(AnalyticPrior<double>::delta(toy.target), sched);
    GgdsProblem<double> prob;
    prob.denoiser = &den;
    prob.schedule = &sched;
    prob.cameras = {toy.train};
    GgdsConfig c;
    c.steps = 300;
    c.densify_every = 0;
    double ema = 0.0, ema10 = 0.0;
    std::vector<int> ts;
    OptimizeHooks<double> hooks;
    hooks.on_report = [&](int k, const LossReport &r) {
        ema = k == 0 ? r.total : 0.9 * ema + 0.1 * r.total;
        if (k == 9)
            ema10 = ema;
        EXPECT_NEAR(r.total, r.recompose(c.weights), 1e-6);
        EXPECT_GE(r.t, t_min_at(k, c));
        EXPECT_LE(r.t, c.t_max);
    };
    const auto out = optimize(toy.init, prob, c, hooks);
    EXPECT_LT(ema, 0.5 * ema10);
    for (const auto &s : out.splats)
        ASSERT_TRUE(satisfies_invariants(s));
}

TEST(Optimize, SameSeedGivesIdenticalScenesAndCapHolds) {
    const auto toy = make_toy_problem(small_toy());
    const auto sched = make_linear_schedule(1000);
    AnalyticDenoiser<double> den(AnalyticPrior<double>::delta(toy.target), sched);
    GgdsProblem<double> prob;
    prob.denoiser = &den;
    prob.schedule = &sched;
    prob.cameras = {toy.train, toy.heldout};
    GgdsConfig c;
    c.steps = 40;
    c.densify_every = 10;
    c.split_grad_threshold = 0.0;
    c.split_scale_fraction = 0.0;
    c.splat_cap = 1100;
    c.seed = 99;
    std::size_t max_count = 0;
    OptimizeHooks<double> hooks;
    hooks.on_checkpoint = [&](int, const SceneModel<double> &s) { max_count = std::max(max_count, s.splats.size()); };
    c.checkpoint_every = 1;
    const auto a = optimize(toy.init, prob, c, hooks);
    const auto b = optimize(toy.init, prob, c);
    EXPECT_TRUE(same_bits(a, b));
    EXPECT_LE(max_count, 1100u);
    EXPECT_GT(a.splats.size(), 1000u);
    c.seed = 100;
    EXPECT_FALSE(same_bits(a, optimize(toy.init, prob, c)));
}

TEST(Optimize, RejectsSceneOverCap) {
    const auto toy = make_toy_problem(small_toy());
    const auto sched = make_linear_schedule(1000);
    AnalyticDenoiser<double> den(AnalyticPrior<double>::delta(toy.target), sched);
    GgdsProblem<double> prob;
    prob.denoiser = &den;
    prob.schedule = &sched;
    prob.cameras = {toy.train};
    GgdsConfig c;
    c.splat_cap = 999;
    EXPECT_THROW(optimize(toy.init, prob, c), InvalidArgument);
}

// ---- deferred rendering ----

TEST(Deferred, ZeroLevelIsCodecRoundTrip) {
    const auto toy = make_toy_problem(small_toy());
    const auto sched = make_linear_schedule(1000);
    AnalyticDenoiser<double> den(AnalyticPrior<double>::gaussian(ArrayX<double>::Constant(1, 0.5), ArrayX<double>::Constant(1, 0.2)), sched);
    const Codec codec = Codec::pooled(4);
    const Image<double> out = deferred_render(toy.init, toy.train, den, codec, sched, 0, 5, 1);
    const Image<double> plain = codec_roundtrip(render(toy.init, toy.train).color, codec).reconstruction;
    EXPECT_EQ((out.data - plain.data).abs().maxCoeff(), 0.0);
}

TEST(Deferred, DeltaPriorReturnsTarget) {
    const auto toy = make_toy_problem(small_toy());
    const auto sched = make_linear_schedule(1000);
    AnalyticDenoiser<double> den(AnalyticPrior<double>::delta(toy.target), sched);
    const int td = default_t_defer(sched);
    const Image<double> out = deferred_render(toy.init, toy.train, den, Codec::identity(), sched, td, 5, 2);
    EXPECT_LT((out.data - toy.target.data).abs().maxCoeff(), 1e-10);
}

TEST(Deferred, DefaultLevelIsSlightlyNoisy) {
    const auto sched = make_linear_schedule(1000);
    const int td = default_t_defer(sched);
    EXPECT_GE(sched.alpha_bar[std::size_t(td)], 0.9);
    EXPECT_LT(sched.alpha_bar[std::size_t(td + 1)], 0.9);
    EXPECT_GT(td, 0);
}

// ---- camera pool ----

TEST(CameraPool, JitteredViewsStayAtGroundLevelInsideArea) {
    const auto base = Camera<double>::look_at({0, 0, 1.5}, {0, 4, 0}, 1.0, 32, 32);
    const TriangleMesh area = grid_mesh(-5, -3, 5, 7, 2, 2);
    Rng rng(8);
    const auto pool = make_camera_pool<double>({base}, 200, area, rng);
    ASSERT_EQ(pool.size(), 201u);
    for (std::size_t i = 1; i < pool.size(); ++i) {
        const auto &c = pool[i];
        EXPECT_GE(c.position.z(), 1.2);
        EXPECT_LE(c.position.z(), 2.2);
        EXPECT_GE(c.position.x(), -5);
        EXPECT_LE(c.position.x(), 5);
        EXPECT_GE(c.position.y(), -3);
        EXPECT_LE(c.position.y(), 7);
        EXPECT_EQ(c.width, 32);
        EXPECT_NO_THROW(c.validate());
    }
}
