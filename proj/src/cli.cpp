#include "ggds/cli.hpp"

#include "ggds/config.hpp"
#include "ggds/io.hpp"
#include "ggds/layout.hpp"
#include "ggds/optimizer.hpp"
#include "ggds/rasterizer.hpp"
#include "ggds/remote.hpp"
#include "ggds/toy.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#ifndef GGDS_GIT_DESCRIBE
#define GGDS_GIT_DESCRIBE "unknown"
#endif

namespace ggds {

namespace fs = std::filesystem;
using Real = float;

namespace {

struct Common {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string manifest;
    std::string command;
};

RunManifest start_manifest(const Common &c, const std::string &config) {
    RunManifest m;
    m.command = c.command;
    m.config = config;
    m.seed = c.seed;
    m.git_describe = GGDS_GIT_DESCRIBE;
    return m;
}

std::string manifest_path(const Common &c, const std::string &primary) {
    return c.manifest.empty() ? primary + ".manifest.json" : c.manifest;
}

GgdsConfig resolve_config(const std::string &path, const std::vector<std::string> &overrides, const Common &c) {
    GgdsConfig config = path.empty() ? GgdsConfig{} : load_config(path);
    for (const auto &o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + o + "' is not key=value", 0);
        config = parse_config(o.substr(0, eq) + " = " + o.substr(eq + 1), config);
    }
    if (c.seed_set)
        config.seed = c.seed;
    config.validate();
    return config;
}

/// Parses `builtin:gaussian[:mean:std]`, `builtin:delta:<pfm>` or `bridge:<endpoint>`.
std::unique_ptr<Denoiser<Real>> make_prior(const std::string &spec, const DiffusionSchedule &schedule,
                                           const Codec &codec, int width, int height) {
    if (spec.rfind("bridge:", 0) == 0)
        return std::make_unique<RemoteDenoiser<Real>>(Endpoint::parse(spec.substr(7)));
    if (spec.rfind("builtin:delta:", 0) == 0) {
        const std::string path = spec.substr(14);
        Image<Real> target = load_pfm(path).cast<Real>();
        if (target.width == width && target.height == height)
            target = codec.encode(target);
        else if (target.width != codec.latent_width(width) || target.height != codec.latent_height(height))
            throw std::runtime_error(path + ": delta target is " + shape_string(target) +
                                     ", expected the render or latent resolution");
        return std::make_unique<AnalyticDenoiser<Real>>(AnalyticPrior<Real>::delta(target), schedule);
    }
    if (spec.rfind("builtin:gaussian", 0) == 0) {
        double mean = 0.5, stddev = 0.25;
        const std::string rest = spec.substr(16);
        if (!rest.empty()) {
            double m, s;
            char tail;
            if (std::sscanf(rest.c_str(), ":%lf:%lf%c", &m, &s, &tail) != 2 || !(s > 0.0))
                throw InvalidArgument("prior '" + spec + "' must be builtin:gaussian:<mean>:<stddev> with stddev > 0");
            mean = m;
            stddev = s;
        }
        return std::make_unique<AnalyticDenoiser<Real>>(
            AnalyticPrior<Real>::gaussian(ArrayX<Real>::Constant(1, Real(mean)), ArrayX<Real>::Constant(1, Real(stddev))),
            schedule);
    }
    throw InvalidArgument("unknown prior '" + spec + "'");
}

std::vector<Camera<Real>> cameras_of(const TrajectorySpec &t) {
    std::vector<Camera<Real>> cams;
    for (const auto &c : t.cameras)
        cams.push_back(c.cast<Real>());
    return cams;
}

std::string stem_sibling(const std::string &path, const std::string &suffix) {
    const fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// ---- layout ----

struct LayoutArgs {
    std::string map, voxels, mesh, sampler = "extrude";
    double voxel = 0.5, max_height = 0.0, jitter = 0.0, chunk_extent = 100.0, iso = 0.5;
    int overlap = 8, steps = 10;
};

int run_layout(const LayoutArgs &a, const Common &c, std::ostream &out) {
    const MapLayout map = load_map_layout(a.map);
    const GridSpec full = GridSpec::covering(map, a.voxel, a.max_height);
    ChunkedOptions copts;
    copts.chunk_extent = a.chunk_extent;
    copts.overlap = a.overlap;
    ExtrudeOptions eopts;
    eopts.jitter_rate = a.jitter;
    ChunkedResult res;
    int warnings = 0;
    for (const auto &b : map.buildings)
        for (const auto &v : b.polygon)
            if (v.x() < map.extent[0] || v.y() < map.extent[1] || v.x() > map.extent[2] || v.y() > map.extent[3]) {
                ++warnings;
                break;
            }
    if (a.sampler == "extrude") {
        ExtrudeGenerator gen(eopts);
        res = generate_chunked(gen, map, full, copts, c.seed);
    } else {
        const DiffusionSchedule schedule = make_linear_schedule(1000);
        DenoiserVoxelSampler::Options sopts;
        sopts.steps = a.steps;
        sopts.extrude = eopts;
        DenoiserVoxelSampler gen(schedule, sopts);
        res = generate_chunked(gen, map, full, copts, c.seed);
    }
    save_voxels(a.voxels, res.grid);
    const TriangleMesh mesh = extract_surface(res.grid, a.iso);
    save_obj(a.mesh, mesh);
    std::size_t occupied = 0;
    for (auto v : res.grid.occupancy)
        occupied += v;
    out << "layout: " << res.grid.spec.dims[0] << "x" << res.grid.spec.dims[1] << "x" << res.grid.spec.dims[2] << " voxels, " << occupied << " occupied, "
        << res.chunks.size() << " chunks, " << mesh.faces.size() << " faces, " << warnings << " warnings\n";
    RunManifest m = start_manifest(c, "sampler=" + a.sampler + " voxel=" + fmt(a.voxel));
    m.outputs = {a.voxels, a.mesh};
    write_manifest(manifest_path(c, a.mesh), m);
    return kExitOk;
}

// ---- init ----

struct InitArgs {
    std::string mesh, out;
    double scale_factor = 1.0, opacity = 0.7, gray = 0.5, subdivide_area = 0.0;
    int sh_degree = 0, env_height = 16, env_width = 32;
    std::vector<double> env_color = {0.55, 0.65, 0.8};
    std::size_t cap = 4'000'000;
};

int run_init(const InitArgs &a, const Common &c, std::ostream &out) {
    SceneModel<Real> scene;
    scene.proxy = load_obj(a.mesh);
    SplatInitOptions opts;
    opts.opacity = a.opacity;
    opts.sh_degree = a.sh_degree;
    opts.gray = a.gray;
    opts.subdivide_area = a.subdivide_area;
    const auto res = mesh_to_splats<Real>(scene.proxy, a.scale_factor, opts);
    scene.splats = res.splats;
    scene.cap = a.cap;
    scene.env = EnvironmentMap<Real>::uniform(a.env_height, a.env_width,
                                              Vec3<Real>(Real(a.env_color[0]), Real(a.env_color[1]), Real(a.env_color[2])));
    scene.metadata["source_mesh"] = fs::path(a.mesh).filename().string();
    scene.validate();
    save_scene(a.out, scene);
    out << "init: " << scene.splats.size() << " splats, " << res.skipped << " degenerate faces skipped\n";
    RunManifest m = start_manifest(c, "scale_factor=" + fmt(a.scale_factor));
    m.outputs = {a.out, stem_sibling(a.out, ".env.pfm"), stem_sibling(a.out, ".proxy.obj")};
    write_manifest(manifest_path(c, a.out), m);
    return kExitOk;
}

// ---- optimize ----

struct OptimizeArgs {
    std::string scene, out, config, prior = "builtin:gaussian", trajectory, loss_log, checkpoint_dir, text;
    std::vector<std::string> set;
};

int run_optimize(const OptimizeArgs &a, const Common &c, std::ostream &out) {
    const GgdsConfig config = resolve_config(a.config, a.set, c);
    SceneModel<Real> scene = load_scene<Real>(a.scene);
    const TrajectorySpec traj = load_trajectory(a.trajectory);
    const DiffusionSchedule schedule = config.make_schedule();
    GgdsProblem<Real> problem;
    problem.codec = config.make_codec();
    problem.schedule = &schedule;
    Rng pool_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    problem.cameras = make_camera_pool(cameras_of(traj), config.jitter_views, scene.proxy, pool_rng);
    const auto &cam0 = problem.cameras.front();
    auto denoiser = make_prior(a.prior, schedule, problem.codec, cam0.width, cam0.height);
    problem.denoiser = denoiser.get();
    if (!a.text.empty())
        problem.text = a.text;

    const std::string loss_log = a.loss_log.empty() ? stem_sibling(a.out, ".loss.csv") : a.loss_log;
    const fs::path ckpt_dir = a.checkpoint_dir.empty() ? fs::path(a.out).parent_path() : fs::path(a.checkpoint_dir);
    if (!ckpt_dir.empty())
        fs::create_directories(ckpt_dir);
    std::ostringstream log;
    log << "step,t,view,total,gen_l1,perceptual,normal,disparity,tv,distortion,normal_consistency,omega\n";
    std::vector<std::string> checkpoints;
    OptimizeHooks<Real> hooks;
    hooks.on_report = [&](int k, const LossReport &r) {
        log << k << ',' << r.t << ',' << r.view << ',' << fmt(r.total) << ',' << fmt(r.gen_l1) << ','
            << fmt(r.perceptual) << ',' << fmt(r.normal) << ',' << fmt(r.disparity) << ',' << fmt(r.tv) << ','
            << fmt(r.distortion) << ',' << fmt(r.normal_consistency) << ',' << fmt(r.omega) << '\n';
    };
    hooks.on_checkpoint = [&](int k, const SceneModel<Real> &s) {
        if (config.checkpoint_every <= 0 || k % config.checkpoint_every != 0)
            return;
        char name[64];
        std::snprintf(name, sizeof(name), ".ckpt_%06d.ply", k);
        const std::string path = (ckpt_dir / (fs::path(a.out).stem().string() + name)).string();
        save_scene(path, s);
        checkpoints.push_back(path);
    };
    const auto t0 = std::chrono::steady_clock::now();
    const SceneModel<Real> result = optimize(std::move(scene), problem, config, hooks);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    save_scene(a.out, result);
    const std::string text = log.str();
    write_file_atomic(loss_log, std::vector<std::uint8_t>(text.begin(), text.end()));
    out << "optimize: " << config.steps << " steps, " << result.splats.size() << " splats, " << fmt(secs) << " s\n";

    RunManifest m = start_manifest(c, format_config(config));
    m.seed = config.seed;
    m.loss_log = loss_log;
    m.checkpoints = checkpoints;
    m.outputs = {a.out, stem_sibling(a.out, ".env.pfm"), stem_sibling(a.out, ".proxy.obj")};
    write_manifest(manifest_path(c, a.out), m);
    return kExitOk;
}

// ---- render ----

struct RenderArgs {
    std::string scene, trajectory, out_dir, config, prior = "builtin:gaussian";
    std::vector<std::string> set;
    bool deferred = false, pfm = false;
    int t_defer = -1, steps = 5, threads = 1;
};

int run_render(const RenderArgs &a, const Common &c, std::ostream &out) {
    const SceneModel<Real> scene = load_scene<Real>(a.scene);
    const TrajectorySpec traj = load_trajectory(a.trajectory);
    const auto cams = cameras_of(traj);
    fs::create_directories(a.out_dir);
    RenderSettings settings;
    settings.threads = a.threads;

    GgdsConfig config;
    DiffusionSchedule schedule;
    std::unique_ptr<Denoiser<Real>> denoiser;
    Codec codec;
    int t_defer = a.t_defer;
    if (a.deferred) {
        config = resolve_config(a.config, a.set, c);
        schedule = config.make_schedule();
        codec = config.make_codec();
        denoiser = make_prior(a.prior, schedule, codec, cams.front().width, cams.front().height);
        if (t_defer < 0)
            t_defer = default_t_defer(schedule, config.deferred_alpha_bar);
    }
    const int digits = std::max<int>(5, int(std::to_string(cams.size()).size()));
    RunManifest m = start_manifest(c, a.deferred ? format_config(config) : std::string("plain"));
    for (std::size_t i = 0; i < cams.size(); ++i) {
        Image<Real> frame = a.deferred ? deferred_render(scene, cams[i], *denoiser, codec, schedule, t_defer, a.steps,
                                                         c.seed + i, settings)
                                       : render(scene, cams[i], settings).color;
        char name[64];
        std::snprintf(name, sizeof(name), "frame_%0*zu.%s", digits, i, a.pfm ? "pfm" : "png");
        const std::string path = (fs::path(a.out_dir) / name).string();
        if (a.pfm)
            save_pfm(path, frame);
        else
            save_png(path, frame);
        m.outputs.push_back(path);
    }
    out << "render: " << cams.size() << " frames" << (a.deferred ? " (deferred)" : "") << " to " << a.out_dir << "\n";
    write_manifest(manifest_path(c, (fs::path(a.out_dir) / "render").string()), m);
    return kExitOk;
}

// ---- compose ----

struct ComposeArgs {
    std::string scene, asset, out;
    std::vector<double> translate = {0, 0, 0};
    double yaw_deg = 0.0, scale = 1.0;
    bool relight = false;
};

int run_compose(const ComposeArgs &a, const Common &c, std::ostream &out) {
    const SceneModel<Real> scene = load_scene<Real>(a.scene);
    const auto asset = load_splats_ply<Real>(a.asset);
    SimilarityTransform<Real> xf;
    xf.rotation = Eigen::AngleAxis<Real>(Real(a.yaw_deg * pi_v<double> / 180.0), Vec3<Real>::UnitZ()).toRotationMatrix();
    xf.translation = Vec3<Real>(Real(a.translate[0]), Real(a.translate[1]), Real(a.translate[2]));
    xf.scale = Real(a.scale);
    const SceneModel<Real> composed = compose_and_relight(scene, asset, xf, a.relight);
    save_scene(a.out, composed);
    out << "compose: " << asset.size() << " asset splats added, " << composed.splats.size() << " total\n";
    RunManifest m = start_manifest(c, "relight=" + std::string(a.relight ? "true" : "false"));
    m.outputs = {a.out, stem_sibling(a.out, ".env.pfm"), stem_sibling(a.out, ".proxy.obj")};
    write_manifest(manifest_path(c, a.out), m);
    return kExitOk;
}

// ---- export ----

struct ExportArgs {
    std::string scene, out, format = "ply";
};

int run_export(const ExportArgs &a, const Common &c, std::ostream &out) {
    const SceneModel<Real> scene = load_scene<Real>(a.scene);
    if (a.format == "ply") {
        save_splats_ply(a.out, scene.splats);
    } else if (a.format == "proxy-obj") {
        if (scene.proxy.empty())
            throw std::runtime_error(a.scene + ": scene has no proxy mesh");
        save_obj(a.out, scene.proxy);
    } else {
        save_pfm(a.out, scene.env.pixels);
    }
    out << "export: " << a.format << " to " << a.out << "\n";
    RunManifest m = start_manifest(c, "format=" + a.format);
    m.outputs = {a.out};
    write_manifest(manifest_path(c, a.out), m);
    return kExitOk;
}

// ---- bench ----

struct BenchArgs {
    int splats = 100'000, size = 512, frames = 3, threads = 4;
    std::string scene = "street";
    double transmittance_floor = 0.0;
    std::string report = "bench.json";
};

int run_bench(const BenchArgs &a, const Common &c, std::ostream &out) {
    Rng rng(c.seed);
    Camera<Real> cam;
    SceneModel<Real> scene;
    if (a.scene == "street") {
        auto street = street_scene<Real>(rng, std::size_t(a.splats), a.size, a.size);
        cam = street.camera;
        scene = std::move(street.scene);
    } else {
        cam = random_camera<Real>(rng, a.size, a.size);
        RandomSceneOptions opts;
        opts.min_splats = opts.max_splats = a.splats;
        opts.min_scale = 0.01;
        opts.max_scale = 0.08;
        scene = random_scene<Real>(rng, cam, opts);
    }
    auto fps_at = [&](int threads) {
        RenderSettings s;
        s.threads = threads;
        s.transmittance_floor = a.transmittance_floor;
        render(scene, cam, s);
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < a.frames; ++i)
            render(scene, cam, s);
        return a.frames / std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const double fps1 = fps_at(1);
    const double fpsn = fps_at(a.threads);
    out << "bench: " << a.scene << " scene, " << a.splats << " splats at " << a.size << "x" << a.size << "\n"
        << "  1 thread:  " << fmt(fps1) << " fps\n"
        << "  " << a.threads << " threads: " << fmt(fpsn) << " fps (speedup " << fmt(fpsn / fps1) << "x, "
        << std::thread::hardware_concurrency() << " hardware threads)\n"
        << "  context: GPU reference figure is 60 fps at 960p\n";
    nlohmann::json j = {{"scene", a.scene},           {"transmittance_floor", a.transmittance_floor},
                        {"splats", a.splats},         {"size", a.size},
                        {"frames", a.frames},         {"fps_1_thread", fps1},
                        {"threads", a.threads},       {"fps_n_threads", fpsn},
                        {"speedup", fpsn / fps1},     {"hardware_threads", std::thread::hardware_concurrency()},
                        {"reference_gpu_fps", 60.0},  {"reference_gpu_resolution", "960p"}};
    const std::string text = j.dump(2) + "\n";
    write_file_atomic(a.report, std::vector<std::uint8_t>(text.begin(), text.end()));
    RunManifest m = start_manifest(c, "scene=" + a.scene + " splats=" + std::to_string(a.splats) +
                                          " size=" + std::to_string(a.size));
    m.outputs = {a.report};
    write_manifest(manifest_path(c, a.report), m);
    return kExitOk;
}

void print_nested(std::ostream &err, const std::exception &e, int depth = 0) {
    err << (depth == 0 ? "error: " : "  caused by: ") << e.what() << "\n";
    try {
        std::rethrow_if_nested(e);
    } catch (const std::exception &inner) {
        print_nested(err, inner, depth + 1);
    }
}

} // namespace

int cli_main(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Scene synthesis from layouts with geometry-grounded distillation", "ggds"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", std::string(GGDS_GIT_DESCRIBE));

    Common common;
    for (int i = 0; i < argc; ++i)
        common.command += (i ? " " : "") + std::string(argv[i]);
    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--seed", common.seed, "Seed threaded through every random draw");
        sub->add_option("--manifest", common.manifest, "Run manifest path (default: <output>.manifest.json)");
    };

    LayoutArgs la;
    auto *layout = app.add_subcommand("layout", "Map layout JSON -> voxel grid (LSDV) and surface mesh (OBJ)");
    layout->add_option("--map", la.map, "Map layout JSON")->required();
    layout->add_option("--voxels", la.voxels, "Output voxel file")->required();
    layout->add_option("--mesh", la.mesh, "Output mesh OBJ")->required();
    layout->add_option("--voxel", la.voxel, "Voxel size in meters")->check(CLI::PositiveNumber);
    layout->add_option("--max-height", la.max_height, "Grid height in meters (<= 0: tallest footprint)");
    layout->add_option("--jitter", la.jitter, "Off-road ground clutter rate")->check(CLI::Range(0.0, 1.0));
    layout->add_option("--chunk-extent", la.chunk_extent, "Chunk side in meters")->check(CLI::PositiveNumber);
    layout->add_option("--overlap", la.overlap, "Voxels shared between neighboring chunks");
    layout->add_option("--sampler", la.sampler, "Chunk generator")->check(CLI::IsMember({"extrude", "diffusion"}));
    layout->add_option("--steps", la.steps, "DDIM steps for the diffusion sampler")->check(CLI::PositiveNumber);
    layout->add_option("--iso", la.iso, "Iso level for surface extraction")->check(CLI::Range(0.0, 1.0));
    add_common(layout);

    InitArgs ia;
    auto *init = app.add_subcommand("init", "Proxy mesh -> initial splat scene (PLY + sidecars)");
    init->add_option("--mesh", ia.mesh, "Proxy mesh OBJ")->required();
    init->add_option("--out", ia.out, "Output scene PLY")->required();
    init->add_option("--scale-factor", ia.scale_factor, "Splat area relative to face area")->check(CLI::PositiveNumber);
    init->add_option("--opacity", ia.opacity, "Initial opacity")->check(CLI::Range(0.0, 1.0));
    init->add_option("--gray", ia.gray, "Initial gray level")->check(CLI::Range(0.0, 1.0));
    init->add_option("--sh-degree", ia.sh_degree, "Spherical harmonics degree")->check(CLI::Range(0, kMaxShDegree));
    init->add_option("--subdivide-area", ia.subdivide_area, "Split faces above this area (m^2)");
    init->add_option("--env-color", ia.env_color, "Uniform sky color r,g,b")->expected(3)->delimiter(',');
    init->add_option("--env-size", ia.env_height, "Environment map height (width is twice)")->check(CLI::PositiveNumber);
    init->add_option("--cap", ia.cap, "Splat cap")->check(CLI::PositiveNumber);
    add_common(init);

    OptimizeArgs oa;
    auto *optimize_cmd = app.add_subcommand("optimize", "Geometry-grounded distillation of a scene");
    optimize_cmd->add_option("--scene", oa.scene, "Input scene PLY")->required();
    optimize_cmd->add_option("--out", oa.out, "Output scene PLY")->required();
    optimize_cmd->add_option("--trajectory", oa.trajectory, "Trajectory JSON of training views")->required();
    optimize_cmd->add_option("--config", oa.config, "key = value config file (keys: " + [] {
        std::string keys;
        for (const auto &k : config_keys())
            keys += (keys.empty() ? "" : ", ") + k;
        return keys;
    }() + ")");
    optimize_cmd->add_option("--set", oa.set, "Config override key=value (repeatable)");
    optimize_cmd->add_option("--prior", oa.prior,
                             "builtin:gaussian[:mean:std] | builtin:delta:<target.pfm> | bridge:<endpoint>");
    optimize_cmd->add_option("--loss-log", oa.loss_log, "Per-step loss CSV (default: <out>.loss.csv)");
    optimize_cmd->add_option("--checkpoint-dir", oa.checkpoint_dir, "Directory for checkpoints");
    optimize_cmd->add_option("--text", oa.text, "Text prompt forwarded to the prior");
    add_common(optimize_cmd);

    RenderArgs ra;
    auto *render_cmd = app.add_subcommand("render", "Scene + trajectory -> numbered frames");
    render_cmd->add_option("--scene", ra.scene, "Scene PLY")->required();
    render_cmd->add_option("--trajectory", ra.trajectory, "Trajectory JSON")->required();
    render_cmd->add_option("--out-dir", ra.out_dir, "Frame directory")->required();
    render_cmd->add_flag("--deferred", ra.deferred, "Refine each frame with a short denoising pass");
    render_cmd->add_flag("--pfm", ra.pfm, "Write float PFM frames instead of 8-bit PNG");
    render_cmd->add_option("--prior", ra.prior, "Prior for --deferred (same syntax as optimize)");
    render_cmd->add_option("--config", ra.config, "Config file for --deferred");
    render_cmd->add_option("--set", ra.set, "Config override key=value (repeatable)");
    render_cmd->add_option("--t-defer", ra.t_defer, "Noise level for --deferred (default from deferred_alpha_bar)");
    render_cmd->add_option("--steps", ra.steps, "Denoising steps for --deferred")->check(CLI::PositiveNumber);
    render_cmd->add_option("--threads", ra.threads, "Render threads (0: all)")->check(CLI::NonNegativeNumber);
    add_common(render_cmd);

    ComposeArgs ca;
    auto *compose = app.add_subcommand("compose", "Insert a splat asset into a scene");
    compose->add_option("--scene", ca.scene, "Scene PLY")->required();
    compose->add_option("--asset", ca.asset, "Asset splat PLY")->required();
    compose->add_option("--out", ca.out, "Output scene PLY")->required();
    compose->add_option("--translate", ca.translate, "Translation x,y,z")->expected(3)->delimiter(',');
    compose->add_option("--yaw-deg", ca.yaw_deg, "Rotation about +z in degrees");
    compose->add_option("--scale", ca.scale, "Uniform scale")->check(CLI::PositiveNumber);
    compose->add_flag("--relight", ca.relight, "Rescale asset colors by the scene's sky irradiance");
    add_common(compose);

    ExportArgs ea;
    auto *export_cmd = app.add_subcommand("export", "Write one part of a scene as a standalone file");
    export_cmd->add_option("--scene", ea.scene, "Scene PLY")->required();
    export_cmd->add_option("--out", ea.out, "Output path")->required();
    export_cmd->add_option("--format", ea.format, "ply (splats only) | proxy-obj | env-pfm")
        ->check(CLI::IsMember({"ply", "proxy-obj", "env-pfm"}));
    add_common(export_cmd);

    BenchArgs ba;
    auto *bench = app.add_subcommand("bench", "Render throughput on a synthetic scene");
    bench->add_option("--scene", ba.scene, "street (surface splats) | cloud (random volume, stress case)")
        ->check(CLI::IsMember({"street", "cloud"}));
    bench->add_option("--transmittance-floor", ba.transmittance_floor, "Stop compositing below this transmittance")
        ->check(CLI::Range(0.0, 1.0));
    bench->add_option("--splats", ba.splats, "Splat count")->check(CLI::PositiveNumber);
    bench->add_option("--size", ba.size, "Square resolution")->check(CLI::PositiveNumber);
    bench->add_option("--frames", ba.frames, "Timed frames per setting")->check(CLI::PositiveNumber);
    bench->add_option("--threads", ba.threads, "Thread count compared against 1")->check(CLI::PositiveNumber);
    bench->add_option("--report", ba.report, "JSON report path");
    add_common(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        if (code == 0)
            return kExitOk;
        err << app.help();
        return kExitUsage;
    }
    for (auto *sub : app.get_subcommands())
        common.seed_set = sub->count("--seed") > 0;
    ia.env_width = 2 * ia.env_height;

    try {
        if (layout->parsed())
            return run_layout(la, common, out);
        if (init->parsed())
            return run_init(ia, common, out);
        if (optimize_cmd->parsed())
            return run_optimize(oa, common, out);
        if (render_cmd->parsed())
            return run_render(ra, common, out);
        if (compose->parsed())
            return run_compose(ca, common, out);
        if (export_cmd->parsed())
            return run_export(ea, common, out);
        return run_bench(ba, common, out);
    } catch (const std::exception &e) {
        print_nested(err, e);
        return kExitRuntime;
    }
}

int cli_main(int argc, const char *const *argv) { return cli_main(argc, argv, std::cout, std::cerr); }

} // namespace ggds
