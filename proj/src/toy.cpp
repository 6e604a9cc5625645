#include "ggds/toy.hpp"

#include "ggds/rasterizer.hpp"

#include <algorithm>
#include <cmath>

namespace ggds {

namespace {

double uniform(Rng &rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Eigen::Vector3d random_unit(Rng &rng) {
    std::normal_distribution<double> n;
    Eigen::Vector3d v;
    do {
        v = {n(rng), n(rng), n(rng)};
    } while (v.norm() < 1e-6);
    return v.normalized();
}

} // namespace

template <typename Scalar> Camera<Scalar> random_camera(Rng &rng, int width, int height) {
    const Eigen::Vector3d eye(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
    const Eigen::Vector3d target = eye + Eigen::Vector3d(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), -1.0);
    const double fov = uniform(rng, 0.6, 1.2);
    auto cam = Camera<double>::look_at(eye, target, fov, width, height, Eigen::Vector3d::UnitY());
    return cam.template cast<Scalar>();
}

template <typename Scalar> EnvironmentMap<Scalar> random_environment(Rng &rng, int height, int width) {
    Image<Scalar> img(width, height, 3);
    const Eigen::Vector3d a = random_unit(rng), b = random_unit(rng);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double phi = 2 * pi_v<double> * (x + 0.5) / width, eta = pi_v<double> * (y + 0.5) / height;
            for (int c = 0; c < 3; ++c)
                img(x, y, c) = Scalar(0.5 + 0.4 * std::sin(phi * (c + 1) * 0.5 + a[c] * 3) * std::cos(eta + b[c]));
        }
    return EnvironmentMap<Scalar>(std::move(img));
}

template <typename Scalar>
SceneModel<Scalar> random_scene(Rng &rng, const Camera<Scalar> &camera, const RandomSceneOptions &opts) {
    SceneModel<Scalar> scene;
    scene.env = random_environment<Scalar>(rng);
    const int count = std::uniform_int_distribution<int>(opts.min_splats, opts.max_splats)(rng);
    const double tan_y = std::tan(0.5 * double(camera.fov_y));
    const double tan_x = tan_y * camera.width / camera.height;
    const Eigen::Matrix3d Rt = camera.rotation.template cast<double>().transpose();
    const int nsh = sh_coeff_count(opts.sh_degree);
    scene.splats.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double depth = uniform(rng, opts.min_depth, opts.max_depth);
        const Eigen::Vector3d local(uniform(rng, -1, 1) * tan_x * depth * opts.lateral_spread,
                                    uniform(rng, -1, 1) * tan_y * depth * opts.lateral_spread, -depth);
        Splat<double> s;
        s.center = camera.position.template cast<double>() + Rt * local;
        // Keep the plane at least moderately facing the camera.
        Eigen::Vector3d n;
        do {
            n = random_unit(rng);
        } while (std::abs(n.dot(Rt.col(2))) < 0.35);
        Eigen::Vector3d tu = any_perpendicular(n);
        const double spin = uniform(rng, 0, 2 * pi_v<double>);
        tu = Eigen::AngleAxisd(spin, n) * tu;
        s.tangent_u = tu;
        s.tangent_v = n.cross(tu);
        s.scale_u = uniform(rng, opts.min_scale, opts.max_scale);
        s.scale_v = uniform(rng, opts.min_scale, opts.max_scale);
        s.opacity = uniform(rng, opts.min_opacity, opts.max_opacity);
        s.sh = Splat<double>::ShBlock::Zero(nsh, 3);
        for (int c = 0; c < 3; ++c)
            s.sh(0, c) = uniform(rng, opts.color_margin, 1 - opts.color_margin);
        for (int k = 1; k < nsh; ++k)
            for (int c = 0; c < 3; ++c)
                s.sh(k, c) = uniform(rng, -opts.sh_amplitude, opts.sh_amplitude);
        scene.splats.push_back(s.cast<Scalar>());
    }
    return scene;
}

template <typename Scalar> StreetScene<Scalar> street_scene(Rng &rng, std::size_t splats, int width, int height) {
    require(splats >= 1, "street scene needs at least one splat");
    struct Wall {
        Eigen::Vector3d origin, a, b; // corner and the two edge vectors; normal = a x b
        Eigen::Vector3d color;
    };
    const std::vector<Wall> walls = {
        {{-6, 0, 0}, {12, 0, 0}, {0, 60, 0}, {0.35, 0.35, 0.38}},
        {{-6, 0, 0}, {0, 60, 0}, {0, 0, 12}, {0.7, 0.55, 0.45}},
        {{6, 60, 0}, {0, -60, 0}, {0, 0, 12}, {0.55, 0.6, 0.7}},
        {{6, 60, 0}, {-12, 0, 0}, {0, 0, 12}, {0.8, 0.75, 0.6}},
    };
    double area = 0;
    for (const auto &w : walls)
        area += w.a.cross(w.b).norm();
    const double cell = std::sqrt(area / double(splats));

    StreetScene<Scalar> out;
    out.scene.env = random_environment<Scalar>(rng);
    std::vector<Splat<double>> all;
    for (const auto &w : walls) {
        const int na = std::max(1, int(std::ceil(w.a.norm() / cell)));
        const int nb = std::max(1, int(std::ceil(w.b.norm() / cell)));
        const Eigen::Vector3d n = w.a.cross(w.b).normalized();
        const double ha = w.a.norm() / na, hb = w.b.norm() / nb;
        for (int j = 0; j < nb; ++j)
            for (int i = 0; i < na; ++i) {
                Splat<double> s;
                s.center = w.origin + w.a * ((i + uniform(rng, 0.25, 0.75)) / na) +
                           w.b * ((j + uniform(rng, 0.25, 0.75)) / nb);
                const Eigen::Vector3d tu = Eigen::AngleAxisd(uniform(rng, 0, 2 * pi_v<double>), n) * w.a.normalized();
                s.tangent_u = tu;
                s.tangent_v = n.cross(tu);
                s.scale_u = 0.5 * ha * uniform(rng, 0.8, 1.2);
                s.scale_v = 0.5 * hb * uniform(rng, 0.8, 1.2);
                s.opacity = uniform(rng, 0.6, 0.95);
                s.sh = Splat<double>::ShBlock(1, 3);
                const double shade = uniform(rng, 0.75, 1.25);
                for (int c = 0; c < 3; ++c)
                    s.sh(0, c) = std::clamp(w.color[c] * shade, 0.0, 1.0);
                all.push_back(s);
            }
    }
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(std::min(all.size(), splats));
    out.scene.splats.reserve(all.size());
    for (const auto &s : all)
        out.scene.splats.push_back(s.cast<Scalar>());
    out.camera = Camera<double>::look_at({0.5, 1.0, 1.7}, {0.0, 30.0, 3.0}, pi_v<double> / 3, width, height)
                     .template cast<Scalar>();
    return out;
}

TriangleMesh grid_mesh(double x0, double y0, double x1, double y1, int nx, int ny, double height) {
    require(nx >= 1 && ny >= 1 && x1 > x0 && y1 > y0, "grid_mesh needs a non-empty rectangle");
    TriangleMesh mesh;
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            mesh.vertices.emplace_back(x0 + (x1 - x0) * i / nx, y0 + (y1 - y0) * j / ny, height);
    auto id = [&](int i, int j) { return j * (nx + 1) + i; };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            mesh.faces.emplace_back(id(i, j), id(i + 1, j), id(i + 1, j + 1));
            mesh.faces.emplace_back(id(i, j), id(i + 1, j + 1), id(i, j + 1));
        }
    return mesh;
}

ToyProblem make_toy_problem(const ToyOptions &o) {
    require(o.resolution >= 8 && o.cells_x >= 1 && o.cells_y >= 1, "toy problem: resolution or cell count too small");
    require(0 <= o.tilt_min_deg && o.tilt_min_deg <= o.tilt_max_deg, "toy problem: bad tilt range");
    const double x0 = -1.0, x1 = 1.0, y0 = 2.5, y1 = 6.0;
    const double m = o.margin;
    Rng rng(o.seed);
    ToyProblem p;

    const double fov = 60.0 * pi_v<double> / 180.0;
    const Eigen::Vector3d eye(0, 0, 1.5), look(0, 4, 0);
    p.train = Camera<double>::look_at(eye, look, fov, o.resolution, o.resolution);
    const Eigen::Vector3d eye2 = eye + Eigen::Vector3d(0.5, 0, 0);
    const Eigen::Vector3d dir2 = Eigen::AngleAxisd(5.0 * pi_v<double> / 180.0, Eigen::Vector3d::UnitZ()) * (look - eye);
    p.heldout = Camera<double>::look_at(eye2, eye2 + dir2, fov, o.resolution, o.resolution);

    const EnvironmentMap<double> env = EnvironmentMap<double>::uniform(8, 16, Eigen::Vector3d(0.55, 0.65, 0.8));
    auto texture = [](double x, double y) {
        const double tau = 2 * pi_v<double>;
        return Eigen::Vector3d(0.5 + 0.3 * std::sin(tau * x / 1.3) * std::cos(tau * y / 2.1),
                               0.45 + 0.3 * std::sin(tau * (x + y) / 1.7 + 0.8),
                               0.4 + 0.25 * std::cos(tau * (x - 0.5 * y) / 1.1));
    };

    p.truth.env = env;
    const double spacing = 0.05;
    for (double y = y0 - m + 0.5 * spacing; y < y1 + m; y += spacing)
        for (double x = x0 - m + 0.5 * spacing; x < x1 + m; x += spacing) {
            Splat<double> s;
            s.center = Eigen::Vector3d(x, y, 0);
            s.scale_u = s.scale_v = 0.6 * spacing;
            s.opacity = 0.95;
            s.sh = Splat<double>::ShBlock(1, 3);
            s.sh.row(0) = texture(x, y).transpose();
            p.truth.splats.push_back(s);
        }

    const TriangleMesh init_mesh = grid_mesh(x0 - m, y0 - m, x1 + m, y1 + m, o.cells_x, o.cells_y);
    SplatInitOptions init;
    init.opacity = o.init_opacity;
    init.gray = o.init_gray;
    p.init.env = env;
    p.init.splats = mesh_to_splats<double>(init_mesh, 1.0, init).splats;
    for (auto &s : p.init.splats) {
        const double tilt = uniform(rng, o.tilt_min_deg, o.tilt_max_deg) * pi_v<double> / 180.0;
        const double az = uniform(rng, 0, 2 * pi_v<double>);
        const Eigen::Matrix3d R = Eigen::AngleAxisd(tilt, Eigen::Vector3d(std::cos(az), std::sin(az), 0)).toRotationMatrix();
        s.tangent_u = R * s.tangent_u;
        s.tangent_v = R * s.tangent_v;
    }
    p.init.proxy = grid_mesh(x0, y0, x1, y1, 4, 7);
    p.truth.proxy = p.init.proxy;

    p.target = render(p.truth, p.train).color;
    p.heldout_target = render(p.truth, p.heldout).color;
    return p;
}

#define GGDS_INSTANTIATE_TOY(S)                                                                                   \
    template Camera<S> random_camera<S>(Rng &, int, int);                                                         \
    template EnvironmentMap<S> random_environment<S>(Rng &, int, int);                                            \
    template SceneModel<S> random_scene<S>(Rng &, const Camera<S> &, const RandomSceneOptions &);                     \
    template StreetScene<S> street_scene<S>(Rng &, std::size_t, int, int);

GGDS_INSTANTIATE_TOY(float)
GGDS_INSTANTIATE_TOY(double)

} // namespace ggds
