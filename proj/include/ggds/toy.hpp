#pragma once

#include "ggds/camera.hpp"
#include "ggds/image.hpp"
#include "ggds/scene.hpp"

#include <cstdint>
#include <random>

namespace ggds {

using Rng = std::mt19937_64;

struct RandomSceneOptions {
    int min_splats = 1;
    int max_splats = 10;
    int sh_degree = 0;
    double min_depth = 2.0;
    double max_depth = 6.0;
    double min_scale = 0.1;
    double max_scale = 0.6;
    double min_opacity = 0.2;
    double max_opacity = 0.95;
    double color_margin = 0.1; ///< degree-0 color drawn from [margin, 1 - margin]
    double sh_amplitude = 0.03; ///< bound on higher-band coefficients
    double lateral_spread = 1.0; ///< 1 fills the view frustum
};

/// Random camera looking roughly down -z from near the origin.
template <typename Scalar> Camera<Scalar> random_camera(Rng &rng, int width, int height);

/// Random smooth environment map with values in [0.1, 0.9].
template <typename Scalar> EnvironmentMap<Scalar> random_environment(Rng &rng, int height = 8, int width = 16);

/// Splats placed inside the camera frustum with random orientation, scale, opacity and color.
template <typename Scalar>
SceneModel<Scalar> random_scene(Rng &rng, const Camera<Scalar> &camera, const RandomSceneOptions &opts = {});

/// Street canyon of surface-aligned splats: a 12 x 60 m road between two 12 m facades closed by an
/// end wall, about `splats` splats spread by area, seen from eye height down the street.
template <typename Scalar> struct StreetScene {
    SceneModel<Scalar> scene;
    Camera<Scalar> camera;
};
template <typename Scalar> StreetScene<Scalar> street_scene(Rng &rng, std::size_t splats, int width, int height);

/// Textured ground patch seen from a pitched-down camera at 1.5 m. The proxy is the patch plane;
/// the ground truth and the initial splats extend `margin` meters past it so the proxy is fully
/// covered. The held-out camera is shifted 0.5 m sideways and yawed 5 degrees.
struct ToyOptions {
    int resolution = 64;
    int cells_x = 24; ///< init mesh cells across; two splats per cell
    int cells_y = 40;
    double margin = 0.3;
    double tilt_min_deg = 10.0; ///< init splat normals are tilted off the plane by this range
    double tilt_max_deg = 15.0;
    double init_opacity = 0.7;
    double init_gray = 0.5;
    std::uint64_t seed = 1;
};

struct ToyProblem {
    SceneModel<double> truth;
    SceneModel<double> init; ///< carries the plane proxy
    Camera<double> train;
    Camera<double> heldout;
    Image<double> target;         ///< truth rendered from `train`
    Image<double> heldout_target; ///< truth rendered from `heldout`
};

ToyProblem make_toy_problem(const ToyOptions &opts = {});

/// Flat grid mesh on z = height covering [x0, x1] x [y0, y1], two triangles per cell.
TriangleMesh grid_mesh(double x0, double y0, double x1, double y1, int nx, int ny, double height = 0.0);

} // namespace ggds
