#pragma once

#include "ggds/camera.hpp"
#include "ggds/diffusion.hpp"
#include "ggds/losses.hpp"
#include "ggds/rasterizer.hpp"
#include "ggds/scene.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ggds {

using Rng = std::mt19937_64;

enum class NoiseMode { Inversion, Random };
enum class Preconditioner { None, Adam };
enum class ScheduleKind { Linear, Cosine };

/// Per-group step sizes. `position` is relative to the scene extent.
struct StepSizes {
    double position = 1.6e-4;
    double opacity = 5e-2;
    double scale = 5e-3;
    double tangent = 1e-3;
    double color = 2.5e-3;
};

struct GgdsConfig {
    int steps = 6000;        ///< K
    int denoise_steps = 5;   ///< N
    int t_max = 800;
    int t_min_start = 500;
    int t_min_end = 20;
    LossWeights weights;
    StepSizes xi;
    double lambda_noise = 1e-4;
    double noise_decay_fraction = 0.2; ///< lambda_noise decays linearly to 0 over this tail of the run
    bool raw_sign = false;             ///< theta + xi grad instead of descent
    Preconditioner preconditioner = Preconditioner::Adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-15;
    std::size_t splat_cap = 4'000'000;
    int densify_every = 200;
    double densify_until = 0.5;     ///< fraction of K after which density control stops
    double prune_opacity = 0.005;
    double prune_min_radius = 0.1;  ///< pixels; prunes splats never larger than this once seen
    double split_grad_threshold = 2e-4;
    double split_scale_fraction = 0.01; ///< split only splats larger than this fraction of the extent
    NoiseMode noise_mode = NoiseMode::Inversion;
    int inversion_refine = 0;
    ScheduleKind schedule = ScheduleKind::Linear;
    int schedule_steps = 1000; ///< T
    int codec_factor = 1;      ///< 1 is the identity codec, > 1 pools f x f blocks
    double deferred_alpha_bar = 0.9;
    int jitter_views = 0;
    int threads = 1;
    int checkpoint_every = 0;
    std::uint64_t seed = 0;

    /// Throws InvalidArgument when any field is out of range for a schedule with T steps.
    void validate(int T) const;
    void validate() const { validate(schedule_steps); }
    DiffusionSchedule make_schedule() const;
    Codec make_codec() const;
};

/// Lower sampling bound after k of K steps: round(t_min_start + (t_min_end - t_min_start) k / K).
int t_min_at(int k, const GgdsConfig &config);

/// t uniform over [t_min(k), t_max].
int sample_noise_level(int k, const GgdsConfig &config, Rng &rng);

/// lambda_noise after k steps, including the linear tail decay.
double noise_scale_at(int k, const GgdsConfig &config);

/// Number of scalar parameters per splat for a given SH degree.
int splat_parameter_count(int sh_degree);

struct AdamState {
    std::vector<Eigen::ArrayXd> m, v;
    std::vector<int> steps;
    void resize(std::size_t n, int params);
    void erase_keep(const std::vector<std::size_t> &keep);
};

struct SgldParams {
    StepSizes xi;                  ///< absolute step sizes
    double lambda_noise = 0.0;
    bool raw_sign = false;
    Preconditioner preconditioner = Preconditioner::None;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-15;
};

/// Step sizes and noise for step k with positions scaled by `extent`.
SgldParams sgld_params(const GgdsConfig &config, int k, double extent);

struct SgldReport {
    std::size_t updated = 0;
    std::size_t skipped_nonfinite = 0;
};

/// theta <- theta - xi * grad + lambda_noise * eps per parameter, followed by projection of the
/// changed splats: tangents re-orthonormalized, scales kept positive, opacity clamped to [0, 1].
/// With the Adam preconditioner `grad` is replaced by the bias-corrected moment ratio.
template <typename Scalar>
SgldReport sgld_update(SceneModel<Scalar> &scene, const SplatGradients<Scalar> &grads, const SgldParams &params,
                       Rng &rng, AdamState *adam = nullptr);

/// Statistics gathered between density-control passes.
struct DensifyStats {
    std::vector<double> grad_accum; ///< sum of center-gradient norms over visible steps
    std::vector<int> seen;
    std::vector<double> max_radius; ///< pixels
    void resize(std::size_t n);
    template <typename Scalar>
    void accumulate(const SplatGradients<Scalar> &grads, const std::vector<Scalar> &screen_radius);
};

struct DensifyReport {
    std::size_t pruned = 0;
    std::size_t split = 0;
};

/// Prunes transparent or never-visible-enough splats, then splits high-gradient large splats into
/// two children at center +- 0.5 s_u t_u with both scales halved while the count stays below the cap.
template <typename Scalar>
DensifyReport densify_prune(SceneModel<Scalar> &scene, DensifyStats &stats, const GgdsConfig &config,
                            AdamState *adam = nullptr);

/// Denoiser, codec, schedule and viewpoints shared by every step.
template <typename Scalar> struct GgdsProblem {
    Denoiser<Scalar> *denoiser = nullptr;
    Codec codec;
    const DiffusionSchedule *schedule = nullptr;
    std::vector<Camera<Scalar>> cameras;
    std::optional<std::string> text;
};

struct OptimizerState {
    Rng rng;
    AdamState adam;
    DensifyStats stats;
    double extent = 1.0;
    explicit OptimizerState(std::uint64_t seed = 0) : rng(seed) {}
};

/// A GGDS step failed; the cause is nested.
class GgdsStepError : public std::runtime_error {
public:
    GgdsStepError(const std::string &what, int step) : std::runtime_error(what), step(step) {}
    int step;
};

/// One iteration: render a pool view, encode, noise to t by inversion (or random noise), denoise
/// N steps with disparity conditioning from the proxy, decode, compute losses, backpropagate,
/// update, and run density control on its cadence.
template <typename Scalar>
LossReport ggds_step(SceneModel<Scalar> &scene, int k, const GgdsProblem<Scalar> &problem, const GgdsConfig &config,
                     OptimizerState &state);

template <typename Scalar> struct OptimizeHooks {
    std::function<void(int k, const LossReport &)> on_report;
    std::function<void(int k, const SceneModel<Scalar> &)> on_checkpoint;
};

/// K steps of ggds_step from a state seeded with config.seed. Checkpoints every
/// config.checkpoint_every steps and once at the end.
template <typename Scalar>
SceneModel<Scalar> optimize(SceneModel<Scalar> scene, const GgdsProblem<Scalar> &problem, const GgdsConfig &config,
                            const OptimizeHooks<Scalar> &hooks = {});

/// Largest t whose alpha_bar is at least `threshold`.
int default_t_defer(const DiffusionSchedule &schedule, double threshold = 0.9);

/// Render, encode, noise to t_defer, denoise back in `steps` steps, decode.
template <typename Scalar>
Image<Scalar> deferred_render(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera,
                              Denoiser<Scalar> &denoiser, const Codec &codec, const DiffusionSchedule &schedule,
                              int t_defer, int steps, std::uint64_t seed, const RenderSettings &settings = {});

/// Trajectory cameras followed by `jitter` viewpoints at 1.2 to 2.2 m above z = 0 with uniform yaw,
/// positioned inside the xy bounds of `area` (or of the trajectory when the mesh is empty).
template <typename Scalar>
std::vector<Camera<Scalar>> make_camera_pool(const std::vector<Camera<Scalar>> &trajectory, int jitter,
                                             const TriangleMesh &area, Rng &rng);

} // namespace ggds
