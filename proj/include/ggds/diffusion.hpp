#pragma once

#include "ggds/common.hpp"
#include "ggds/image.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ggds {

/// Cumulative signal-retention table. Noise level t in [0, T] maps to alpha_bar[t]:
/// z_t = sqrt(alpha_bar[t]) z_0 + sqrt(1 - alpha_bar[t]) eps.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> alpha_bar; ///< T + 1 entries, alpha_bar[0] = 1, strictly decreasing

    double at(int t) const;
    void validate() const;
    /// Largest t whose alpha_bar is still >= threshold.
    int last_level_at_least(double threshold) const;
};

DiffusionSchedule make_linear_schedule(int T, double beta_min = 1e-4, double beta_max = 0.02);
DiffusionSchedule make_cosine_schedule(int T, double offset = 0.008);
DiffusionSchedule schedule_from_table(std::vector<double> alpha_bar);

template <typename Scalar> struct LatentImage {
    Image<Scalar> data;
    int t = 0;
};

/// Optional inputs passed through to the denoiser; an empty disparity image means absent.
template <typename Scalar> struct Conditioning {
    Image<Scalar> disparity;
    std::optional<std::string> text;
};

/// Noise predictor eps(z_t, t). Implementations may hold connection state, hence non-const.
template <typename Scalar> class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Image<Scalar> predict(const Image<Scalar> &zt, int t, double alpha_bar,
                                  const Conditioning<Scalar> &cond) = 0;
};

enum class PriorKind { Gaussian, Delta };

/// Per-coordinate N(mean, stddev^2) prior over clean latents, or a point mass at `mean`.
/// mean / stddev hold 1 value (broadcast), one value per channel, or one per latent entry.
template <typename Scalar> struct AnalyticPrior {
    PriorKind kind = PriorKind::Gaussian;
    ArrayX<Scalar> mean = ArrayX<Scalar>::Zero(1);
    ArrayX<Scalar> stddev = ArrayX<Scalar>::Ones(1);

    static AnalyticPrior gaussian(ArrayX<Scalar> mean, ArrayX<Scalar> stddev);
    static AnalyticPrior delta(ArrayX<Scalar> mean);
    static AnalyticPrior delta(const Image<Scalar> &target) { return delta(target.data); }

    /// Broadcast a parameter array to the full latent layout.
    ArrayX<Scalar> broadcast(const ArrayX<Scalar> &param, const Image<Scalar> &like) const;
};

template <typename Scalar>
Image<Scalar> add_noise(const Image<Scalar> &z0, const Image<Scalar> &eps, int t, const DiffusionSchedule &schedule);

/// Closed-form eps prediction of the posterior mean under an analytic prior. The delta prior at
/// alpha_bar = 1 has no defined eps and returns zero.
template <typename Scalar>
Image<Scalar> analytic_eps(const Image<Scalar> &zt, int t, const AnalyticPrior<Scalar> &prior,
                           const DiffusionSchedule &schedule);

/// Denoiser backed by an analytic prior; ignores conditioning.
template <typename Scalar> class AnalyticDenoiser final : public Denoiser<Scalar> {
public:
    AnalyticDenoiser(AnalyticPrior<Scalar> prior, const DiffusionSchedule &schedule)
        : prior_(std::move(prior)), schedule_(&schedule) {}
    Image<Scalar> predict(const Image<Scalar> &zt, int t, double alpha_bar, const Conditioning<Scalar> &cond) override;
    const AnalyticPrior<Scalar> &prior() const { return prior_; }
    void set_prior(AnalyticPrior<Scalar> prior) { prior_ = std::move(prior); }

private:
    AnalyticPrior<Scalar> prior_;
    const DiffusionSchedule *schedule_;
};

/// A denoiser call failed inside an N-step loop. The original exception is nested.
class DenoiserStepError : public std::runtime_error {
public:
    DenoiserStepError(const std::string &what, int step, int level)
        : std::runtime_error(what), step(step), level(level) {}
    int step;
    int level;
};

/// Evenly spaced levels 0 = l_0 < ... < l_n = t, l_k = round(t k / N) with duplicates removed.
std::vector<int> ddim_levels(int t, int steps);

/// Deterministic DDIM from level t down to 0 over `steps` evenly spaced sub-levels.
template <typename Scalar>
Image<Scalar> ddim_denoise_n(const Image<Scalar> &zt, int t, int steps, Denoiser<Scalar> &denoiser,
                             const Conditioning<Scalar> &cond, const DiffusionSchedule &schedule);

struct InversionOptions {
    /// Each step first applies the explicit update with eps evaluated at the lower level. Extra
    /// fixed-point passes re-evaluate eps at the current upper-level estimate, which makes the
    /// step the exact inverse of the matching denoise step once converged. 0 disables.
    int refine_iterations = 0;
    double refine_tolerance = 1e-13;
};

/// Deterministic DDIM inversion from level 0 up to t over `steps` evenly spaced sub-levels.
template <typename Scalar>
Image<Scalar> ddim_invert_n(const Image<Scalar> &z0, int t, int steps, Denoiser<Scalar> &denoiser,
                            const Conditioning<Scalar> &cond, const DiffusionSchedule &schedule,
                            const InversionOptions &opts = {});

enum class CodecMode { Identity, Pooled };

/// Image <-> latent map. Pooled mode averages f x f blocks to encode and replicates each latent
/// texel over its block to decode, so block-constant images reconstruct exactly.
struct Codec {
    CodecMode mode = CodecMode::Identity;
    int factor = 1;

    static Codec identity() { return {}; }
    static Codec pooled(int factor);

    void check_image(int width, int height) const;
    int latent_width(int width) const { return mode == CodecMode::Pooled ? width / factor : width; }
    int latent_height(int height) const { return mode == CodecMode::Pooled ? height / factor : height; }

    template <typename Scalar> Image<Scalar> encode(const Image<Scalar> &image) const;
    template <typename Scalar> Image<Scalar> decode(const Image<Scalar> &latent) const;
    /// Average-pool a single- or multi-channel map to latent resolution (for conditioning).
    template <typename Scalar> Image<Scalar> downsample(const Image<Scalar> &map) const { return encode(map); }
};

template <typename Scalar> struct CodecRoundtrip {
    Image<Scalar> latent;
    Image<Scalar> reconstruction;
};

template <typename Scalar> CodecRoundtrip<Scalar> codec_roundtrip(const Image<Scalar> &image, const Codec &codec);

} // namespace ggds
