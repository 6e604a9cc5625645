#include "ggds/diffusion.hpp"

#include <cmath>
#include <exception>

namespace ggds {

double DiffusionSchedule::at(int t) const {
    if (t < 0 || t > T)
        throw InvalidArgument("noise level " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    return alpha_bar[t];
}

void DiffusionSchedule::validate() const {
    require(T >= 1, "schedule needs T >= 1");
    require(int(alpha_bar.size()) == T + 1, "schedule table must have T + 1 entries");
    require(alpha_bar[0] == 1.0, "schedule must start at alpha_bar = 1");
    for (int t = 1; t <= T; ++t)
        require(alpha_bar[t] > 0 && alpha_bar[t] < alpha_bar[t - 1],
                "schedule must be strictly decreasing and positive (t = " + std::to_string(t) + ")");
}

int DiffusionSchedule::last_level_at_least(double threshold) const {
    int t = 0;
    while (t < T && alpha_bar[t + 1] >= threshold)
        ++t;
    return t;
}

DiffusionSchedule make_linear_schedule(int T, double beta_min, double beta_max) {
    require(T >= 1, "schedule needs T >= 1");
    require(beta_min > 0 && beta_min <= beta_max && beta_max < 1, "linear schedule needs 0 < beta_min <= beta_max < 1");
    DiffusionSchedule s;
    s.T = T;
    s.alpha_bar.resize(T + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double beta = T == 1 ? beta_min : beta_min + (beta_max - beta_min) * (t - 1) / (T - 1);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
    }
    s.validate();
    return s;
}

DiffusionSchedule make_cosine_schedule(int T, double offset) {
    require(T >= 1, "schedule needs T >= 1");
    require(offset > 0, "cosine offset must be positive");
    auto f = [&](int t) {
        const double c = std::cos((double(t) / T + offset) / (1 + offset) * pi_v<double> / 2);
        return c * c;
    };
    DiffusionSchedule s;
    s.T = T;
    s.alpha_bar.resize(T + 1);
    s.alpha_bar[0] = 1.0;
    const double f0 = f(0);
    for (int t = 1; t <= T; ++t) {
        const double beta = std::min(1.0 - (f(t) / f0) / (f(t - 1) / f0), 0.999);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
    }
    s.validate();
    return s;
}

DiffusionSchedule schedule_from_table(std::vector<double> alpha_bar) {
    DiffusionSchedule s;
    s.T = int(alpha_bar.size()) - 1;
    s.alpha_bar = std::move(alpha_bar);
    s.validate();
    return s;
}

// --- analytic priors ----------------------------------------------------------------------------

template <typename Scalar>
AnalyticPrior<Scalar> AnalyticPrior<Scalar>::gaussian(ArrayX<Scalar> mean, ArrayX<Scalar> stddev) {
    require((stddev > Scalar(0)).all(), "gaussian prior needs positive stddev");
    AnalyticPrior p;
    p.kind = PriorKind::Gaussian;
    p.mean = std::move(mean);
    p.stddev = std::move(stddev);
    return p;
}

template <typename Scalar> AnalyticPrior<Scalar> AnalyticPrior<Scalar>::delta(ArrayX<Scalar> mean) {
    AnalyticPrior p;
    p.kind = PriorKind::Delta;
    p.mean = std::move(mean);
    p.stddev = ArrayX<Scalar>::Zero(1);
    return p;
}

template <typename Scalar>
ArrayX<Scalar> AnalyticPrior<Scalar>::broadcast(const ArrayX<Scalar> &param, const Image<Scalar> &like) const {
    if (param.size() == like.size())
        return param;
    if (param.size() == 1)
        return ArrayX<Scalar>::Constant(like.size(), param[0]);
    if (param.size() == like.channels) {
        ArrayX<Scalar> out(like.size());
        for (Eigen::Index p = 0; p < like.pixel_count(); ++p)
            out.segment(p * like.channels, like.channels) = param;
        return out;
    }
    throw InvalidArgument("prior parameter of size " + std::to_string(param.size()) +
                          " does not broadcast to latent " + shape_string(like));
}

template <typename Scalar>
Image<Scalar> add_noise(const Image<Scalar> &z0, const Image<Scalar> &eps, int t, const DiffusionSchedule &schedule) {
    require_same_shape(z0, eps, "add_noise");
    const double a = schedule.at(t);
    Image<Scalar> out = z0;
    if (a == 1.0)
        return out;
    out.data = Scalar(std::sqrt(a)) * z0.data + Scalar(std::sqrt(1 - a)) * eps.data;
    return out;
}

template <typename Scalar>
Image<Scalar> analytic_eps(const Image<Scalar> &zt, int t, const AnalyticPrior<Scalar> &prior,
                           const DiffusionSchedule &schedule) {
    const double a = schedule.at(t);
    Image<Scalar> out = zt;
    const ArrayX<Scalar> mu = prior.broadcast(prior.mean, zt);
    const ArrayX<Scalar> resid = zt.data - Scalar(std::sqrt(a)) * mu;
    if (prior.kind == PriorKind::Delta) {
        if (a >= 1.0)
            out.data.setZero();
        else
            out.data = resid / Scalar(std::sqrt(1 - a));
        return out;
    }
    const ArrayX<Scalar> var = prior.broadcast(prior.stddev, zt).square();
    out.data = resid * Scalar(std::sqrt(1 - a)) / (Scalar(a) * var + Scalar(1 - a));
    return out;
}

template <typename Scalar>
Image<Scalar> AnalyticDenoiser<Scalar>::predict(const Image<Scalar> &zt, int t, double, const Conditioning<Scalar> &) {
    return analytic_eps(zt, t, prior_, *schedule_);
}

// --- N-step DDIM ----------------------------------------------------------------------------------

std::vector<int> ddim_levels(int t, int steps) {
    require(steps >= 1, "DDIM needs at least one step");
    require(t >= 0, "DDIM level must be non-negative");
    std::vector<int> levels;
    for (int k = 0; k <= steps; ++k) {
        const int l = int(std::lround(double(t) * k / steps));
        if (levels.empty() || levels.back() != l)
            levels.push_back(l);
    }
    return levels;
}

namespace {

template <typename Scalar>
Image<Scalar> call_denoiser(Denoiser<Scalar> &denoiser, const Image<Scalar> &z, int level, int step,
                            const Conditioning<Scalar> &cond, const DiffusionSchedule &schedule) {
    Image<Scalar> eps;
    try {
        eps = denoiser.predict(z, level, schedule.at(level), cond);
    } catch (const std::exception &e) {
        std::throw_with_nested(DenoiserStepError("denoiser failed at step " + std::to_string(step) + " (t = " +
                                                     std::to_string(level) + "): " + e.what(),
                                                 step, level));
    }
    if (!eps.same_shape(z))
        throw DenoiserStepError("denoiser returned " + shape_string(eps) + " for latent " + shape_string(z) +
                                    " at step " + std::to_string(step),
                                step, level);
    return eps;
}

/// x0 estimate and re-projection to another level with the same eps.
template <typename Scalar>
Image<Scalar> ddim_move(const Image<Scalar> &z, const Image<Scalar> &eps, double a_from, double a_to) {
    Image<Scalar> out = z;
    const ArrayX<Scalar> x0 = (z.data - Scalar(std::sqrt(1 - a_from)) * eps.data) / Scalar(std::sqrt(a_from));
    if (a_to == 1.0)
        out.data = x0;
    else
        out.data = Scalar(std::sqrt(a_to)) * x0 + Scalar(std::sqrt(1 - a_to)) * eps.data;
    return out;
}

} // namespace

template <typename Scalar>
Image<Scalar> ddim_denoise_n(const Image<Scalar> &zt, int t, int steps, Denoiser<Scalar> &denoiser,
                             const Conditioning<Scalar> &cond, const DiffusionSchedule &schedule) {
    schedule.at(t);
    const auto levels = ddim_levels(t, steps);
    Image<Scalar> z = zt;
    for (int k = int(levels.size()) - 1, step = 0; k > 0; --k, ++step) {
        const int hi = levels[k], lo = levels[k - 1];
        const Image<Scalar> eps = call_denoiser(denoiser, z, hi, step, cond, schedule);
        z = ddim_move(z, eps, schedule.at(hi), schedule.at(lo));
    }
    return z;
}

template <typename Scalar>
Image<Scalar> ddim_invert_n(const Image<Scalar> &z0, int t, int steps, Denoiser<Scalar> &denoiser,
                            const Conditioning<Scalar> &cond, const DiffusionSchedule &schedule,
                            const InversionOptions &opts) {
    schedule.at(t);
    const auto levels = ddim_levels(t, steps);
    Image<Scalar> z = z0;
    for (std::size_t k = 1, step = 0; k < levels.size(); ++k, ++step) {
        const int lo = levels[k - 1], hi = levels[k];
        const double a_lo = schedule.at(lo), a_hi = schedule.at(hi);
        if (a_lo == a_hi)
            continue;
        Image<Scalar> eps = call_denoiser(denoiser, z, lo, int(step), cond, schedule);
        // z_hi = sqrt(a_hi / a_lo) (z_lo - sqrt(1 - a_lo) eps) + sqrt(1 - a_hi) eps
        Image<Scalar> next = ddim_move(z, eps, a_lo, a_hi);
        for (int it = 0; it < opts.refine_iterations; ++it) {
            eps = call_denoiser(denoiser, next, hi, int(step), cond, schedule);
            Image<Scalar> refined = z;
            refined.data = Scalar(std::sqrt(a_hi / a_lo)) * (z.data - Scalar(std::sqrt(1 - a_lo)) * eps.data) +
                           Scalar(std::sqrt(1 - a_hi)) * eps.data;
            const double change = double((refined.data - next.data).abs().maxCoeff());
            next = std::move(refined);
            if (change < opts.refine_tolerance)
                break;
        }
        z = std::move(next);
    }
    return z;
}

// --- codec ------------------------------------------------------------------------------------------

Codec Codec::pooled(int factor) {
    require(factor >= 1, "pooling factor must be >= 1");
    Codec c;
    c.mode = CodecMode::Pooled;
    c.factor = factor;
    return c;
}

void Codec::check_image(int width, int height) const {
    if (mode == CodecMode::Pooled && (width % factor != 0 || height % factor != 0))
        throw InvalidArgument("image " + std::to_string(height) + "x" + std::to_string(width) +
                              " is not divisible by pooling factor " + std::to_string(factor));
}

template <typename Scalar> Image<Scalar> Codec::encode(const Image<Scalar> &image) const {
    check_image(image.width, image.height);
    if (mode == CodecMode::Identity || factor == 1)
        return image;
    const int w = image.width / factor, h = image.height / factor, c = image.channels;
    Image<Scalar> out(w, h, c);
    const Scalar norm = Scalar(1) / Scalar(factor * factor);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < c; ++k) {
                // Mean as an offset from the first texel keeps constant blocks exact.
                const Scalar first = image(x * factor, y * factor, k);
                Scalar sum = 0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        sum += image(x * factor + dx, y * factor + dy, k) - first;
                out(x, y, k) = first + sum * norm;
            }
    return out;
}

template <typename Scalar> Image<Scalar> Codec::decode(const Image<Scalar> &latent) const {
    if (mode == CodecMode::Identity || factor == 1)
        return latent;
    Image<Scalar> out(latent.width * factor, latent.height * factor, latent.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.pixel(x, y) = latent.pixel(x / factor, y / factor);
    return out;
}

template <typename Scalar> CodecRoundtrip<Scalar> codec_roundtrip(const Image<Scalar> &image, const Codec &codec) {
    CodecRoundtrip<Scalar> r;
    r.latent = codec.encode(image);
    r.reconstruction = codec.decode(r.latent);
    return r;
}

#define GGDS_INSTANTIATE_DIFFUSION(S)                                                                             \
    template struct AnalyticPrior<S>;                                                                             \
    template class AnalyticDenoiser<S>;                                                                           \
    template Image<S> add_noise<S>(const Image<S> &, const Image<S> &, int, const DiffusionSchedule &);           \
    template Image<S> analytic_eps<S>(const Image<S> &, int, const AnalyticPrior<S> &, const DiffusionSchedule &); \
    template Image<S> ddim_denoise_n<S>(const Image<S> &, int, int, Denoiser<S> &, const Conditioning<S> &,       \
                                        const DiffusionSchedule &);                                               \
    template Image<S> ddim_invert_n<S>(const Image<S> &, int, int, Denoiser<S> &, const Conditioning<S> &,        \
                                       const DiffusionSchedule &, const InversionOptions &);                      \
    template Image<S> Codec::encode<S>(const Image<S> &) const;                                                   \
    template Image<S> Codec::decode<S>(const Image<S> &) const;                                                   \
    template CodecRoundtrip<S> codec_roundtrip<S>(const Image<S> &, const Codec &);

GGDS_INSTANTIATE_DIFFUSION(float)
GGDS_INSTANTIATE_DIFFUSION(double)

} // namespace ggds
