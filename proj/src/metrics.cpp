#include "ggds/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ggds {

namespace {

template <typename Scalar> bool selected(const Image<Scalar> *mask, int x, int y) {
    return !mask || double((*mask)(x, y)) >= 1.0 - 1e-9;
}

template <typename Scalar> void check_mask(const Image<Scalar> &a, const Image<Scalar> *mask, const char *what) {
    if (mask)
        require(mask->width == a.width && mask->height == a.height && mask->channels == 1,
                std::string(what) + ": mask shape mismatch");
}

} // namespace

template <typename Scalar> double psnr(const Image<Scalar> &a, const Image<Scalar> &b) {
    require_same_shape(a, b, "psnr");
    require(!a.empty(), "psnr: empty image");
    const double mse = (a.data.template cast<double>() - b.data.template cast<double>()).square().mean();
    if (mse <= 0.0)
        return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

template <typename Scalar>
double mean_angular_error(const Image<Scalar> &a, const Image<Scalar> &b, const Image<Scalar> *mask) {
    require_same_shape(a, b, "mean_angular_error");
    require(a.channels == 3, "mean_angular_error: normal buffers need 3 channels");
    check_mask(a, mask, "mean_angular_error");
    double sum = 0.0;
    long count = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (!selected(mask, x, y))
                continue;
            const Eigen::Vector3d na = a.pixel(x, y).template cast<double>().matrix();
            const Eigen::Vector3d nb = b.pixel(x, y).template cast<double>().matrix();
            if (na.norm() == 0.0 || nb.norm() == 0.0)
                continue;
            const double c = std::clamp(na.normalized().dot(nb.normalized()), -1.0, 1.0);
            sum += std::acos(c) * 180.0 / pi_v<double>;
            ++count;
        }
    return count ? sum / double(count) : 0.0;
}

template <typename Scalar> double masked_mae(const Image<Scalar> &a, const Image<Scalar> &b, const Image<Scalar> *mask) {
    require_same_shape(a, b, "masked_mae");
    require(a.channels == 1, "masked_mae: expects single-channel maps");
    check_mask(a, mask, "masked_mae");
    double sum = 0.0;
    long count = 0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            if (selected(mask, x, y)) {
                sum += std::abs(double(a(x, y)) - double(b(x, y)));
                ++count;
            }
    return count ? sum / double(count) : 0.0;
}

template <typename Scalar> double masked_range(const Image<Scalar> &a, const Image<Scalar> *mask) {
    require(a.channels == 1, "masked_range: expects a single-channel map");
    check_mask(a, mask, "masked_range");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            if (selected(mask, x, y)) {
                lo = std::min(lo, double(a(x, y)));
                hi = std::max(hi, double(a(x, y)));
            }
    return hi >= lo ? hi - lo : 0.0;
}

#define GGDS_INSTANTIATE_METRICS(S)                                                                               \
    template double psnr<S>(const Image<S> &, const Image<S> &);                                                  \
    template double mean_angular_error<S>(const Image<S> &, const Image<S> &, const Image<S> *);                  \
    template double masked_mae<S>(const Image<S> &, const Image<S> &, const Image<S> *);                          \
    template double masked_range<S>(const Image<S> &, const Image<S> *);

GGDS_INSTANTIATE_METRICS(float)
GGDS_INSTANTIATE_METRICS(double)

} // namespace ggds
