#pragma once

#include "ggds/common.hpp"

namespace ggds {

/// Dense height x width x channels image, row-major with interleaved channels.
/// Storage is an Eigen array so whole-image arithmetic stays expression-friendly:
/// `out.data = a * x.data + b * y.data`.
template <typename Scalar> struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    ArrayX<Scalar> data;

    Image() = default;
    Image(int w, int h, int c, Scalar fill = Scalar(0))
        : width(w), height(h), channels(c), data(ArrayX<Scalar>::Constant(Eigen::Index(w) * h * c, fill)) {}

    Eigen::Index size() const { return data.size(); }
    Eigen::Index pixel_count() const { return Eigen::Index(width) * height; }
    bool empty() const { return data.size() == 0; }

    Eigen::Index index(int x, int y, int c = 0) const { return (Eigen::Index(y) * width + x) * channels + c; }
    Scalar &operator()(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    Scalar operator()(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    auto pixel(int x, int y) { return data.segment(index(x, y), channels); }
    auto pixel(int x, int y) const { return data.segment(index(x, y), channels); }

    bool same_shape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    template <typename Other> Image<Other> cast() const {
        Image<Other> out;
        out.width = width;
        out.height = height;
        out.channels = channels;
        out.data = data.template cast<Other>();
        return out;
    }
};

inline std::string shape_string(int w, int h, int c) {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

template <typename Scalar> std::string shape_string(const Image<Scalar> &img) {
    return shape_string(img.width, img.height, img.channels);
}

template <typename Scalar> void require_same_shape(const Image<Scalar> &a, const Image<Scalar> &b, const char *what) {
    if (!a.same_shape(b))
        throw InvalidArgument(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

} // namespace ggds
