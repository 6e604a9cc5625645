#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace ggds {

template <typename Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar> using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar> using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar> using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Violated precondition on an argument (bad shape, out-of-range index, ...).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An operation would push the splat count past the configured cap.
class CapacityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string &what) {
    if (!cond)
        throw InvalidArgument(what);
}

/// Literal messages skip building a string on the passing path.
inline void require(bool cond, const char *what) {
    if (!cond)
        throw InvalidArgument(what);
}

template <typename Scalar> constexpr Scalar pi_v = Scalar(3.141592653589793238462643383279502884L);

} // namespace ggds
