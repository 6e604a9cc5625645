#include "ggds/sh.hpp"

#include <cmath>

namespace ggds {

namespace {

constexpr double C1 = 0.4886025119029199;
constexpr double C2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double C3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

template <typename Scalar>
void evaluate(int degree, const Vec3<Scalar> &d, Scalar *out, Vec3<Scalar> *grad) {
    using V = Vec3<Scalar>;
    const Scalar x = d.x(), y = d.y(), z = d.z();
    out[0] = Scalar(1);
    if (grad)
        grad[0].setZero();
    if (degree < 1)
        return;
    const Scalar c1 = Scalar(C1);
    out[1] = -c1 * y;
    out[2] = c1 * z;
    out[3] = -c1 * x;
    if (grad) {
        grad[1] = V(0, -c1, 0);
        grad[2] = V(0, 0, c1);
        grad[3] = V(-c1, 0, 0);
    }
    if (degree < 2)
        return;
    const Scalar xx = x * x, yy = y * y, zz = z * z;
    out[4] = Scalar(C2[0]) * x * y;
    out[5] = Scalar(C2[1]) * y * z;
    out[6] = Scalar(C2[2]) * (2 * zz - xx - yy);
    out[7] = Scalar(C2[3]) * x * z;
    out[8] = Scalar(C2[4]) * (xx - yy);
    if (grad) {
        grad[4] = Scalar(C2[0]) * V(y, x, 0);
        grad[5] = Scalar(C2[1]) * V(0, z, y);
        grad[6] = Scalar(C2[2]) * V(-2 * x, -2 * y, 4 * z);
        grad[7] = Scalar(C2[3]) * V(z, 0, x);
        grad[8] = Scalar(C2[4]) * V(2 * x, -2 * y, 0);
    }
    if (degree < 3)
        return;
    out[9] = Scalar(C3[0]) * y * (3 * xx - yy);
    out[10] = Scalar(C3[1]) * x * y * z;
    out[11] = Scalar(C3[2]) * y * (4 * zz - xx - yy);
    out[12] = Scalar(C3[3]) * z * (2 * zz - 3 * xx - 3 * yy);
    out[13] = Scalar(C3[4]) * x * (4 * zz - xx - yy);
    out[14] = Scalar(C3[5]) * z * (xx - yy);
    out[15] = Scalar(C3[6]) * x * (xx - 3 * yy);
    if (grad) {
        grad[9] = Scalar(C3[0]) * V(6 * x * y, 3 * xx - 3 * yy, 0);
        grad[10] = Scalar(C3[1]) * V(y * z, x * z, x * y);
        grad[11] = Scalar(C3[2]) * V(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
        grad[12] = Scalar(C3[3]) * V(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
        grad[13] = Scalar(C3[4]) * V(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
        grad[14] = Scalar(C3[5]) * V(2 * x * z, -2 * y * z, xx - yy);
        grad[15] = Scalar(C3[6]) * V(3 * xx - 3 * yy, -6 * x * y, 0);
    }
}

} // namespace

template <typename Scalar> void sh_basis(int degree, const Vec3<Scalar> &dir, Scalar *out) {
    require(degree >= 0 && degree <= kMaxShDegree, "sh degree out of range");
    evaluate<Scalar>(degree, dir, out, nullptr);
}

template <typename Scalar>
void sh_basis_with_gradient(int degree, const Vec3<Scalar> &dir, Scalar *out, Vec3<Scalar> *grad) {
    require(degree >= 0 && degree <= kMaxShDegree, "sh degree out of range");
    evaluate<Scalar>(degree, dir, out, grad);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> sh_rotation(int degree, const Mat3<Scalar> &rotation) {
    using MatX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
    const int n = sh_coeff_count(degree);
    MatX out = MatX::Zero(n, n);
    out(0, 0) = 1.0;
    if (degree == 0)
        return out.cast<Scalar>();

    // Fit each band from samples on a Fibonacci sphere; bands are closed under rotation so the
    // least-squares solution is exact up to round-off.
    constexpr int kSamples = 64;
    const Mat3<double> rt = rotation.template cast<double>().transpose();
    MatX a(kSamples, n), b(kSamples, n);
    const double golden = pi_v<double> * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < kSamples; ++i) {
        const double zc = 1.0 - 2.0 * (i + 0.5) / kSamples;
        const double r = std::sqrt(std::max(0.0, 1.0 - zc * zc));
        const Vec3<double> e(r * std::cos(golden * i), r * std::sin(golden * i), zc);
        const Vec3<double> back = rt * e;
        double ya[sh_coeff_count(kMaxShDegree)], yb[sh_coeff_count(kMaxShDegree)];
        evaluate<double>(degree, e, ya, nullptr);
        evaluate<double>(degree, back, yb, nullptr);
        for (int k = 0; k < n; ++k) {
            a(i, k) = ya[k];
            b(i, k) = yb[k];
        }
    }
    for (int band = 1; band <= degree; ++band) {
        const int first = band * band, width = 2 * band + 1;
        const MatX ab = a.block(0, first, kSamples, width);
        const MatX bb = b.block(0, first, kSamples, width);
        out.block(first, first, width, width) = ab.colPivHouseholderQr().solve(bb);
    }
    return out.cast<Scalar>();
}

template void sh_basis<float>(int, const Vec3<float> &, float *);
template void sh_basis<double>(int, const Vec3<double> &, double *);
template void sh_basis_with_gradient<float>(int, const Vec3<float> &, float *, Vec3<float> *);
template void sh_basis_with_gradient<double>(int, const Vec3<double> &, double *, Vec3<double> *);
template Eigen::MatrixXf sh_rotation<float>(int, const Mat3<float> &);
template Eigen::MatrixXd sh_rotation<double>(int, const Mat3<double> &);

} // namespace ggds
