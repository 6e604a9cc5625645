#pragma once

#include "ggds/common.hpp"

#include <cmath>

namespace ggds {

/// Pinhole camera. Camera space is right-handed with x right, y up and the view looking down -z,
/// so depth is -z and a surface facing the camera has normal (0, 0, +1).
template <typename Scalar> struct Camera {
    Vec3<Scalar> position = Vec3<Scalar>::Zero();
    Mat3<Scalar> rotation = Mat3<Scalar>::Identity(); ///< world -> camera
    Scalar fov_y = Scalar(1);                          ///< vertical field of view, radians
    int width = 64;
    int height = 64;
    Scalar near_plane = Scalar(0.05);
    Scalar far_plane = Scalar(1000);

    Scalar focal() const { return Scalar(0.5) * Scalar(height) / std::tan(Scalar(0.5) * fov_y); }

    /// Camera-space ray through pixel center (px, py), scaled so its depth component is 1.
    Vec3<Scalar> pixel_ray(int px, int py) const {
        const Scalar f = focal();
        return {(Scalar(px) + Scalar(0.5) - Scalar(0.5) * width) / f,
                -(Scalar(py) + Scalar(0.5) - Scalar(0.5) * height) / f, Scalar(-1)};
    }

    Vec3<Scalar> to_camera(const Vec3<Scalar> &world) const { return rotation * (world - position); }

    void validate() const {
        require(fov_y > 0 && fov_y < pi_v<Scalar>, "camera fov must lie in (0, pi)");
        require(near_plane > 0 && near_plane < far_plane, "camera needs 0 < near < far");
        require(width >= 1 && height >= 1, "camera resolution must be positive");
        const double orth = (rotation.template cast<double>() * rotation.template cast<double>().transpose() -
                             Eigen::Matrix3d::Identity())
                                .cwiseAbs()
                                .maxCoeff();
        require(orth <= 1e-6, "camera rotation must be orthonormal");
    }

    /// World frame is z-up. Looks from `eye` towards `target`.
    static Camera look_at(const Vec3<Scalar> &eye, const Vec3<Scalar> &target, Scalar fov_y, int width, int height,
                          const Vec3<Scalar> &up = Vec3<Scalar>::UnitZ()) {
        Camera cam;
        const Vec3<Scalar> forward = (target - eye).normalized();
        Vec3<Scalar> right = forward.cross(up);
        if (right.norm() < Scalar(1e-9))
            right = forward.cross(Vec3<Scalar>::UnitY());
        right.normalize();
        const Vec3<Scalar> cam_up = right.cross(forward);
        cam.rotation.row(0) = right.transpose();
        cam.rotation.row(1) = cam_up.transpose();
        cam.rotation.row(2) = -forward.transpose();
        cam.position = eye;
        cam.fov_y = fov_y;
        cam.width = width;
        cam.height = height;
        return cam;
    }

    template <typename Other> Camera<Other> cast() const {
        Camera<Other> out;
        out.position = position.template cast<Other>();
        out.rotation = rotation.template cast<Other>();
        out.fov_y = Other(fov_y);
        out.width = width;
        out.height = height;
        out.near_plane = Other(near_plane);
        out.far_plane = Other(far_plane);
        return out;
    }
};

} // namespace ggds
