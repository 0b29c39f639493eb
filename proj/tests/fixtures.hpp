#pragma once

#include <vector>

#include "featsplat/body_model.hpp"
#include "featsplat/splat_renderer.hpp"

namespace fixture {

// Unit quad in the z = 0 plane split into two faces along the UV diagonal;
// one joint, one shape and one expression direction.
inline fsplat::BodyAsset quad_asset(bool half_atlas = false) {
    fsplat::BodyAsset a;
    a.template_vertices.resize(4, 3);
    a.template_vertices << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
    a.faces = {{0, 1, 2}, {0, 2, 3}};
    a.uv_corners = {{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1)},
                    {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 1)}};
    if (half_atlas) {
        a.faces.pop_back();
        a.uv_corners.pop_back();
    }
    a.shape_basis = Eigen::MatrixXd::Zero(12, 1);
    a.shape_basis(2, 0) = 0.1;
    a.expression_basis = Eigen::MatrixXd::Zero(12, 1);
    a.pose_basis = Eigen::MatrixXd::Zero(12, 0);
    a.joint_regressor = Eigen::MatrixXd::Constant(1, 4, 0.25);
    a.skinning_weights = Eigen::MatrixXd::Ones(4, 1);
    a.parent = {-1};
    a.joint_names = {"root"};
    return a;
}

// Looking down -z from (0.5, 0.5, 2) at the quad.
inline fsplat::Camera quad_camera(int size = 32) {
    fsplat::Camera cam;
    cam.width = cam.height = size;
    cam.fx = cam.fy = size * 1.5;
    cam.cx = cam.cy = 0.5 * size;
    const Eigen::Matrix3d r = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
    cam.world_to_camera.linear() = r;
    cam.world_to_camera.translation() = -r * Eigen::Vector3d(0.5, 0.5, 2.0);
    return cam;
}

}  // namespace fixture
