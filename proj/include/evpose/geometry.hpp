#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <vector>

#include "evpose/error.hpp"

namespace evpose {

struct CameraIntrinsics {
  double fx = 0, fy = 0;  // focal lengths, pixels
  double cx = 0, cy = 0;  // principal point, pixels
  int width = 0, height = 0;
};

// Rigid body-to-camera transform: X_cam = R(q) * X_body + t.
struct Pose {
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();  // unit, body -> camera
  Eigen::Vector3d t = Eigen::Vector3d::Zero();            // metres, camera frame

  Eigen::Matrix3d rotation() const { return q.toRotationMatrix(); }
};

// Canonical quaternion representative of the double cover: w >= 0.
inline Eigen::Quaterniond canonical(const Eigen::Quaterniond& q) {
  return q.w() < 0 ? Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z()) : q;
}

// Quaternion for a rotation of |omega|*dt about axis omega/|omega|.
inline Eigen::Quaterniond quat_exp(const Eigen::Vector3d& omega_dt) {
  const double angle = omega_dt.norm();
  if (angle < 1e-14) {
    Eigen::Quaterniond q(1.0, 0.5 * omega_dt.x(), 0.5 * omega_dt.y(), 0.5 * omega_dt.z());
    q.normalize();
    return q;
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega_dt / angle));
}

// Wireframe target: labelled 3D keypoints (the cuboid corners) plus the edge
// list connecting them.
struct TargetModel {
  std::vector<Eigen::Vector3d> keypoints_3d;      // body frame, metres
  std::vector<std::pair<int, int>> edges;         // corner index pairs

  static constexpr int kNumKeypoints = 8;
};

// Axis-aligned cuboid of the given full extents, centred at the body origin.
// Corner i has sign pattern (i&1 -> +x, i&2 -> +y, i&4 -> +z); 12 edges.
TargetModel cuboid_model(double size_x, double size_y, double size_z);

// Throws unless the model is a valid labelled cuboid (8 corners, 12 edges,
// pairwise-orthogonal axes).
void validate_model(const TargetModel& model);

struct Projection {
  std::vector<Eigen::Vector2d> uv;  // sensor pixels
  std::vector<bool> visible;        // false when behind the camera or off-sensor
};

// Pinhole projection u = fx*X/Z + cx, v = fy*Y/Z + cy of body-frame points.
// Self-occlusion is not modelled; flags only encode cheirality and bounds.
Projection project(const std::vector<Eigen::Vector3d>& points_body, const Pose& pose,
                   const CameraIntrinsics& cam);

}  // namespace evpose
