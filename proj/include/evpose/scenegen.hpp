#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "evpose/event.hpp"
#include "evpose/geometry.hpp"
#include "evpose/repr.hpp"

namespace evpose {

// Constant-rate rigid motion: body-axis angular velocity and camera-frame
// linear velocity applied to an initial pose.
struct Trajectory {
  Pose initial;
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();  // rad/s, body axis
  Eigen::Vector3d vel = Eigen::Vector3d::Zero();    // m/s, camera frame
  double duration_s = 0;
  std::uint64_t seed = 0;

  // Pose at time t seconds from the trajectory start; quaternion renormalized.
  Pose pose_at(double t_s) const;
};

struct GenerateResult {
  EventStream stream;
  bool out_of_frame = false;  // target never intersected the sensor
};

// Idealized edge-event model: at each substep the wireframe is rasterized
// into the pixel grid; pixels newly covered since the previous substep emit
// +1 events, newly uncovered pixels emit -1 events, `contrast_rate` events
// per crossing, timestamped at the substep midpoint with sub-microsecond
// jitter from the trajectory seed. Output is sorted and deterministic.
GenerateResult generate_events(const TargetModel& model, const Trajectory& traj,
                               const CameraIntrinsics& cam, double substep_s, int contrast_rate);

// Same generator over an arbitrary wireframe; generate_events delegates here.
GenerateResult generate_wireframe_events(const std::vector<Eigen::Vector3d>& points,
                                         const std::vector<std::pair<int, int>>& edges,
                                         const Trajectory& traj, const CameraIntrinsics& cam,
                                         double substep_s, int contrast_rate);

// Per-window labels: pose at the window midpoint, projected keypoints, and
// the ground-truth ROI around the visible ones.
struct WindowTruth {
  std::uint64_t t_mid_us = 0;
  Pose pose;
  std::vector<Eigen::Vector2d> keypoints;  // sensor pixels, one per model keypoint
  std::vector<bool> visible;
  Roi roi;
  bool roi_valid = false;  // false when no keypoint landed on the sensor
};

std::vector<WindowTruth> ground_truth(const Trajectory& traj, const std::vector<Window>& wins,
                                      const TargetModel& model, const CameraIntrinsics& cam,
                                      double roi_margin);

constexpr double kDefaultRoiMargin = 0.1;

}  // namespace evpose
