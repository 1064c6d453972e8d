#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "evpose/geometry.hpp"

namespace evpose {

struct Correspondences {
  std::vector<Eigen::Vector3d> points_3d;  // body frame
  std::vector<Eigen::Vector2d> points_2d;  // sensor pixels
  CameraIntrinsics camera;
};

enum class PoseStatus : std::uint8_t {
  Ok = 0,
  RejectedNoSolution = 1,
  RejectedRange = 2,
};

inline const char* to_string(PoseStatus s) {
  switch (s) {
    case PoseStatus::Ok: return "ok";
    case PoseStatus::RejectedNoSolution: return "rejected_no_solution";
    case PoseStatus::RejectedRange: return "rejected_range";
  }
  return "?";
}

struct PoseEstimate {
  Pose pose;
  // sqrt(mean over points of |duv|^2); infinite when no solution was found
  double reprojection_rmse = std::numeric_limits<double>::infinity();
  PoseStatus status = PoseStatus::RejectedNoSolution;
  bool refine_diverged = false;
};

struct SolveConfig {
  double max_range_m = 30.0;  // reject estimates translated farther than this
  int refine_max_iters = 20;
  double refine_damping = 1e-3;  // initial Levenberg-Marquardt lambda
};

struct RansacConfig {
  int iterations = 70;             // sampled subsets when enumeration is too big
  double inlier_threshold_px = 3.0;
  std::uint64_t seed = 0;
  SolveConfig solve;
};

// Root-mean-square reprojection distance in pixels; +inf if any point lands
// on or behind the camera plane.
double reprojection_rmse(const Correspondences& corr, const Pose& pose);

// EPnP initial estimate: control points from the centroid and principal axes
// (3 control points when the cloud is planar), barycentric coordinates, the
// 2n x 3m projection system, N in {1,2} null-space candidates with
// Gauss-Newton beta refinement, cheirality sign selection, and Procrustes
// alignment. Returns the candidate with the lowest reprojection error.
// Throws on degenerate input.
Pose epnp(const Correspondences& corr);

// Levenberg-Marquardt on pixel residuals over (axis-angle, translation).
// Cost never increases across accepted steps; if no step can improve the
// initial cost the initial pose is returned and *diverged is set.
Pose refine(const Correspondences& corr, const Pose& initial, int max_iters = 20,
            double damping = 1e-3, bool* diverged = nullptr);

// epnp + refine + rejection rules. Numerical failure (including n < 4) maps
// to rejected_no_solution; |t| > max_range_m maps to rejected_range. The
// returned quaternion is canonical (w >= 0).
PoseEstimate solve(const Correspondences& corr, const SolveConfig& config = {});

// Minimal 4-subset consensus. All C(n,4) subsets when n <= 8, otherwise
// `iterations` seeded random subsets; final solve runs on the largest
// consensus set (ties broken by reprojection error).
PoseEstimate solve_ransac(const Correspondences& corr, const RansacConfig& config = {});

}  // namespace evpose
