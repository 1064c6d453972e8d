#pragma once

#include <Eigen/Geometry>
#include <string>
#include <vector>

#include "evpose/geometry.hpp"
#include "evpose/keypoints.hpp"
#include "evpose/pnp.hpp"

namespace evpose {

struct PoseRecord {
  std::string id;
  Pose gt;
  PoseEstimate estimate;
  double e_t = 0.0;       // meters
  double e_t_norm = 0.0;  // e_t / |gt translation|
  double e_r_deg = 0.0;
  double e_r_rad = 0.0;
  double e_p = 0.0;  // e_r_rad + e_t_norm
  int pck_correct = 0;
  int pck_total = 0;
  bool rejected = false;  // excluded from pose-error aggregates
};

struct RunReport {
  int total = 0;
  int accepted = 0;
  int rejected = 0;
  // Means over accepted records only; zero (with note set) when none.
  double mean_e_t = 0.0;
  double mean_e_t_norm = 0.0;
  double mean_e_r_deg = 0.0;
  double mean_e_r_rad = 0.0;
  double mean_e_p = 0.0;
  // Fraction of correct keypoints over every record, rejected included;
  // keypoint accuracy is independent of the pose-level rejection rule.
  double pck = 0.0;
  std::string note;                 // "no accepted samples" sentinel
  std::vector<double> e_p_sorted;   // accepted E_P values, ascending (CDF support)
};

// E_T = |t_est - t_gt|, normalized by |t_gt|. Zero ground-truth translation
// has no normalized form and throws.
struct TranslationError {
  double meters = 0.0;
  double normalized = 0.0;
};
TranslationError translation_error(const Eigen::Vector3d& t_est, const Eigen::Vector3d& t_gt);

// E_R = 2 acos(|<q_est, q_gt>|), clamped into the arccos domain, so both
// quaternion signs of the double cover give the same answer.
struct RotationError {
  double degrees = 0.0;
  double radians = 0.0;
};
RotationError rotation_error(const Eigen::Quaterniond& q_est, const Eigen::Quaterniond& q_gt);

double pose_error(double e_r_rad, double e_t_norm);

// Fraction of keypoints whose ROI-frame prediction lies within d pixels of
// the ground truth; invalid predictions count as misses. Sets must align by
// position and carry matching indices.
double pck(const KeypointSet& pred, const KeypointSet& gt, double d);

// Order-independent aggregation: pose-error means over accepted records via
// sorted-reduction sums, PCK over all records, E_P values kept for CDFs.
RunReport aggregate(const std::vector<PoseRecord>& records);

}  // namespace evpose
