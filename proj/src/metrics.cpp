#include "evpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evpose/error.hpp"

namespace evpose {
namespace {

// Sum with a deterministic, input-order-independent reduction.
double sorted_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

}  // namespace

TranslationError translation_error(const Eigen::Vector3d& t_est, const Eigen::Vector3d& t_gt) {
  const double norm_gt = t_gt.norm();
  if (!(norm_gt > 0)) throw ArgumentError("normalized translation error undefined for |t| = 0");
  TranslationError e;
  e.meters = (t_est - t_gt).norm();
  e.normalized = e.meters / norm_gt;
  return e;
}

RotationError rotation_error(const Eigen::Quaterniond& q_est, const Eigen::Quaterniond& q_gt) {
  const double ne = q_est.norm();
  const double ng = q_gt.norm();
  if (!(ne > 0) || !(ng > 0)) throw ArgumentError("zero quaternion has no rotation");
  double dot = std::abs(q_est.coeffs().dot(q_gt.coeffs()) / (ne * ng));
  dot = std::min(dot, 1.0);
  RotationError e;
  e.radians = 2.0 * std::acos(dot);
  e.degrees = e.radians * 180.0 / M_PI;
  return e;
}

double pose_error(double e_r_rad, double e_t_norm) {
  if (e_r_rad < 0 || e_t_norm < 0) throw ArgumentError("error components must be non-negative");
  return e_r_rad + e_t_norm;
}

double pck(const KeypointSet& pred, const KeypointSet& gt, double d) {
  if (pred.points.size() != gt.points.size())
    throw ArgumentError("keypoint sets differ in size");
  if (!(d > 0)) throw ArgumentError("pck threshold must be positive");
  if (gt.points.empty()) throw ArgumentError("pck needs at least one keypoint");

  int correct = 0;
  for (std::size_t i = 0; i < pred.points.size(); ++i) {
    if (pred.points[i].index != gt.points[i].index)
      throw ArgumentError("keypoint sets must align by index");
    if (!pred.points[i].valid) continue;
    if ((pred.points[i].roi_uv - gt.points[i].roi_uv).norm() <= d) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(gt.points.size());
}

RunReport aggregate(const std::vector<PoseRecord>& records) {
  RunReport rep;
  rep.total = static_cast<int>(records.size());

  std::vector<double> et, etn, erd, err, ep;
  long long pck_num = 0, pck_den = 0;
  for (const PoseRecord& r : records) {
    pck_num += r.pck_correct;
    pck_den += r.pck_total;
    if (r.rejected) {
      ++rep.rejected;
      continue;
    }
    ++rep.accepted;
    et.push_back(r.e_t);
    etn.push_back(r.e_t_norm);
    erd.push_back(r.e_r_deg);
    err.push_back(r.e_r_rad);
    ep.push_back(r.e_p);
  }

  if (rep.accepted > 0) {
    const double n = static_cast<double>(rep.accepted);
    rep.mean_e_t = sorted_sum(et) / n;
    rep.mean_e_t_norm = sorted_sum(etn) / n;
    rep.mean_e_r_deg = sorted_sum(erd) / n;
    rep.mean_e_r_rad = sorted_sum(err) / n;
    // Mean linearity holds bit-exactly this way; a separate reduction of the
    // per-sample sums could drift from it by rounding.
    rep.mean_e_p = rep.mean_e_r_rad + rep.mean_e_t_norm;
    std::sort(ep.begin(), ep.end());
    rep.e_p_sorted = std::move(ep);
  } else {
    rep.note = "no accepted samples";
  }
  rep.pck = pck_den > 0 ? static_cast<double>(pck_num) / static_cast<double>(pck_den) : 0.0;
  return rep;
}

}  // namespace evpose
