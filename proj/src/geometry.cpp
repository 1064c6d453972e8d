#include "evpose/geometry.hpp"

#include <cmath>

namespace evpose {

TargetModel cuboid_model(double size_x, double size_y, double size_z) {
  if (size_x <= 0 || size_y <= 0 || size_z <= 0)
    throw ArgumentError("cuboid extents must be positive");
  TargetModel m;
  const double hx = 0.5 * size_x, hy = 0.5 * size_y, hz = 0.5 * size_z;
  m.keypoints_3d.reserve(8);
  for (int i = 0; i < 8; ++i)
    m.keypoints_3d.emplace_back(i & 1 ? hx : -hx, i & 2 ? hy : -hy, i & 4 ? hz : -hz);
  // Edges join corners whose index differs in exactly one sign bit.
  for (int i = 0; i < 8; ++i)
    for (int bit : {1, 2, 4})
      if (!(i & bit)) m.edges.emplace_back(i, i | bit);
  return m;
}

void validate_model(const TargetModel& model) {
  if (static_cast<int>(model.keypoints_3d.size()) != TargetModel::kNumKeypoints)
    throw ArgumentError("target model must have 8 keypoints");
  if (model.edges.size() != 12) throw ArgumentError("target model must have 12 edges");
  for (const auto& [a, b] : model.edges)
    if (a < 0 || a >= 8 || b < 0 || b >= 8 || a == b)
      throw ArgumentError("edge references invalid corners");
  // Corner 0 and its three axis neighbours must span pairwise-orthogonal axes.
  const Eigen::Vector3d ex = model.keypoints_3d[1] - model.keypoints_3d[0];
  const Eigen::Vector3d ey = model.keypoints_3d[2] - model.keypoints_3d[0];
  const Eigen::Vector3d ez = model.keypoints_3d[4] - model.keypoints_3d[0];
  const double tol = 1e-9 * std::max({ex.norm(), ey.norm(), ez.norm()});
  if (std::abs(ex.dot(ey)) > tol || std::abs(ex.dot(ez)) > tol || std::abs(ey.dot(ez)) > tol)
    throw ArgumentError("cuboid axes are not pairwise orthogonal");
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector3d expect = model.keypoints_3d[0] + (i & 1 ? ex : Eigen::Vector3d::Zero()) +
                                   (i & 2 ? ey : Eigen::Vector3d::Zero()) +
                                   (i & 4 ? ez : Eigen::Vector3d::Zero());
    if ((model.keypoints_3d[i] - expect).norm() > 1e-9)
      throw ArgumentError("corners do not form a cuboid");
  }
}

Projection project(const std::vector<Eigen::Vector3d>& points_body, const Pose& pose,
                   const CameraIntrinsics& cam) {
  Projection out;
  out.uv.reserve(points_body.size());
  out.visible.reserve(points_body.size());
  const Eigen::Matrix3d R = pose.rotation();
  for (const auto& X : points_body) {
    const Eigen::Vector3d Xc = R * X + pose.t;
    if (Xc.z() <= 1e-12) {
      out.uv.emplace_back(0.0, 0.0);
      out.visible.push_back(false);
      continue;
    }
    const double u = cam.fx * Xc.x() / Xc.z() + cam.cx;
    const double v = cam.fy * Xc.y() / Xc.z() + cam.cy;
    out.uv.emplace_back(u, v);
    out.visible.push_back(u >= 0 && u < cam.width && v >= 0 && v < cam.height);
  }
  return out;
}

}  // namespace evpose
