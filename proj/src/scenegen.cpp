#include "evpose/scenegen.hpp"

#include <algorithm>
#include <cmath>

#include "evpose/rng.hpp"

namespace evpose {

Pose Trajectory::pose_at(double t_s) const {
  Pose p;
  p.q = (initial.q * quat_exp(omega * t_s)).normalized();
  p.t = initial.t + vel * t_s;
  return p;
}

namespace {

// Marks the pixels under each projected edge, sampling at half-pixel steps.
void rasterize(const std::vector<Eigen::Vector3d>& points,
               const std::vector<std::pair<int, int>>& edges, const Pose& pose,
               const CameraIntrinsics& cam, std::vector<std::uint8_t>& occupancy,
               std::vector<std::uint32_t>& indices) {
  indices.clear();
  const Eigen::Matrix3d R = pose.rotation();
  std::vector<Eigen::Vector2d> uv(points.size());
  std::vector<bool> in_front(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d Xc = R * points[i] + pose.t;
    in_front[i] = Xc.z() > 1e-9;
    if (in_front[i])
      uv[i] = {cam.fx * Xc.x() / Xc.z() + cam.cx, cam.fy * Xc.y() / Xc.z() + cam.cy};
  }
  for (const auto& [a, b] : edges) {
    if (!in_front[a] || !in_front[b]) continue;
    const Eigen::Vector2d d = uv[b] - uv[a];
    const int n = std::max(1, static_cast<int>(std::ceil(d.norm() / 0.5)));
    for (int s = 0; s <= n; ++s) {
      const Eigen::Vector2d p = uv[a] + d * (static_cast<double>(s) / n);
      const int x = static_cast<int>(std::floor(p.x()));
      const int y = static_cast<int>(std::floor(p.y()));
      if (x < 0 || x >= cam.width || y < 0 || y >= cam.height) continue;
      const std::uint32_t idx = static_cast<std::uint32_t>(y) * cam.width + x;
      if (!occupancy[idx]) {
        occupancy[idx] = 1;
        indices.push_back(idx);
      }
    }
  }
  std::sort(indices.begin(), indices.end());
}

}  // namespace

GenerateResult generate_wireframe_events(const std::vector<Eigen::Vector3d>& points,
                                         const std::vector<std::pair<int, int>>& edges,
                                         const Trajectory& traj, const CameraIntrinsics& cam,
                                         double substep_s, int contrast_rate) {
  if (substep_s <= 0) throw ArgumentError("substep must be positive");
  if (contrast_rate < 1) throw ArgumentError("contrast_rate must be at least 1");
  if (traj.duration_s <= 0) throw ArgumentError("trajectory duration must be positive");

  GenerateResult res;
  res.stream.width = static_cast<std::uint16_t>(cam.width);
  res.stream.height = static_cast<std::uint16_t>(cam.height);

  Rng rng(traj.seed);
  const std::size_t n_steps = static_cast<std::size_t>(std::llround(traj.duration_s / substep_s));
  std::vector<std::uint8_t> occ_now(static_cast<std::size_t>(cam.width) * cam.height, 0);
  std::vector<std::uint32_t> prev, now;
  bool any_in_frame = false;

  for (std::size_t k = 0; k < n_steps; ++k) {
    const double t_mid_s = (static_cast<double>(k) + 0.5) * substep_s;
    rasterize(points, edges, traj.pose_at(t_mid_s), cam, occ_now, now);
    for (std::uint32_t idx : now) occ_now[idx] = 0;  // reset for the next step
    any_in_frame |= !now.empty();

    const double t_mid_us = t_mid_s * 1e6;
    const std::size_t first_event = res.stream.events.size();
    auto emit = [&](std::uint32_t idx, std::int8_t polarity) {
      Event e;
      e.x = static_cast<std::uint16_t>(idx % cam.width);
      e.y = static_cast<std::uint16_t>(idx / cam.width);
      e.p = polarity;
      for (int c = 0; c < contrast_rate; ++c) {
        // Sub-microsecond jitter lands on mid or mid+1 after rounding.
        e.t = static_cast<std::uint64_t>(std::llround(t_mid_us + rng.uniform()));
        res.stream.events.push_back(e);
      }
    };
    // Sorted set differences: newly covered -> +1, newly uncovered -> -1.
    std::size_t i = 0, j = 0;
    while (i < now.size() || j < prev.size()) {
      if (j >= prev.size() || (i < now.size() && now[i] < prev[j]))
        emit(now[i++], +1);
      else if (i >= now.size() || prev[j] < now[i])
        emit(prev[j++], -1);
      else {
        ++i;
        ++j;
      }
    }
    std::stable_sort(res.stream.events.begin() + first_event, res.stream.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    prev.swap(now);
  }
  res.out_of_frame = !any_in_frame;
  return res;
}

GenerateResult generate_events(const TargetModel& model, const Trajectory& traj,
                               const CameraIntrinsics& cam, double substep_s, int contrast_rate) {
  validate_model(model);
  return generate_wireframe_events(model.keypoints_3d, model.edges, traj, cam, substep_s,
                                   contrast_rate);
}

std::vector<WindowTruth> ground_truth(const Trajectory& traj, const std::vector<Window>& wins,
                                      const TargetModel& model, const CameraIntrinsics& cam,
                                      double roi_margin) {
  std::vector<WindowTruth> out;
  out.reserve(wins.size());
  for (const Window& w : wins) {
    WindowTruth truth;
    truth.t_mid_us = w.t_start + (w.t_end - w.t_start) / 2;
    truth.pose = traj.pose_at(static_cast<double>(truth.t_mid_us) * 1e-6);
    const Projection proj = project(model.keypoints_3d, truth.pose, cam);
    truth.keypoints = proj.uv;
    truth.visible = proj.visible;
    std::vector<Eigen::Vector2d> vis;
    for (std::size_t i = 0; i < proj.uv.size(); ++i)
      if (proj.visible[i]) vis.push_back(proj.uv[i]);
    if (!vis.empty()) {
      truth.roi = ground_truth_roi(vis, roi_margin, cam.width, cam.height);
      truth.roi_valid = true;
    }
    out.push_back(std::move(truth));
  }
  return out;
}

}  // namespace evpose
