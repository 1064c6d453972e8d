#include "evpose/keypoints.hpp"

#include <algorithm>
#include <cmath>

#include "evpose/rng.hpp"

namespace evpose {

std::vector<double> encode_coordinate_target(const std::vector<Eigen::Vector2d>& roi_keypoints,
                                             double roi_size) {
  if (!(roi_size > 0)) throw ArgumentError("roi_size must be positive");
  std::vector<double> out;
  out.reserve(roi_keypoints.size() * 2);
  for (const Eigen::Vector2d& p : roi_keypoints) {
    out.push_back(p.x() / roi_size);
    out.push_back(p.y() / roi_size);
  }
  return out;
}

HeatmapTarget encode_heatmap_target(const std::vector<Eigen::Vector2d>& roi_keypoints,
                                    double roi_size, int heatmap_size, double sigma) {
  if (!(sigma > 0)) throw ArgumentError("sigma must be positive");
  if (heatmap_size < 1 || !(roi_size > 0)) throw ArgumentError("bad heatmap/roi size");

  const int k = static_cast<int>(roi_keypoints.size());
  HeatmapTarget t;
  t.maps = Tensor<float>(1, k, heatmap_size, heatmap_size);
  t.valid.assign(k, 0);

  const double scale = static_cast<double>(heatmap_size) / roi_size;
  for (int i = 0; i < k; ++i) {
    const double cx = (roi_keypoints[i].x() + 0.5) * scale - 0.5;
    const double cy = (roi_keypoints[i].y() + 0.5) * scale - 0.5;
    if (!std::isfinite(cx) || !std::isfinite(cy)) continue;
    const long nx = std::llround(cx);
    const long ny = std::llround(cy);
    if (nx < 0 || nx >= heatmap_size || ny < 0 || ny >= heatmap_size) continue;

    t.valid[i] = 1;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const double peak = std::exp(-((nx - cx) * (nx - cx) + (ny - cy) * (ny - cy)) * inv);
    float* plane = t.maps.plane(0, i);
    for (int y = 0; y < heatmap_size; ++y)
      for (int x = 0; x < heatmap_size; ++x)
        plane[y * heatmap_size + x] = static_cast<float>(
            std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) * inv) / peak);
  }
  return t;
}

KeypointSet decode_coordinates(const std::vector<double>& output, double roi_size,
                               const RoiAffine& affine) {
  if (output.size() % 2 != 0) throw ArgumentError("coordinate output length must be even");
  KeypointSet set;
  set.points.reserve(output.size() / 2);
  for (std::size_t i = 0; i + 1 < output.size(); i += 2) {
    if (!std::isfinite(output[i]) || !std::isfinite(output[i + 1]))
      throw ArgumentError("non-finite coordinate prediction");
    Keypoint p;
    p.index = static_cast<int>(i / 2);
    p.roi_uv = {output[i] * roi_size, output[i + 1] * roi_size};
    p.sensor_uv = affine.to_sensor(p.roi_uv);
    p.confidence = 1.0;
    p.valid = true;
    set.points.push_back(p);
  }
  return set;
}

KeypointSet decode_heatmaps(const Tensor<float>& maps, double roi_size, const RoiAffine& affine) {
  if (maps.n != 1) throw ArgumentError("decode_heatmaps expects a single sample");
  KeypointSet set;
  set.points.reserve(maps.c);
  for (int c = 0; c < maps.c; ++c) {
    const float* plane = maps.plane(0, c);
    int best = 0;
    for (int j = 1; j < maps.h * maps.w; ++j)
      if (plane[j] > plane[best]) best = j;

    Keypoint p;
    p.index = c;
    const double peak = plane[best];
    if (!(peak > 0.0)) {
      p.confidence = 0.0;
      p.valid = false;
      set.points.push_back(p);
      continue;
    }
    const int by = best / maps.w;
    const int bx = best % maps.w;
    double sw = 0.0, sx = 0.0, sy = 0.0;
    for (int dy = -1; dy <= 1; ++dy) {
      const int y = by + dy;
      if (y < 0 || y >= maps.h) continue;
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = bx + dx;
        if (x < 0 || x >= maps.w) continue;
        const double wgt = std::max(0.0, static_cast<double>(plane[y * maps.w + x]));
        sw += wgt;
        sx += wgt * x;
        sy += wgt * y;
      }
    }
    const double cx = sx / sw;
    const double cy = sy / sw;
    p.roi_uv = {(cx + 0.5) * roi_size / maps.w - 0.5, (cy + 0.5) * roi_size / maps.h - 0.5};
    p.sensor_uv = affine.to_sensor(p.roi_uv);
    p.confidence = std::clamp(peak, 0.0, 1.0);
    p.valid = true;
    set.points.push_back(p);
  }
  return set;
}

KeypointSet select_top_k(const KeypointSet& kps, int k) {
  if (k < 4 || k > static_cast<int>(kps.points.size()))
    throw ArgumentError("top-k must satisfy 4 <= k <= number of keypoints");

  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(kps.points.size()); ++i)
    if (kps.points[i].valid) order.push_back(i);
  if (static_cast<int>(order.size()) < 4)
    throw InsufficientPointsError("fewer than 4 valid keypoints");

  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (kps.points[a].confidence != kps.points[b].confidence)
      return kps.points[a].confidence > kps.points[b].confidence;
    return a < b;
  });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
  std::sort(order.begin(), order.end());

  KeypointSet out;
  out.points.reserve(order.size());
  for (int i : order) out.points.push_back(kps.points[i]);
  return out;
}

KeypointSet oracle_predict(const std::vector<Eigen::Vector2d>& sensor_keypoints,
                           const std::vector<std::uint8_t>& valid, double noise_sigma,
                           std::uint64_t seed, const RoiAffine& affine) {
  if (noise_sigma < 0) throw ArgumentError("noise_sigma must be non-negative");
  if (!valid.empty() && valid.size() != sensor_keypoints.size())
    throw ArgumentError("valid flags must match keypoint count");

  Rng rng(seed);
  KeypointSet set;
  set.points.reserve(sensor_keypoints.size());
  for (std::size_t i = 0; i < sensor_keypoints.size(); ++i) {
    Keypoint p;
    p.index = static_cast<int>(i);
    // Draw for every point so the stream stays aligned across validity masks.
    const double du = rng.gaussian(0.0, noise_sigma);
    const double dv = rng.gaussian(0.0, noise_sigma);
    p.sensor_uv = sensor_keypoints[i] + Eigen::Vector2d(du, dv);
    p.roi_uv = affine.to_roi(p.sensor_uv);
    p.confidence = 1.0;
    p.valid = valid.empty() || valid[i] != 0;
    set.points.push_back(p);
  }
  return set;
}

}  // namespace evpose
