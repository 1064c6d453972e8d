#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "evpose/error.hpp"
#include "evpose/repr.hpp"
#include "evpose/tensor.hpp"

namespace evpose {

// One labeled 2D keypoint, carried in both frames so PnP (sensor pixels) and
// PCK (ROI pixels) never re-derive coordinates.
struct Keypoint {
  int index = 0;
  Eigen::Vector2d sensor_uv = Eigen::Vector2d::Zero();
  Eigen::Vector2d roi_uv = Eigen::Vector2d::Zero();
  double confidence = 1.0;
  bool valid = true;
};

struct KeypointSet {
  std::vector<Keypoint> points;
};

// Normalizes ROI-frame keypoints to [0,1] as (u1, v1, ..., uK, vK). Values
// outside [0,1] are allowed (keypoint outside the ROI).
std::vector<double> encode_coordinate_target(const std::vector<Eigen::Vector2d>& roi_keypoints,
                                             double roi_size);

struct HeatmapTarget {
  Tensor<float> maps;                // [1][K][size][size]
  std::vector<std::uint8_t> valid;   // keypoint landed inside the grid
};

// Unnormalized Gaussian per channel, centered at the keypoint scaled into
// heatmap coordinates, rescaled so the nearest grid cell is exactly 1.
HeatmapTarget encode_heatmap_target(const std::vector<Eigen::Vector2d>& roi_keypoints,
                                    double roi_size, int heatmap_size, double sigma);

template <typename S>
struct LossResult {
  double value = 0.0;
  Tensor<S> grad;
};

// Mean-squared error over all elements; grad = 2 (pred - target) / count.
template <typename S>
LossResult<S> mse_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  if (!pred.same_shape(target)) throw ShapeError("prediction/target shapes differ", "loss");
  LossResult<S> r;
  r.grad = Tensor<S>(pred.n, pred.c, pred.h, pred.w);
  const double count = static_cast<double>(pred.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    acc += d * d;
    r.grad.data[i] = static_cast<S>(2.0 * d / count);
  }
  r.value = acc / count;
  return r;
}

// De-normalizes a 2K coordinate-head output to ROI pixels and maps to sensor
// pixels. The coordinate head has no confidence signal; all points get 1.0.
KeypointSet decode_coordinates(const std::vector<double>& output, double roi_size,
                               const RoiAffine& affine);

// Argmax per channel (ties to the lowest row-major index), refined by the
// 3x3 weighted centroid; confidence is the peak value clamped to [0,1].
// An all-zero (or non-positive) channel yields an invalid point.
KeypointSet decode_heatmaps(const Tensor<float>& maps, double roi_size, const RoiAffine& affine);

// Highest-confidence k valid keypoints (ties to the lower index), returned
// in index order with identities intact. Fewer than 4 valid points is an
// InsufficientPointsError; fewer than k (but >= 4) returns all valid points.
KeypointSet select_top_k(const KeypointSet& kps, int k);

// Ground-truth keypoints plus seeded isotropic Gaussian pixel noise in the
// sensor frame; stands in for a trained network in pipeline tests.
KeypointSet oracle_predict(const std::vector<Eigen::Vector2d>& sensor_keypoints,
                           const std::vector<std::uint8_t>& valid, double noise_sigma,
                           std::uint64_t seed, const RoiAffine& affine);

}  // namespace evpose
