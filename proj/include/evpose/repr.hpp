#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "evpose/event.hpp"

namespace evpose {

enum class ReprKind : std::uint8_t { E2F = 0, Hist2D = 1, LNES = 2 };

// Dense multi-channel image built from one event window. Values are finite
// and lie in [0,1]. Channel counts are fixed per kind: E2F one channel with
// codes {0, 0.5, 1}; Hist2D and LNES two channels (positive, negative).
struct EventFrame {
  ReprKind kind = ReprKind::E2F;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // [channel][row][col]

  static EventFrame zeros(ReprKind kind, int channels, int height, int width);

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  // Channel view as an Eigen array (row-major storage).
  Eigen::Map<const Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * height * width, height, width};
  }

  friend bool operator==(const EventFrame&, const EventFrame&) = default;
};

// Inclusive-exclusive pixel box.
struct Roi {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }

  friend bool operator==(const Roi&, const Roi&) = default;
};

// Per-axis affine map between crop-output pixel coordinates and the source
// frame: sensor = roi * scale + offset. Exposing it keeps keypoint
// coordinates exactly convertible in both directions.
struct RoiAffine {
  double scale_x = 1, scale_y = 1;
  double offset_x = 0, offset_y = 0;

  Eigen::Vector2d to_sensor(const Eigen::Vector2d& roi_uv) const {
    return {roi_uv.x() * scale_x + offset_x, roi_uv.y() * scale_y + offset_y};
  }
  Eigen::Vector2d to_roi(const Eigen::Vector2d& sensor_uv) const {
    return {(sensor_uv.x() - offset_x) / scale_x, (sensor_uv.y() - offset_y) / scale_y};
  }
};

struct CropResult {
  EventFrame frame;
  RoiAffine affine;
};

// Raw per-pixel event tallies behind the Hist2D normalization; the sum over
// both planes equals the window event count exactly.
struct Hist2dCounts {
  int width = 0, height = 0;
  std::vector<std::uint32_t> positive;
  std::vector<std::uint32_t> negative;
};

// Polarity of the last event per pixel: +1 -> 1.0, -1 -> 0.0, no event -> 0.5.
EventFrame build_e2f(const Window& window, int width, int height);

// Per-pixel event counts split by polarity, each channel normalized by its
// own maximum (all zeros when a polarity has no events).
EventFrame build_hist2d(const Window& window, int width, int height);
Hist2dCounts hist2d_counts(const Window& window, int width, int height);

// Normalized-timestamp surface: value (t - t_start) / (t_end - t_start) of
// the latest event per pixel per polarity channel, 0 where no event.
EventFrame build_lnes(const Window& window, int width, int height);

// Affine map used by crop_resize for a given roi and output size. Useful on
// its own when only coordinates need converting, without building a frame.
RoiAffine roi_affine(const Roi& roi, int out_size);

// Bilinear crop-and-resize to out_size x out_size with half-pixel-centred
// sampling. Returns the resized frame together with the exact affine map.
CropResult crop_resize(const EventFrame& frame, const Roi& roi, int out_size);

// Tight bounding box of the keypoints, expanded by `margin` per side,
// squared to the larger side, clamped to the sensor.
Roi ground_truth_roi(const std::vector<Eigen::Vector2d>& keypoints_2d, double margin, int width,
                     int height);

}  // namespace evpose
