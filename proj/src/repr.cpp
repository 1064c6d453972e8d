#include "evpose/repr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace evpose {

std::vector<Window> windows(const EventStream& stream, std::uint64_t delta_t_us,
                            std::uint64_t t0_us) {
  if (delta_t_us == 0) throw ArgumentError("delta_t must be positive");
  if (stream.events.empty()) return {};
  if (t0_us > stream.events.front().t)
    throw ArgumentError("t0 must not exceed the first event timestamp");

  const std::uint64_t t_last = stream.events.back().t;
  const std::uint64_t k = (t_last + 1 - t0_us) / delta_t_us;
  std::vector<Window> result;
  result.reserve(k);
  const Event* base = stream.events.data();
  std::size_t i = 0;
  const std::size_t n = stream.events.size();
  for (std::uint64_t w = 0; w < k; ++w) {
    const std::uint64_t ws = t0_us + w * delta_t_us;
    const std::uint64_t we = ws + delta_t_us;
    const std::size_t first = i;
    while (i < n && stream.events[i].t < we) ++i;
    result.push_back(Window{ws, we, std::span<const Event>(base + first, i - first)});
  }
  return result;
}

std::vector<Window> windows(const EventStream& stream, std::uint64_t delta_t_us) {
  if (delta_t_us == 0) throw ArgumentError("delta_t must be positive");
  if (stream.events.empty()) return {};
  const std::uint64_t t0 = stream.events.front().t / delta_t_us * delta_t_us;
  return windows(stream, delta_t_us, t0);
}

EventFrame EventFrame::zeros(ReprKind kind, int channels, int height, int width) {
  EventFrame f;
  f.kind = kind;
  f.channels = channels;
  f.height = height;
  f.width = width;
  f.data.assign(static_cast<std::size_t>(channels) * height * width, 0.0f);
  return f;
}

EventFrame build_e2f(const Window& window, int width, int height) {
  EventFrame f = EventFrame::zeros(ReprKind::E2F, 1, height, width);
  std::fill(f.data.begin(), f.data.end(), 0.5f);
  // Events are time-sorted, so a plain overwrite leaves the last event's
  // polarity per pixel; ties resolve to stored order.
  for (const Event& e : window.events) f.at(0, e.y, e.x) = e.p > 0 ? 1.0f : 0.0f;
  return f;
}

Hist2dCounts hist2d_counts(const Window& window, int width, int height) {
  Hist2dCounts c;
  c.width = width;
  c.height = height;
  c.positive.assign(static_cast<std::size_t>(width) * height, 0);
  c.negative.assign(static_cast<std::size_t>(width) * height, 0);
  for (const Event& e : window.events) {
    auto& plane = e.p > 0 ? c.positive : c.negative;
    ++plane[static_cast<std::size_t>(e.y) * width + e.x];
  }
  return c;
}

EventFrame build_hist2d(const Window& window, int width, int height) {
  const Hist2dCounts c = hist2d_counts(window, width, height);
  EventFrame f = EventFrame::zeros(ReprKind::Hist2D, 2, height, width);
  const std::uint32_t max_pos = c.positive.empty()
                                    ? 0
                                    : *std::max_element(c.positive.begin(), c.positive.end());
  const std::uint32_t max_neg = c.negative.empty()
                                    ? 0
                                    : *std::max_element(c.negative.begin(), c.negative.end());
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (std::size_t i = 0; i < plane; ++i) {
    if (max_pos > 0) f.data[i] = static_cast<float>(c.positive[i]) / static_cast<float>(max_pos);
    if (max_neg > 0)
      f.data[plane + i] = static_cast<float>(c.negative[i]) / static_cast<float>(max_neg);
  }
  return f;
}

EventFrame build_lnes(const Window& window, int width, int height) {
  if (window.t_end <= window.t_start) throw ArgumentError("window duration must be positive");
  EventFrame f = EventFrame::zeros(ReprKind::LNES, 2, height, width);
  const double span = static_cast<double>(window.t_end - window.t_start);
  for (const Event& e : window.events) {
    const float v = static_cast<float>(static_cast<double>(e.t - window.t_start) / span);
    const int c = e.p > 0 ? 0 : 1;
    f.at(c, e.y, e.x) = v;  // later events overwrite: v is monotone in t
  }
  return f;
}

RoiAffine roi_affine(const Roi& roi, int out_size) {
  if (out_size < 2) throw ArgumentError("out_size must be at least 2");
  if (roi.x_min >= roi.x_max || roi.y_min >= roi.y_max) throw ArgumentError("roi degenerate");
  RoiAffine a;
  a.scale_x = static_cast<double>(roi.x_max - roi.x_min) / out_size;
  a.scale_y = static_cast<double>(roi.y_max - roi.y_min) / out_size;
  a.offset_x = roi.x_min + 0.5 * a.scale_x - 0.5;
  a.offset_y = roi.y_min + 0.5 * a.scale_y - 0.5;
  return a;
}

CropResult crop_resize(const EventFrame& frame, const Roi& roi, int out_size) {
  if (out_size < 2) throw ArgumentError("out_size must be at least 2");
  if (roi.x_min < 0 || roi.y_min < 0 || roi.x_max > frame.width || roi.y_max > frame.height ||
      roi.x_min >= roi.x_max || roi.y_min >= roi.y_max)
    throw ArgumentError("roi degenerate or outside frame bounds");

  CropResult res;
  res.affine = roi_affine(roi, out_size);

  EventFrame out = EventFrame::zeros(frame.kind, frame.channels, out_size, out_size);
  for (int j = 0; j < out_size; ++j) {
    const double sy = res.affine.offset_y + j * res.affine.scale_y;
    const double fy = std::floor(sy);
    const int y0 = static_cast<int>(fy);
    const double wy = sy - fy;
    const int y0c = std::clamp(y0, 0, frame.height - 1);
    const int y1c = std::clamp(y0 + 1, 0, frame.height - 1);
    for (int i = 0; i < out_size; ++i) {
      const double sx = res.affine.offset_x + i * res.affine.scale_x;
      const double fx = std::floor(sx);
      const int x0 = static_cast<int>(fx);
      const double wx = sx - fx;
      const int x0c = std::clamp(x0, 0, frame.width - 1);
      const int x1c = std::clamp(x0 + 1, 0, frame.width - 1);
      for (int c = 0; c < frame.channels; ++c) {
        const double v00 = frame.at(c, y0c, x0c);
        const double v01 = frame.at(c, y0c, x1c);
        const double v10 = frame.at(c, y1c, x0c);
        const double v11 = frame.at(c, y1c, x1c);
        const double top = v00 + wx * (v01 - v00);
        const double bot = v10 + wx * (v11 - v10);
        out.at(c, j, i) = static_cast<float>(top + wy * (bot - top));
      }
    }
  }
  res.frame = std::move(out);
  return res;
}

Roi ground_truth_roi(const std::vector<Eigen::Vector2d>& keypoints_2d, double margin, int width,
                     int height) {
  if (keypoints_2d.empty()) throw ArgumentError("need at least one keypoint");
  bool any_inside = false;
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& k : keypoints_2d) {
    if (!std::isfinite(k.x()) || !std::isfinite(k.y())) continue;
    any_inside |= (k.x() >= 0 && k.x() < width && k.y() >= 0 && k.y() < height);
    x_lo = std::min(x_lo, k.x());
    x_hi = std::max(x_hi, k.x());
    y_lo = std::min(y_lo, k.y());
    y_hi = std::max(y_hi, k.y());
  }
  if (!any_inside) throw NoTargetError("all keypoints outside the frame");

  double w = x_hi - x_lo, h = y_hi - y_lo;
  x_lo -= margin * w;
  x_hi += margin * w;
  y_lo -= margin * h;
  y_hi += margin * h;
  w = x_hi - x_lo;
  h = y_hi - y_lo;
  // Square to the larger side about the box centre.
  const double side = std::max(w, h);
  const double cx = 0.5 * (x_lo + x_hi), cy = 0.5 * (y_lo + y_hi);
  x_lo = cx - 0.5 * side;
  x_hi = cx + 0.5 * side;
  y_lo = cy - 0.5 * side;
  y_hi = cy + 0.5 * side;

  Roi roi;
  roi.x_min = std::clamp(static_cast<int>(std::floor(x_lo)), 0, width - 1);
  roi.y_min = std::clamp(static_cast<int>(std::floor(y_lo)), 0, height - 1);
  roi.x_max = std::clamp(static_cast<int>(std::ceil(x_hi)), roi.x_min + 1, width);
  roi.y_max = std::clamp(static_cast<int>(std::ceil(y_hi)), roi.y_min + 1, height);
  return roi;
}

}  // namespace evpose
