#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "evpose/event.hpp"
#include "evpose/frame_io.hpp"
#include "evpose/repr.hpp"
#include "evpose/rng.hpp"

using namespace evpose;

namespace {

struct MadeWindow {
  std::vector<Event> storage;
  Window win;
};

MadeWindow random_window(std::uint64_t seed, int w, int h, std::size_t n,
                         std::uint64_t t_start, std::uint64_t t_end) {
  Rng rng(seed);
  MadeWindow m;
  std::vector<std::uint64_t> ts;
  for (std::size_t i = 0; i < n; ++i) ts.push_back(t_start + rng.below(t_end - t_start));
  std::sort(ts.begin(), ts.end());
  for (std::uint64_t t : ts) {
    Event e;
    e.x = static_cast<std::uint16_t>(rng.below(w));
    e.y = static_cast<std::uint16_t>(rng.below(h));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
    e.t = t;
    m.storage.push_back(e);
  }
  m.win = Window{t_start, t_end, std::span<const Event>(m.storage)};
  return m;
}

// last event per pixel wins, +1 -> 1.0, -1 -> 0.0, untouched -> 0.5
EventFrame e2f_reference(const Window& win, int w, int h) {
  EventFrame f = EventFrame::zeros(ReprKind::E2F, 1, h, w);
  std::fill(f.data.begin(), f.data.end(), 0.5f);
  for (const Event& e : win.events) f.at(0, e.y, e.x) = e.p > 0 ? 1.0f : 0.0f;
  return f;
}

}  // namespace

TEST_CASE("e2f matches the brute-force reference on 50 random windows") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const MadeWindow m = random_window(seed, 64, 48, 200 + seed * 13, 1000, 51000);
    const EventFrame got = build_e2f(m.win, 64, 48);
    const EventFrame want = e2f_reference(m.win, 64, 48);
    REQUIRE(got.data.size() == want.data.size());
    CHECK(got == want);
  }
}

TEST_CASE("hist2d conserves event counts before normalization") {
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    const MadeWindow m = random_window(seed, 32, 32, 500, 0, 50'000);
    const EventFrame f = build_hist2d(m.win, 32, 32);
    REQUIRE(f.channels == 2);

    // rebuild raw counts and the per-channel maxima independently
    std::vector<int> pos(32 * 32, 0), neg(32 * 32, 0);
    for (const Event& e : m.win.events) (e.p > 0 ? pos : neg)[e.y * 32 + e.x]++;
    const int max_pos = *std::max_element(pos.begin(), pos.end());
    const int max_neg = *std::max_element(neg.begin(), neg.end());

    long long recovered = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        recovered += std::llround(static_cast<double>(f.at(0, y, x)) * max_pos);
        recovered += std::llround(static_cast<double>(f.at(1, y, x)) * max_neg);
        CHECK(f.at(0, y, x) == doctest::Approx(static_cast<double>(pos[y * 32 + x]) /
                                               std::max(max_pos, 1)));
        CHECK(f.at(1, y, x) == doctest::Approx(static_cast<double>(neg[y * 32 + x]) /
                                               std::max(max_neg, 1)));
      }
    CHECK(recovered == static_cast<long long>(m.win.events.size()));
  }
}

TEST_CASE("lnes stores the normalized latest timestamp per pixel and polarity") {
  const MadeWindow m = random_window(21, 24, 24, 300, 10'000, 60'000);
  const EventFrame f = build_lnes(m.win, 24, 24);
  REQUIRE(f.channels == 2);
  const double span = static_cast<double>(m.win.t_end - m.win.t_start);

  std::vector<double> want(2 * 24 * 24, 0.0);
  for (const Event& e : m.win.events) {
    const int c = e.p > 0 ? 0 : 1;
    want[(c * 24 + e.y) * 24 + e.x] = static_cast<double>(e.t - m.win.t_start) / span;
  }
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(f.data[i] == doctest::Approx(want[i]).epsilon(1e-6));
}

TEST_CASE("representations are deterministic and bounded") {
  const MadeWindow m = random_window(5, 40, 30, 400, 0, 50'000);
  for (ReprKind kind : {ReprKind::E2F, ReprKind::Hist2D, ReprKind::LNES}) {
    const auto build = [&](const Window& w) {
      switch (kind) {
        case ReprKind::E2F: return build_e2f(w, 40, 30);
        case ReprKind::Hist2D: return build_hist2d(w, 40, 30);
        default: return build_lnes(w, 40, 30);
      }
    };
    const EventFrame a = build(m.win);
    const EventFrame b = build(m.win);
    CHECK(a == b);
    for (float v : a.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
      CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("empty window yields the background frame") {
  Window w{0, 50'000, {}};
  const EventFrame e2f = build_e2f(w, 8, 8);
  for (float v : e2f.data) CHECK(v == 0.5f);
  const EventFrame hist = build_hist2d(w, 8, 8);
  for (float v : hist.data) CHECK(v == 0.0f);
}

TEST_CASE("crop_resize reproduces affine images exactly at sample points") {
  // bilinear interpolation is exact on f(x, y) = a + b x + c y
  EventFrame src = EventFrame::zeros(ReprKind::E2F, 1, 40, 40);
  const double a = 0.1, b = 0.012, c = 0.007;
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) src.at(0, y, x) = static_cast<float>(a + b * x + c * y);

  const Roi roi{4, 6, 36, 38};
  const int out = 16;
  const CropResult res = crop_resize(src, roi, out);
  REQUIRE(res.frame.height == out);
  REQUIRE(res.frame.width == out);
  for (int y = 0; y < out; ++y)
    for (int x = 0; x < out; ++x) {
      const Eigen::Vector2d s = res.affine.to_sensor({static_cast<double>(x), static_cast<double>(y)});
      CHECK(res.frame.at(0, y, x) ==
            doctest::Approx(a + b * s.x() + c * s.y()).epsilon(1e-5));
    }
}

TEST_CASE("identity crop leaves values untouched") {
  const MadeWindow m = random_window(11, 16, 16, 100, 0, 50'000);
  const EventFrame src = build_hist2d(m.win, 16, 16);
  const CropResult res = crop_resize(src, Roi{0, 0, 16, 16}, 16);
  for (std::size_t i = 0; i < src.data.size(); ++i)
    CHECK(res.frame.data[i] == doctest::Approx(src.data[i]).epsilon(1e-6));
  CHECK(res.affine.scale_x == doctest::Approx(1.0));
  CHECK(res.affine.offset_x == doctest::Approx(0.0));
}

TEST_CASE("roi_affine matches crop_resize and round-trips coordinates") {
  EventFrame src = EventFrame::zeros(ReprKind::E2F, 1, 60, 80);
  const Roi roi{10, 12, 50, 44};
  const CropResult res = crop_resize(src, roi, 32);
  const RoiAffine a = roi_affine(roi, 32);
  CHECK(a.scale_x == res.affine.scale_x);
  CHECK(a.scale_y == res.affine.scale_y);
  CHECK(a.offset_x == res.affine.offset_x);
  CHECK(a.offset_y == res.affine.offset_y);

  for (double u : {0.0, 3.7, 15.5, 31.0}) {
    const Eigen::Vector2d p{u, 31.0 - u};
    const Eigen::Vector2d back = a.to_roi(a.to_sensor(p));
    CHECK(back.x() == doctest::Approx(p.x()).epsilon(1e-12));
    CHECK(back.y() == doctest::Approx(p.y()).epsilon(1e-12));
  }

  // crop centers map onto source centers: the roi spans scale*out pixels
  CHECK(a.scale_x == doctest::Approx((roi.x_max - roi.x_min) / 32.0));
  const Eigen::Vector2d first = a.to_sensor({0.0, 0.0});
  CHECK(first.x() == doctest::Approx(roi.x_min + 0.5 * a.scale_x - 0.5));

  CHECK_THROWS_AS(roi_affine(Roi{5, 5, 5, 9}, 16), ArgumentError);
  CHECK_THROWS_AS(roi_affine(roi, 1), ArgumentError);
}

TEST_CASE("frame io round-trips every representation") {
  const MadeWindow m = random_window(31, 48, 36, 600, 0, 50'000);
  const std::string path =
      (std::filesystem::temp_directory_path() / "evpose_frame.efr").string();
  for (ReprKind kind : {ReprKind::E2F, ReprKind::Hist2D, ReprKind::LNES}) {
    EventFrame f;
    switch (kind) {
      case ReprKind::E2F: f = build_e2f(m.win, 48, 36); break;
      case ReprKind::Hist2D: f = build_hist2d(m.win, 48, 36); break;
      default: f = build_lnes(m.win, 48, 36); break;
    }
    save_frame(f, path);
    CHECK(load_frame(path) == f);
  }
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 3);
  CHECK_THROWS_AS(load_frame(path), FormatError);
  std::filesystem::remove(path);
}
