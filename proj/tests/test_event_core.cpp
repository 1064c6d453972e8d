#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "evpose/event.hpp"
#include "evpose/event_io.hpp"
#include "evpose/rng.hpp"

using namespace evpose;

namespace {

EventStream random_stream(std::uint64_t seed, std::size_t n, std::uint64_t t_lo,
                          std::uint64_t t_hi) {
  Rng rng(seed);
  EventStream s;
  s.width = 240;
  s.height = 180;
  std::vector<std::uint64_t> ts;
  ts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ts.push_back(t_lo + rng.below(t_hi - t_lo));
  std::sort(ts.begin(), ts.end());
  for (std::uint64_t t : ts) {
    Event e;
    e.x = static_cast<std::uint16_t>(rng.below(s.width));
    e.y = static_cast<std::uint16_t>(rng.below(s.height));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
    e.t = t;
    s.events.push_back(e);
  }
  return s;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("windows match a brute-force bucket partition") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const EventStream s = random_stream(seed, 500 + seed * 100, 10'000, 1'000'000);
    const std::uint64_t dt = 50'000;
    const std::uint64_t t0 = s.events.front().t / dt * dt;
    const std::vector<Window> wins = windows(s, dt);

    // bucket every event independently, then count complete buckets
    const std::uint64_t t_last = s.events.back().t;
    std::size_t k = 0;
    while (t0 + (k + 1) * dt <= t_last + 1) ++k;
    REQUIRE(wins.size() == k);
    std::vector<std::vector<Event>> buckets(k);
    for (const Event& e : s.events) {
      const std::uint64_t b = (e.t - t0) / dt;
      if (b < k) buckets[b].push_back(e);
    }
    for (std::size_t w = 0; w < k; ++w) {
      CHECK(wins[w].t_start == t0 + w * dt);
      CHECK(wins[w].t_end == t0 + (w + 1) * dt);
      REQUIRE(wins[w].events.size() == buckets[w].size());
      for (std::size_t i = 0; i < buckets[w].size(); ++i) CHECK(wins[w].events[i] == buckets[w][i]);
    }
  }
}

TEST_CASE("window boundaries are half-open") {
  EventStream s;
  s.width = s.height = 16;
  for (std::uint64_t t : {0ull, 49'999ull, 50'000ull, 99'999ull}) s.events.push_back({1, 1, 1, t});
  const std::vector<Window> wins = windows(s, 50'000, 0);
  REQUIRE(wins.size() == 2);
  CHECK(wins[0].events.size() == 2);  // 0 and 49999
  CHECK(wins[1].events.size() == 2);  // 50000 and 99999
}

TEST_CASE("trailing partial window is dropped") {
  EventStream s;
  s.width = s.height = 16;
  s.events.push_back({0, 0, 1, 0});
  s.events.push_back({0, 0, 1, 125'000});  // 2.5 windows of data
  CHECK(windows(s, 50'000, 0).size() == 2);
  s.events.push_back({0, 0, 1, 149'999});  // exactly fills the third
  CHECK(windows(s, 50'000, 0).size() == 3);
}

TEST_CASE("default t0 floors the first timestamp to a delta_t multiple") {
  EventStream s;
  s.width = s.height = 16;
  s.events.push_back({0, 0, 1, 123'456});
  s.events.push_back({0, 0, 1, 180'000});
  const std::vector<Window> wins = windows(s, 50'000);
  REQUIRE(!wins.empty());
  CHECK(wins.front().t_start == 100'000);
}

TEST_CASE("windows edge cases") {
  EventStream empty;
  empty.width = empty.height = 8;
  CHECK(windows(empty, 50'000).empty());

  EventStream s;
  s.width = s.height = 8;
  s.events.push_back({0, 0, 1, 100});
  CHECK_THROWS_AS(windows(s, 0), ArgumentError);
  CHECK_THROWS_AS(windows(s, 50'000, 101), ArgumentError);
  CHECK(windows(s, 50'000, 100).size() == 0);  // lone event cannot fill a window
}

TEST_CASE("validate_stream rejects invariant violations") {
  EventStream s;
  s.width = 32;
  s.height = 24;
  s.events.push_back({5, 5, 1, 10});
  s.events.push_back({6, 6, -1, 10});  // tie is fine
  CHECK_NOTHROW(validate_stream(s));

  EventStream bad = s;
  bad.events.push_back({32, 0, 1, 11});  // x == width is out of bounds
  CHECK_THROWS_AS(validate_stream(bad), BoundsError);

  bad = s;
  bad.events.push_back({0, 0, 0, 11});
  CHECK_THROWS_AS(validate_stream(bad), ArgumentError);

  bad = s;
  bad.events.push_back({0, 0, 1, 9});  // goes back in time
  CHECK_THROWS_AS(validate_stream(bad), OrderingError);
}

TEST_CASE("binary stream io round-trips exactly") {
  const EventStream s = random_stream(42, 1000, 0, 500'000);
  const std::string path = temp_path("evpose_stream.evs");
  save_stream(s, path, StreamFormat::binary);
  const EventStream back = load_stream(path, StreamFormat::binary);
  CHECK(back == s);
  std::filesystem::remove(path);
}

TEST_CASE("csv stream io round-trips exactly") {
  const EventStream s = random_stream(43, 200, 0, 100'000);
  const std::string path = temp_path("evpose_stream.csv");
  save_stream(s, path, StreamFormat::csv);
  const EventStream back = load_stream(path, StreamFormat::csv);
  CHECK(back == s);
  std::filesystem::remove(path);
}

TEST_CASE("truncated binary stream reports the failing offset") {
  const EventStream s = random_stream(44, 50, 0, 10'000);
  const std::string path = temp_path("evpose_trunc.evs");
  save_stream(s, path, StreamFormat::binary);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 5);
  CHECK_THROWS_AS(load_stream(path, StreamFormat::binary), FormatError);
  try {
    load_stream(path, StreamFormat::binary);
  } catch (const FormatError& e) {
    CHECK(e.offset > 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupt magic is rejected") {
  const std::string path = temp_path("evpose_magic.evs");
  std::ofstream(path, std::ios::binary) << "NOPE   data";
  CHECK_THROWS_AS(load_stream(path, StreamFormat::binary), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("missing file raises IoError") {
  CHECK_THROWS_AS(load_stream(temp_path("evpose_does_not_exist.evs"), StreamFormat::binary),
                  IoError);
}
