#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evpose/error.hpp"

namespace evpose {

// One asynchronous brightness-change measurement: pixel, polarity, timestamp.
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;    // -1 or +1
  std::uint64_t t = 0;  // microseconds

  friend bool operator==(const Event&, const Event&) = default;
};

// A time-ordered event sequence with the sensor geometry it was captured on.
// Events are sorted by t non-decreasing; ties keep stored order.
struct EventStream {
  std::uint16_t width = 0;
  std::uint16_t height = 0;
  std::vector<Event> events;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

// Throws if any event violates the stream invariants (bounds, polarity, order).
void validate_stream(const EventStream& stream);

// A half-open slice [t_start, t_end) of a parent stream. The span aliases the
// parent's storage; the stream must outlive the window.
struct Window {
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;
  std::span<const Event> events;
};

// Tiles [t0, t0 + k*delta_t) with the largest k whose last window ends at or
// before the final event timestamp + 1. Incomplete trailing windows are
// dropped, so the window count is independent of trailing silence.
std::vector<Window> windows(const EventStream& stream, std::uint64_t delta_t_us,
                            std::uint64_t t0_us);

// Same, with t0 defaulted to the first event's timestamp rounded down to a
// delta_t multiple.
std::vector<Window> windows(const EventStream& stream, std::uint64_t delta_t_us);

}  // namespace evpose
