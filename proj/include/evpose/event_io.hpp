#pragma once

#include <string>

#include "evpose/event.hpp"

namespace evpose {

enum class StreamFormat { binary, csv };

// Binary layout (little-endian, public contract):
//   magic "EVS1" (4 bytes), version u8 = 1, sensor_width u16, sensor_height
//   u16, event_count u64, then event_count records of
//   (x u16, y u16, p i8 with -1/+1, t u64 microseconds).
// CSV layout: header line "x,y,p,t", one event per row.
//
// Loading validates: declared format, polarity in {-1,+1}, coordinates within
// the header dimensions, timestamps non-decreasing. Unsorted input is
// rejected, never silently sorted.
EventStream load_stream(const std::string& path, StreamFormat format);

void save_stream(const EventStream& stream, const std::string& path, StreamFormat format);

}  // namespace evpose
