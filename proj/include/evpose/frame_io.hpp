#pragma once

#include <string>

#include "evpose/repr.hpp"

namespace evpose {

// EFR1 frame cache format (little-endian, public contract):
//   magic "EFR1", kind u8, channels u8, height u16, width u16,
//   then channels*height*width f32 values, row-major per channel.
void save_frame(const EventFrame& frame, const std::string& path);
EventFrame load_frame(const std::string& path);

}  // namespace evpose
