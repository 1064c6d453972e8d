#include "evpose/frame_io.hpp"

#include <algorithm>

#include "evpose/detail/bytes.hpp"

namespace evpose {

namespace {
constexpr char kMagic[4] = {'E', 'F', 'R', '1'};
}

void save_frame(const EventFrame& frame, const std::string& path) {
  auto out = detail::open_out(path);
  out.write(kMagic, 4);
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(frame.kind));
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(frame.channels));
  detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(frame.height));
  detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(frame.width));
  for (float v : frame.data) detail::write_le<float>(out, v);
  if (!out) throw IoError("write failed: " + path);
}

EventFrame load_frame(const std::string& path) {
  auto in = detail::open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kMagic))
    throw FormatError("bad magic, expected EFR1", 0);
  const auto kind = detail::read_le<std::uint8_t>(in, "kind");
  if (kind > 2) throw FormatError("unknown representation kind " + std::to_string(kind), 4);
  EventFrame f;
  f.kind = static_cast<ReprKind>(kind);
  f.channels = detail::read_le<std::uint8_t>(in, "channels");
  f.height = detail::read_le<std::uint16_t>(in, "height");
  f.width = detail::read_le<std::uint16_t>(in, "width");
  const std::size_t n = static_cast<std::size_t>(f.channels) * f.height * f.width;
  f.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.data[i] = detail::read_le<float>(in, "frame value");
  return f;
}

}  // namespace evpose
