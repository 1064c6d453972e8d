#include "evpose/event_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "evpose/detail/bytes.hpp"

namespace evpose {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'S', '1'};
constexpr std::uint8_t kVersion = 1;

void check_event(const EventStream& s, const Event& e, std::size_t index, std::uint64_t prev_t,
                 std::uint64_t record_offset) {
  if (e.p != -1 && e.p != 1)
    throw FormatError("polarity must be -1 or +1, got " + std::to_string(int(e.p)), record_offset);
  if (e.x >= s.width || e.y >= s.height)
    throw BoundsError("event (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                          ") outside sensor " + std::to_string(s.width) + "x" +
                          std::to_string(s.height),
                      index);
  if (index > 0 && e.t < prev_t)
    throw OrderingError("timestamp " + std::to_string(e.t) + " after " + std::to_string(prev_t),
                        index);
}

EventStream load_binary(const std::string& path) {
  auto in = detail::open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kMagic))
    throw FormatError("bad magic, expected EVS1", 0);
  const auto version = detail::read_le<std::uint8_t>(in, "version");
  if (version != kVersion) throw FormatError("unsupported version " + std::to_string(version), 4);

  EventStream s;
  s.width = detail::read_le<std::uint16_t>(in, "sensor_width");
  s.height = detail::read_le<std::uint16_t>(in, "sensor_height");
  const auto count = detail::read_le<std::uint64_t>(in, "event_count");
  s.events.reserve(count);
  std::uint64_t prev_t = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t record_offset = 17 + i * 13;
    Event e;
    e.x = detail::read_le<std::uint16_t>(in, "event x");
    e.y = detail::read_le<std::uint16_t>(in, "event y");
    e.p = detail::read_le<std::int8_t>(in, "event polarity");
    e.t = detail::read_le<std::uint64_t>(in, "event timestamp");
    check_event(s, e, i, prev_t, record_offset);
    prev_t = e.t;
    s.events.push_back(e);
  }
  return s;
}

void save_binary(const EventStream& s, const std::string& path) {
  auto out = detail::open_out(path);
  out.write(kMagic, 4);
  detail::write_le<std::uint8_t>(out, kVersion);
  detail::write_le<std::uint16_t>(out, s.width);
  detail::write_le<std::uint16_t>(out, s.height);
  detail::write_le<std::uint64_t>(out, s.events.size());
  for (const Event& e : s.events) {
    detail::write_le<std::uint16_t>(out, e.x);
    detail::write_le<std::uint16_t>(out, e.y);
    detail::write_le<std::int8_t>(out, e.p);
    detail::write_le<std::uint64_t>(out, e.t);
  }
  if (!out) throw IoError("write failed: " + path);
}

template <typename T>
T parse_field(const std::string& field, std::uint64_t line_offset, const char* name) {
  T value{};
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw FormatError(std::string("bad ") + name + " field '" + field + "'", line_offset);
  return value;
}

EventStream load_csv(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  std::uint64_t offset = 0;
  EventStream s;
  bool have_dims = false;

  // Optional leading comment "# sensor <width> <height>" carries the
  // dimensions; a plain x,y,p,t file infers them as max coordinate + 1.
  if (!std::getline(in, line)) throw FormatError("missing header", 0);
  std::uint64_t line_size = line.size() + 1;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.starts_with("#")) {
    std::istringstream hdr(line.substr(1));
    std::string tag;
    unsigned w = 0, h = 0;
    if (hdr >> tag >> w >> h && tag == "sensor" && w > 0 && h > 0) {
      s.width = static_cast<std::uint16_t>(w);
      s.height = static_cast<std::uint16_t>(h);
      have_dims = true;
    } else {
      throw FormatError("bad comment line, expected '# sensor <w> <h>'", 0);
    }
    offset += line_size;
    if (!std::getline(in, line)) throw FormatError("missing header", offset);
    line_size = line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  }
  if (line != "x,y,p,t") throw FormatError("header must be 'x,y,p,t'", offset);
  offset += line_size;

  std::size_t index = 0;
  std::uint64_t prev_t = 0;
  std::uint16_t max_x = 0, max_y = 0;
  while (std::getline(in, line)) {
    line_size = line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      offset += line_size;
      continue;
    }
    std::string fields[4];
    std::size_t start = 0, field_i = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        if (field_i >= 4) throw FormatError("too many fields", offset);
        fields[field_i++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    if (field_i != 4) throw FormatError("expected 4 fields", offset);
    Event e;
    e.x = parse_field<std::uint16_t>(fields[0], offset, "x");
    e.y = parse_field<std::uint16_t>(fields[1], offset, "y");
    e.p = static_cast<std::int8_t>(parse_field<int>(fields[2], offset, "p"));
    e.t = parse_field<std::uint64_t>(fields[3], offset, "t");
    if (e.p != -1 && e.p != 1)
      throw FormatError("polarity must be -1 or +1, got " + fields[2], offset);
    if (index > 0 && e.t < prev_t)
      throw OrderingError("timestamp " + std::to_string(e.t) + " after " + std::to_string(prev_t),
                          index);
    if (have_dims && (e.x >= s.width || e.y >= s.height))
      throw BoundsError("event (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                            ") outside sensor " + std::to_string(s.width) + "x" +
                            std::to_string(s.height),
                        index);
    prev_t = e.t;
    max_x = std::max(max_x, e.x);
    max_y = std::max(max_y, e.y);
    s.events.push_back(e);
    ++index;
    offset += line_size;
  }
  if (!have_dims) {
    s.width = static_cast<std::uint16_t>(max_x + 1);
    s.height = static_cast<std::uint16_t>(max_y + 1);
  }
  return s;
}

void save_csv(const EventStream& s, const std::string& path) {
  auto out = detail::open_out(path);
  out << "# sensor " << s.width << ' ' << s.height << '\n';
  out << "x,y,p,t\n";
  for (const Event& e : s.events)
    out << e.x << ',' << e.y << ',' << int(e.p) << ',' << e.t << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

void validate_stream(const EventStream& s) {
  std::uint64_t prev_t = 0;
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const Event& e = s.events[i];
    if (e.p != -1 && e.p != 1)
      throw ArgumentError("polarity must be -1 or +1 at record " + std::to_string(i));
    if (e.x >= s.width || e.y >= s.height)
      throw BoundsError("event outside sensor bounds", i);
    if (i > 0 && e.t < prev_t) throw OrderingError("timestamps not non-decreasing", i);
    prev_t = e.t;
  }
}

EventStream load_stream(const std::string& path, StreamFormat format) {
  return format == StreamFormat::binary ? load_binary(path) : load_csv(path);
}

void save_stream(const EventStream& stream, const std::string& path, StreamFormat format) {
  if (format == StreamFormat::binary)
    save_binary(stream, path);
  else
    save_csv(stream, path);
}

}  // namespace evpose
