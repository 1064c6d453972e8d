#pragma once

#include <string>

#include "evpose/detail/bytes.hpp"
#include "evpose/nn.hpp"

namespace evpose {

// NNW1 weight file:
//   magic "NNW1", version u8 = 1, head u8, in_c u16, in_h u16, in_w u16,
//   layer_count u32, then per layer:
//     kind u8, in_c u16, out_c u16, stride u8,
//     three parameter arrays (w, w2, b), each count u32 + f32 values,
//     quant u8 flag; if set: weight_bits u8, act_bits u8,
//       flags u8 (bit0 calibrated, bit1 quantize_output), act_min f32, act_max f32.
// Values are stored as f32, so Network<float> round-trips bit-exactly.

template <typename S>
void save_weights(const Network<S>& net, const std::string& path) {
  std::ofstream out = detail::open_out(path);
  out.write("NNW1", 4);
  detail::write_le<std::uint8_t>(out, 1);
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(net.head));
  detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(net.in_c));
  detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(net.in_h));
  detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(net.in_w));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const Layer<S>& l : net.layers) {
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
    detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(l.in_c));
    detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(l.out_c));
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.stride));
    for (const std::vector<S>* arr : {&l.w, &l.w2, &l.b}) {
      detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(arr->size()));
      for (S v : *arr) detail::write_le<float>(out, static_cast<float>(v));
    }
    detail::write_le<std::uint8_t>(out, l.quant ? 1 : 0);
    if (l.quant) {
      detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.quant->weight_bits));
      detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.quant->act_bits));
      std::uint8_t flags = (l.quant->calibrated ? 1 : 0) | (l.quant->quantize_output ? 2 : 0);
      detail::write_le<std::uint8_t>(out, flags);
      detail::write_le<float>(out, l.quant->act_min);
      detail::write_le<float>(out, l.quant->act_max);
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

template <typename S>
Network<S> load_weights(const std::string& path) {
  std::ifstream in = detail::open_in(path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "NNW1") throw FormatError("bad magic, expected NNW1", 0);
  const std::uint8_t version = detail::read_le<std::uint8_t>(in, "version");
  if (version != 1) throw FormatError("unsupported version " + std::to_string(version), 4);

  Network<S> net;
  const std::uint8_t head = detail::read_le<std::uint8_t>(in, "head");
  if (head > 1) throw FormatError("bad head kind " + std::to_string(head), 5);
  net.head = static_cast<HeadKind>(head);
  net.in_c = detail::read_le<std::uint16_t>(in, "in_c");
  net.in_h = detail::read_le<std::uint16_t>(in, "in_h");
  net.in_w = detail::read_le<std::uint16_t>(in, "in_w");
  const std::uint32_t count = detail::read_le<std::uint32_t>(in, "layer count");

  for (std::uint32_t i = 0; i < count; ++i) {
    Layer<S> l;
    const std::uint64_t kind_off = static_cast<std::uint64_t>(in.tellg());
    const std::uint8_t kind = detail::read_le<std::uint8_t>(in, "layer kind");
    if (kind > 5) throw FormatError("bad layer kind " + std::to_string(kind), kind_off);
    l.kind = static_cast<LayerKind>(kind);
    l.in_c = detail::read_le<std::uint16_t>(in, "layer in_c");
    l.out_c = detail::read_le<std::uint16_t>(in, "layer out_c");
    l.stride = detail::read_le<std::uint8_t>(in, "layer stride");
    for (std::vector<S>* arr : {&l.w, &l.w2, &l.b}) {
      const std::uint32_t n = detail::read_le<std::uint32_t>(in, "parameter count");
      arr->reserve(n);
      for (std::uint32_t j = 0; j < n; ++j)
        arr->push_back(static_cast<S>(detail::read_le<float>(in, "parameter value")));
    }
    if (detail::read_le<std::uint8_t>(in, "quant flag")) {
      QuantConfig q;
      q.weight_bits = detail::read_le<std::uint8_t>(in, "weight bits");
      q.act_bits = detail::read_le<std::uint8_t>(in, "act bits");
      const std::uint8_t flags = detail::read_le<std::uint8_t>(in, "quant flags");
      q.calibrated = flags & 1;
      q.quantize_output = flags & 2;
      q.act_min = detail::read_le<float>(in, "act min");
      q.act_max = detail::read_le<float>(in, "act max");
      l.quant = q;
    }
    net.layers.push_back(std::move(l));
  }
  validate(net);
  return net;
}

}  // namespace evpose
