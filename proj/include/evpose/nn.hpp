#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evpose/error.hpp"
#include "evpose/rng.hpp"
#include "evpose/tensor.hpp"

namespace evpose {

enum class LayerKind : std::uint8_t {
  Conv3x3 = 0,   // 3x3 conv, stride 1 or 2, zero same-padding
  SepConv = 1,   // depthwise 3x3 (stride 1 or 2) + pointwise 1x1 + bias
  TConv2x2 = 2,  // transpose conv, 2x2 kernel, stride 2 (exact 2x upsample)
  Relu = 3,
  Dense = 4,     // expects [n][features][1][1]
  Flatten = 5,
};

enum class HeadKind : std::uint8_t { Coordinate = 0, Heatmap = 1 };
enum class Mode { Float, FakeQuant };
enum class QuantScheme { Symmetric, Asymmetric };

struct QuantConfig {
  int weight_bits = 8;  // symmetric per-tensor, scale from max|w|
  int act_bits = 8;     // asymmetric per-tensor, calibrated (min, max)
  bool quantize_output = true;
  bool calibrated = false;
  float act_min = 0.0f;
  float act_max = 0.0f;

  bool operator==(const QuantConfig&) const = default;
};

inline void check_bits(int bits) {
  if (bits != 4 && bits != 8) throw ArgumentError("quantization bits must be 4 or 8");
}

// Uniform quantizer q(x) = clamp(round(x/scale + zero), 0, levels) mapped back
// to (q - zero)*scale. `lo`/`hi` bound the pass-through region for the
// straight-through estimator.
struct QdqParams {
  double scale = 0.0;
  double zero = 0.0;
  double levels = 0.0;  // 2^bits - 1
  double lo = 0.0;
  double hi = 0.0;
  bool identity = false;
  bool degenerate = false;
};

inline QdqParams qdq_symmetric_params(int bits, double amax) {
  check_bits(bits);
  QdqParams p;
  p.levels = static_cast<double>((1 << bits) - 1);
  p.zero = static_cast<double>(1 << (bits - 1));
  if (!(amax > 0.0)) {
    p.identity = true;  // all-zero tensor, nothing to quantize
    return p;
  }
  p.scale = amax / (p.zero - 1.0);
  p.lo = (0.0 - p.zero) * p.scale;
  p.hi = (p.levels - p.zero) * p.scale;
  return p;
}

inline QdqParams qdq_asymmetric_params(int bits, double mn, double mx) {
  check_bits(bits);
  QdqParams p;
  p.levels = static_cast<double>((1 << bits) - 1);
  if (!(mn < mx)) {
    p.degenerate = true;
    return p;
  }
  p.scale = (mx - mn) / p.levels;
  p.zero = -mn / p.scale;
  p.lo = mn;
  p.hi = mx;
  return p;
}

template <typename S>
inline S qdq_value(S x, const QdqParams& p) {
  double q = std::round(static_cast<double>(x) / p.scale + p.zero);
  if (q < 0.0) q = 0.0;
  if (q > p.levels) q = p.levels;
  return static_cast<S>((q - p.zero) * p.scale);
}

template <typename S>
inline void qdq_apply(S* v, std::size_t count, const QdqParams& p) {
  if (p.identity) return;
  if (p.degenerate) {
    std::fill(v, v + count, S(0));
    return;
  }
  for (std::size_t i = 0; i < count; ++i) v[i] = qdq_value(v[i], p);
}

// Straight-through estimator: gradient passes where the pre-quantization
// value fell inside the clamp range, is zeroed elsewhere.
template <typename S>
inline void qdq_ste_mask(const S* pre, S* grad, std::size_t count, const QdqParams& p) {
  if (p.identity) return;
  if (p.degenerate) {
    std::fill(grad, grad + count, S(0));
    return;
  }
  for (std::size_t i = 0; i < count; ++i) {
    double x = static_cast<double>(pre[i]);
    if (x < p.lo || x > p.hi) grad[i] = S(0);
  }
}

template <typename S>
inline double max_abs(const std::vector<S>& v) {
  double m = 0.0;
  for (S x : v) m = std::max(m, std::abs(static_cast<double>(x)));
  return m;
}

// Symmetric derives its scale from max|x|; asymmetric uses the supplied
// calibration and reports degenerate ranges via `warning`.
template <typename S>
Tensor<S> quantize_dequantize(const Tensor<S>& x, int bits, QuantScheme scheme,
                              double cal_min = 0.0, double cal_max = 0.0,
                              bool* warning = nullptr) {
  Tensor<S> out = x;
  QdqParams p = scheme == QuantScheme::Symmetric
                    ? qdq_symmetric_params(bits, max_abs(x.data))
                    : qdq_asymmetric_params(bits, cal_min, cal_max);
  if (warning) *warning = p.degenerate;
  qdq_apply(out.data.data(), out.size(), p);
  return out;
}

template <typename S>
struct Layer {
  LayerKind kind = LayerKind::Relu;
  int in_c = 0;   // dense: input features
  int out_c = 0;  // dense: output features
  int stride = 1;
  std::vector<S> w;   // conv3x3 [out_c][in_c][3][3]; sepconv depthwise [in_c][3][3];
                      // tconv [in_c][out_c][2][2]; dense [out_c][in_c]
  std::vector<S> w2;  // sepconv pointwise [out_c][in_c]
  std::vector<S> b;   // [out_c]
  std::optional<QuantConfig> quant;
};

template <typename S>
struct Network {
  HeadKind head = HeadKind::Coordinate;
  int in_c = 0, in_h = 0, in_w = 0;
  std::vector<Layer<S>> layers;
};

template <typename S>
Layer<S> make_conv3x3(int in_c, int out_c, int stride) {
  Layer<S> l;
  l.kind = LayerKind::Conv3x3;
  l.in_c = in_c;
  l.out_c = out_c;
  l.stride = stride;
  l.w.assign(static_cast<std::size_t>(out_c) * in_c * 9, S(0));
  l.b.assign(out_c, S(0));
  return l;
}

template <typename S>
Layer<S> make_sepconv(int in_c, int out_c, int stride) {
  Layer<S> l;
  l.kind = LayerKind::SepConv;
  l.in_c = in_c;
  l.out_c = out_c;
  l.stride = stride;
  l.w.assign(static_cast<std::size_t>(in_c) * 9, S(0));
  l.w2.assign(static_cast<std::size_t>(out_c) * in_c, S(0));
  l.b.assign(out_c, S(0));
  return l;
}

template <typename S>
Layer<S> make_tconv2x2(int in_c, int out_c) {
  Layer<S> l;
  l.kind = LayerKind::TConv2x2;
  l.in_c = in_c;
  l.out_c = out_c;
  l.stride = 2;
  l.w.assign(static_cast<std::size_t>(in_c) * out_c * 4, S(0));
  l.b.assign(out_c, S(0));
  return l;
}

template <typename S>
Layer<S> make_relu() {
  Layer<S> l;
  l.kind = LayerKind::Relu;
  return l;
}

template <typename S>
Layer<S> make_dense(int in_f, int out_f) {
  Layer<S> l;
  l.kind = LayerKind::Dense;
  l.in_c = in_f;
  l.out_c = out_f;
  l.w.assign(static_cast<std::size_t>(out_f) * in_f, S(0));
  l.b.assign(out_f, S(0));
  return l;
}

template <typename S>
Layer<S> make_flatten() {
  Layer<S> l;
  l.kind = LayerKind::Flatten;
  return l;
}

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::SepConv: return "sepconv";
    case LayerKind::TConv2x2: return "tconv2x2";
    case LayerKind::Relu: return "relu";
    case LayerKind::Dense: return "dense";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

inline std::string layer_label(std::size_t index, LayerKind kind) {
  return "#" + std::to_string(index) + " " + layer_kind_name(kind);
}

struct Dims {
  int c = 0, h = 0, w = 0;
  bool operator==(const Dims&) const = default;
};

namespace detail {

inline int conv_out(int extent, int stride) { return (extent - 1) / stride + 1; }

template <typename S>
Dims layer_output_dims(const Layer<S>& l, Dims in, const std::string& label) {
  auto need = [&](bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg, label);
  };
  switch (l.kind) {
    case LayerKind::Conv3x3:
      need(l.stride == 1 || l.stride == 2, "conv stride must be 1 or 2");
      need(in.c == l.in_c, "channel mismatch");
      need(l.w.size() == static_cast<std::size_t>(l.out_c) * l.in_c * 9 &&
               l.b.size() == static_cast<std::size_t>(l.out_c) && l.w2.empty(),
           "parameter shape mismatch");
      return {l.out_c, conv_out(in.h, l.stride), conv_out(in.w, l.stride)};
    case LayerKind::SepConv:
      need(l.stride == 1 || l.stride == 2, "conv stride must be 1 or 2");
      need(in.c == l.in_c, "channel mismatch");
      need(l.w.size() == static_cast<std::size_t>(l.in_c) * 9 &&
               l.w2.size() == static_cast<std::size_t>(l.out_c) * l.in_c &&
               l.b.size() == static_cast<std::size_t>(l.out_c),
           "parameter shape mismatch");
      return {l.out_c, conv_out(in.h, l.stride), conv_out(in.w, l.stride)};
    case LayerKind::TConv2x2:
      need(l.stride == 2, "tconv stride must be 2");
      need(in.c == l.in_c, "channel mismatch");
      need(l.w.size() == static_cast<std::size_t>(l.in_c) * l.out_c * 4 &&
               l.b.size() == static_cast<std::size_t>(l.out_c) && l.w2.empty(),
           "parameter shape mismatch");
      return {l.out_c, in.h * 2, in.w * 2};
    case LayerKind::Relu:
      need(l.w.empty() && l.w2.empty() && l.b.empty(), "relu takes no parameters");
      return in;
    case LayerKind::Dense:
      need(in.h == 1 && in.w == 1, "dense input must be flattened");
      need(in.c == l.in_c, "feature count mismatch");
      need(l.w.size() == static_cast<std::size_t>(l.out_c) * l.in_c &&
               l.b.size() == static_cast<std::size_t>(l.out_c) && l.w2.empty(),
           "parameter shape mismatch");
      return {l.out_c, 1, 1};
    case LayerKind::Flatten:
      need(l.w.empty() && l.w2.empty() && l.b.empty(), "flatten takes no parameters");
      return {in.c * in.h * in.w, 1, 1};
  }
  throw ShapeError("unknown layer kind", label);
}

}  // namespace detail

// Output dims of every layer, in order. Throws ShapeError on any mismatch.
template <typename S>
std::vector<Dims> infer_shapes(const Network<S>& net) {
  if (net.in_c <= 0 || net.in_h <= 0 || net.in_w <= 0)
    throw ShapeError("network input shape unset", "input");
  std::vector<Dims> out;
  Dims cur{net.in_c, net.in_h, net.in_w};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    cur = detail::layer_output_dims(net.layers[i], cur, layer_label(i, net.layers[i].kind));
    out.push_back(cur);
  }
  return out;
}

template <typename S>
Dims output_dims(const Network<S>& net) {
  auto shapes = infer_shapes(net);
  if (shapes.empty()) throw ShapeError("network has no layers", "input");
  return shapes.back();
}

template <typename S>
void validate(const Network<S>& net) {
  auto shapes = infer_shapes(net);
  if (shapes.empty()) throw ShapeError("network has no layers", "input");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].quant) {
      check_bits(net.layers[i].quant->weight_bits);
      check_bits(net.layers[i].quant->act_bits);
    }
  }
}

template <typename S>
void init_weights(Network<S>& net, std::uint64_t seed) {
  Rng rng(seed);
  auto fill = [&](std::vector<S>& v, int fan_in) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (S& x : v) x = static_cast<S>(rng.uniform(-limit, limit));
  };
  for (Layer<S>& l : net.layers) {
    switch (l.kind) {
      case LayerKind::Conv3x3: fill(l.w, l.in_c * 9); break;
      case LayerKind::SepConv:
        fill(l.w, 9);
        fill(l.w2, l.in_c);
        break;
      case LayerKind::TConv2x2: fill(l.w, l.in_c * 4); break;
      case LayerKind::Dense: fill(l.w, l.in_c); break;
      default: break;
    }
    std::fill(l.b.begin(), l.b.end(), S(0));
  }
}

template <typename S>
struct ForwardCache {
  bool valid = false;
  Mode mode = Mode::Float;
  Tensor<S> input;
  std::vector<Tensor<S>> outputs;   // tensor each layer emitted downstream
  std::vector<Tensor<S>> pre_qdq;   // pre-quantization output (empty if none)
  std::vector<std::vector<S>> qw;   // quantized weights actually used
  std::vector<std::vector<S>> qw2;
  int degenerate_qdq = 0;
};

namespace detail {

template <typename S>
using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapR = Eigen::Map<MatR<S>>;
template <typename S>
using CMapR = Eigen::Map<const MatR<S>>;
template <typename S>
using CMapV = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

// 3x3 patches of one sample as a [in_c*9, oh*ow] matrix (zero padded).
template <typename S>
void im2col3(const S* x, int c, int h, int w, int stride, int oh, int ow, MatR<S>& cols) {
  cols.resize(c * 9, oh * ow);
  for (int ic = 0; ic < c; ++ic) {
    const S* src = x + static_cast<std::size_t>(ic) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        S* dst = cols.data() + static_cast<std::size_t>((ic * 3 + ky) * 3 + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ky - 1;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kx - 1;
            dst[oy * ow + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w) ? src[iy * w + ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im3(const MatR<S>& cols, int c, int h, int w, int stride, int oh, int ow, S* dx) {
  for (int ic = 0; ic < c; ++ic) {
    S* dst = dx + static_cast<std::size_t>(ic) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const S* src = cols.data() + static_cast<std::size_t>((ic * 3 + ky) * 3 + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

template <typename S>
void depthwise3_fwd(const S* x, int c, int h, int w, int stride, int oh, int ow,
                    const S* kernels, S* out) {
  for (int ic = 0; ic < c; ++ic) {
    const S* src = x + static_cast<std::size_t>(ic) * h * w;
    const S* k = kernels + static_cast<std::size_t>(ic) * 9;
    S* dst = out + static_cast<std::size_t>(ic) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ky = 0; ky < 3; ++ky) {
          int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) acc += static_cast<double>(k[ky * 3 + kx]) * src[iy * w + ix];
          }
        }
        dst[oy * ow + ox] = static_cast<S>(acc);
      }
    }
  }
}

}  // namespace detail

// Runs the network. In FakeQuant mode parameterized layers use
// quantize_dequantized weights (symmetric, per tensor) and layers flagged
// quantize_output pass their output through the calibrated asymmetric
// quantizer. Pass `cache` to enable backward().
template <typename S>
Tensor<S> forward(const Network<S>& net, const Tensor<S>& x, Mode mode,
                  ForwardCache<S>* cache = nullptr) {
  using detail::CMapR;
  using detail::CMapV;
  using detail::MapR;
  using detail::MatR;

  auto shapes = infer_shapes(net);
  if (shapes.empty()) throw ShapeError("network has no layers", "input");
  if (x.c != net.in_c || x.h != net.in_h || x.w != net.in_w)
    throw ShapeError("input tensor does not match network input shape", "input");

  if (cache) {
    *cache = ForwardCache<S>{};
    cache->mode = mode;
    cache->input = x;
  }

  Tensor<S> owned;
  const Tensor<S>* curp = &x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Tensor<S>& cur = *curp;
    const Layer<S>& l = net.layers[i];
    Dims od = shapes[i];
    const bool fq = mode == Mode::FakeQuant && l.quant.has_value();

    std::vector<S> qw, qw2;
    const S* wp = l.w.data();
    const S* w2p = l.w2.data();
    if (fq && !l.w.empty()) {
      qw = l.w;
      qdq_apply(qw.data(), qw.size(), qdq_symmetric_params(l.quant->weight_bits, max_abs(qw)));
      wp = qw.data();
    }
    if (fq && !l.w2.empty()) {
      qw2 = l.w2;
      qdq_apply(qw2.data(), qw2.size(), qdq_symmetric_params(l.quant->weight_bits, max_abs(qw2)));
      w2p = qw2.data();
    }

    Tensor<S> out(cur.n, od.c, od.h, od.w);
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        MatR<S> cols;
        CMapR<S> W(wp, l.out_c, l.in_c * 9);
        CMapV<S> bias(l.b.data(), l.out_c);
        for (int n = 0; n < cur.n; ++n) {
          detail::im2col3(cur.sample(n), cur.c, cur.h, cur.w, l.stride, od.h, od.w, cols);
          MapR<S> O(out.sample(n), l.out_c, od.h * od.w);
          O.noalias() = W * cols;
          O.colwise() += bias;
        }
        break;
      }
      case LayerKind::SepConv: {
        Tensor<S> mid(cur.n, l.in_c, od.h, od.w);
        CMapR<S> PW(w2p, l.out_c, l.in_c);
        CMapV<S> bias(l.b.data(), l.out_c);
        for (int n = 0; n < cur.n; ++n) {
          detail::depthwise3_fwd(cur.sample(n), cur.c, cur.h, cur.w, l.stride, od.h, od.w, wp,
                                 mid.sample(n));
          CMapR<S> M(mid.sample(n), l.in_c, od.h * od.w);
          MapR<S> O(out.sample(n), l.out_c, od.h * od.w);
          O.noalias() = PW * M;
          O.colwise() += bias;
        }
        break;
      }
      case LayerKind::TConv2x2: {
        for (int n = 0; n < cur.n; ++n) {
          for (int oc = 0; oc < l.out_c; ++oc) {
            S* dst = out.plane(n, oc);
            for (int oy = 0; oy < od.h; ++oy) {
              for (int ox = 0; ox < od.w; ++ox) {
                double acc = static_cast<double>(l.b[oc]);
                int iy = oy >> 1, ix = ox >> 1;
                int k = (oy & 1) * 2 + (ox & 1);
                for (int ic = 0; ic < l.in_c; ++ic)
                  acc += static_cast<double>(wp[(static_cast<std::size_t>(ic) * l.out_c + oc) * 4 + k]) *
                         cur.at(n, ic, iy, ix);
                dst[oy * od.w + ox] = static_cast<S>(acc);
              }
            }
          }
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t j = 0; j < cur.size(); ++j)
          out.data[j] = cur.data[j] > S(0) ? cur.data[j] : S(0);
        break;
      case LayerKind::Dense: {
        CMapR<S> X(cur.data.data(), cur.n, l.in_c);
        CMapR<S> W(wp, l.out_c, l.in_c);
        MapR<S> Y(out.data.data(), cur.n, l.out_c);
        Y.noalias() = X * W.transpose();
        Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(l.b.data(), l.out_c);
        break;
      }
      case LayerKind::Flatten:
        out.data = cur.data;
        break;
    }

    Tensor<S> pre;
    if (fq && l.quant->quantize_output) {
      if (!l.quant->calibrated)
        throw StateError("fake-quant forward requires calibration (layer " +
                         layer_label(i, l.kind) + ")");
      QdqParams p = qdq_asymmetric_params(l.quant->act_bits, l.quant->act_min, l.quant->act_max);
      if (p.degenerate && cache) ++cache->degenerate_qdq;
      if (cache) pre = out;
      qdq_apply(out.data.data(), out.size(), p);
    }

    if (cache) {
      cache->pre_qdq.push_back(std::move(pre));
      cache->qw.push_back(std::move(qw));
      cache->qw2.push_back(std::move(qw2));
      cache->outputs.push_back(std::move(out));
      curp = &cache->outputs.back();
    } else {
      owned = std::move(out);
      curp = &owned;
    }
  }

  if (cache) cache->valid = true;
  return *curp;
}

template <typename S>
struct LayerGrads {
  std::vector<S> dw, dw2, db;
};

template <typename S>
struct Gradients {
  std::vector<LayerGrads<S>> layers;
  Tensor<S> input;
};

template <typename S>
Gradients<S> backward(const Network<S>& net, const ForwardCache<S>& cache,
                      const Tensor<S>& grad_out) {
  using detail::CMapR;
  using detail::MapR;
  using detail::MatR;

  if (!cache.valid || cache.outputs.size() != net.layers.size())
    throw StateError("backward requires a cached forward pass on this network");
  if (!grad_out.same_shape(cache.outputs.back()))
    throw ShapeError("grad_out does not match network output",
                     layer_label(net.layers.size() - 1, net.layers.back().kind));

  Gradients<S> grads;
  grads.layers.resize(net.layers.size());

  Tensor<S> g = grad_out;
  for (std::size_t ii = net.layers.size(); ii-- > 0;) {
    const Layer<S>& l = net.layers[ii];
    const Tensor<S>& in = ii == 0 ? cache.input : cache.outputs[ii - 1];
    LayerGrads<S>& lg = grads.layers[ii];

    // Straight-through estimator across the output quantizer.
    if (cache.pre_qdq[ii].size() > 0) {
      QdqParams p = qdq_asymmetric_params(l.quant->act_bits, l.quant->act_min, l.quant->act_max);
      qdq_ste_mask(cache.pre_qdq[ii].data.data(), g.data.data(), g.size(), p);
    }
    // Weight quantization uses a scale derived from the current max|w|, so
    // every weight sits inside the clamp range and the STE mask is all-pass.
    const S* wp = cache.qw[ii].empty() ? l.w.data() : cache.qw[ii].data();
    const S* w2p = cache.qw2[ii].empty() ? l.w2.data() : cache.qw2[ii].data();

    Tensor<S> gin(in.n, in.c, in.h, in.w);
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        lg.dw.assign(l.w.size(), S(0));
        lg.db.assign(l.b.size(), S(0));
        const int oh = g.h, ow = g.w;
        MatR<S> cols;
        CMapR<S> W(wp, l.out_c, l.in_c * 9);
        MapR<S> dW(lg.dw.data(), l.out_c, l.in_c * 9);
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dB(lg.db.data(), l.out_c);
        MatR<S> dcols;
        for (int n = 0; n < in.n; ++n) {
          CMapR<S> G(g.sample(n), l.out_c, oh * ow);
          detail::im2col3(in.sample(n), in.c, in.h, in.w, l.stride, oh, ow, cols);
          dW.noalias() += G * cols.transpose();
          dB += G.rowwise().sum();
          dcols.noalias() = W.transpose() * G;
          detail::col2im3(dcols, in.c, in.h, in.w, l.stride, oh, ow, gin.sample(n));
        }
        break;
      }
      case LayerKind::SepConv: {
        lg.dw.assign(l.w.size(), S(0));
        lg.dw2.assign(l.w2.size(), S(0));
        lg.db.assign(l.b.size(), S(0));
        const int oh = g.h, ow = g.w;
        CMapR<S> PW(w2p, l.out_c, l.in_c);
        MapR<S> dPW(lg.dw2.data(), l.out_c, l.in_c);
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dB(lg.db.data(), l.out_c);
        Tensor<S> mid(1, l.in_c, oh, ow);
        MatR<S> dmid(l.in_c, oh * ow);
        for (int n = 0; n < in.n; ++n) {
          detail::depthwise3_fwd(in.sample(n), in.c, in.h, in.w, l.stride, oh, ow, wp,
                                 mid.sample(0));
          CMapR<S> M(mid.sample(0), l.in_c, oh * ow);
          CMapR<S> G(g.sample(n), l.out_c, oh * ow);
          dPW.noalias() += G * M.transpose();
          dB += G.rowwise().sum();
          dmid.noalias() = PW.transpose() * G;
          // depthwise backward: kernel grads and input grads
          for (int ic = 0; ic < l.in_c; ++ic) {
            const S* src = in.plane(n, ic);
            const S* gm = dmid.data() + static_cast<std::size_t>(ic) * oh * ow;
            S* dk = lg.dw.data() + static_cast<std::size_t>(ic) * 9;
            S* dst = gin.plane(n, ic);
            for (int oy = 0; oy < oh; ++oy) {
              for (int ox = 0; ox < ow; ++ox) {
                S gv = gm[oy * ow + ox];
                if (gv == S(0)) continue;
                for (int ky = 0; ky < 3; ++ky) {
                  int iy = oy * l.stride + ky - 1;
                  if (iy < 0 || iy >= in.h) continue;
                  for (int kx = 0; kx < 3; ++kx) {
                    int ix = ox * l.stride + kx - 1;
                    if (ix < 0 || ix >= in.w) continue;
                    dk[ky * 3 + kx] += gv * src[iy * in.w + ix];
                    dst[iy * in.w + ix] += gv * wp[static_cast<std::size_t>(ic) * 9 + ky * 3 + kx];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::TConv2x2: {
        lg.dw.assign(l.w.size(), S(0));
        lg.db.assign(l.b.size(), S(0));
        const int oh = g.h, ow = g.w;
        for (int n = 0; n < in.n; ++n) {
          for (int oc = 0; oc < l.out_c; ++oc) {
            const S* gp = g.plane(n, oc);
            double bsum = 0.0;
            for (int j = 0; j < oh * ow; ++j) bsum += static_cast<double>(gp[j]);
            lg.db[oc] += static_cast<S>(bsum);
          }
          for (int ic = 0; ic < l.in_c; ++ic) {
            const S* src = in.plane(n, ic);
            S* dst = gin.plane(n, ic);
            for (int iy = 0; iy < in.h; ++iy) {
              for (int ix = 0; ix < in.w; ++ix) {
                double acc = 0.0;
                S xv = src[iy * in.w + ix];
                for (int oc = 0; oc < l.out_c; ++oc) {
                  const S* gp = g.plane(n, oc);
                  const std::size_t wbase = (static_cast<std::size_t>(ic) * l.out_c + oc) * 4;
                  for (int ky = 0; ky < 2; ++ky) {
                    for (int kx = 0; kx < 2; ++kx) {
                      S gv = gp[(2 * iy + ky) * ow + (2 * ix + kx)];
                      acc += static_cast<double>(wp[wbase + ky * 2 + kx]) * gv;
                      lg.dw[wbase + ky * 2 + kx] += xv * gv;
                    }
                  }
                }
                dst[iy * in.w + ix] = static_cast<S>(acc);
              }
            }
          }
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t j = 0; j < g.size(); ++j)
          gin.data[j] = in.data[j] > S(0) ? g.data[j] : S(0);
        break;
      case LayerKind::Dense: {
        lg.dw.assign(l.w.size(), S(0));
        lg.db.assign(l.b.size(), S(0));
        CMapR<S> X(in.data.data(), in.n, l.in_c);
        CMapR<S> W(wp, l.out_c, l.in_c);
        CMapR<S> G(g.data.data(), in.n, l.out_c);
        MapR<S> dW(lg.dw.data(), l.out_c, l.in_c);
        MapR<S> dX(gin.data.data(), in.n, l.in_c);
        dW.noalias() = G.transpose() * X;
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(lg.db.data(), l.out_c) = G.colwise().sum();
        dX.noalias() = G * W;
        break;
      }
      case LayerKind::Flatten:
        gin.data = g.data;
        break;
    }
    g = std::move(gin);
  }

  grads.input = std::move(g);
  return grads;
}

template <typename S>
struct SgdState {
  std::vector<LayerGrads<S>> velocity;
};

// p <- p - lr*v with v = momentum*v + g.
template <typename S>
void sgd_step(Network<S>& net, const Gradients<S>& grads, SgdState<S>& state, double lr,
              double momentum) {
  if (grads.layers.size() != net.layers.size())
    throw StateError("gradients do not match network layer count");
  if (state.velocity.empty()) state.velocity.resize(net.layers.size());
  if (state.velocity.size() != net.layers.size())
    throw StateError("optimizer state does not match network layer count");

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Layer<S>& l = net.layers[i];
    const LayerGrads<S>& lg = grads.layers[i];
    LayerGrads<S>& v = state.velocity[i];
    auto update = [&](std::vector<S>& p, const std::vector<S>& gv, std::vector<S>& vel) {
      if (p.empty()) return;
      if (gv.size() != p.size())
        throw StateError("gradient size mismatch at layer " + layer_label(i, l.kind));
      if (vel.empty()) vel.assign(p.size(), S(0));
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (!std::isfinite(static_cast<double>(gv[j])))
          throw TrainingError("non-finite gradient at layer " + layer_label(i, l.kind));
        vel[j] = static_cast<S>(momentum * vel[j] + gv[j]);
        p[j] = static_cast<S>(p[j] - lr * vel[j]);
      }
    };
    update(l.w, lg.dw, v.dw);
    update(l.w2, lg.dw2, v.dw2);
    update(l.b, lg.db, v.db);
  }
}

// Records per-layer activation ranges for layers that quantize their output.
// The first batch initializes (min, max); later batches fold in with an
// exponential moving average.
template <typename S>
void calibrate(Network<S>& net, const std::vector<Tensor<S>>& batches, double decay = 0.99) {
  if (batches.empty()) throw ArgumentError("calibration needs at least one batch");
  for (const Tensor<S>& batch : batches) {
    ForwardCache<S> cache;
    forward(net, batch, Mode::Float, &cache);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      Layer<S>& l = net.layers[i];
      if (!l.quant || !l.quant->quantize_output) continue;
      const Tensor<S>& out = cache.outputs[i];
      double mn = static_cast<double>(out.data[0]);
      double mx = mn;
      for (S vv : out.data) {
        mn = std::min(mn, static_cast<double>(vv));
        mx = std::max(mx, static_cast<double>(vv));
      }
      if (!l.quant->calibrated) {
        l.quant->act_min = static_cast<float>(mn);
        l.quant->act_max = static_cast<float>(mx);
        l.quant->calibrated = true;
      } else {
        l.quant->act_min = static_cast<float>(decay * l.quant->act_min + (1.0 - decay) * mn);
        l.quant->act_max = static_cast<float>(decay * l.quant->act_max + (1.0 - decay) * mx);
      }
    }
  }
}

}  // namespace evpose
