#pragma once

#include <cstddef>
#include <vector>

#include "evpose/error.hpp"

namespace evpose {

// Dense NCHW tensor. Lower-rank data uses trailing singleton dims,
// e.g. a feature vector batch is [n][features][1][1].
template <typename Scalar>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<Scalar> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, Scalar(0)) {
    if (n_ <= 0 || c_ <= 0 || h_ <= 0 || w_ <= 0)
      throw ArgumentError("tensor dims must be positive");
  }

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  Scalar& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  const Scalar& at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  // Contiguous plane of one (sample, channel) pair.
  Scalar* plane(int in, int ic) { return data.data() + index(in, ic, 0, 0); }
  const Scalar* plane(int in, int ic) const { return data.data() + index(in, ic, 0, 0); }

  // Contiguous block of one sample, c*h*w values.
  Scalar* sample(int in) { return data.data() + index(in, 0, 0, 0); }
  const Scalar* sample(int in) const { return data.data() + index(in, 0, 0, 0); }

  bool operator==(const Tensor&) const = default;

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.n = n;
    out.c = c;
    out.h = h;
    out.w = w;
    out.data.reserve(data.size());
    for (Scalar v : data) out.data.push_back(static_cast<Other>(v));
    return out;
  }
};

}  // namespace evpose
