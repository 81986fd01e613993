#pragma once

#include <cstddef>
#include <vector>

namespace dtl {

// Dense float tensor, NCHW. Vectors/matrices use trailing singleton dims.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }

  std::size_t count() const { return v.size(); }
  int spatial() const { return h * w; }
  bool empty() const { return v.empty(); }

  float* chan(int in, int ic) {
    return v.data() + (static_cast<std::size_t>(in) * c + ic) * spatial();
  }
  const float* chan(int in, int ic) const {
    return v.data() + (static_cast<std::size_t>(in) * c + ic) * spatial();
  }
  float& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  float at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

}  // namespace dtl
