#pragma once

// Independent reference implementations shared by the unit and acceptance
// tests. Nothing here calls into the library's kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "csunet/ops.hpp"

namespace oracle {

using csunet::Shape;
using csunet::Tensor;
using csunet::Triple;

template <typename T>
Tensor<T> random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<T> t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.span()) v = static_cast<T>(u(rng));
  return t;
}

/// Direct seven-deep loop cross-correlation with zero padding.
inline Tensor<double> conv3d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                             Triple stride, Triple pad, Triple dil) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::int64_t n = xs[0], cin = xs[1], co = ws[0];
  std::int64_t in[3] = {xs[2], xs[3], xs[4]};
  std::int64_t k[3] = {ws[2], ws[3], ws[4]};
  std::int64_t out[3];
  for (int a = 0; a < 3; ++a) out[a] = (in[a] + 2 * pad[a] - dil[a] * (k[a] - 1) - 1) / stride[a] + 1;
  Tensor<double> y(Shape{n, co, out[0], out[1], out[2]});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t d = 0; d < out[0]; ++d)
        for (std::int64_t h = 0; h < out[1]; ++h)
          for (std::int64_t ww = 0; ww < out[2]; ++ww) {
            double acc = bias ? (*bias)[o] : 0.0;
            for (std::int64_t c = 0; c < cin; ++c)
              for (std::int64_t i = 0; i < k[0]; ++i)
                for (std::int64_t j = 0; j < k[1]; ++j)
                  for (std::int64_t l = 0; l < k[2]; ++l) {
                    const auto zd = d * stride[0] - pad[0] + i * dil[0];
                    const auto zh = h * stride[1] - pad[1] + j * dil[1];
                    const auto zw = ww * stride[2] - pad[2] + l * dil[2];
                    if (zd < 0 || zh < 0 || zw < 0 || zd >= in[0] || zh >= in[1] || zw >= in[2]) continue;
                    acc += x.at({b, c, zd, zh, zw}) * w.at({o, c, i, j, l});
                  }
            y.at({b, o, d, h, ww}) = acc;
          }
  return y;
}

inline Tensor<double> maxpool3d(const Tensor<double>& x, Triple k, Triple s) {
  const auto& xs = x.shape();
  const std::int64_t od = (xs[2] - k[0]) / s[0] + 1, oh = (xs[3] - k[1]) / s[1] + 1, ow = (xs[4] - k[2]) / s[2] + 1;
  Tensor<double> y(Shape{xs[0], xs[1], od, oh, ow});
  for (std::int64_t b = 0; b < xs[0]; ++b)
    for (std::int64_t c = 0; c < xs[1]; ++c)
      for (std::int64_t d = 0; d < od; ++d)
        for (std::int64_t h = 0; h < oh; ++h)
          for (std::int64_t w = 0; w < ow; ++w) {
            double m = -INFINITY;
            for (std::int64_t i = 0; i < k[0]; ++i)
              for (std::int64_t j = 0; j < k[1]; ++j)
                for (std::int64_t l = 0; l < k[2]; ++l) m = std::max(m, x.at({b, c, d * s[0] + i, h * s[1] + j, w * s[2] + l}));
            y.at({b, c, d, h, w}) = m;
          }
  return y;
}

/// Half-pixel-centre source coordinate of a factor-2 upsample.
inline void linear_taps(std::int64_t o, std::int64_t n, std::int64_t& i0, std::int64_t& i1, double& frac) {
  const double src = std::max(0.0, (static_cast<double>(o) + 0.5) / 2.0 - 0.5);
  i0 = std::min(static_cast<std::int64_t>(std::floor(src)), n - 1);
  i1 = std::min(i0 + 1, n - 1);
  frac = src - static_cast<double>(i0);
}

inline Tensor<double> upsample(const Tensor<double>& x, bool trilinear) {
  const auto& xs = x.shape();
  Tensor<double> y(Shape{xs[0], xs[1], 2 * xs[2], 2 * xs[3], 2 * xs[4]});
  for (std::int64_t b = 0; b < xs[0]; ++b)
    for (std::int64_t c = 0; c < xs[1]; ++c)
      for (std::int64_t d = 0; d < 2 * xs[2]; ++d)
        for (std::int64_t h = 0; h < 2 * xs[3]; ++h)
          for (std::int64_t w = 0; w < 2 * xs[4]; ++w) {
            if (!trilinear) {
              y.at({b, c, d, h, w}) = x.at({b, c, d / 2, h / 2, w / 2});
              continue;
            }
            std::int64_t d0, d1, h0, h1, w0, w1;
            double fd, fh, fw;
            linear_taps(d, xs[2], d0, d1, fd);
            linear_taps(h, xs[3], h0, h1, fh);
            linear_taps(w, xs[4], w0, w1, fw);
            double acc = 0;
            for (int a = 0; a < 2; ++a)
              for (int e = 0; e < 2; ++e)
                for (int f = 0; f < 2; ++f) {
                  const double wt = (a ? fd : 1 - fd) * (e ? fh : 1 - fh) * (f ? fw : 1 - fw);
                  acc += wt * x.at({b, c, a ? d1 : d0, e ? h1 : h0, f ? w1 : w0});
                }
            y.at({b, c, d, h, w}) = acc;
          }
  return y;
}

struct Tally {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Tally tally(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target) {
  Tally t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && target[i]) ++t.tp;
    else if (pred[i] && !target[i]) ++t.fp;
    else if (!pred[i] && target[i]) ++t.fn;
    else ++t.tn;
  }
  return t;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("csunet_" + tag + "_" + std::to_string(rng() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
