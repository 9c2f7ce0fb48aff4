#include <Eigen/Core>
#include <algorithm>
#include <string>

#include "csunet/ops.hpp"
#include "csunet/parallel.hpp"

namespace csunet {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;

// Upper bound on im2col buffer elements per task.
constexpr std::int64_t kColBudget = std::int64_t{1} << 22;

struct ConvGeometry {
  std::int64_t n, cin, d, h, w;
  std::int64_t cout, kd, kh, kw;
  std::int64_t od, oh, ow;
  Triple s, p, dil;

  std::int64_t k() const { return cin * kd * kh * kw; }
  std::int64_t in_spatial() const { return d * h * w; }
  std::int64_t out_plane() const { return oh * ow; }
  std::int64_t out_spatial() const { return od * oh * ow; }
  bool pointwise() const {
    return kd == 1 && kh == 1 && kw == 1 && s == Triple{1, 1, 1} && p == Triple{0, 0, 0};
  }
  // Output depth slices per im2col chunk.
  std::int64_t slices_per_chunk() const {
    return std::clamp<std::int64_t>(kColBudget / std::max<std::int64_t>(1, k() * out_plane()), 1, od);
  }
};

std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p,
                        std::int64_t dil, const char* axis) {
  const auto span = in + 2 * p - dil * (k - 1) - 1;
  if (span < 0) {
    throw ShapeError(std::string("conv3d: non-positive output extent on axis ") + axis);
  }
  return span / s + 1;
}

template <typename T>
ConvGeometry geometry(const Tensor<T>& x, const Tensor<T>& wt, const ConvOptions& opt) {
  const auto in = volume_dims(x, "conv3d input");
  if (wt.dim() != 5) throw ShapeError("conv3d: weight must be (Cout,Cin,kd,kh,kw), got " + to_string(wt.shape()));
  const auto& ws = wt.shape();
  if (ws[1] != in.c) {
    throw ShapeError("conv3d: input has " + std::to_string(in.c) + " channels (axis C) but weight expects " +
                     std::to_string(ws[1]));
  }
  for (int a = 0; a < 3; ++a) {
    if (opt.stride[a] < 1 || opt.dilation[a] < 1 || opt.padding[a] < 0) {
      throw ShapeError("conv3d: stride/dilation must be >= 1 and padding >= 0");
    }
  }
  ConvGeometry g{in.n, in.c, in.d, in.h, in.w, ws[0], ws[2], ws[3], ws[4], 0, 0, 0,
                 opt.stride, opt.padding, opt.dilation};
  g.od = out_extent(in.d, g.kd, g.s[0], g.p[0], g.dil[0], "D");
  g.oh = out_extent(in.h, g.kh, g.s[1], g.p[1], g.dil[1], "H");
  g.ow = out_extent(in.w, g.kw, g.s[2], g.p[2], g.dil[2], "W");
  return g;
}

// col is (K x L) row-major for output depth slices [od0, od1) of one sample.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::int64_t od0, std::int64_t od1, T* col) {
  const auto L = (od1 - od0) * g.out_plane();
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + ci * g.in_spatial();
    for (std::int64_t a = 0; a < g.kd; ++a) {
      for (std::int64_t b = 0; b < g.kh; ++b) {
        for (std::int64_t c = 0; c < g.kw; ++c, ++row) {
          T* dst = col + row * L;
          for (std::int64_t od = od0; od < od1; ++od) {
            const auto id = od * g.s[0] - g.p[0] + a * g.dil[0];
            const bool dvalid = id >= 0 && id < g.d;
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              const auto ih = oh * g.s[1] - g.p[1] + b * g.dil[1];
              const bool valid = dvalid && ih >= 0 && ih < g.h;
              const T* src = valid ? xc + (id * g.h + ih) * g.w : nullptr;
              for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                const auto iw = ow * g.s[2] - g.p[2] + c * g.dil[2];
                *dst++ = (valid && iw >= 0 && iw < g.w) ? src[iw] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, std::int64_t od0, std::int64_t od1, T* dx) {
  const auto L = (od1 - od0) * g.out_plane();
  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < g.cin; ++ci) {
    T* dxc = dx + ci * g.in_spatial();
    for (std::int64_t a = 0; a < g.kd; ++a) {
      for (std::int64_t b = 0; b < g.kh; ++b) {
        for (std::int64_t c = 0; c < g.kw; ++c, ++row) {
          const T* src = col + row * L;
          for (std::int64_t od = od0; od < od1; ++od) {
            const auto id = od * g.s[0] - g.p[0] + a * g.dil[0];
            const bool dvalid = id >= 0 && id < g.d;
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              const auto ih = oh * g.s[1] - g.p[1] + b * g.dil[1];
              if (!dvalid || ih < 0 || ih >= g.h) {
                src += g.ow;
                continue;
              }
              T* dst = dxc + (id * g.h + ih) * g.w;
              for (std::int64_t ow = 0; ow < g.ow; ++ow, ++src) {
                const auto iw = ow * g.s[2] - g.p[2] + c * g.dil[2];
                if (iw >= 0 && iw < g.w) dst[iw] += *src;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv_forward(const ConvGeometry& g, const Tensor<T>& x, const Tensor<T>& wt, const Tensor<T>* bias) {
  Tensor<T> out(Shape{g.n, g.cout, g.od, g.oh, g.ow});
  const auto K = g.k();
  const auto P = g.out_spatial();
  Eigen::Map<const MatR<T>> W(wt.data(), g.cout, K);

  if (g.pointwise()) {
    parallel_for(g.n, [&](std::int64_t n) {
      Eigen::Map<const MatR<T>> X(x.data() + n * g.cin * P, g.cin, P);
      Eigen::Map<MatR<T>> Y(out.data() + n * g.cout * P, g.cout, P);
      Y.noalias() = W * X;
    });
  } else {
    const auto per = g.slices_per_chunk();
    const auto chunks = (g.od + per - 1) / per;
    parallel_for(g.n * chunks, [&](std::int64_t task) {
      const auto n = task / chunks;
      const auto od0 = (task % chunks) * per;
      const auto od1 = std::min(g.od, od0 + per);
      const auto L = (od1 - od0) * g.out_plane();
      std::vector<T> col(static_cast<std::size_t>(K * L));
      im2col(g, x.data() + n * g.cin * g.in_spatial(), od0, od1, col.data());
      Eigen::Map<const MatR<T>> C(col.data(), K, L);
      Eigen::Map<MatR<T>, 0, Strided> Y(out.data() + n * g.cout * P + od0 * g.out_plane(), g.cout, L,
                                          Strided(P));
      Y.noalias() = W * C;
    });
  }
  if (bias) {
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t co = 0; co < g.cout; ++co) {
        T* y = out.data() + (n * g.cout + co) * P;
        const T b = (*bias)[co];
        for (std::int64_t i = 0; i < P; ++i) y[i] += b;
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& input, const Var<T>& weight, const std::optional<std::type_identity_t<Var<T>>>& bias,
              const ConvOptions& opt) {
  const auto g = geometry(input.value(), weight.value(), opt);
  if (bias && (bias->value().dim() != 1 || bias->value().size(0) != g.cout)) {
    throw ShapeError("conv3d: bias must have Cout=" + std::to_string(g.cout) + " entries");
  }
  Tensor<T> out = conv_forward(g, input.value(), weight.value(), bias ? &bias->value() : nullptr);

  auto xn = input.node();
  auto wn = weight.node();
  std::shared_ptr<Node<T>> bn = bias ? bias->node() : nullptr;
  std::vector<Var<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);

  return record<T>("conv3d", std::move(out), std::move(inputs), [g, xn, wn, bn](const Tensor<T>& gout) {
    const T sign = debug::conv_backward_sign_flip() ? T(-1) : T(1);
    const auto K = g.k();
    const auto P = g.out_spatial();
    const Tensor<T>& x = xn->value;
    Eigen::Map<const MatR<T>> W(wn->value.data(), g.cout, K);

    if (bn && bn->requires_grad) {
      T* db = bn->grad_buffer();
      for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
          const T* go = gout.data() + (n * g.cout + co) * P;
          T acc = 0;
          for (std::int64_t i = 0; i < P; ++i) acc += go[i];
          db[co] += sign * acc;
        }
      }
    }

    const bool want_w = wn->requires_grad;
    const bool want_x = xn->requires_grad;
    if (!want_w && !want_x) return;

    // Per-sample weight-gradient partials, reduced in sample order.
    std::vector<MatR<T>> dw_part(want_w ? static_cast<std::size_t>(g.n) : 0);
    T* dx = want_x ? xn->grad_buffer() : nullptr;

    parallel_for(g.n, [&](std::int64_t n) {
      const T* xs = x.data() + n * g.cin * g.in_spatial();
      const T* gs = gout.data() + n * g.cout * P;
      T* dxs = dx ? dx + n * g.cin * g.in_spatial() : nullptr;
      if (want_w) dw_part[static_cast<std::size_t>(n)] = MatR<T>::Zero(g.cout, K);

      if (g.pointwise()) {
        Eigen::Map<const MatR<T>> X(xs, g.cin, P);
        Eigen::Map<const MatR<T>> G(gs, g.cout, P);
        if (want_w) dw_part[static_cast<std::size_t>(n)].noalias() += G * X.transpose();
        if (dxs) {
          Eigen::Map<MatR<T>> DX(dxs, g.cin, P);
          DX.noalias() += sign * (W.transpose() * G);
        }
        return;
      }

      const auto per = g.slices_per_chunk();
      std::vector<T> col;
      MatR<T> dcol;
      for (std::int64_t od0 = 0; od0 < g.od; od0 += per) {
        const auto od1 = std::min(g.od, od0 + per);
        const auto L = (od1 - od0) * g.out_plane();
        Eigen::Map<const MatR<T>, 0, Strided> G(gs + od0 * g.out_plane(), g.cout, L, Strided(P));
        if (want_w) {
          col.resize(static_cast<std::size_t>(K * L));
          im2col(g, xs, od0, od1, col.data());
          Eigen::Map<const MatR<T>> C(col.data(), K, L);
          dw_part[static_cast<std::size_t>(n)].noalias() += G * C.transpose();
        }
        if (dxs) {
          dcol.noalias() = sign * (W.transpose() * G);
          col2im(g, dcol.data(), od0, od1, dxs);
        }
      }
    });

    if (want_w) {
      Eigen::Map<MatR<T>> DW(wn->grad_buffer(), g.cout, K);
      for (const auto& part : dw_part) DW += sign * part;
    }
  });
}

template Var<float> conv3d(const Var<float>&, const Var<float>&, const std::optional<Var<float>>&,
                           const ConvOptions&);
template Var<double> conv3d(const Var<double>&, const Var<double>&, const std::optional<Var<double>>&,
                            const ConvOptions&);

}  // namespace csunet
