#include "csunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace csunet {

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// Shared per-group normalisation. A group is a channel (batch norm) or a
// (sample, channel) pair (instance norm).
struct NormLayout {
  std::int64_t n, c, spatial;
  bool per_sample;
  std::int64_t groups() const { return per_sample ? n * c : c; }
  std::int64_t group_size() const { return per_sample ? spatial : n * spatial; }
  template <typename F>
  void for_each_run(std::int64_t group, F&& f) const {
    // Calls f(offset) for each contiguous run of `spatial` elements.
    if (per_sample) {
      f(group * spatial);
    } else {
      for (std::int64_t s = 0; s < n; ++s) f((s * c + group) * spatial);
    }
  }
  std::int64_t channel(std::int64_t group) const { return per_sample ? group % c : group; }
};

struct GroupStats {
  std::vector<double> mean, var;
};

template <typename T>
GroupStats group_stats(const Tensor<T>& x, const NormLayout& lay) {
  GroupStats st;
  st.mean.assign(static_cast<std::size_t>(lay.groups()), 0.0);
  st.var.assign(static_cast<std::size_t>(lay.groups()), 0.0);
  const double m = static_cast<double>(lay.group_size());
  for (std::int64_t gi = 0; gi < lay.groups(); ++gi) {
    double s = 0;
    lay.for_each_run(gi, [&](std::int64_t off) {
      for (std::int64_t i = 0; i < lay.spatial; ++i) s += x[off + i];
    });
    const double mu = s / m;
    double v = 0;
    lay.for_each_run(gi, [&](std::int64_t off) {
      for (std::int64_t i = 0; i < lay.spatial; ++i) {
        const double dlt = x[off + i] - mu;
        v += dlt * dlt;
      }
    });
    st.mean[gi] = mu;
    st.var[gi] = v / m;
  }
  return st;
}

template <typename T>
Var<T> normalize(const char* op, const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                 const NormLayout& lay, const std::vector<double>& mean, const std::vector<double>& var,
                 double eps, bool batch_stats) {
  const Tensor<T>& x = input.value();
  std::vector<double> inv_std(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) inv_std[i] = 1.0 / std::sqrt(var[i] + eps);

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (std::int64_t gi = 0; gi < lay.groups(); ++gi) {
    const auto c = lay.channel(gi);
    const double mu = mean[gi], is = inv_std[gi];
    const T gm = gamma.value()[c], bt = beta.value()[c];
    lay.for_each_run(gi, [&](std::int64_t off) {
      for (std::int64_t i = 0; i < lay.spatial; ++i) {
        const T h = static_cast<T>((x[off + i] - mu) * is);
        xhat[off + i] = h;
        out[off + i] = gm * h + bt;
      }
    });
  }

  auto xn = input.node(), gn = gamma.node(), bn = beta.node();
  return record<T>(op, std::move(out), {input, gamma, beta},
                   [lay, xn, gn, bn, xhat = std::move(xhat), inv_std, batch_stats](const Tensor<T>& gout) {
                     const double m = static_cast<double>(lay.group_size());
                     T* dx = xn->requires_grad ? xn->grad_buffer() : nullptr;
                     T* dg = gn->requires_grad ? gn->grad_buffer() : nullptr;
                     T* db = bn->requires_grad ? bn->grad_buffer() : nullptr;
                     for (std::int64_t gi = 0; gi < lay.groups(); ++gi) {
                       const auto c = lay.channel(gi);
                       double sum_g = 0, sum_gh = 0;
                       lay.for_each_run(gi, [&](std::int64_t off) {
                         for (std::int64_t i = 0; i < lay.spatial; ++i) {
                           sum_g += gout[off + i];
                           sum_gh += static_cast<double>(gout[off + i]) * xhat[off + i];
                         }
                       });
                       if (dg) dg[c] += static_cast<T>(sum_gh);
                       if (db) db[c] += static_cast<T>(sum_g);
                       if (!dx) continue;
                       const double gm = gn->value[c];
                       const double is = inv_std[gi];
                       lay.for_each_run(gi, [&](std::int64_t off) {
                         for (std::int64_t i = 0; i < lay.spatial; ++i) {
                           double v;
                           if (batch_stats) {
                             v = gm * is * (gout[off + i] - sum_g / m - xhat[off + i] * sum_gh / m);
                           } else {
                             v = gm * is * gout[off + i];
                           }
                           dx[off + i] += static_cast<T>(v);
                         }
                       });
                     }
                   });
}

template <typename T>
void check_affine(const Var<T>& gamma, const Var<T>& beta, std::int64_t c, const char* op) {
  if (gamma.value().dim() != 1 || gamma.value().size(0) != c || beta.value().dim() != 1 ||
      beta.value().size(0) != c) {
    throw ShapeError(std::string(op) + ": gamma/beta must have C=" + std::to_string(c) + " entries");
  }
}

template <typename T, typename F, typename G>
Var<T> unary(const char* op, const Var<T>& x, F&& f, G&& df) {
  Tensor<T> out(x.shape());
  const auto n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(x.value()[i]);
  auto xn = x.node();
  // df(x, y) gives dy/dx.
  auto y = std::make_shared<Tensor<T>>(out);
  return record<T>(op, std::move(out), {x}, [xn, y, df](const Tensor<T>& g) {
    T* dx = xn->grad_buffer();
    const auto n = g.numel();
    for (std::int64_t i = 0; i < n; ++i) dx[i] += g[i] * df(xn->value[i], (*y)[i]);
  });
}

}  // namespace

template <typename T>
Var<T> maxpool3d(const Var<T>& input, Triple kernel, Triple stride) {
  const auto v = volume_dims(input.value(), "maxpool3d");
  const std::int64_t ext[3] = {v.d, v.h, v.w};
  std::int64_t o[3];
  static constexpr const char* axes[3] = {"D", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1 || stride[a] < 1) throw ShapeError("maxpool3d: kernel and stride must be >= 1");
    if (kernel[a] > ext[a]) {
      throw ShapeError(std::string("maxpool3d: kernel larger than input on axis ") + axes[a]);
    }
    o[a] = (ext[a] - kernel[a]) / stride[a] + 1;
  }
  Tensor<T> out(Shape{v.n, v.c, o[0], o[1], o[2]});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  const T* x = input.value().data();
  std::int64_t idx = 0;
  for (std::int64_t nc = 0; nc < v.n * v.c; ++nc) {
    const auto base = nc * v.spatial();
    for (std::int64_t od = 0; od < o[0]; ++od)
      for (std::int64_t oh = 0; oh < o[1]; ++oh)
        for (std::int64_t ow = 0; ow < o[2]; ++ow, ++idx) {
          std::int64_t best = -1;
          T bv = -std::numeric_limits<T>::infinity();
          for (std::int64_t a = 0; a < kernel[0]; ++a)
            for (std::int64_t b = 0; b < kernel[1]; ++b)
              for (std::int64_t c = 0; c < kernel[2]; ++c) {
                const auto off =
                    base + ((od * stride[0] + a) * v.h + oh * stride[1] + b) * v.w + ow * stride[2] + c;
                if (best < 0 || x[off] > bv) {
                  bv = x[off];
                  best = off;
                }
              }
          out[idx] = bv;
          argmax[static_cast<std::size_t>(idx)] = best;
        }
  }
  auto xn = input.node();
  return record<T>("maxpool3d", std::move(out), {input}, [xn, argmax = std::move(argmax)](const Tensor<T>& g) {
    T* dx = xn->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[static_cast<std::int64_t>(i)];
  });
}

namespace {

struct AxisInterp {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w0, w1;
};

AxisInterp axis_interp(std::int64_t in, UpsampleMode mode) {
  AxisInterp a;
  const auto out = 2 * in;
  for (std::int64_t o = 0; o < out; ++o) {
    if (mode == UpsampleMode::nearest) {
      a.i0.push_back(o / 2);
      a.i1.push_back(o / 2);
      a.w0.push_back(1.0);
      a.w1.push_back(0.0);
      continue;
    }
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const auto hi = std::min(lo + 1, in - 1);
    const double l1 = src - static_cast<double>(lo);
    a.i0.push_back(lo);
    a.i1.push_back(hi);
    a.w0.push_back(1.0 - l1);
    a.w1.push_back(l1);
  }
  return a;
}

}  // namespace

template <typename T>
Var<T> upsample3d(const Var<T>& input, UpsampleMode mode) {
  const auto v = volume_dims(input.value(), "upsample3d");
  const AxisInterp ad = axis_interp(v.d, mode), ah = axis_interp(v.h, mode), aw = axis_interp(v.w, mode);
  const std::int64_t od = 2 * v.d, oh = 2 * v.h, ow = 2 * v.w;
  Tensor<T> out(Shape{v.n, v.c, od, oh, ow});

  // Visit every (output voxel, contributing input voxel, weight) triple.
  auto visit = [=](auto&& f) {
    std::int64_t idx = 0;
    for (std::int64_t nc = 0; nc < v.n * v.c; ++nc) {
      const auto base = nc * v.spatial();
      for (std::int64_t z = 0; z < od; ++z)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t x = 0; x < ow; ++x, ++idx) {
            const std::int64_t zi[2] = {ad.i0[z], ad.i1[z]}, yi[2] = {ah.i0[y], ah.i1[y]},
                               xi[2] = {aw.i0[x], aw.i1[x]};
            const double zw[2] = {ad.w0[z], ad.w1[z]}, yw[2] = {ah.w0[y], ah.w1[y]},
                         xw[2] = {aw.w0[x], aw.w1[x]};
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int c = 0; c < 2; ++c) {
                  const double wgt = zw[a] * yw[b] * xw[c];
                  if (wgt == 0.0) continue;
                  f(idx, base + (zi[a] * v.h + yi[b]) * v.w + xi[c], wgt);
                }
          }
    }
  };

  const T* x = input.value().data();
  if (mode == UpsampleMode::nearest) {
    visit([&](std::int64_t o, std::int64_t i, double) { out[o] = x[i]; });
  } else {
    std::vector<double> acc(static_cast<std::size_t>(out.numel()), 0.0);
    visit([&](std::int64_t o, std::int64_t i, double wgt) { acc[o] += wgt * x[i]; });
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(acc[i]);
  }
  auto xn = input.node();
  return record<T>("upsample3d", std::move(out), {input}, [xn, visit](const Tensor<T>& g) {
    T* dx = xn->grad_buffer();
    visit([&](std::int64_t o, std::int64_t i, double wgt) { dx[i] += static_cast<T>(wgt * g[o]); });
  });
}

template <typename T>
Var<T> batchnorm3d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                   Tensor<T>& running_var, Mode mode, const NormOptions& opt) {
  const auto v = volume_dims(input.value(), "batchnorm3d");
  check_affine(gamma, beta, v.c, "batchnorm3d");
  if (running_mean.numel() != v.c || running_var.numel() != v.c) {
    throw ShapeError("batchnorm3d: running statistics must have C entries");
  }
  const NormLayout lay{v.n, v.c, v.spatial(), false};
  if (mode == Mode::eval) {
    std::vector<double> mu(static_cast<std::size_t>(v.c)), var(static_cast<std::size_t>(v.c));
    for (std::int64_t c = 0; c < v.c; ++c) {
      mu[c] = running_mean[c];
      var[c] = running_var[c];
    }
    return normalize("batchnorm3d", input, gamma, beta, lay, mu, var, opt.eps, false);
  }
  const auto st = group_stats(input.value(), lay);
  const double m = static_cast<double>(lay.group_size());
  const double unbias = m > 1 ? m / (m - 1) : 1.0;
  for (std::int64_t c = 0; c < v.c; ++c) {
    running_mean[c] = static_cast<T>((1 - opt.momentum) * running_mean[c] + opt.momentum * st.mean[c]);
    running_var[c] = static_cast<T>((1 - opt.momentum) * running_var[c] + opt.momentum * st.var[c] * unbias);
  }
  return normalize("batchnorm3d", input, gamma, beta, lay, st.mean, st.var, opt.eps, true);
}

template <typename T>
Var<T> instancenorm3d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, const NormOptions& opt) {
  const auto v = volume_dims(input.value(), "instancenorm3d");
  check_affine(gamma, beta, v.c, "instancenorm3d");
  const NormLayout lay{v.n, v.c, v.spatial(), true};
  const auto st = group_stats(input.value(), lay);
  return normalize("instancenorm3d", input, gamma, beta, lay, st.mean, st.var, opt.eps, true);
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] > T(0) ? x.value()[i] : T(0);
  auto xn = x.node();
  return record<T>("relu", std::move(out), {x}, [xn](const Tensor<T>& g) {
    T* dx = xn->grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      if (xn->value[i] > T(0)) dx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return record<T>("add", std::move(out), {a, b}, [an, bn](const Tensor<T>& g) {
    if (an->requires_grad) an->accumulate(g);
    if (bn->requires_grad) bn->accumulate(g);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return record<T>("mul", std::move(out), {a, b}, [an, bn](const Tensor<T>& g) {
    const auto n = g.numel();
    if (an->requires_grad) {
      T* d = an->grad_buffer();
      for (std::int64_t i = 0; i < n; ++i) d[i] += g[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      T* d = bn->grad_buffer();
      for (std::int64_t i = 0; i < n; ++i) d[i] += g[i] * an->value[i];
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() || sa[0] != sb[0] ||
      !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2)) {
    throw ShapeError("concat_channels: non-channel extents differ " + to_string(sa) + " vs " + to_string(sb));
  }
  const std::int64_t n = sa[0], ca = sa[1], cb = sb[1];
  const std::int64_t inner = a.value().numel() / (n * ca);
  Shape so = sa;
  so[1] = ca + cb;
  Tensor<T> out(so);
  for (std::int64_t s = 0; s < n; ++s) {
    std::copy_n(a.value().data() + s * ca * inner, ca * inner, out.data() + s * (ca + cb) * inner);
    std::copy_n(b.value().data() + s * cb * inner, cb * inner, out.data() + (s * (ca + cb) + ca) * inner);
  }
  auto an = a.node(), bn = b.node();
  return record<T>("concat_channels", std::move(out), {a, b}, [an, bn, n, ca, cb, inner](const Tensor<T>& g) {
    for (std::int64_t s = 0; s < n; ++s) {
      const T* src = g.data() + s * (ca + cb) * inner;
      if (an->requires_grad) {
        T* d = an->grad_buffer() + s * ca * inner;
        for (std::int64_t i = 0; i < ca * inner; ++i) d[i] += src[i];
      }
      if (bn->requires_grad) {
        T* d = bn->grad_buffer() + s * cb * inner;
        for (std::int64_t i = 0; i < cb * inner; ++i) d[i] += src[ca * inner + i];
      }
    }
  });
}

template <typename T>
Var<T> select_channel(const Var<T>& x, std::int64_t c) {
  const auto& s = x.shape();
  if (s.size() < 2 || c < 0 || c >= s[1]) throw ShapeError("select_channel: channel out of range");
  const std::int64_t n = s[0], cc = s[1];
  const std::int64_t inner = x.value().numel() / (n * cc);
  Shape so = s;
  so[1] = 1;
  Tensor<T> out(so);
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(x.value().data() + (i * cc + c) * inner, inner, out.data() + i * inner);
  }
  auto xn = x.node();
  return record<T>("select_channel", std::move(out), {x}, [xn, n, cc, c, inner](const Tensor<T>& g) {
    T* d = xn->grad_buffer();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t k = 0; k < inner; ++k) d[(i * cc + c) * inner + k] += g[i * inner + k];
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  const auto& s = x.shape();
  if (s.size() < 2 || s[1] < 2) throw ShapeError("softmax_channels: need at least 2 channels");
  const std::int64_t n = s[0], c = s[1];
  const std::int64_t inner = x.value().numel() / (n * c);
  Tensor<T> out(s);
  const T* in = x.value().data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < inner; ++p) {
      const auto base = i * c * inner + p;
      T mx = in[base];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, in[base + k * inner]);
      T z = 0;
      for (std::int64_t k = 0; k < c; ++k) {
        const T e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::int64_t k = 0; k < c; ++k) out[base + k * inner] /= z;
    }
  }
  auto xn = x.node();
  auto y = std::make_shared<Tensor<T>>(out);
  return record<T>("softmax_channels", std::move(out), {x}, [xn, y, n, c, inner](const Tensor<T>& g) {
    T* d = xn->grad_buffer();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t p = 0; p < inner; ++p) {
        const auto base = i * c * inner + p;
        T dot = 0;
        for (std::int64_t k = 0; k < c; ++k) dot += g[base + k * inner] * (*y)[base + k * inner];
        for (std::int64_t k = 0; k < c; ++k) {
          d[base + k * inner] += (*y)[base + k * inner] * (g[base + k * inner] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto v = volume_dims(x.value(), "global_avg_pool");
  const auto sp = v.spatial();
  Tensor<T> out(Shape{v.n, v.c});
  for (std::int64_t i = 0; i < v.n * v.c; ++i) {
    double s = 0;
    const T* src = x.value().data() + i * sp;
    for (std::int64_t k = 0; k < sp; ++k) s += src[k];
    out[i] = static_cast<T>(s / static_cast<double>(sp));
  }
  auto xn = x.node();
  return record<T>("global_avg_pool", std::move(out), {x}, [xn, v, sp](const Tensor<T>& g) {
    T* d = xn->grad_buffer();
    const T inv = T(1) / static_cast<T>(sp);
    for (std::int64_t i = 0; i < v.n * v.c; ++i) {
      const T gi = g[i] * inv;
      for (std::int64_t k = 0; k < sp; ++k) d[i * sp + k] += gi;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (x.value().dim() != 2 || weight.value().dim() != 2) throw ShapeError("linear: expected 2-D input and weight");
  const std::int64_t n = x.shape()[0], fin = x.shape()[1], fout = weight.shape()[0];
  if (weight.shape()[1] != fin) {
    throw ShapeError("linear: inner dimension mismatch, input has " + std::to_string(fin) +
                     " features but weight expects " + std::to_string(weight.shape()[1]));
  }
  if (bias.value().dim() != 1 || bias.shape()[0] != fout) throw ShapeError("linear: bias must have Fout entries");
  Tensor<T> out(Shape{n, fout});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t o = 0; o < fout; ++o) {
      T acc = bias.value()[o];
      for (std::int64_t k = 0; k < fin; ++k) acc += x.value()[i * fin + k] * weight.value()[o * fin + k];
      out[i * fout + o] = acc;
    }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return record<T>("linear", std::move(out), {x, weight, bias}, [xn, wn, bn, n, fin, fout](const Tensor<T>& g) {
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t o = 0; o < fout; ++o) {
        const T go = g[i * fout + o];
        if (bn->requires_grad) bn->accumulate_at(o, go);
        for (std::int64_t k = 0; k < fin; ++k) {
          if (xn->requires_grad) xn->accumulate_at(i * fin + k, go * wn->value[o * fin + k]);
          if (wn->requires_grad) wn->accumulate_at(o * fin + k, go * xn->value[i * fin + k]);
        }
      }
  });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& g) {
  const auto v = volume_dims(x.value(), "scale_channels");
  if (g.shape() != Shape{v.n, v.c}) {
    throw ShapeError("scale_channels: gate shape " + to_string(g.shape()) + " does not match (N,C)");
  }
  const auto sp = v.spatial();
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < v.n * v.c; ++i) {
    const T s = g.value()[i];
    for (std::int64_t k = 0; k < sp; ++k) out[i * sp + k] = x.value()[i * sp + k] * s;
  }
  auto xn = x.node(), gn = g.node();
  return record<T>("scale_channels", std::move(out), {x, g}, [xn, gn, v, sp](const Tensor<T>& go) {
    for (std::int64_t i = 0; i < v.n * v.c; ++i) {
      if (xn->requires_grad) {
        T* d = xn->grad_buffer() + i * sp;
        const T s = gn->value[i];
        for (std::int64_t k = 0; k < sp; ++k) d[k] += go[i * sp + k] * s;
      }
      if (gn->requires_grad) {
        T acc = 0;
        for (std::int64_t k = 0; k < sp; ++k) acc += go[i * sp + k] * xn->value[i * sp + k];
        gn->accumulate_at(i, acc);
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double s = 0;
  for (auto v : x.value().span()) s += v;
  auto xn = x.node();
  return record<T>("sum", Tensor<T>::scalar(static_cast<T>(s)), {x}, [xn](const Tensor<T>& g) {
    T* d = xn->grad_buffer();
    const T gv = g[0];
    for (std::int64_t i = 0; i < xn->value.numel(); ++i) d[i] += gv;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.value().numel()));
}

#define CSUNET_INSTANTIATE_OPS(T)                                                                         \
  template Var<T> maxpool3d(const Var<T>&, Triple, Triple);                                               \
  template Var<T> upsample3d(const Var<T>&, UpsampleMode);                                                \
  template Var<T> batchnorm3d(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, Mode, \
                              const NormOptions&);                                                        \
  template Var<T> instancenorm3d(const Var<T>&, const Var<T>&, const Var<T>&, const NormOptions&);        \
  template Var<T> relu(const Var<T>&);                                                                    \
  template Var<T> sigmoid(const Var<T>&);                                                                 \
  template Var<T> scale(const Var<T>&, T);                                                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                          \
  template Var<T> select_channel(const Var<T>&, std::int64_t);                                            \
  template Var<T> softmax_channels(const Var<T>&);                                                        \
  template Var<T> global_avg_pool(const Var<T>&);                                                         \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                    \
  template Var<T> scale_channels(const Var<T>&, const Var<T>&);                                           \
  template Var<T> sum(const Var<T>&);                                                                     \
  template Var<T> mean(const Var<T>&);

CSUNET_INSTANTIATE_OPS(float)
CSUNET_INSTANTIATE_OPS(double)

}  // namespace csunet
