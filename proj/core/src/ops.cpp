#include "dehaze/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace dehaze::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements; larger convolutions are processed in
// bands of output rows.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

struct ConvGeometry {
  int cin, hin, win;
  int cout, k, stride, pad;
  int hout, wout;

  int patch() const { return cin * k * k; }
  bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
  int band_rows() const {
    const std::size_t per_row = static_cast<std::size_t>(patch()) * wout;
    return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1,
                                                    static_cast<std::size_t>(hout)));
  }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, int row0, int row1, T* col) {
  const int cols = (row1 - row0) * g.wout;
  for (int c = 0; c < g.cin; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * g.hin * g.win;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * cols;
        for (int oy = row0; oy < row1; ++oy) {
          T* out = dst + static_cast<std::size_t>(oy - row0) * g.wout;
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.hin) {
            std::fill(out, out + g.wout, T(0));
            continue;
          }
          const T* in = plane + static_cast<std::size_t>(iy) * g.win;
          if (g.stride == 1) {
            // contiguous run [lo, hi) of valid output columns
            const int lo = std::clamp(g.pad - kx, 0, g.wout);
            const int hi = std::clamp(g.win + g.pad - kx, lo, g.wout);
            std::fill(out, out + lo, T(0));
            std::copy(in + lo - g.pad + kx, in + hi - g.pad + kx, out + lo);
            std::fill(out + hi, out + g.wout, T(0));
          } else {
            for (int ox = 0; ox < g.wout; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              out[ox] = (ix >= 0 && ix < g.win) ? in[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, int row0, int row1, T* x) {
  const int cols = (row1 - row0) * g.wout;
  for (int c = 0; c < g.cin; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * g.hin * g.win;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* src = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * cols;
        for (int oy = row0; oy < row1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.hin) continue;
          const T* in = src + static_cast<std::size_t>(oy - row0) * g.wout;
          T* out = plane + static_cast<std::size_t>(iy) * g.win;
          for (int ox = 0; ox < g.wout; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.win) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvParams p) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  require(ws.h == ws.w, "conv2d: kernel must be square, got " + ws.str());
  require(xs.c == ws.c, "conv2d: input " + xs.str() + " does not match weight " + ws.str());
  require(!bias.defined() || bias.value().size() == static_cast<std::size_t>(ws.n),
          "conv2d: bias size does not match output channels " + std::to_string(ws.n));
  require(p.stride >= 1 && p.pad >= 0, "conv2d: bad stride/pad");

  ConvGeometry g{xs.c, xs.h, xs.w, ws.n, ws.h, p.stride, p.pad,
                 conv_out_extent(xs.h, ws.h, p.stride, p.pad),
                 conv_out_extent(xs.w, ws.w, p.stride, p.pad)};
  require(g.hout >= 1 && g.wout >= 1,
          "conv2d: input " + xs.str() + " too small for kernel " + ws.str());

  const int K = g.patch();
  const int P = g.hout * g.wout;
  const int band = g.band_rows();
  Tensor<T> out(Shape{xs.n, g.cout, g.hout, g.wout});
  ConstMatMap<T> W(weight.value().data(), g.cout, K);
  const T* b = bias.defined() ? bias.value().data() : nullptr;

  std::vector<T> col;
  if (!g.is_pointwise()) col.resize(static_cast<std::size_t>(K) * band * g.wout);

  for (int n = 0; n < xs.n; ++n) {
    const T* xn = x.value().sample(n);
    T* yn = out.sample(n);
    if (g.is_pointwise()) {
      MatMap<T>(yn, g.cout, P).noalias() = W * ConstMatMap<T>(xn, K, P);
    } else {
      for (int r0 = 0; r0 < g.hout; r0 += band) {
        const int r1 = std::min(g.hout, r0 + band);
        const int pc = (r1 - r0) * g.wout;
        im2col(xn, g, r0, r1, col.data());
        StridedMap<T>(yn + static_cast<std::size_t>(r0) * g.wout, g.cout, pc, Eigen::OuterStride<>(P))
            .noalias() = W * ConstMatMap<T>(col.data(), K, pc);
      }
    }
    if (b == nullptr) continue;
    for (int c = 0; c < g.cout; ++c) {
      T* plane = yn + static_cast<std::size_t>(c) * P;
      for (int i = 0; i < P; ++i) plane[i] += b[c];
    }
  }

  return make_result<T>(std::move(out), {x, weight, bias}, [x, weight, bias, g](const Tensor<T>& gout) {
    const int K = g.patch();
    const int P = g.hout * g.wout;
    const int band = g.band_rows();
    const bool need_x = x.requires_grad();
    const bool need_w = weight.requires_grad();
    const bool need_b = bias.defined() && bias.requires_grad();
    const int N = x.shape().n;

    if (need_b) {
      T* gb = bias.node()->grad_buffer().data();
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < g.cout; ++c) {
          const T* plane = gout.plane(n, c);
          T s = T(0);
          for (int i = 0; i < P; ++i) s += plane[i];
          gb[c] += s;
        }
      }
    }
    if (!need_x && !need_w) return;

    ConstMatMap<T> W(weight.value().data(), g.cout, K);
    T* gx_base = need_x ? x.node()->grad_buffer().data() : nullptr;
    T* gw_base = need_w ? weight.node()->grad_buffer().data() : nullptr;
    std::vector<T> col;
    std::vector<T> gcol;
    if (!g.is_pointwise()) {
      if (need_w) col.resize(static_cast<std::size_t>(K) * band * g.wout);
      if (need_x) gcol.resize(static_cast<std::size_t>(K) * band * g.wout);
    }
    const std::size_t in_stride = static_cast<std::size_t>(g.cin) * g.hin * g.win;

    for (int n = 0; n < N; ++n) {
      const T* xn = x.value().sample(n);
      const T* gyn = gout.sample(n);
      if (g.is_pointwise()) {
        ConstMatMap<T> G(gyn, g.cout, P);
        if (need_w) MatMap<T>(gw_base, g.cout, K).noalias() += G * ConstMatMap<T>(xn, K, P).transpose();
        if (need_x) MatMap<T>(gx_base + n * in_stride, K, P).noalias() += W.transpose() * G;
        continue;
      }
      for (int r0 = 0; r0 < g.hout; r0 += band) {
        const int r1 = std::min(g.hout, r0 + band);
        const int pc = (r1 - r0) * g.wout;
        ConstStridedMap<T> G(gyn + static_cast<std::size_t>(r0) * g.wout, g.cout, pc, Eigen::OuterStride<>(P));
        if (need_w) {
          im2col(xn, g, r0, r1, col.data());
          MatMap<T>(gw_base, g.cout, K).noalias() += G * ConstMatMap<T>(col.data(), K, pc).transpose();
        }
        if (need_x) {
          MatMap<T>(gcol.data(), K, pc).noalias() = W.transpose() * G;
          col2im(gcol.data(), g, r0, r1, gx_base + n * in_stride);
        }
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    for (const Var<T>* v : {&a, &b}) {
      if (!v->requires_grad()) continue;
      T* dst = v->node()->grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > T(0) ? in[i] : slope * in[i];
  return make_result<T>(std::move(out), {x}, [x, slope](const Tensor<T>& g) {
    const auto& in = x.value();
    T* dst = x.node()->grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += in[i] > T(0) ? g[i] : slope * g[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const auto& in = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // split by sign so exp never overflows
    const T v = in[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return make_result<T>(std::move(out), {x}, [x, y](const Tensor<T>& g) {
    T* dst = x.node()->grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = (*y)[i];
      dst[i] += g[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  const Shape s = x.shape();
  const std::size_t P = s.plane();
  if (P == 1) {
    return make_result<T>(x.value(), {x}, [x](const Tensor<T>& g) {
      T* dst = x.node()->grad_buffer().data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
  }
  Tensor<T> out(s);
  std::vector<T> inv_std(static_cast<std::size_t>(s.n) * s.c);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      double mean = 0.0;
      for (std::size_t i = 0; i < P; ++i) mean += in[i];
      mean /= static_cast<double>(P);
      double var = 0.0;
      for (std::size_t i = 0; i < P; ++i) {
        const double d = in[i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(P);
      const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      inv_std[static_cast<std::size_t>(n) * s.c + c] = inv;
      const T m = static_cast<T>(mean);
      for (std::size_t i = 0; i < P; ++i) o[i] = (in[i] - m) * inv;
    }
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return make_result<T>(std::move(out), {x}, [x, y, inv_std = std::move(inv_std)](const Tensor<T>& g) {
    const Shape s = x.shape();
    const std::size_t P = s.plane();
    auto& gx = x.node()->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* gp = g.plane(n, c);
        const T* yp = y->plane(n, c);
        T* dst = gx.plane(n, c);
        double mg = 0.0;
        double mgy = 0.0;
        for (std::size_t i = 0; i < P; ++i) {
          mg += gp[i];
          mgy += static_cast<double>(gp[i]) * yp[i];
        }
        const T a = static_cast<T>(mg / static_cast<double>(P));
        const T b = static_cast<T>(mgy / static_cast<double>(P));
        const T inv = inv_std[static_cast<std::size_t>(n) * s.c + c];
        for (std::size_t i = 0; i < P; ++i) dst[i] += inv * (gp[i] - a - yp[i] * b);
      }
    }
  });
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const Shape s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2: odd extent " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < os.h; ++y) {
        const T* r0 = in + static_cast<std::size_t>(2 * y) * s.w;
        const T* r1 = r0 + s.w;
        for (int xx = 0; xx < os.w; ++xx) {
          o[y * os.w + xx] = (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]) * T(0.25);
        }
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [x](const Tensor<T>& g) {
    const Shape s = x.shape();
    const int ow = s.w / 2;
    const int oh = s.h / 2;
    auto& gx = x.node()->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* gp = g.plane(n, c);
        T* dst = gx.plane(n, c);
        for (int y = 0; y < oh; ++y) {
          for (int xx = 0; xx < ow; ++xx) {
            const T v = gp[y * ow + xx] * T(0.25);
            T* r0 = dst + static_cast<std::size_t>(2 * y) * s.w + 2 * xx;
            r0[0] += v;
            r0[1] += v;
            r0[s.w] += v;
            r0[s.w + 1] += v;
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  const Shape s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0, "max_pool2: odd extent " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> out(os);
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < os.h; ++y) {
        for (int xx = 0; xx < os.w; ++xx, ++k) {
          const std::uint32_t base = static_cast<std::uint32_t>(2 * y * s.w + 2 * xx);
          std::uint32_t best = base;
          for (std::uint32_t off : {base + 1, base + static_cast<std::uint32_t>(s.w),
                                    base + static_cast<std::uint32_t>(s.w) + 1}) {
            if (in[off] > in[best]) best = off;
          }
          o[y * os.w + xx] = in[best];
          argmax[k] = best;
        }
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [x, argmax = std::move(argmax)](const Tensor<T>& g) {
    const Shape s = x.shape();
    const std::size_t oplane = static_cast<std::size_t>(s.h / 2) * (s.w / 2);
    auto& gx = x.node()->grad_buffer();
    std::size_t k = 0;
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* gp = g.plane(n, c);
        T* dst = gx.plane(n, c);
        for (std::size_t i = 0; i < oplane; ++i, ++k) dst[argmax[k]] += gp[i];
      }
    }
  });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.c, s.h * 2, s.w * 2};
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < os.h; ++y) {
        const T* row = in + static_cast<std::size_t>(y / 2) * s.w;
        T* orow = o + static_cast<std::size_t>(y) * os.w;
        for (int xx = 0; xx < os.w; ++xx) orow[xx] = row[xx / 2];
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [x](const Tensor<T>& g) {
    const Shape s = x.shape();
    const int ow = s.w * 2;
    auto& gx = x.node()->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* gp = g.plane(n, c);
        T* dst = gx.plane(n, c);
        for (int y = 0; y < s.h * 2; ++y) {
          T* drow = dst + static_cast<std::size_t>(y / 2) * s.w;
          const T* grow = gp + static_cast<std::size_t>(y) * ow;
          for (int xx = 0; xx < ow; ++xx) drow[xx / 2] += grow[xx];
        }
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
          "concat_channels: shape mismatch " + sa.str() + " vs " + sb.str());
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t na = static_cast<std::size_t>(sa.c) * sa.plane();
  const std::size_t nb = static_cast<std::size_t>(sb.c) * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    T* o = out.sample(n);
    std::copy_n(a.value().sample(n), na, o);
    std::copy_n(b.value().sample(n), nb, o + na);
  }
  return make_result<T>(std::move(out), {a, b}, [a, b, na, nb](const Tensor<T>& g) {
    for (int n = 0; n < a.shape().n; ++n) {
      const T* gp = g.sample(n);
      if (a.requires_grad()) {
        T* dst = a.node()->grad_buffer().sample(n);
        for (std::size_t i = 0; i < na; ++i) dst[i] += gp[i];
      }
      if (b.requires_grad()) {
        T* dst = b.node()->grad_buffer().sample(n);
        for (std::size_t i = 0; i < nb; ++i) dst[i] += gp[na + i];
      }
    }
  });
}

template <typename T>
Var<T> channel_affine(const Var<T>& x, std::span<const T> scale, std::span<const T> shift) {
  const Shape s = x.shape();
  require(scale.size() == static_cast<std::size_t>(s.c) && shift.size() == static_cast<std::size_t>(s.c),
          "channel_affine: expected " + std::to_string(s.c) + " coefficients");
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = in[i] * scale[c] + shift[c];
    }
  }
  std::vector<T> sc(scale.begin(), scale.end());
  return make_result<T>(std::move(out), {x}, [x, sc = std::move(sc)](const Tensor<T>& g) {
    const Shape s = x.shape();
    auto& gx = x.node()->grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* gp = g.plane(n, c);
        T* dst = gx.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += gp[i] * sc[c];
      }
    }
  });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, std::span<const double> weights) {
  require(terms.size() == weights.size(), "weighted_sum: terms/weights length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].value().size() == 1, "weighted_sum: terms must be scalars");
    total += weights[i] * static_cast<double>(terms[i].value()[0]);
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(total)), terms,
                        [terms, w = std::move(w)](const Tensor<T>& g) {
                          for (std::size_t i = 0; i < terms.size(); ++i) {
                            if (!terms[i].requires_grad()) continue;
                            terms[i].node()->grad_buffer()[0] += static_cast<T>(w[i]) * g[0];
                          }
                        });
}

#define DEHAZE_INSTANTIATE_OPS(T)                                                              \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, ConvParams);          \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> relu<T>(const Var<T>&);                                                       \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                              \
  template Var<T> sigmoid<T>(const Var<T>&);                                                    \
  template Var<T> instance_norm<T>(const Var<T>&, T);                                           \
  template Var<T> avg_pool2<T>(const Var<T>&);                                                  \
  template Var<T> max_pool2<T>(const Var<T>&);                                                  \
  template Var<T> upsample_nearest2<T>(const Var<T>&);                                          \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                             \
  template Var<T> channel_affine<T>(const Var<T>&, std::span<const T>, std::span<const T>);     \
  template Var<T> weighted_sum<T>(const std::vector<Var<T>>&, std::span<const double>);

DEHAZE_INSTANTIATE_OPS(float)
DEHAZE_INSTANTIATE_OPS(double)

#undef DEHAZE_INSTANTIATE_OPS

}  // namespace dehaze::ops
