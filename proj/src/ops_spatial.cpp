#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>

#include "acenet/error.hpp"
#include "acenet/ops.hpp"

namespace acenet {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Dims4 {
  std::size_t n, c, h, w;
  bool batched;
  std::size_t plane() const { return h * w; }
  std::size_t sample() const { return c * h * w; }
};

Dims4 spatial_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ContractViolation(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + shape_string(s));
}

Shape make_shape(const Dims4& d, std::size_t c, std::size_t h, std::size_t w) {
  if (d.batched) return {d.n, c, h, w};
  return {c, h, w};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

namespace {

// Padded-plane layout for k x k convolution: every sample is zero-padded to
// Hp x Wp and the planes of all samples are laid end to end in one row per
// channel. A kernel tap (ky,kx) then reads a contiguous window shifted by
// ky*Wp+kx, so the convolution becomes one GEMM per tap. Output columns with
// ox >= W_out (and rows past H_out) are scratch and get discarded.
struct PaddedLayout {
  std::size_t hp, wp, plane, cols, row;
  PaddedLayout(const Dims4& d, std::size_t k, std::size_t pad)
      : hp(d.h + 2 * pad), wp(d.w + 2 * pad), plane(hp * wp), cols(d.n * plane), row(cols + (k - 1) * (wp + 1)) {}
};

using StridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

DoubleBuffer pad_planes(const double* x, const Dims4& d, const PaddedLayout& L, std::size_t pad) {
  DoubleBuffer buf(d.c * L.row, 0.0);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* src = x + n * d.sample() + c * d.plane();
      double* dst = buf.data() + c * L.row + n * L.plane;
      for (std::size_t y = 0; y < d.h; ++y) std::copy(src + y * d.w, src + (y + 1) * d.w, dst + (y + pad) * L.wp + pad);
    }
  return buf;
}

// kernel [C_out,C_in,k,k] -> per tap [C_out,C_in] blocks.
DoubleBuffer taps_from_kernel(const double* kernel, std::size_t c_out, std::size_t c_in, std::size_t k) {
  const std::size_t kk = k * k;
  DoubleBuffer taps(kk * c_out * c_in);
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t c = 0; c < c_in; ++c)
      for (std::size_t t = 0; t < kk; ++t) taps[(t * c_out + o) * c_in + c] = kernel[(o * c_in + c) * kk + t];
  return taps;
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, const Var& bias, std::size_t pad) {
  const Dims4 d = spatial_dims(input.shape(), "conv2d");
  const Shape& ks = kernel.shape();
  require(ks.size() == 4 && ks[2] == ks[3], "conv2d: kernel must be [C_out,C_in,k,k], got " + shape_string(ks));
  require(ks[1] == d.c, "conv2d: input has " + std::to_string(d.c) + " channels, kernel expects " +
                            std::to_string(ks[1]));
  require(ks[2] % 2 == 1, "conv2d: kernel size must be odd");
  const std::size_t c_out = ks[0];
  const std::size_t k = ks[2];
  require(bias.shape() == Shape{c_out}, "conv2d: bias must be [" + std::to_string(c_out) + "]");
  require(d.h + 2 * pad >= k && d.w + 2 * pad >= k, "conv2d: kernel larger than padded input");

  const std::size_t h_out = d.h + 2 * pad - k + 1, w_out = d.w + 2 * pad - k + 1;
  const std::size_t out_plane = h_out * w_out;
  const bool direct = (k == 1 && pad == 0);
  const PaddedLayout L(d, k, pad);

  Tensor out(make_shape(d, c_out, h_out, w_out));
  {
    const Tensor& x = input.value();
    const Eigen::Map<const Eigen::VectorXd> b(bias.value().data(), c_out);
    if (direct) {
      const ConstMapMat K(kernel.value().data(), c_out, d.c);
      for (std::size_t n = 0; n < d.n; ++n) {
        MapMat y(out.data() + n * c_out * out_plane, c_out, out_plane);
        y.noalias() = K * ConstMapMat(x.data() + n * d.sample(), d.c, out_plane);
        y.colwise() += b;
      }
    } else {
      const DoubleBuffer xp = pad_planes(x.data(), d, L, pad);
      const DoubleBuffer taps = taps_from_kernel(kernel.value().data(), c_out, d.c, k);
      RowMat yfull = RowMat::Zero(c_out, L.cols);
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t t = ky * k + kx;
          const ConstMapMat Kt(taps.data() + t * c_out * d.c, c_out, d.c);
          yfull.noalias() += Kt * StridedMap(xp.data() + ky * L.wp + kx, d.c, L.cols, Eigen::OuterStride<>(L.row));
        }
      for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t o = 0; o < c_out; ++o) {
          double* dst = out.data() + (n * c_out + o) * out_plane;
          const double* src = yfull.data() + o * L.cols + n * L.plane;
          for (std::size_t y = 0; y < h_out; ++y)
            for (std::size_t xo = 0; xo < w_out; ++xo) dst[y * w_out + xo] = src[y * L.wp + xo] + b[o];
        }
    }
  }

  Tape* tape = input.tape();
  const std::size_t xid = input.id(), kid = kernel.id();
  return tape->record(std::move(out), {input, kernel, bias},
                      [=](const Tensor& gout, GradSink& sink) {
                        Tensor* gx = sink.at(0);
                        Tensor* gk = sink.at(1);
                        Tensor* gb = sink.at(2);
                        const Tensor& x = tape->value(xid);
                        if (gb) {
                          for (std::size_t n = 0; n < d.n; ++n) {
                            const ConstMapMat dy(gout.data() + n * c_out * out_plane, c_out, out_plane);
                            Eigen::Map<Eigen::VectorXd>(gb->data(), c_out) += dy.rowwise().sum();
                          }
                        }
                        if (direct) {
                          const ConstMapMat K(tape->value(kid).data(), c_out, d.c);
                          for (std::size_t n = 0; n < d.n; ++n) {
                            const ConstMapMat dy(gout.data() + n * c_out * out_plane, c_out, out_plane);
                            const ConstMapMat xn(x.data() + n * d.sample(), d.c, out_plane);
                            if (gk) MapMat(gk->data(), c_out, d.c).noalias() += dy * xn.transpose();
                            if (gx) MapMat(gx->data() + n * d.sample(), d.c, out_plane).noalias() += K.transpose() * dy;
                          }
                          return;
                        }
                        RowMat dyfull = RowMat::Zero(c_out, L.cols);
                        for (std::size_t n = 0; n < d.n; ++n)
                          for (std::size_t o = 0; o < c_out; ++o) {
                            const double* src = gout.data() + (n * c_out + o) * out_plane;
                            double* dst = dyfull.data() + o * L.cols + n * L.plane;
                            for (std::size_t y = 0; y < h_out; ++y)
                              std::copy(src + y * w_out, src + (y + 1) * w_out, dst + y * L.wp);
                          }
                        if (gk) {
                          const DoubleBuffer xp = pad_planes(x.data(), d, L, pad);
                          const std::size_t kk = k * k;
                          RowMat dtap(c_out, d.c);
                          for (std::size_t t = 0; t < kk; ++t) {
                            const std::size_t off = (t / k) * L.wp + t % k;
                            dtap.noalias() = dyfull * StridedMap(xp.data() + off, d.c, L.cols,
                                                                 Eigen::OuterStride<>(L.row)).transpose();
                            for (std::size_t o = 0; o < c_out; ++o)
                              for (std::size_t c = 0; c < d.c; ++c) (*gk)[(o * d.c + c) * kk + t] += dtap(o, c);
                          }
                        }
                        if (gx) {
                          const DoubleBuffer taps = taps_from_kernel(tape->value(kid).data(), c_out, d.c, k);
                          DoubleBuffer dxp(d.c * L.row, 0.0);
                          for (std::size_t t = 0; t < k * k; ++t) {
                            const std::size_t off = (t / k) * L.wp + t % k;
                            const ConstMapMat Kt(taps.data() + t * c_out * d.c, c_out, d.c);
                            MutStridedMap(dxp.data() + off, d.c, L.cols, Eigen::OuterStride<>(L.row)).noalias() +=
                                Kt.transpose() * dyfull;
                          }
                          for (std::size_t n = 0; n < d.n; ++n)
                            for (std::size_t c = 0; c < d.c; ++c) {
                              const double* src = dxp.data() + c * L.row + n * L.plane;
                              double* dst = gx->data() + n * d.sample() + c * d.plane();
                              for (std::size_t y = 0; y < d.h; ++y)
                                for (std::size_t xo = 0; xo < d.w; ++xo) dst[y * d.w + xo] += src[(y + pad) * L.wp + xo + pad];
                            }
                        }
                      });
}

PoolResult maxpool2d(const Var& input) {
  const Dims4 d = spatial_dims(input.shape(), "maxpool2d");
  require(d.h % 2 == 0 && d.w % 2 == 0,
          "maxpool2d: spatial dims must be even, got " + shape_string(input.shape()));
  const std::size_t ho = d.h / 2, wo = d.w / 2;
  Tensor out(make_shape(d, d.c, ho, wo));
  std::vector<std::size_t> argmax(out.size());
  const Tensor& x = input.value();
  std::size_t o = 0;
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const std::size_t base = p * d.plane();
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        const std::size_t cand[4] = {base + (2 * oy) * d.w + 2 * ox, base + (2 * oy) * d.w + 2 * ox + 1,
                                     base + (2 * oy + 1) * d.w + 2 * ox, base + (2 * oy + 1) * d.w + 2 * ox + 1};
        std::size_t best = cand[0];
        for (int i = 1; i < 4; ++i)
          if (x[cand[i]] > x[best]) best = cand[i];
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  std::uint64_t picks = 0;
  for (std::size_t a : argmax) picks = picks * 0x9e3779b97f4a7c15ULL + a;
  input.tape()->note_branch(picks);
  PoolResult result;
  result.argmax = argmax;
  result.output = input.tape()->record(std::move(out), {input},
                                       [argmax = std::move(argmax)](const Tensor& gout, GradSink& sink) {
                                         Tensor* gx = sink.at(0);
                                         if (!gx) return;
                                         for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += gout[i];
                                       });
  return result;
}

Var upsample2d(const Var& input) {
  const Dims4 d = spatial_dims(input.shape(), "upsample2d");
  const std::size_t ho = d.h * 2, wo = d.w * 2;
  Tensor out(make_shape(d, d.c, ho, wo));
  const Tensor& x = input.value();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* src = x.data() + p * d.plane();
    double* dst = out.data() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = src[(oy / 2) * d.w + ox / 2];
  }
  return input.tape()->record(std::move(out), {input}, [d, ho, wo](const Tensor& gout, GradSink& sink) {
    Tensor* gx = sink.at(0);
    if (!gx) return;
    for (std::size_t p = 0; p < d.n * d.c; ++p) {
      const double* src = gout.data() + p * ho * wo;
      double* dst = gx->data() + p * d.plane();
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) dst[(oy / 2) * d.w + ox / 2] += src[oy * wo + ox];
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Dims4 d0 = spatial_dims(parts[0].shape(), "concat_channels");
  std::vector<std::size_t> channels;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Dims4 d = spatial_dims(p.shape(), "concat_channels");
    require(d.batched == d0.batched && d.n == d0.n && d.h == d0.h && d.w == d0.w,
            "concat_channels: incompatible shapes " + shape_string(d0.batched ? parts[0].shape() : p.shape()) +
                " and " + shape_string(p.shape()));
    channels.push_back(d.c);
    total += d.c;
  }
  Tensor out(make_shape(d0, total, d0.h, d0.w));
  const std::size_t plane = d0.plane();
  for (std::size_t n = 0; n < d0.n; ++n) {
    double* dst = out.data() + n * total * plane;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const double* src = parts[i].value().data() + n * channels[i] * plane;
      dst = std::copy(src, src + channels[i] * plane, dst);
    }
  }
  return parts[0].tape()->record(std::move(out), parts, [d0, channels, total](const Tensor& gout, GradSink& sink) {
    const std::size_t plane = d0.plane();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      if (Tensor* g = sink.at(i)) {
        for (std::size_t n = 0; n < d0.n; ++n) {
          const double* src = gout.data() + (n * total + offset) * plane;
          double* dst = g->data() + n * channels[i] * plane;
          for (std::size_t j = 0; j < channels[i] * plane; ++j) dst[j] += src[j];
        }
      }
      offset += channels[i];
    }
  });
}

Var slice_channels(const Var& x, std::size_t first, std::size_t count) {
  const Dims4 d = spatial_dims(x.shape(), "slice_channels");
  require(count > 0 && first + count <= d.c, "slice_channels: range out of bounds");
  Tensor out(make_shape(d, count, d.h, d.w));
  const std::size_t plane = d.plane();
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* src = x.value().data() + (n * d.c + first) * plane;
    std::copy(src, src + count * plane, out.data() + n * count * plane);
  }
  return x.tape()->record(std::move(out), {x}, [d, first, count](const Tensor& gout, GradSink& sink) {
    Tensor* g = sink.at(0);
    if (!g) return;
    const std::size_t plane = d.plane();
    for (std::size_t n = 0; n < d.n; ++n) {
      const double* src = gout.data() + n * count * plane;
      double* dst = g->data() + (n * d.c + first) * plane;
      for (std::size_t j = 0; j < count * plane; ++j) dst[j] += src[j];
    }
  });
}

Var global_avg_pool(const Var& x) {
  const Dims4 d = spatial_dims(x.shape(), "global_avg_pool");
  Tensor out(d.batched ? Shape{d.n, d.c} : Shape{d.c});
  const std::size_t plane = d.plane();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double* src = x.value().data() + p * plane;
    double s = 0.0;
    for (std::size_t j = 0; j < plane; ++j) s += src[j];
    out[p] = s / static_cast<double>(plane);
  }
  return x.tape()->record(std::move(out), {x}, [d](const Tensor& gout, GradSink& sink) {
    Tensor* g = sink.at(0);
    if (!g) return;
    const std::size_t plane = d.plane();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t p = 0; p < d.n * d.c; ++p) {
      double* dst = g->data() + p * plane;
      for (std::size_t j = 0; j < plane; ++j) dst[j] += gout[p] * inv;
    }
  });
}

Var scale_channels(const Var& x, const Var& gate) {
  const Dims4 d = spatial_dims(x.shape(), "scale_channels");
  const Shape expected = d.batched ? Shape{d.n, d.c} : Shape{d.c};
  require(gate.shape() == expected, "scale_channels: gate must be " + shape_string(expected) + ", got " +
                                        shape_string(gate.shape()));
  Tensor out(x.shape());
  const std::size_t plane = d.plane();
  for (std::size_t p = 0; p < d.n * d.c; ++p) {
    const double gv = gate.value()[p];
    const double* src = x.value().data() + p * plane;
    double* dst = out.data() + p * plane;
    for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] * gv;
  }
  Tape* tape = x.tape();
  const std::size_t xid = x.id(), gid = gate.id();
  return tape->record(std::move(out), {x, gate}, [=](const Tensor& gout, GradSink& sink) {
    Tensor* gx = sink.at(0);
    Tensor* gg = sink.at(1);
    const Tensor& xv = tape->value(xid);
    const Tensor& gv = tape->value(gid);
    for (std::size_t p = 0; p < d.n * d.c; ++p) {
      const double* go = gout.data() + p * plane;
      if (gx) {
        double* dst = gx->data() + p * plane;
        for (std::size_t j = 0; j < plane; ++j) dst[j] += go[j] * gv[p];
      }
      if (gg) {
        const double* src = xv.data() + p * plane;
        double s = 0.0;
        for (std::size_t j = 0; j < plane; ++j) s += go[j] * src[j];
        (*gg)[p] += s;
      }
    }
  });
}

Var scale_spatial(const Var& x, const Var& map) {
  const Dims4 d = spatial_dims(x.shape(), "scale_spatial");
  const Shape expected = make_shape(d, 1, d.h, d.w);
  require(map.shape() == expected, "scale_spatial: map must be " + shape_string(expected) + ", got " +
                                       shape_string(map.shape()));
  Tensor out(x.shape());
  const std::size_t plane = d.plane();
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* m = map.value().data() + n * plane;
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* src = x.value().data() + (n * d.c + c) * plane;
      double* dst = out.data() + (n * d.c + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] * m[j];
    }
  }
  Tape* tape = x.tape();
  const std::size_t xid = x.id(), mid = map.id();
  return tape->record(std::move(out), {x, map}, [=](const Tensor& gout, GradSink& sink) {
    Tensor* gx = sink.at(0);
    Tensor* gm = sink.at(1);
    const Tensor& xv = tape->value(xid);
    const Tensor& mv = tape->value(mid);
    for (std::size_t n = 0; n < d.n; ++n) {
      const double* m = mv.data() + n * plane;
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t off = (n * d.c + c) * plane;
        const double* go = gout.data() + off;
        if (gx)
          for (std::size_t j = 0; j < plane; ++j) (*gx)[off + j] += go[j] * m[j];
        if (gm) {
          double* dm = gm->data() + n * plane;
          for (std::size_t j = 0; j < plane; ++j) dm[j] += go[j] * xv[off + j];
        }
      }
    }
  });
}

Var softmax_channels(const Var& x) {
  const Dims4 d = spatial_dims(x.shape(), "softmax_channels");
  Tensor out(x.shape());
  const std::size_t plane = d.plane();
  const Tensor& xv = x.value();
  for (std::size_t n = 0; n < d.n; ++n) {
    const std::size_t base = n * d.sample();
    for (std::size_t j = 0; j < plane; ++j) {
      double mx = xv[base + j];
      for (std::size_t c = 1; c < d.c; ++c) mx = std::max(mx, xv[base + c * plane + j]);
      double s = 0.0;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double e = std::exp(xv[base + c * plane + j] - mx);
        out[base + c * plane + j] = e;
        s += e;
      }
      for (std::size_t c = 0; c < d.c; ++c) out[base + c * plane + j] /= s;
    }
  }
  return x.tape()->record(std::move(out), {x}, [d](const Tensor& gout, GradSink& sink) {
    Tensor* gx = sink.at(0);
    if (!gx) return;
    const Tensor& y = sink.output();
    const std::size_t plane = d.plane();
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t base = n * d.sample();
      for (std::size_t j = 0; j < plane; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d.c; ++c) dot += y[base + c * plane + j] * gout[base + c * plane + j];
        for (std::size_t c = 0; c < d.c; ++c) {
          const std::size_t i = base + c * plane + j;
          (*gx)[i] += y[i] * (gout[i] - dot);
        }
      }
    }
  });
}

Var batchnorm2d(const Var& x, const Var& scale, const Var& shift, const BatchNormState& state, bool train) {
  const Dims4 d = spatial_dims(x.shape(), "batchnorm2d");
  require(scale.shape() == Shape{d.c} && shift.shape() == Shape{d.c},
          "batchnorm2d: scale/shift must have " + std::to_string(d.c) + " entries");
  require(state.running_mean && state.running_var && state.running_mean->size() == d.c &&
              state.running_var->size() == d.c,
          "batchnorm2d: running statistics do not match channel count");
  const std::size_t plane = d.plane();
  const std::size_t m = d.n * plane;
  require(!train || m >= 2, "batchnorm2d: train mode needs N*H*W >= 2 (variance undefined)");

  const Tensor& xv = x.value();
  std::vector<double> mean(d.c), inv_std(d.c);
  if (train) {
    for (std::size_t c = 0; c < d.c; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const double* src = xv.data() + (n * d.c + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += src[j];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const double* src = xv.data() + (n * d.c + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) v += (src[j] - mu) * (src[j] - mu);
      }
      const double var = v / static_cast<double>(m);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + kBatchNormEps);
      const double unbiased = v / static_cast<double>(m - 1);
      (*state.running_mean)[c] = (1.0 - kBatchNormMomentum) * (*state.running_mean)[c] + kBatchNormMomentum * mu;
      (*state.running_var)[c] =
          (1.0 - kBatchNormMomentum) * (*state.running_var)[c] + kBatchNormMomentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < d.c; ++c) {
      mean[c] = (*state.running_mean)[c];
      inv_std[c] = 1.0 / std::sqrt((*state.running_var)[c] + kBatchNormEps);
    }
  }

  Tensor xhat(x.shape());
  Tensor out(x.shape());
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t off = (n * d.c + c) * plane;
      const double gam = scale.value()[c], bet = shift.value()[c];
      for (std::size_t j = 0; j < plane; ++j) {
        const double h = (xv[off + j] - mean[c]) * inv_std[c];
        xhat[off + j] = h;
        out[off + j] = h * gam + bet;
      }
    }
  }

  Tape* tape = x.tape();
  const std::size_t sid = scale.id();
  return tape->record(std::move(out), {x, scale, shift},
                      [=, xhat = std::move(xhat)](const Tensor& gout, GradSink& sink) {
                        Tensor* gx = sink.at(0);
                        Tensor* gs = sink.at(1);
                        Tensor* gb = sink.at(2);
                        const Tensor& gam = tape->value(sid);
                        for (std::size_t c = 0; c < d.c; ++c) {
                          double sum_dy = 0.0, sum_dy_xhat = 0.0;
                          for (std::size_t n = 0; n < d.n; ++n) {
                            const std::size_t off = (n * d.c + c) * plane;
                            for (std::size_t j = 0; j < plane; ++j) {
                              sum_dy += gout[off + j];
                              sum_dy_xhat += gout[off + j] * xhat[off + j];
                            }
                          }
                          if (gs) (*gs)[c] += sum_dy_xhat;
                          if (gb) (*gb)[c] += sum_dy;
                          if (!gx) continue;
                          const double k = gam[c] * inv_std[c];
                          if (train) {
                            const double inv_m = 1.0 / static_cast<double>(m);
                            for (std::size_t n = 0; n < d.n; ++n) {
                              const std::size_t off = (n * d.c + c) * plane;
                              for (std::size_t j = 0; j < plane; ++j)
                                (*gx)[off + j] +=
                                    k * (gout[off + j] - inv_m * sum_dy - xhat[off + j] * inv_m * sum_dy_xhat);
                            }
                          } else {
                            for (std::size_t n = 0; n < d.n; ++n) {
                              const std::size_t off = (n * d.c + c) * plane;
                              for (std::size_t j = 0; j < plane; ++j) (*gx)[off + j] += k * gout[off + j];
                            }
                          }
                        }
                      });
}

Var dropout(const Var& x, double rate, bool train, std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0,1)");
  if (!train || rate == 0.0) return x;
  const std::size_t count = x.value().size();
  Tensor mask(x.shape());
  std::mt19937_64 rng(splitmix64(seed));
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < rate ? 0.0 : keep_scale;
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < count; ++i) out[i] = x.value()[i] * mask[i];
  return x.tape()->record(std::move(out), {x}, [mask = std::move(mask)](const Tensor& gout, GradSink& sink) {
    Tensor* gx = sink.at(0);
    if (!gx) return;
    for (std::size_t i = 0; i < mask.size(); ++i) (*gx)[i] += gout[i] * mask[i];
  });
}

}  // namespace acenet
