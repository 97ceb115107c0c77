#include "cdnz/ops.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cdnz/parallel.h"
#include "im2col.h"

namespace cdnz {
namespace {

// Eigen sizes its GEMM blocks from CPUID cache sizes, which changes the
// summation order between hosts. Fixed sizes keep results bit-identical
// wherever the same binary runs.
[[maybe_unused]] const bool kCacheSizesPinned = [] {
  Eigen::setCpuCacheSizes(32 * 1024, 1024 * 1024, 8 * 1024 * 1024);
  return true;
}();

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void CheckSameTape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape() != b.tape()) throw InvalidArgument(std::string(op) + ": operands recorded on different tapes");
}

template <typename T>
void CheckRank(const Tensor<T>& t, int rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                     ShapeToString(t.shape()));
  }
}

template <typename T>
void AddInto(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (int64_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

int64_t ConvOutputExtent(int64_t in, int64_t kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Var<T> Conv2d(Var<T> input, Var<T> weight, Var<T> bias, int stride, int zero_pad) {
  CheckSameTape(input, weight, "conv2d");
  CheckSameTape(input, bias, "conv2d");
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  const Tensor<T>& b = bias.value();
  CheckRank(x, 4, "conv2d", "input");
  CheckRank(w, 4, "conv2d", "weight");
  if (stride < 1) throw InvalidArgument("conv2d: stride must be positive");
  if (zero_pad < 0) throw InvalidArgument("conv2d: padding must be non-negative");
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels but weight " +
                     ShapeToString(w.shape()) + " expects " + std::to_string(w.dim(1)));
  }
  if (b.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias " + ShapeToString(b.shape()) + " does not match " + std::to_string(cout) +
                     " output channels");
  }
  if (h + 2 * zero_pad < kh || wd + 2 * zero_pad < kw) {
    throw ShapeError("conv2d: kernel " + ShapeToString(w.shape()) + " larger than padded input " +
                     ShapeToString(x.shape()));
  }
  const int64_t ho = ConvOutputExtent(h, kh, stride, zero_pad);
  const int64_t wo = ConvOutputExtent(wd, kw, stride, zero_pad);
  const int64_t k = cin * kh * kw, p = ho * wo;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && zero_pad == 0;
  const detail::ConvGeometry geo{cin, h, wd, kh, kw, stride, zero_pad, ho, wo};

  Tensor<T> out(Shape{n, cout, ho, wo});
  ConstMatMap<T> wm(w.ptr(), cout, k);
  ParallelFor(n, [&](int64_t i) {
    AlignedVector<T> cols;
    const T* col_ptr = x.ptr() + i * cin * h * wd;
    if (!pointwise) {
      cols.resize(static_cast<size_t>(k * p));
      detail::Im2Col(col_ptr, geo, cols.data());
      col_ptr = cols.data();
    }
    MatMap<T> om(out.ptr() + i * cout * p, cout, p);
    om.noalias() = wm * ConstMatMap<T>(col_ptr, k, p);
    for (int64_t c = 0; c < cout; ++c) om.row(c).array() += b[c];
  });

  const bool rg = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  const size_t xi = input.id(), wi = weight.id(), bi = bias.id();
  return input.tape()->Record(
      std::move(out), rg,
      [=](Tape<T>& tape, const Tensor<T>& gout) {
        const Tensor<T>& xv = tape.value(xi);
        const Tensor<T>& wv = tape.value(wi);
        ConstMatMap<T> wmat(wv.ptr(), cout, k);
        if (tape.requires_grad(bi)) {
          Tensor<T>& gb = tape.GradBuffer(bi);
          for (int64_t s = 0; s < n; ++s) {
            ConstMatMap<T> g(gout.ptr() + s * cout * p, cout, p);
            for (int64_t c = 0; c < cout; ++c) gb[c] += g.row(c).sum();
          }
        }
        if (tape.requires_grad(wi)) {
          MatMap<T> gw(tape.GradBuffer(wi).ptr(), cout, k);
          AlignedVector<T> cols(pointwise ? 0 : static_cast<size_t>(k * p));
          for (int64_t s = 0; s < n; ++s) {
            const T* col_ptr = xv.ptr() + s * cin * h * wd;
            if (!pointwise) {
              detail::Im2Col(col_ptr, geo, cols.data());
              col_ptr = cols.data();
            }
            gw.noalias() += ConstMatMap<T>(gout.ptr() + s * cout * p, cout, p) *
                            ConstMatMap<T>(col_ptr, k, p).transpose();
          }
        }
        if (tape.requires_grad(xi)) {
          Tensor<T>& gx = tape.GradBuffer(xi);
          ParallelFor(n, [&](int64_t s) {
            ConstMatMap<T> g(gout.ptr() + s * cout * p, cout, p);
            T* dst = gx.ptr() + s * cin * h * wd;
            if (pointwise) {
              MatMap<T>(dst, k, p).noalias() += wmat.transpose() * g;
            } else {
              RowMat<T> dcols = wmat.transpose() * g;
              detail::Col2Im(dcols.data(), geo, dst);
            }
          });
        }
      });
}

template <typename T>
Var<T> ConvTranspose2d(Var<T> input, Var<T> weight, Var<T> bias, int stride, int crop) {
  CheckSameTape(input, weight, "conv_transpose2d");
  CheckSameTape(input, bias, "conv_transpose2d");
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  const Tensor<T>& b = bias.value();
  CheckRank(x, 4, "conv_transpose2d", "input");
  CheckRank(w, 4, "conv_transpose2d", "weight");
  if (stride < 1) throw InvalidArgument("conv_transpose2d: stride must be positive");
  if (crop < 0) throw InvalidArgument("conv_transpose2d: crop must be non-negative");
  const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (w.dim(0) != cin) {
    throw ShapeError("conv_transpose2d: input has " + std::to_string(cin) + " channels but weight " +
                     ShapeToString(w.shape()) + " expects " + std::to_string(w.dim(0)));
  }
  const int64_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (b.shape() != Shape{cout}) {
    throw ShapeError("conv_transpose2d: bias " + ShapeToString(b.shape()) + " does not match " +
                     std::to_string(cout) + " output channels");
  }
  const int64_t ho = (h - 1) * stride + kh - 2 * crop;
  const int64_t wo = (wd - 1) * stride + kw - 2 * crop;
  if (ho <= 0 || wo <= 0) {
    throw ShapeError("conv_transpose2d: non-positive output extent for input " + ShapeToString(x.shape()));
  }
  // The output plane seen as the input of the matching forward convolution.
  const detail::ConvGeometry geo{cout, ho, wo, kh, kw, stride, crop, h, wd};
  const int64_t k = cout * kh * kw, p = h * wd;

  Tensor<T> out(Shape{n, cout, ho, wo});
  ConstMatMap<T> wm(w.ptr(), cin, k);
  ParallelFor(n, [&](int64_t i) {
    RowMat<T> cols = wm.transpose() * ConstMatMap<T>(x.ptr() + i * cin * p, cin, p);
    T* dst = out.ptr() + i * cout * ho * wo;
    detail::Col2Im(cols.data(), geo, dst);
    for (int64_t c = 0; c < cout; ++c) {
      T* plane = dst + c * ho * wo;
      for (int64_t j = 0; j < ho * wo; ++j) plane[j] += b[c];
    }
  });

  const bool rg = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  const size_t xi = input.id(), wi = weight.id(), bi = bias.id();
  return input.tape()->Record(
      std::move(out), rg,
      [=](Tape<T>& tape, const Tensor<T>& gout) {
        const Tensor<T>& xv = tape.value(xi);
        const Tensor<T>& wv = tape.value(wi);
        const int64_t plane = ho * wo;
        if (tape.requires_grad(bi)) {
          Tensor<T>& gb = tape.GradBuffer(bi);
          for (int64_t s = 0; s < n; ++s) {
            for (int64_t c = 0; c < cout; ++c) {
              const T* g = gout.ptr() + (s * cout + c) * plane;
              T acc = 0;
              for (int64_t j = 0; j < plane; ++j) acc += g[j];
              gb[c] += acc;
            }
          }
        }
        const bool need_w = tape.requires_grad(wi), need_x = tape.requires_grad(xi);
        if (!need_w && !need_x) return;
        AlignedVector<T> gcols(static_cast<size_t>(k * p));
        Tensor<T>* gx = need_x ? &tape.GradBuffer(xi) : nullptr;
        Tensor<T>* gw = need_w ? &tape.GradBuffer(wi) : nullptr;
        ConstMatMap<T> wmat(wv.ptr(), cin, k);
        for (int64_t s = 0; s < n; ++s) {
          detail::Im2Col(gout.ptr() + s * cout * plane, geo, gcols.data());
          ConstMatMap<T> gc(gcols.data(), k, p);
          if (gw) {
            MatMap<T>(gw->ptr(), cin, k).noalias() +=
                ConstMatMap<T>(xv.ptr() + s * cin * p, cin, p) * gc.transpose();
          }
          if (gx) MatMap<T>(gx->ptr() + s * cin * p, cin, p).noalias() += wmat * gc;
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Var<T> BatchNorm(Var<T> input, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                 Mode mode, const BatchNormOptions& options) {
  CheckSameTape(input, gamma, "batch_norm");
  CheckSameTape(input, beta, "batch_norm");
  const Tensor<T>& x = input.value();
  CheckRank(x, 4, "batch_norm", "input");
  const int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Shape cshape{c};
  CheckSameShape(gamma.value().shape(), cshape, "batch_norm gamma");
  CheckSameShape(beta.value().shape(), cshape, "batch_norm beta");
  CheckSameShape(running_mean.shape(), cshape, "batch_norm running_mean");
  CheckSameShape(running_var.shape(), cshape, "batch_norm running_var");
  const int64_t m = n * plane;
  if (mode == Mode::kTrain && m < 2) {
    throw ShapeError("batch_norm: train mode needs at least 2 values per channel, got " + ShapeToString(x.shape()));
  }

  std::vector<T> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    if (mode == Mode::kTrain) {
      double sum = 0;
      for (int64_t s = 0; s < n; ++s) {
        const T* src = x.ptr() + (s * c + ch) * plane;
        for (int64_t j = 0; j < plane; ++j) sum += src[j];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0;
      for (int64_t s = 0; s < n; ++s) {
        const T* src = x.ptr() + (s * c + ch) * plane;
        for (int64_t j = 0; j < plane; ++j) {
          const double d = src[j] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + options.epsilon));
      running_mean[ch] = static_cast<T>(options.momentum * running_mean[ch] + (1.0 - options.momentum) * mu);
      running_var[ch] = static_cast<T>(options.momentum * running_var[ch] + (1.0 - options.momentum) * var);
    } else {
      mean[ch] = running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + options.epsilon));
    }
  }

  const Tensor<T>& g = gamma.value();
  const Tensor<T>& bt = beta.value();
  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t off = (s * c + ch) * plane;
      const T mu = mean[ch], is = inv_std[ch], gm = g[ch], bb = bt[ch];
      for (int64_t j = 0; j < plane; ++j) {
        const T v = (x[off + j] - mu) * is;
        xhat[off + j] = v;
        out[off + j] = gm * v + bb;
      }
    }
  }

  const bool rg = input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  const size_t xi = input.id(), gi = gamma.id(), bi = beta.id();
  const bool train = mode == Mode::kTrain;
  return input.tape()->Record(
      std::move(out), rg,
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tape, const Tensor<T>& gout) {
        const Tensor<T>& gmv = tape.value(gi);
        std::vector<double> sum_dy(static_cast<size_t>(c), 0.0), sum_dy_xhat(static_cast<size_t>(c), 0.0);
        for (int64_t s = 0; s < n; ++s) {
          for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t off = (s * c + ch) * plane;
            double a = 0, b2 = 0;
            for (int64_t j = 0; j < plane; ++j) {
              a += gout[off + j];
              b2 += static_cast<double>(gout[off + j]) * xhat[off + j];
            }
            sum_dy[ch] += a;
            sum_dy_xhat[ch] += b2;
          }
        }
        if (tape.requires_grad(gi)) {
          Tensor<T>& gg = tape.GradBuffer(gi);
          for (int64_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<T>(sum_dy_xhat[ch]);
        }
        if (tape.requires_grad(bi)) {
          Tensor<T>& gb = tape.GradBuffer(bi);
          for (int64_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<T>(sum_dy[ch]);
        }
        if (!tape.requires_grad(xi)) return;
        Tensor<T>& gx = tape.GradBuffer(xi);
        const double inv_m = 1.0 / static_cast<double>(m);
        for (int64_t s = 0; s < n; ++s) {
          for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t off = (s * c + ch) * plane;
            const T scale = gmv[ch] * inv_std[ch];
            if (train) {
              const T mean_dy = static_cast<T>(sum_dy[ch] * inv_m);
              const T mean_dy_xhat = static_cast<T>(sum_dy_xhat[ch] * inv_m);
              for (int64_t j = 0; j < plane; ++j) {
                gx[off + j] += scale * (gout[off + j] - mean_dy - xhat[off + j] * mean_dy_xhat);
              }
            } else {
              for (int64_t j = 0; j < plane; ++j) gx[off + j] += scale * gout[off + j];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Var<T> Relu(Var<T> input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  const size_t xi = input.id();
  return input.tape()->Record(std::move(out), input.requires_grad(), [xi](Tape<T>& tape, const Tensor<T>& gout) {
    const T* xv = tape.value(xi).ptr();
    const T* g = gout.ptr();
    T* gx = tape.GradBuffer(xi).ptr();
    const int64_t size = gout.size();
    for (int64_t i = 0; i < size; ++i) gx[i] += xv[i] > T(0) ? g[i] : T(0);
  });
}

template <typename T>
Var<T> MaxPool2(Var<T> input) {
  const Tensor<T>& x = input.value();
  CheckRank(x, 4, "max_pool2", "input");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("max_pool2: spatial extents must be even, got " + ShapeToString(x.shape()));
  }
  const int64_t ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{n, c, ho, wo});
  std::vector<int64_t> argmax(static_cast<size_t>(out.size()));
  for (int64_t plane = 0; plane < n * c; ++plane) {
    const T* src = x.ptr() + plane * h * w;
    for (int64_t i = 0; i < ho; ++i) {
      for (int64_t j = 0; j < wo; ++j) {
        int64_t best = (2 * i) * w + 2 * j;
        const int64_t cand[3] = {best + 1, best + w, best + w + 1};
        for (int64_t q : cand) {
          if (src[q] > src[best]) best = q;
        }
        const int64_t o = plane * ho * wo + i * wo + j;
        out[o] = src[best];
        argmax[static_cast<size_t>(o)] = plane * h * w + best;
      }
    }
  }
  const size_t xi = input.id();
  return input.tape()->Record(std::move(out), input.requires_grad(),
                              [xi, argmax = std::move(argmax)](Tape<T>& tape, const Tensor<T>& gout) {
                                Tensor<T>& gx = tape.GradBuffer(xi);
                                for (size_t o = 0; o < argmax.size(); ++o) {
                                  gx[argmax[o]] += gout[static_cast<int64_t>(o)];
                                }
                              });
}

template <typename T>
Var<T> Add(Var<T> a, Var<T> b) {
  CheckSameTape(a, b, "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  CheckSameShape(av.shape(), bv.shape(), "add");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const size_t ai = a.id(), bi = b.id();
  return a.tape()->Record(std::move(out), a.requires_grad() || b.requires_grad(),
                          [ai, bi](Tape<T>& tape, const Tensor<T>& gout) {
                            if (tape.requires_grad(ai)) AddInto(tape.GradBuffer(ai), gout);
                            if (tape.requires_grad(bi)) AddInto(tape.GradBuffer(bi), gout);
                          });
}

template <typename T>
Var<T> Mul(Var<T> a, Var<T> b) {
  CheckSameTape(a, b, "mul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  CheckSameShape(av.shape(), bv.shape(), "mul");
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const size_t ai = a.id(), bi = b.id();
  return a.tape()->Record(std::move(out), a.requires_grad() || b.requires_grad(),
                          [ai, bi](Tape<T>& tape, const Tensor<T>& gout) {
                            const Tensor<T>& av2 = tape.value(ai);
                            const Tensor<T>& bv2 = tape.value(bi);
                            if (tape.requires_grad(ai)) {
                              Tensor<T>& g = tape.GradBuffer(ai);
                              for (int64_t i = 0; i < g.size(); ++i) g[i] += gout[i] * bv2[i];
                            }
                            if (tape.requires_grad(bi)) {
                              Tensor<T>& g = tape.GradBuffer(bi);
                              for (int64_t i = 0; i < g.size(); ++i) g[i] += gout[i] * av2[i];
                            }
                          });
}

template <typename T>
Var<T> Scale(Var<T> a, T factor) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  const size_t ai = a.id();
  return a.tape()->Record(std::move(out), a.requires_grad(), [ai, factor](Tape<T>& tape, const Tensor<T>& gout) {
    Tensor<T>& g = tape.GradBuffer(ai);
    for (int64_t i = 0; i < g.size(); ++i) g[i] += gout[i] * factor;
  });
}

template <typename T>
Var<T> Sum(Var<T> a) {
  const Tensor<T>& av = a.value();
  double acc = 0;
  for (T v : av.data()) acc += v;
  const size_t ai = a.id();
  return a.tape()->Record(Tensor<T>::Scalar(static_cast<T>(acc)), a.requires_grad(),
                          [ai](Tape<T>& tape, const Tensor<T>& gout) {
                            Tensor<T>& g = tape.GradBuffer(ai);
                            const T go = gout[0];
                            for (int64_t i = 0; i < g.size(); ++i) g[i] += go;
                          });
}

template <typename T>
Var<T> ConcatChannels(Var<T> a, Var<T> b) {
  CheckSameTape(a, b, "concat_channels");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  CheckRank(av, 4, "concat_channels", "a");
  CheckRank(bv, 4, "concat_channels", "b");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat_channels: N,H,W must match, got " + ShapeToString(av.shape()) + " and " +
                     ShapeToString(bv.shape()));
  }
  const int64_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), plane = av.dim(2) * av.dim(3);
  Tensor<T> out(Shape{n, ca + cb, av.dim(2), av.dim(3)});
  for (int64_t s = 0; s < n; ++s) {
    std::copy_n(av.ptr() + s * ca * plane, ca * plane, out.ptr() + s * (ca + cb) * plane);
    std::copy_n(bv.ptr() + s * cb * plane, cb * plane, out.ptr() + (s * (ca + cb) + ca) * plane);
  }
  const size_t ai = a.id(), bi = b.id();
  return a.tape()->Record(std::move(out), a.requires_grad() || b.requires_grad(),
                          [=](Tape<T>& tape, const Tensor<T>& gout) {
                            for (int64_t s = 0; s < n; ++s) {
                              const T* src = gout.ptr() + s * (ca + cb) * plane;
                              if (tape.requires_grad(ai)) {
                                T* dst = tape.GradBuffer(ai).ptr() + s * ca * plane;
                                for (int64_t j = 0; j < ca * plane; ++j) dst[j] += src[j];
                              }
                              if (tape.requires_grad(bi)) {
                                T* dst = tape.GradBuffer(bi).ptr() + s * cb * plane;
                                for (int64_t j = 0; j < cb * plane; ++j) dst[j] += src[ca * plane + j];
                              }
                            }
                          });
}

template <typename T>
Var<T> GlobalAvgPool(Var<T> input) {
  const Tensor<T>& x = input.value();
  CheckRank(x, 4, "global_avg_pool", "input");
  const int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c});
  for (int64_t i = 0; i < n * c; ++i) {
    double acc = 0;
    for (int64_t j = 0; j < plane; ++j) acc += x[i * plane + j];
    out[i] = static_cast<T>(acc / static_cast<double>(plane));
  }
  const size_t xi = input.id();
  return input.tape()->Record(std::move(out), input.requires_grad(), [=](Tape<T>& tape, const Tensor<T>& gout) {
    Tensor<T>& gx = tape.GradBuffer(xi);
    const T inv = T(1) / static_cast<T>(plane);
    for (int64_t i = 0; i < n * c; ++i) {
      const T g = gout[i] * inv;
      for (int64_t j = 0; j < plane; ++j) gx[i * plane + j] += g;
    }
  });
}

template <typename T>
Var<T> Linear(Var<T> input, Var<T> weight, Var<T> bias) {
  CheckSameTape(input, weight, "linear");
  CheckSameTape(input, bias, "linear");
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  const Tensor<T>& b = bias.value();
  CheckRank(x, 2, "linear", "input");
  CheckRank(w, 2, "linear", "weight");
  const int64_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  if (w.dim(1) != cin) {
    throw ShapeError("linear: input " + ShapeToString(x.shape()) + " incompatible with weight " +
                     ShapeToString(w.shape()));
  }
  CheckSameShape(b.shape(), Shape{cout}, "linear bias");
  Tensor<T> out(Shape{n, cout});
  MatMap<T> om(out.ptr(), n, cout);
  om.noalias() = ConstMatMap<T>(x.ptr(), n, cin) * ConstMatMap<T>(w.ptr(), cout, cin).transpose();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < cout; ++j) om(i, j) += b[j];
  }
  const bool rg = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  const size_t xi = input.id(), wi = weight.id(), bi = bias.id();
  return input.tape()->Record(std::move(out), rg, [=](Tape<T>& tape, const Tensor<T>& gout) {
    ConstMatMap<T> g(gout.ptr(), n, cout);
    if (tape.requires_grad(bi)) {
      Tensor<T>& gb = tape.GradBuffer(bi);
      for (int64_t j = 0; j < cout; ++j) gb[j] += g.col(j).sum();
    }
    if (tape.requires_grad(wi)) {
      MatMap<T>(tape.GradBuffer(wi).ptr(), cout, cin).noalias() +=
          g.transpose() * ConstMatMap<T>(tape.value(xi).ptr(), n, cin);
    }
    if (tape.requires_grad(xi)) {
      MatMap<T>(tape.GradBuffer(xi).ptr(), n, cin).noalias() += g * ConstMatMap<T>(tape.value(wi).ptr(), cout, cin);
    }
  });
}

template <typename T>
Var<T> ShiftChannels(Var<T> input, std::span<const double> offsets) {
  const Tensor<T>& x = input.value();
  CheckRank(x, 4, "shift_channels", "input");
  const int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (static_cast<int64_t>(offsets.size()) != c) {
    throw ShapeError("shift_channels: " + std::to_string(offsets.size()) + " offsets for " + std::to_string(c) +
                     " channels");
  }
  Tensor<T> out(x.shape());
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const int64_t off = (s * c + ch) * plane;
      const T d = static_cast<T>(offsets[static_cast<size_t>(ch)]);
      for (int64_t j = 0; j < plane; ++j) out[off + j] = x[off + j] + d;
    }
  }
  const size_t xi = input.id();
  return input.tape()->Record(std::move(out), input.requires_grad(), [xi](Tape<T>& tape, const Tensor<T>& gout) {
    AddInto(tape.GradBuffer(xi), gout);
  });
}

namespace {

int64_t Reflect(int64_t i, int64_t extent) { return i < extent ? i : 2 * (extent - 1) - i; }

}  // namespace

template <typename T>
Var<T> ReflectPad(Var<T> input, int bottom, int right) {
  const Tensor<T>& x = input.value();
  CheckRank(x, 4, "reflect_pad", "input");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (bottom < 0 || right < 0 || bottom >= h || right >= w) {
    throw ShapeError("reflect_pad: padding (" + std::to_string(bottom) + "," + std::to_string(right) +
                     ") must be smaller than extents of " + ShapeToString(x.shape()));
  }
  const int64_t ho = h + bottom, wo = w + right;
  Tensor<T> out(Shape{n, c, ho, wo});
  for (int64_t plane = 0; plane < n * c; ++plane) {
    for (int64_t i = 0; i < ho; ++i) {
      const int64_t si = Reflect(i, h);
      for (int64_t j = 0; j < wo; ++j) {
        out[(plane * ho + i) * wo + j] = x[(plane * h + si) * w + Reflect(j, w)];
      }
    }
  }
  const size_t xi = input.id();
  return input.tape()->Record(std::move(out), input.requires_grad(), [=](Tape<T>& tape, const Tensor<T>& gout) {
    Tensor<T>& gx = tape.GradBuffer(xi);
    for (int64_t plane = 0; plane < n * c; ++plane) {
      for (int64_t i = 0; i < ho; ++i) {
        const int64_t si = Reflect(i, h);
        for (int64_t j = 0; j < wo; ++j) gx[(plane * h + si) * w + Reflect(j, w)] += gout[(plane * ho + i) * wo + j];
      }
    }
  });
}

template <typename T>
Var<T> Crop(Var<T> input, int64_t top, int64_t left, int64_t height, int64_t width) {
  const Tensor<T>& x = input.value();
  CheckRank(x, 4, "crop", "input");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > h || left + width > w) {
    throw ShapeError("crop: window out of bounds for " + ShapeToString(x.shape()));
  }
  Tensor<T> out(Shape{n, c, height, width});
  for (int64_t plane = 0; plane < n * c; ++plane) {
    for (int64_t i = 0; i < height; ++i) {
      std::copy_n(x.ptr() + (plane * h + top + i) * w + left, width, out.ptr() + (plane * height + i) * width);
    }
  }
  const size_t xi = input.id();
  return input.tape()->Record(std::move(out), input.requires_grad(), [=](Tape<T>& tape, const Tensor<T>& gout) {
    Tensor<T>& gx = tape.GradBuffer(xi);
    for (int64_t plane = 0; plane < n * c; ++plane) {
      for (int64_t i = 0; i < height; ++i) {
        T* dst = gx.ptr() + (plane * h + top + i) * w + left;
        const T* src = gout.ptr() + (plane * height + i) * width;
        for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
Var<T> MseLoss(Var<T> pred, Var<T> target) {
  CheckSameTape(pred, target, "mse_loss");
  const Tensor<T>& p = pred.value();
  const Tensor<T>& t = target.value();
  CheckSameShape(p.shape(), t.shape(), "mse_loss");
  double acc = 0;
  for (int64_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += d * d;
  }
  const int64_t count = p.size();
  const size_t pi = pred.id(), ti = target.id();
  return pred.tape()->Record(
      Tensor<T>::Scalar(static_cast<T>(acc / static_cast<double>(count))),
      pred.requires_grad() || target.requires_grad(), [=](Tape<T>& tape, const Tensor<T>& gout) {
        const Tensor<T>& pv = tape.value(pi);
        const Tensor<T>& tv = tape.value(ti);
        const T scale = T(2) * gout[0] / static_cast<T>(count);
        if (tape.requires_grad(pi)) {
          Tensor<T>& g = tape.GradBuffer(pi);
          for (int64_t i = 0; i < count; ++i) g[i] += scale * (pv[i] - tv[i]);
        }
        if (tape.requires_grad(ti)) {
          Tensor<T>& g = tape.GradBuffer(ti);
          for (int64_t i = 0; i < count; ++i) g[i] -= scale * (pv[i] - tv[i]);
        }
      });
}

template <typename T>
Var<T> CrossEntropyLoss(Var<T> logits, std::span<const int> labels, std::optional<int> ignore_label) {
  const Tensor<T>& z = logits.value();
  if (z.rank() != 2 && z.rank() != 4) {
    throw ShapeError("cross_entropy_loss: logits must be [N,K] or [N,K,H,W], got " + ShapeToString(z.shape()));
  }
  const int64_t n = z.dim(0), k = z.dim(1);
  const int64_t plane = z.rank() == 4 ? z.dim(2) * z.dim(3) : 1;
  if (static_cast<int64_t>(labels.size()) != n * plane) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for logits " +
                     ShapeToString(z.shape()));
  }
  // Softmax probabilities are kept for the backward pass.
  Tensor<T> prob(z.shape());
  double total = 0;
  int64_t counted = 0;
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t j = 0; j < plane; ++j) {
      const int label = labels[static_cast<size_t>(s * plane + j)];
      const bool ignored = ignore_label && label == *ignore_label;
      if (!ignored && (label < 0 || label >= k)) {
        throw InvalidArgument("cross_entropy_loss: label " + std::to_string(label) + " outside [0," +
                              std::to_string(k) + ")");
      }
      const int64_t base = s * k * plane + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(z[base + c * plane]));
      double denom = 0;
      for (int64_t c = 0; c < k; ++c) denom += std::exp(static_cast<double>(z[base + c * plane]) - mx);
      for (int64_t c = 0; c < k; ++c) {
        prob[base + c * plane] = static_cast<T>(std::exp(static_cast<double>(z[base + c * plane]) - mx) / denom);
      }
      if (ignored) continue;
      total += std::log(denom) - (static_cast<double>(z[base + label * plane]) - mx);
      ++counted;
    }
  }
  const T loss = counted ? static_cast<T>(total / static_cast<double>(counted)) : T(0);
  std::vector<int> label_copy(labels.begin(), labels.end());
  const size_t zi = logits.id();
  return logits.tape()->Record(
      Tensor<T>::Scalar(loss), logits.requires_grad(),
      [=, prob = std::move(prob), label_copy = std::move(label_copy)](Tape<T>& tape, const Tensor<T>& gout) {
        if (counted == 0) return;
        Tensor<T>& gz = tape.GradBuffer(zi);
        const T scale = gout[0] / static_cast<T>(counted);
        for (int64_t s = 0; s < n; ++s) {
          for (int64_t j = 0; j < plane; ++j) {
            const int label = label_copy[static_cast<size_t>(s * plane + j)];
            if (ignore_label && label == *ignore_label) continue;
            const int64_t base = s * k * plane + j;
            for (int64_t c = 0; c < k; ++c) {
              gz[base + c * plane] += scale * (prob[base + c * plane] - (c == label ? T(1) : T(0)));
            }
          }
        }
      });
}

#define CDNZ_INSTANTIATE_OPS(T)                                                                          \
  template Var<T> Conv2d(Var<T>, Var<T>, Var<T>, int, int);                                              \
  template Var<T> ConvTranspose2d(Var<T>, Var<T>, Var<T>, int, int);                                     \
  template Var<T> BatchNorm(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, Mode, const BatchNormOptions&); \
  template Var<T> Relu(Var<T>);                                                                          \
  template Var<T> MaxPool2(Var<T>);                                                                      \
  template Var<T> Add(Var<T>, Var<T>);                                                                   \
  template Var<T> Mul(Var<T>, Var<T>);                                                                   \
  template Var<T> Scale(Var<T>, T);                                                                      \
  template Var<T> Sum(Var<T>);                                                                           \
  template Var<T> ConcatChannels(Var<T>, Var<T>);                                                        \
  template Var<T> GlobalAvgPool(Var<T>);                                                                 \
  template Var<T> Linear(Var<T>, Var<T>, Var<T>);                                                        \
  template Var<T> ShiftChannels(Var<T>, std::span<const double>);                                        \
  template Var<T> ReflectPad(Var<T>, int, int);                                                          \
  template Var<T> Crop(Var<T>, int64_t, int64_t, int64_t, int64_t);                                      \
  template Var<T> MseLoss(Var<T>, Var<T>);                                                               \
  template Var<T> CrossEntropyLoss(Var<T>, std::span<const int>, std::optional<int>);

CDNZ_INSTANTIATE_OPS(float)
CDNZ_INSTANTIATE_OPS(double)

#undef CDNZ_INSTANTIATE_OPS

}  // namespace cdnz
