#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedseg/tensor.hpp"

namespace fedseg {

namespace detail {

// Every primitive funnels its result through here: non-finite values never
// propagate silently.
inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value in result");
  }
}

// Gathers tape node ids for the inputs of a primitive, registering
// requires_grad leaves on first use. Returns true if any input participates.
inline bool gather_parents(GradTape* tape, std::initializer_list<const Tensor*> inputs,
                           std::vector<int>& parents) {
  bool any = false;
  parents.clear();
  for (const Tensor* t : inputs) {
    int id = -1;
    if (t->tape_epoch() == tape->epoch() && t->node() >= 0) {
      id = t->node();
    } else if (t->requires_grad()) {
      id = tape->leaf(*t);
    }
    parents.push_back(id);
    any |= (id >= 0);
  }
  return any;
}

inline void maybe_record(const Tensor& out, const char* op,
                         std::initializer_list<const Tensor*> inputs,
                         const std::function<std::vector<Tensor>(const Tensor&, const std::vector<bool>&)>& make_grads) {
  GradTape* tape = active_tape();
  if (!tape) return;
  std::vector<int> parents;
  if (!gather_parents(tape, inputs, parents)) return;
  std::vector<bool> need(parents.size());
  for (size_t i = 0; i < parents.size(); ++i) need[i] = parents[i] >= 0;
  int id = tape->record(op, parents,
                        [make_grads, need](const Tensor& g) { return make_grads(g, need); });
  out.bind_node(tape->epoch(), id);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// outer * axis * inner decomposition for single-axis reductions/maps.
struct AxisSplit {
  int64_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  AxisSplit sp;
  for (int i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.extent = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

inline Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out.push_back(s[i]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> d(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < d.size(); ++i) d[i] += bv[i];
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::check_finite(out, "add");
  detail::maybe_record(out, "add", {&a, &b}, [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{g, g};
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> d(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < d.size(); ++i) d[i] -= bv[i];
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::check_finite(out, "sub");
  detail::maybe_record(out, "sub", {&a, &b}, [](const Tensor& g, const std::vector<bool>& need) {
    Tensor gb;
    if (need[1]) {
      std::vector<double> nb(g.values());
      for (double& v : nb) v = -v;
      gb = Tensor::from(g.shape(), std::move(nb));
    }
    return std::vector<Tensor>{g, gb};
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> d(a.values());
  const auto& bv = b.values();
  for (size_t i = 0; i < d.size(); ++i) d[i] *= bv[i];
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::check_finite(out, "mul");
  detail::maybe_record(out, "mul", {&a, &b},
                       [a, b](const Tensor& g, const std::vector<bool>& need) {
                         Tensor ga, gb;
                         const auto& gv = g.values();
                         if (need[0]) {
                           std::vector<double> v(gv);
                           const auto& bv2 = b.values();
                           for (size_t i = 0; i < v.size(); ++i) v[i] *= bv2[i];
                           ga = Tensor::from(g.shape(), std::move(v));
                         }
                         if (need[1]) {
                           std::vector<double> v(gv);
                           const auto& av2 = a.values();
                           for (size_t i = 0; i < v.size(); ++i) v[i] *= av2[i];
                           gb = Tensor::from(g.shape(), std::move(v));
                         }
                         return std::vector<Tensor>{ga, gb};
                       });
  return out;
}

inline Tensor scalar_mul(const Tensor& a, double s) {
  std::vector<double> d(a.values());
  for (double& v : d) v *= s;
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::check_finite(out, "scalar_mul");
  detail::maybe_record(out, "scalar_mul", {&a}, [s](const Tensor& g, const std::vector<bool>&) {
    std::vector<double> v(g.values());
    for (double& x : v) x *= s;
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(v))};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

inline void matmul_values(const double* a, const double* b, double* out, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    double* orow = out + static_cast<int64_t>(i) * m;
    for (int j = 0; j < m; ++j) orow[j] = 0.0;
    const double* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<int64_t>(p) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeError("matmul: both inputs must be rank-2");
  int n = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  int m = b.shape()[1];
  std::vector<double> d(static_cast<size_t>(n) * m);
  detail::matmul_values(a.values().data(), b.values().data(), d.data(), n, k, m);
  Tensor out = Tensor::from({n, m}, std::move(d));
  detail::check_finite(out, "matmul");
  detail::maybe_record(
      out, "matmul", {&a, &b}, [a, b, n, k, m](const Tensor& g, const std::vector<bool>& need) {
        Tensor ga, gb;
        const double* gv = g.values().data();
        if (need[0]) {  // g . b^T : (n,m)x(m,k)
          std::vector<double> v(static_cast<size_t>(n) * k, 0.0);
          const double* bv = b.values().data();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
              double gij = gv[static_cast<int64_t>(i) * m + j];
              if (gij == 0.0) continue;
              for (int p = 0; p < k; ++p)
                v[static_cast<int64_t>(i) * k + p] += gij * bv[static_cast<int64_t>(p) * m + j];
            }
          ga = Tensor::from({n, k}, std::move(v));
        }
        if (need[1]) {  // a^T . g : (k,n)x(n,m)
          std::vector<double> v(static_cast<size_t>(k) * m, 0.0);
          const double* av = a.values().data();
          for (int i = 0; i < n; ++i)
            for (int p = 0; p < k; ++p) {
              double aip = av[static_cast<int64_t>(i) * k + p];
              if (aip == 0.0) continue;
              for (int j = 0; j < m; ++j)
                v[static_cast<int64_t>(p) * m + j] += aip * gv[static_cast<int64_t>(i) * m + j];
            }
          gb = Tensor::from({k, m}, std::move(v));
        }
        return std::vector<Tensor>{ga, gb};
      });
  return out;
}

// 3x3 same-padding convolution, stride 1 or 2. input (N,Ci,H,W),
// weight (Co,Ci,3,3), bias (Co).
inline Tensor conv2d_3x3_same(const Tensor& input, const Tensor& weight, const Tensor& bias,
                              int stride = 1) {
  if (input.shape().size() != 4) throw ShapeError("conv2d: input must be (N,Ci,H,W)");
  if (weight.shape().size() != 4 || weight.shape()[2] != 3 || weight.shape()[3] != 3)
    throw ShapeError("conv2d: weight must be (Co,Ci,3,3)");
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  int N = input.shape()[0], Ci = input.shape()[1], H = input.shape()[2], W = input.shape()[3];
  int Co = weight.shape()[0];
  if (weight.shape()[1] != Ci) throw ShapeError("conv2d: channel mismatch");
  if (bias.shape() != Shape{Co}) throw ShapeError("conv2d: bias must be (Co)");
  int Ho = (H - 1) / stride + 1;
  int Wo = (W - 1) / stride + 1;

  auto in_at = [&](const double* p, int n, int c, int y, int x) {
    return p[((static_cast<int64_t>(n) * Ci + c) * H + y) * W + x];
  };
  auto w_at = [&](const double* p, int co, int ci, int ky, int kx) {
    return p[((static_cast<int64_t>(co) * Ci + ci) * 3 + ky) * 3 + kx];
  };

  std::vector<double> d(static_cast<size_t>(N) * Co * Ho * Wo);
  const double* ip = input.values().data();
  const double* wp = weight.values().data();
  const double* bp = bias.values().data();
  int64_t idx = 0;
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = bp[co];
          for (int ci = 0; ci < Ci; ++ci)
            for (int ky = 0; ky < 3; ++ky) {
              int iy = oy * stride + ky - 1;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < 3; ++kx) {
                int ix = ox * stride + kx - 1;
                if (ix < 0 || ix >= W) continue;
                acc += in_at(ip, n, ci, iy, ix) * w_at(wp, co, ci, ky, kx);
              }
            }
          d[idx++] = acc;
        }
  Tensor out = Tensor::from({N, Co, Ho, Wo}, std::move(d));
  detail::check_finite(out, "conv2d_3x3_same");
  detail::maybe_record(
      out, "conv2d_3x3_same", {&input, &weight, &bias},
      [input, weight, stride, N, Ci, H, W, Co, Ho, Wo](const Tensor& g,
                                                       const std::vector<bool>& need) {
        const double* gp = g.values().data();
        const double* ip = input.values().data();
        const double* wp = weight.values().data();
        Tensor gi, gw, gb;
        std::vector<double> giv, gwv, gbv;
        if (need[0]) giv.assign(static_cast<size_t>(N) * Ci * H * W, 0.0);
        if (need[1]) gwv.assign(static_cast<size_t>(Co) * Ci * 9, 0.0);
        if (need[2]) gbv.assign(Co, 0.0);
        int64_t idx = 0;
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Co; ++co)
            for (int oy = 0; oy < Ho; ++oy)
              for (int ox = 0; ox < Wo; ++ox) {
                double go = gp[idx++];
                if (go == 0.0) continue;
                if (need[2]) gbv[co] += go;
                for (int ci = 0; ci < Ci; ++ci)
                  for (int ky = 0; ky < 3; ++ky) {
                    int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                      int ix = ox * stride + kx - 1;
                      if (ix < 0 || ix >= W) continue;
                      int64_t ii = ((static_cast<int64_t>(n) * Ci + ci) * H + iy) * W + ix;
                      int64_t wi = ((static_cast<int64_t>(co) * Ci + ci) * 3 + ky) * 3 + kx;
                      if (need[0]) giv[ii] += go * wp[wi];
                      if (need[1]) gwv[wi] += go * ip[ii];
                    }
                  }
              }
        if (need[0]) gi = Tensor::from({N, Ci, H, W}, std::move(giv));
        if (need[1]) gw = Tensor::from({Co, Ci, 3, 3}, std::move(gwv));
        if (need[2]) gb = Tensor::from({Co}, std::move(gbv));
        return std::vector<Tensor>{gi, gw, gb};
      });
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a) {
  std::vector<double> d(a.values());
  for (double& v : d) v = v > 0.0 ? v : 0.0;
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::maybe_record(out, "relu", {&a}, [a](const Tensor& g, const std::vector<bool>&) {
    std::vector<double> v(g.values());
    const auto& av = a.values();
    for (size_t i = 0; i < v.size(); ++i)
      if (av[i] <= 0.0) v[i] = 0.0;
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(v))};
  });
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> d(a.values());
  for (double& v : d) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::maybe_record(out, "sigmoid", {&a}, [out](const Tensor& g, const std::vector<bool>&) {
    std::vector<double> v(g.values());
    const auto& ov = out.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= ov[i] * (1.0 - ov[i]);
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(v))};
  });
  return out;
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> d(a.values());
  for (double& v : d) v = std::exp(v);
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::check_finite(out, "exp");
  detail::maybe_record(out, "exp", {&a}, [out](const Tensor& g, const std::vector<bool>&) {
    std::vector<double> v(g.values());
    const auto& ov = out.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= ov[i];
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(v))};
  });
  return out;
}

inline Tensor log(const Tensor& a) {
  std::vector<double> d(a.values());
  for (double& v : d) {
    if (v <= 0.0) throw NumericError("log: non-positive input");
    v = std::log(v);
  }
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::check_finite(out, "log");
  detail::maybe_record(out, "log", {&a}, [a](const Tensor& g, const std::vector<bool>&) {
    std::vector<double> v(g.values());
    const auto& av = a.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] /= av[i];
    return std::vector<Tensor>{Tensor::from(g.shape(), std::move(v))};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

inline Tensor softmax_axis(const Tensor& a, int axis) {
  auto sp = detail::split_axis(a.shape(), axis, "softmax_axis");
  std::vector<double> d(a.values());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      double mx = -1e300;
      for (int64_t e = 0; e < sp.extent; ++e)
        mx = std::max(mx, d[(o * sp.extent + e) * sp.inner + i]);
      double sum = 0.0;
      for (int64_t e = 0; e < sp.extent; ++e) {
        double& v = d[(o * sp.extent + e) * sp.inner + i];
        v = std::exp(v - mx);
        sum += v;
      }
      for (int64_t e = 0; e < sp.extent; ++e) d[(o * sp.extent + e) * sp.inner + i] /= sum;
    }
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::check_finite(out, "softmax_axis");
  detail::maybe_record(out, "softmax_axis", {&a},
                       [out, sp](const Tensor& g, const std::vector<bool>&) {
                         // ds = s * (g - sum(g*s))
                         std::vector<double> v(g.values());
                         const auto& ov = out.values();
                         for (int64_t o = 0; o < sp.outer; ++o)
                           for (int64_t i = 0; i < sp.inner; ++i) {
                             double dot = 0.0;
                             for (int64_t e = 0; e < sp.extent; ++e) {
                               int64_t idx = (o * sp.extent + e) * sp.inner + i;
                               dot += v[idx] * ov[idx];
                             }
                             for (int64_t e = 0; e < sp.extent; ++e) {
                               int64_t idx = (o * sp.extent + e) * sp.inner + i;
                               v[idx] = ov[idx] * (v[idx] - dot);
                             }
                           }
                         return std::vector<Tensor>{Tensor::from(g.shape(), std::move(v))};
                       });
  return out;
}

inline Tensor log_softmax_axis(const Tensor& a, int axis) {
  auto sp = detail::split_axis(a.shape(), axis, "log_softmax_axis");
  std::vector<double> d(a.values());
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      double mx = -1e300;
      for (int64_t e = 0; e < sp.extent; ++e)
        mx = std::max(mx, d[(o * sp.extent + e) * sp.inner + i]);
      double sum = 0.0;
      for (int64_t e = 0; e < sp.extent; ++e)
        sum += std::exp(d[(o * sp.extent + e) * sp.inner + i] - mx);
      double lse = mx + std::log(sum);
      for (int64_t e = 0; e < sp.extent; ++e) d[(o * sp.extent + e) * sp.inner + i] -= lse;
    }
  Tensor out = Tensor::from(a.shape(), std::move(d));
  detail::check_finite(out, "log_softmax_axis");
  detail::maybe_record(out, "log_softmax_axis", {&a},
                       [out, sp](const Tensor& g, const std::vector<bool>&) {
                         // dx = g - softmax * sum(g)
                         std::vector<double> v(g.values());
                         const auto& ov = out.values();
                         for (int64_t o = 0; o < sp.outer; ++o)
                           for (int64_t i = 0; i < sp.inner; ++i) {
                             double gsum = 0.0;
                             for (int64_t e = 0; e < sp.extent; ++e)
                               gsum += v[(o * sp.extent + e) * sp.inner + i];
                             for (int64_t e = 0; e < sp.extent; ++e) {
                               int64_t idx = (o * sp.extent + e) * sp.inner + i;
                               v[idx] -= std::exp(ov[idx]) * gsum;
                             }
                           }
                         return std::vector<Tensor>{Tensor::from(g.shape(), std::move(v))};
                       });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and shape manipulation
// ---------------------------------------------------------------------------

inline Tensor sum_axis(const Tensor& a, int axis) {
  auto sp = detail::split_axis(a.shape(), axis, "sum_axis");
  Shape oshape = detail::drop_axis(a.shape(), axis);
  std::vector<double> d(static_cast<size_t>(sp.outer * sp.inner), 0.0);
  const auto& av = a.values();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t e = 0; e < sp.extent; ++e)
      for (int64_t i = 0; i < sp.inner; ++i)
        d[o * sp.inner + i] += av[(o * sp.extent + e) * sp.inner + i];
  Tensor out = Tensor::from(std::move(oshape), std::move(d));
  detail::check_finite(out, "sum_axis");
  Shape in_shape = a.shape();
  detail::maybe_record(out, "sum_axis", {&a},
                       [sp, in_shape](const Tensor& g, const std::vector<bool>&) {
                         std::vector<double> v(static_cast<size_t>(sp.outer * sp.extent * sp.inner));
                         const auto& gv = g.values();
                         for (int64_t o = 0; o < sp.outer; ++o)
                           for (int64_t e = 0; e < sp.extent; ++e)
                             for (int64_t i = 0; i < sp.inner; ++i)
                               v[(o * sp.extent + e) * sp.inner + i] = gv[o * sp.inner + i];
                         return std::vector<Tensor>{Tensor::from(in_shape, std::move(v))};
                       });
  return out;
}

inline Tensor mean_axis(const Tensor& a, int axis) {
  auto sp = detail::split_axis(a.shape(), axis, "mean_axis");
  Tensor s = sum_axis(a, axis);
  return scalar_mul(s, 1.0 / static_cast<double>(sp.extent));
}

inline Tensor concat_axis(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat_axis: no inputs");
  const Shape& base = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(base.size()))
    throw ShapeError("concat_axis: axis out of range");
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != base.size()) throw ShapeError("concat_axis: rank mismatch");
    for (size_t i = 0; i < base.size(); ++i)
      if (static_cast<int>(i) != axis && p.shape()[i] != base[i])
        throw ShapeError("concat_axis: shape mismatch off the concat axis");
    total += p.shape()[axis];
  }
  Shape oshape = base;
  oshape[axis] = total;
  auto osp = detail::split_axis(oshape, axis, "concat_axis");
  std::vector<double> d(static_cast<size_t>(numel(oshape)));
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    int64_t ext = p.shape()[axis];
    const auto& pv = p.values();
    for (int64_t o = 0; o < osp.outer; ++o)
      for (int64_t e = 0; e < ext; ++e)
        for (int64_t i = 0; i < osp.inner; ++i)
          d[(o * osp.extent + offset + e) * osp.inner + i] = pv[(o * ext + e) * osp.inner + i];
    offset += ext;
  }
  Tensor out = Tensor::from(std::move(oshape), std::move(d));
  detail::check_finite(out, "concat_axis");

  GradTape* tape = active_tape();
  if (tape) {
    std::vector<int> parents;
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(parts.size());
    bool any = false;
    for (const Tensor& p : parts) {
      int id = -1;
      if (p.tape_epoch() == tape->epoch() && p.node() >= 0) {
        id = p.node();
      } else if (p.requires_grad()) {
        id = tape->leaf(p);
      }
      parents.push_back(id);
      any |= (id >= 0);
    }
    if (any) {
      std::vector<int> extents;
      for (const Tensor& p : parts) extents.push_back(p.shape()[axis]);
      Shape base_shape = base;
      int cat_axis = axis;
      auto back = [extents, base_shape, cat_axis, osp](const Tensor& g) {
        std::vector<Tensor> grads;
        const auto& gv = g.values();
        int64_t offset = 0;
        for (int ext : extents) {
          Shape ps = base_shape;
          ps[cat_axis] = ext;
          std::vector<double> v(static_cast<size_t>(numel(ps)));
          for (int64_t o = 0; o < osp.outer; ++o)
            for (int64_t e = 0; e < ext; ++e)
              for (int64_t i = 0; i < osp.inner; ++i)
                v[(o * ext + e) * osp.inner + i] = gv[(o * osp.extent + offset + e) * osp.inner + i];
          grads.push_back(Tensor::from(std::move(ps), std::move(v)));
          offset += ext;
        }
        return grads;
      };
      int id = tape->record("concat_axis", parents, back);
      out.bind_node(tape->epoch(), id);
    }
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw ShapeError("reshape: cannot reshape " + shape_str(a.shape()) + " to " +
                     shape_str(new_shape));
  Tensor out = Tensor::from(std::move(new_shape), a.values());
  Shape old_shape = a.shape();
  detail::maybe_record(out, "reshape", {&a},
                       [old_shape](const Tensor& g, const std::vector<bool>&) {
                         return std::vector<Tensor>{Tensor::from(old_shape, g.values())};
                       });
  return out;
}

// Swap two axes of an arbitrary-rank tensor.
inline Tensor transpose2(const Tensor& a, int ax0 = 0, int ax1 = 1) {
  const Shape& s = a.shape();
  int r = static_cast<int>(s.size());
  if (ax0 < 0 || ax0 >= r || ax1 < 0 || ax1 >= r)
    throw ShapeError("transpose2: axis out of range");
  if (ax0 == ax1) return reshape(a, s);
  Shape oshape = s;
  std::swap(oshape[ax0], oshape[ax1]);

  std::vector<int64_t> in_strides(r, 1), out_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
  for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * oshape[i + 1];

  std::vector<double> d(a.values().size());
  const auto& av = a.values();
  std::vector<int> idx(r, 0);
  for (int64_t flat = 0; flat < static_cast<int64_t>(av.size()); ++flat) {
    int64_t rem = flat;
    int64_t oflat = 0;
    for (int i = 0; i < r; ++i) {
      int64_t c = rem / in_strides[i];
      rem %= in_strides[i];
      int oi = i == ax0 ? ax1 : (i == ax1 ? ax0 : i);
      oflat += c * out_strides[oi];
    }
    d[oflat] = av[flat];
  }
  Tensor out = Tensor::from(std::move(oshape), std::move(d));
  detail::maybe_record(out, "transpose2", {&a},
                       [ax0, ax1](const Tensor& g, const std::vector<bool>&) {
                         return std::vector<Tensor>{transpose2(g, ax0, ax1)};
                       });
  return out;
}

// Expand dims of extent 1 up to `target`. Rank must match.
inline Tensor broadcast_to(const Tensor& a, Shape target) {
  const Shape& s = a.shape();
  if (s.size() != target.size())
    throw ShapeError("broadcast: rank mismatch " + shape_str(s) + " vs " + shape_str(target));
  int r = static_cast<int>(s.size());
  for (int i = 0; i < r; ++i)
    if (s[i] != target[i] && s[i] != 1)
      throw ShapeError("broadcast: cannot expand " + shape_str(s) + " to " + shape_str(target));

  std::vector<int64_t> in_strides(r, 1), out_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
  for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * target[i + 1];

  std::vector<double> d(static_cast<size_t>(numel(target)));
  const auto& av = a.values();
  for (int64_t flat = 0; flat < static_cast<int64_t>(d.size()); ++flat) {
    int64_t rem = flat;
    int64_t iflat = 0;
    for (int i = 0; i < r; ++i) {
      int64_t c = rem / out_strides[i];
      rem %= out_strides[i];
      if (s[i] != 1) iflat += c * in_strides[i];
    }
    d[flat] = av[iflat];
  }
  Tensor out = Tensor::from(target, std::move(d));
  Shape in_shape = s;
  detail::maybe_record(out, "broadcast", {&a},
                       [in_shape, target](const Tensor& g, const std::vector<bool>&) {
                         // Sum the gradient over every expanded axis.
                         Tensor acc = g;
                         for (int i = static_cast<int>(target.size()) - 1; i >= 0; --i) {
                           if (in_shape[i] == 1 && target[i] != 1) {
                             acc = sum_axis(acc, i);
                             // restore the axis as extent 1
                             Shape ns = acc.shape();
                             ns.insert(ns.begin() + i, 1);
                             acc = reshape(acc, ns);
                           }
                         }
                         return std::vector<Tensor>{acc};
                       });
  return out;
}

// ---------------------------------------------------------------------------
// Convenience compositions (not primitives)
// ---------------------------------------------------------------------------

inline Tensor flatten(const Tensor& a) {
  return reshape(a, {static_cast<int>(a.size())});
}

inline Tensor sum_all(const Tensor& a) {
  Tensor f = a.shape().size() == 1 ? a : flatten(a);
  return sum_axis(f, 0);
}

inline Tensor mean_all(const Tensor& a) {
  Tensor f = a.shape().size() == 1 ? a : flatten(a);
  return mean_axis(f, 0);
}

inline Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

// ---------------------------------------------------------------------------
// Uniform primitive dispatch
// ---------------------------------------------------------------------------

enum class Prim {
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kMatmul,
  kConv2d3x3Same,
  kRelu,
  kSigmoid,
  kSoftmaxAxis,
  kLogSoftmaxAxis,
  kExp,
  kLog,
  kSumAxis,
  kMeanAxis,
  kConcatAxis,
  kReshape,
  kTranspose2,
  kBroadcast,
};

struct PrimAttrs {
  int axis = 0;
  int stride = 1;
  double scalar = 1.0;
  Shape shape;         // reshape / broadcast target
  int axis_a = 0;      // transpose2
  int axis_b = 1;
};

inline Tensor apply_primitive(Prim op, const std::vector<Tensor>& inputs,
                              const PrimAttrs& attrs = {}) {
  auto need = [&](size_t n) {
    if (inputs.size() != n)
      throw ContractError("apply_primitive: wrong input count");
  };
  switch (op) {
    case Prim::kAdd: need(2); return add(inputs[0], inputs[1]);
    case Prim::kSub: need(2); return sub(inputs[0], inputs[1]);
    case Prim::kMul: need(2); return mul(inputs[0], inputs[1]);
    case Prim::kScalarMul: need(1); return scalar_mul(inputs[0], attrs.scalar);
    case Prim::kMatmul: need(2); return matmul(inputs[0], inputs[1]);
    case Prim::kConv2d3x3Same:
      need(3);
      return conv2d_3x3_same(inputs[0], inputs[1], inputs[2], attrs.stride);
    case Prim::kRelu: need(1); return relu(inputs[0]);
    case Prim::kSigmoid: need(1); return sigmoid(inputs[0]);
    case Prim::kSoftmaxAxis: need(1); return softmax_axis(inputs[0], attrs.axis);
    case Prim::kLogSoftmaxAxis: need(1); return log_softmax_axis(inputs[0], attrs.axis);
    case Prim::kExp: need(1); return exp(inputs[0]);
    case Prim::kLog: need(1); return log(inputs[0]);
    case Prim::kSumAxis: need(1); return sum_axis(inputs[0], attrs.axis);
    case Prim::kMeanAxis: need(1); return mean_axis(inputs[0], attrs.axis);
    case Prim::kConcatAxis: return concat_axis(inputs, attrs.axis);
    case Prim::kReshape: need(1); return reshape(inputs[0], attrs.shape);
    case Prim::kTranspose2: need(1); return transpose2(inputs[0], attrs.axis_a, attrs.axis_b);
    case Prim::kBroadcast: need(1); return broadcast_to(inputs[0], attrs.shape);
  }
  throw ContractError("apply_primitive: unknown op");
}

}  // namespace fedseg
