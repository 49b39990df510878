#include "apv/ops.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace apv {
namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using MapC = Eigen::Map<const RowMat>;

MapC as_mat(const Tensor& t, long rows, long cols) { return MapC(t.data(), rows, cols); }
MapM as_mat(Tensor& t, long rows, long cols) { return MapM(t.data(), rows, cols); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch");
}

// Patch extraction straight from the unpadded [C, H, W] plane; one row per
// output position, column index c*k*k + ky*k + kx, zeros where the patch
// hangs over the border.
void im2col(const real* src, long C, long H, long W, long k, long s, long pad, long oh, long ow,
            real* col) {
  const long patch = k * k;
  for (long y = 0; y < oh; ++y) {
    const long y0 = y * s - pad;
    for (long x = 0; x < ow; ++x) {
      const long x0 = x * s - pad;
      real* row = col + (y * ow + x) * (C * patch);
      const bool x_inside = x0 >= 0 && x0 + k <= W;
      for (long c = 0; c < C; ++c) {
        const real* plane = src + c * H * W;
        real* dst = row + c * patch;
        for (long ky = 0; ky < k; ++ky) {
          const long yy = y0 + ky;
          real* d = dst + ky * k;
          if (yy < 0 || yy >= H) {
            for (long kx = 0; kx < k; ++kx) d[kx] = 0;
          } else if (x_inside) {
            const real* sp = plane + yy * W + x0;
            for (long kx = 0; kx < k; ++kx) d[kx] = sp[kx];
          } else {
            const real* sp = plane + yy * W;
            for (long kx = 0; kx < k; ++kx) {
              const long xx = x0 + kx;
              d[kx] = (xx < 0 || xx >= W) ? real(0) : sp[xx];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-accumulate patches onto the unpadded plane,
// dropping contributions outside the border.
void col2im(const real* col, long C, long H, long W, long k, long s, long pad, long oh, long ow,
            real* dst) {
  const long patch = k * k;
  for (long y = 0; y < oh; ++y) {
    const long y0 = y * s - pad;
    for (long x = 0; x < ow; ++x) {
      const long x0 = x * s - pad;
      const real* row = col + (y * ow + x) * (C * patch);
      const bool x_inside = x0 >= 0 && x0 + k <= W;
      for (long c = 0; c < C; ++c) {
        real* plane = dst + c * H * W;
        const real* sp = row + c * patch;
        for (long ky = 0; ky < k; ++ky) {
          const long yy = y0 + ky;
          if (yy < 0 || yy >= H) continue;
          const real* s2 = sp + ky * k;
          if (x_inside) {
            real* dp = plane + yy * W + x0;
            for (long kx = 0; kx < k; ++kx) dp[kx] += s2[kx];
          } else {
            real* dp = plane + yy * W;
            for (long kx = 0; kx < k; ++kx) {
              const long xx = x0 + kx;
              if (xx >= 0 && xx < W) dp[xx] += s2[kx];
            }
          }
        }
      }
    }
  }
}

// dval(grad_out, input, output) -> grad contribution; monomorphized so the
// element loop stays free of indirect calls.
template <class F>
Var unary_op(Tape& t, Var a, Tensor value, F dval) {
  return t.make(std::move(value), {a.id}, [a, dval](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    const Tensor& x = tt.node(a.id).value;
    const Tensor& y = tt.node(self).value;
    Tensor& ga = tt.grad_buf(a.id);
    for (long i = 0; i < g.size(); ++i) ga.at(i) += dval(g.at(i), x.at(i), y.at(i));
  });
}

}  // namespace

namespace ops {

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "add");
  Tensor y = t.val(a);
  const Tensor& vb = t.val(b);
  for (long i = 0; i < y.size(); ++i) y.at(i) += vb.at(i);
  return t.make(std::move(y), {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    if (tt.wants_grad(a.id)) {
      Tensor& ga = tt.grad_buf(a.id);
      for (long i = 0; i < g.size(); ++i) ga.at(i) += g.at(i);
    }
    if (tt.wants_grad(b.id)) {
      Tensor& gb = tt.grad_buf(b.id);
      for (long i = 0; i < g.size(); ++i) gb.at(i) += g.at(i);
    }
  });
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "sub");
  Tensor y = t.val(a);
  const Tensor& vb = t.val(b);
  for (long i = 0; i < y.size(); ++i) y.at(i) -= vb.at(i);
  return t.make(std::move(y), {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    if (tt.wants_grad(a.id)) {
      Tensor& ga = tt.grad_buf(a.id);
      for (long i = 0; i < g.size(); ++i) ga.at(i) += g.at(i);
    }
    if (tt.wants_grad(b.id)) {
      Tensor& gb = tt.grad_buf(b.id);
      for (long i = 0; i < g.size(); ++i) gb.at(i) -= g.at(i);
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "mul");
  Tensor y = t.val(a);
  const Tensor& vb = t.val(b);
  for (long i = 0; i < y.size(); ++i) y.at(i) *= vb.at(i);
  return t.make(std::move(y), {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    const Tensor& va = tt.node(a.id).value;
    const Tensor& vb2 = tt.node(b.id).value;
    if (tt.wants_grad(a.id)) {
      Tensor& ga = tt.grad_buf(a.id);
      for (long i = 0; i < g.size(); ++i) ga.at(i) += g.at(i) * vb2.at(i);
    }
    if (tt.wants_grad(b.id)) {
      Tensor& gb = tt.grad_buf(b.id);
      for (long i = 0; i < g.size(); ++i) gb.at(i) += g.at(i) * va.at(i);
    }
  });
}

Var div(Tape& t, Var a, Var b) {
  check_same_shape(t.val(a), t.val(b), "div");
  Tensor y = t.val(a);
  const Tensor& vb = t.val(b);
  for (long i = 0; i < y.size(); ++i) y.at(i) /= vb.at(i);
  return t.make(std::move(y), {a.id, b.id}, [a, b](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    const Tensor& va = tt.node(a.id).value;
    const Tensor& vb2 = tt.node(b.id).value;
    if (tt.wants_grad(a.id)) {
      Tensor& ga = tt.grad_buf(a.id);
      for (long i = 0; i < g.size(); ++i) ga.at(i) += g.at(i) / vb2.at(i);
    }
    if (tt.wants_grad(b.id)) {
      Tensor& gb = tt.grad_buf(b.id);
      for (long i = 0; i < g.size(); ++i)
        gb.at(i) -= g.at(i) * va.at(i) / (vb2.at(i) * vb2.at(i));
    }
  });
}

Var neg(Tape& t, Var a) { return scale(t, a, real(-1)); }

Var scale(Tape& t, Var a, real s) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) *= s;
  return t.make(std::move(y), {a.id}, [a, s](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    Tensor& ga = tt.grad_buf(a.id);
    for (long i = 0; i < g.size(); ++i) ga.at(i) += s * g.at(i);
  });
}

Var add_scalar(Tape& t, Var a, real s) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) += s;
  return t.make(std::move(y), {a.id}, [a](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    Tensor& ga = tt.grad_buf(a.id);
    for (long i = 0; i < g.size(); ++i) ga.at(i) += g.at(i);
  });
}

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& va = t.val(a);
  const Tensor& vb = t.val(b);
  const long m = va.rows(), k = va.cols(), n = vb.cols();
  if (vb.rows() != k) throw ShapeError("matmul: inner dimensions disagree");
  Tensor y({m, n});
  as_mat(y, m, n).noalias() = as_mat(va, m, k) * as_mat(vb, k, n);
  return t.make(std::move(y), {a.id, b.id}, [a, b, m, k, n](Tape& tt, int self) {
    MapC g(tt.grad_buf(self).data(), m, n);
    if (tt.wants_grad(a.id))
      as_mat(tt.grad_buf(a.id), m, k).noalias() += g * as_mat(tt.node(b.id).value, k, n).transpose();
    if (tt.wants_grad(b.id))
      as_mat(tt.grad_buf(b.id), k, n).noalias() += as_mat(tt.node(a.id).value, m, k).transpose() * g;
  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& vx = t.val(x);
  const Tensor& vw = t.val(w);
  const Tensor& vb = t.val(b);
  const long n = vx.rows(), kk = vx.cols(), m = vw.cols();
  if (vw.rows() != kk || vb.size() != m) throw ShapeError("linear: shape mismatch");
  Tensor y({n, m});
  auto ym = as_mat(y, n, m);
  ym.noalias() = as_mat(vx, n, kk) * as_mat(vw, kk, m);
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<real, 1, Eigen::Dynamic>>(vb.data(), m);
  return t.make(std::move(y), {x.id, w.id, b.id}, [x, w, b, n, kk, m](Tape& tt, int self) {
    MapC g(tt.grad_buf(self).data(), n, m);
    if (tt.wants_grad(x.id))
      as_mat(tt.grad_buf(x.id), n, kk).noalias() += g * as_mat(tt.node(w.id).value, kk, m).transpose();
    if (tt.wants_grad(w.id))
      as_mat(tt.grad_buf(w.id), kk, m).noalias() += as_mat(tt.node(x.id).value, n, kk).transpose() * g;
    if (tt.wants_grad(b.id)) {
      Tensor& gb = tt.grad_buf(b.id);
      Eigen::Map<Eigen::Matrix<real, 1, Eigen::Dynamic>>(gb.data(), m) += g.colwise().sum();
    }
  });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty");
  const long n = t.val(parts[0]).rows();
  long total = 0;
  for (Var p : parts) {
    if (t.val(p).rows() != n) throw ShapeError("concat_cols: row mismatch");
    total += t.val(p).cols();
  }
  Tensor y({n, total});
  long off = 0;
  std::vector<int> ids;
  std::vector<long> offsets, widths;
  for (Var p : parts) {
    const Tensor& v = t.val(p);
    const long c = v.cols();
    for (long r = 0; r < n; ++r)
      std::copy(v.data() + r * c, v.data() + (r + 1) * c, y.data() + r * total + off);
    ids.push_back(p.id);
    offsets.push_back(off);
    widths.push_back(c);
    off += c;
  }
  return t.make(std::move(y), ids, [ids, offsets, widths, n, total](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!tt.wants_grad(ids[i])) continue;
      Tensor& gp = tt.grad_buf(ids[i]);
      const long c = widths[i], off2 = offsets[i];
      for (long r = 0; r < n; ++r) {
        const real* src = g.data() + r * total + off2;
        real* dst = gp.data() + r * c;
        for (long j = 0; j < c; ++j) dst[j] += src[j];
      }
    }
  });
}

Var slice_cols(Tape& t, Var x, long start, long len) {
  const Tensor& v = t.val(x);
  const long n = v.rows(), c = v.cols();
  if (start < 0 || start + len > c) throw ShapeError("slice_cols: out of range");
  Tensor y({n, len});
  for (long r = 0; r < n; ++r)
    std::copy(v.data() + r * c + start, v.data() + r * c + start + len, y.data() + r * len);
  return t.make(std::move(y), {x.id}, [x, start, len, n, c](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    Tensor& gx = tt.grad_buf(x.id);
    for (long r = 0; r < n; ++r) {
      const real* src = g.data() + r * len;
      real* dst = gx.data() + r * c + start;
      for (long j = 0; j < len; ++j) dst[j] += src[j];
    }
  });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty");
  const long c = t.val(parts[0]).cols();
  long total = 0;
  for (Var p : parts) {
    if (t.val(p).cols() != c) throw ShapeError("concat_rows: column mismatch");
    total += t.val(p).rows();
  }
  Tensor y({total, c});
  long off = 0;
  std::vector<int> ids;
  std::vector<long> offsets, heights;
  for (Var p : parts) {
    const Tensor& v = t.val(p);
    std::copy(v.data(), v.data() + v.size(), y.data() + off * c);
    ids.push_back(p.id);
    offsets.push_back(off);
    heights.push_back(v.rows());
    off += v.rows();
  }
  return t.make(std::move(y), ids, [ids, offsets, heights, c](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!tt.wants_grad(ids[i])) continue;
      Tensor& gp = tt.grad_buf(ids[i]);
      const real* src = g.data() + offsets[i] * c;
      for (long j = 0; j < heights[i] * c; ++j) gp.at(j) += src[j];
    }
  });
}

Var slice_rows(Tape& t, Var x, long start, long len) {
  const Tensor& v = t.val(x);
  const long c = v.cols();
  if (start < 0 || start + len > v.rows()) throw ShapeError("slice_rows: out of range");
  Tensor y({len, c});
  std::copy(v.data() + start * c, v.data() + (start + len) * c, y.data());
  return t.make(std::move(y), {x.id}, [x, start, len, c](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    Tensor& gx = tt.grad_buf(x.id);
    real* dst = gx.data() + start * c;
    for (long j = 0; j < len * c; ++j) dst[j] += g.at(j);
  });
}

Var row_broadcast_mul(Tape& t, Var x, Var m) {
  const Tensor& vx = t.val(x);
  const Tensor& vm = t.val(m);
  const long n = vx.rows(), c = vx.cols();
  if (vm.rows() != n || vm.cols() != 1) throw ShapeError("row_broadcast_mul: mask must be [N,1]");
  Tensor y = vx;
  for (long r = 0; r < n; ++r) {
    const real s = vm.at(r);
    for (long j = 0; j < c; ++j) y.at(r * c + j) *= s;
  }
  return t.make(std::move(y), {x.id, m.id}, [x, m, n, c](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    const Tensor& vx2 = tt.node(x.id).value;
    const Tensor& vm2 = tt.node(m.id).value;
    if (tt.wants_grad(x.id)) {
      Tensor& gx = tt.grad_buf(x.id);
      for (long r = 0; r < n; ++r) {
        const real s = vm2.at(r);
        for (long j = 0; j < c; ++j) gx.at(r * c + j) += s * g.at(r * c + j);
      }
    }
    if (tt.wants_grad(m.id)) {
      Tensor& gm = tt.grad_buf(m.id);
      for (long r = 0; r < n; ++r) {
        real acc = 0;
        for (long j = 0; j < c; ++j) acc += g.at(r * c + j) * vx2.at(r * c + j);
        gm.at(r) += acc;
      }
    }
  });
}

Var tanh_(Tape& t, Var a) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) = std::tanh(y.at(i));
  return unary_op(t, a, std::move(y), [](real g, real, real yy) { return g * (1 - yy * yy); });
}

Var sigmoid_(Tape& t, Var a) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) = real(1) / (real(1) + std::exp(-y.at(i)));
  return unary_op(t, a, std::move(y), [](real g, real, real yy) { return g * yy * (1 - yy); });
}

Var elu_(Tape& t, Var a) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) {
    const real v = y.at(i);
    y.at(i) = v > 0 ? v : std::expm1(v);
  }
  return unary_op(t, a, std::move(y),
                  [](real g, real x, real yy) { return g * (x > 0 ? real(1) : yy + 1); });
}

Var exp_(Tape& t, Var a) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) = std::exp(y.at(i));
  return unary_op(t, a, std::move(y), [](real g, real, real yy) { return g * yy; });
}

Var log_(Tape& t, Var a) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) = std::log(y.at(i));
  return unary_op(t, a, std::move(y), [](real g, real x, real) { return g / x; });
}

Var softplus_(Tape& t, Var a) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) {
    const real v = y.at(i);
    y.at(i) = v > 30 ? v : std::log1p(std::exp(v));
  }
  return unary_op(t, a, std::move(y), [](real g, real x, real) {
    return g / (real(1) + std::exp(-x));
  });
}

Var erf_(Tape& t, Var a) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) = std::erf(y.at(i));
  return unary_op(t, a, std::move(y), [](real g, real x, real) {
    return g * 1.1283791670955125738962 * std::exp(-x * x);  // 2/sqrt(pi)
  });
}

Var norm_icdf_(Tape& t, Var a) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) = inverse_norm_cdf(y.at(i));
  return unary_op(t, a, std::move(y), [](real g, real, real yy) {
    return g * 2.506628274631000502416 * std::exp(real(0.5) * yy * yy);  // sqrt(2pi)
  });
}

Var max_scalar(Tape& t, Var a, real c) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) = std::max(y.at(i), c);
  return unary_op(t, a, std::move(y),
                  [c](real g, real x, real) { return x > c ? g : real(0); });
}

Var min_scalar(Tape& t, Var a, real c) {
  Tensor y = t.val(a);
  for (long i = 0; i < y.size(); ++i) y.at(i) = std::min(y.at(i), c);
  return unary_op(t, a, std::move(y),
                  [c](real g, real x, real) { return x < c ? g : real(0); });
}

Var stop_grad(Tape& t, Var a) { return t.constant(t.val(a)); }

Var sum_all(Tape& t, Var a) {
  const Tensor& v = t.val(a);
  real acc = 0;
  for (long i = 0; i < v.size(); ++i) acc += v.at(i);
  return t.make(Tensor::scalar(acc), {a.id}, [a](Tape& tt, int self) {
    const real g = tt.grad_buf(self).at(0);
    Tensor& ga = tt.grad_buf(a.id);
    for (long i = 0; i < ga.size(); ++i) ga.at(i) += g;
  });
}

Var mean_all(Tape& t, Var a) {
  const Tensor& v = t.val(a);
  const long n = v.size();
  real acc = 0;
  for (long i = 0; i < n; ++i) acc += v.at(i);
  return t.make(Tensor::scalar(acc / static_cast<real>(n)), {a.id}, [a, n](Tape& tt, int self) {
    const real g = tt.grad_buf(self).at(0) / static_cast<real>(n);
    Tensor& ga = tt.grad_buf(a.id);
    for (long i = 0; i < n; ++i) ga.at(i) += g;
  });
}

Var sum_rows(Tape& t, Var a) {
  const Tensor& v = t.val(a);
  const long n = v.rows(), c = v.cols();
  Tensor y({n, 1});
  for (long r = 0; r < n; ++r) {
    real acc = 0;
    for (long j = 0; j < c; ++j) acc += v.at(r * c + j);
    y.at(r) = acc;
  }
  return t.make(std::move(y), {a.id}, [a, n, c](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    Tensor& ga = tt.grad_buf(a.id);
    for (long r = 0; r < n; ++r) {
      const real gv = g.at(r);
      for (long j = 0; j < c; ++j) ga.at(r * c + j) += gv;
    }
  });
}

Var softmax_groups(Tape& t, Var x, long classes) {
  const Tensor& v = t.val(x);
  const long n = v.rows(), c = v.cols();
  if (c % classes != 0) throw ShapeError("softmax_groups: width not divisible by classes");
  Tensor y = v;
  for (long r = 0; r < n; ++r) {
    for (long g0 = 0; g0 < c; g0 += classes) {
      real* p = y.data() + r * c + g0;
      real mx = p[0];
      for (long j = 1; j < classes; ++j) mx = std::max(mx, p[j]);
      real z = 0;
      for (long j = 0; j < classes; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (long j = 0; j < classes; ++j) p[j] /= z;
    }
  }
  return t.make(std::move(y), {x.id}, [x, n, c, classes](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    const Tensor& y2 = tt.node(self).value;
    Tensor& gx = tt.grad_buf(x.id);
    for (long r = 0; r < n; ++r) {
      for (long g0 = 0; g0 < c; g0 += classes) {
        const real* gp = g.data() + r * c + g0;
        const real* yp = y2.data() + r * c + g0;
        real dot = 0;
        for (long j = 0; j < classes; ++j) dot += gp[j] * yp[j];
        real* out = gx.data() + r * c + g0;
        for (long j = 0; j < classes; ++j) out[j] += yp[j] * (gp[j] - dot);
      }
    }
  });
}

Var log_softmax_groups(Tape& t, Var x, long classes) {
  const Tensor& v = t.val(x);
  const long n = v.rows(), c = v.cols();
  if (c % classes != 0) throw ShapeError("log_softmax_groups: width not divisible by classes");
  Tensor y = v;
  for (long r = 0; r < n; ++r) {
    for (long g0 = 0; g0 < c; g0 += classes) {
      real* p = y.data() + r * c + g0;
      real mx = p[0];
      for (long j = 1; j < classes; ++j) mx = std::max(mx, p[j]);
      real z = 0;
      for (long j = 0; j < classes; ++j) z += std::exp(p[j] - mx);
      const real lz = mx + std::log(z);
      for (long j = 0; j < classes; ++j) p[j] -= lz;
    }
  }
  return t.make(std::move(y), {x.id}, [x, n, c, classes](Tape& tt, int self) {
    const Tensor& g = tt.grad_buf(self);
    const Tensor& y2 = tt.node(self).value;
    Tensor& gx = tt.grad_buf(x.id);
    for (long r = 0; r < n; ++r) {
      for (long g0 = 0; g0 < c; g0 += classes) {
        const real* gp = g.data() + r * c + g0;
        const real* yp = y2.data() + r * c + g0;
        real gsum = 0;
        for (long j = 0; j < classes; ++j) gsum += gp[j];
        real* out = gx.data() + r * c + g0;
        for (long j = 0; j < classes; ++j) out[j] += gp[j] - std::exp(yp[j]) * gsum;
      }
    }
  });
}

Var onehot_straight_through(Tape& t, Var logits, long classes, Rng& rng) {
  Var probs = softmax_groups(t, logits, classes);
  Tensor sample = sample_onehot_groups(t.val(probs), classes, rng);
  const Tensor& p = t.val(probs);
  for (long i = 0; i < sample.size(); ++i) sample.at(i) -= p.at(i);
  return add(t, probs, t.constant(std::move(sample)));
}

Var conv2d(Tape& t, Var x, Var w, Var b, const ConvSpec& s) {
  const Tensor& vx = t.val(x);
  const Tensor& vw = t.val(w);
  const long n = vx.rows();
  const long chw = s.in_c * s.in_h * s.in_w;
  const long patch = s.kernel * s.kernel * s.in_c;
  if (vx.cols() != chw) throw ShapeError("conv2d: input width != C*H*W");
  if (vw.rows() != s.out_c || vw.cols() != patch) throw ShapeError("conv2d: weight shape");
  const long oh = s.out_h(), ow = s.out_w();

  Tensor col({n * oh * ow, patch});
  for (long i = 0; i < n; ++i)
    im2col(vx.data() + i * chw, s.in_c, s.in_h, s.in_w, s.kernel, s.stride, s.pad, oh, ow,
           col.data() + i * oh * ow * patch);
  // GEMM: [N*OH*OW, patch] x [patch, out_c]
  Tensor outm({n * oh * ow, s.out_c});
  as_mat(outm, n * oh * ow, s.out_c).noalias() =
      as_mat(col, n * oh * ow, patch) * as_mat(vw, s.out_c, patch).transpose();
  // Rearrange to channel-major [N, out_c*OH*OW] and add bias.
  Tensor y({n, s.out_c * oh * ow});
  const Tensor& vb = t.val(b);
  for (long i = 0; i < n; ++i)
    for (long p2 = 0; p2 < oh * ow; ++p2)
      for (long c = 0; c < s.out_c; ++c)
        y.at(i * s.out_c * oh * ow + c * oh * ow + p2) =
            outm.at((i * oh * ow + p2) * s.out_c + c) + vb.at(c);

  ConvSpec spec = s;
  return t.make(std::move(y), {x.id, w.id, b.id},
                [x, w, b, spec, n, col = std::move(col)](Tape& tt, int self) {
    const long oh = spec.out_h(), ow = spec.out_w();
    const long patch = spec.kernel * spec.kernel * spec.in_c;
    const long chw = spec.in_c * spec.in_h * spec.in_w;
    const Tensor& g = tt.grad_buf(self);
    // dOUT in GEMM layout [N*OH*OW, out_c]
    Tensor dout({n * oh * ow, spec.out_c});
    for (long i = 0; i < n; ++i)
      for (long p2 = 0; p2 < oh * ow; ++p2)
        for (long c = 0; c < spec.out_c; ++c)
          dout.at((i * oh * ow + p2) * spec.out_c + c) =
              g.at(i * spec.out_c * oh * ow + c * oh * ow + p2);
    if (tt.wants_grad(b.id)) {
      Tensor& gb = tt.grad_buf(b.id);
      for (long r = 0; r < n * oh * ow; ++r)
        for (long c = 0; c < spec.out_c; ++c) gb.at(c) += dout.at(r * spec.out_c + c);
    }
    if (tt.wants_grad(w.id)) {
      as_mat(tt.grad_buf(w.id), spec.out_c, patch).noalias() +=
          as_mat(dout, n * oh * ow, spec.out_c).transpose() * as_mat(col, n * oh * ow, patch);
    }
    if (tt.wants_grad(x.id)) {
      const Tensor& vw2 = tt.node(w.id).value;
      Tensor dcol({n * oh * ow, patch});
      as_mat(dcol, n * oh * ow, patch).noalias() =
          as_mat(dout, n * oh * ow, spec.out_c) * as_mat(vw2, spec.out_c, patch);
      Tensor& gx = tt.grad_buf(x.id);
      for (long i = 0; i < n; ++i)
        col2im(dcol.data() + i * oh * ow * patch, spec.in_c, spec.in_h, spec.in_w, spec.kernel,
               spec.stride, spec.pad, oh, ow, gx.data() + i * chw);
    }
  });
}

Var conv2d_transpose(Tape& t, Var x, Var w, Var b, const ConvSpec& s) {
  const Tensor& vx = t.val(x);
  const Tensor& vw = t.val(w);
  const long n = vx.rows();
  const long chw = s.in_c * s.in_h * s.in_w;
  const long patch = s.kernel * s.kernel * s.out_c;
  if (vx.cols() != chw) throw ShapeError("conv2d_transpose: input width != C*H*W");
  if (vw.rows() != s.in_c || vw.cols() != patch) throw ShapeError("conv2d_transpose: weight shape");
  const long oh = s.tr_out_h(), ow = s.tr_out_w();
  const long hw = s.in_h * s.in_w;

  // x_mat per image: [H*W, in_c] (transpose of the stored channel-major block)
  Tensor xt({n * hw, s.in_c});
  for (long i = 0; i < n; ++i)
    for (long c = 0; c < s.in_c; ++c)
      for (long p2 = 0; p2 < hw; ++p2)
        xt.at((i * hw + p2) * s.in_c + c) = vx.at(i * chw + c * hw + p2);
  Tensor colt({n * hw, patch});
  as_mat(colt, n * hw, patch).noalias() = as_mat(xt, n * hw, s.in_c) * as_mat(vw, s.in_c, patch);

  Tensor y({n, s.out_c * oh * ow});
  const Tensor& vb = t.val(b);
  for (long i = 0; i < n; ++i) {
    real* dst = y.data() + i * s.out_c * oh * ow;
    col2im(colt.data() + i * hw * patch, s.out_c, oh, ow, s.kernel, s.stride, s.pad, s.in_h,
           s.in_w, dst);
    for (long c = 0; c < s.out_c; ++c) {
      const real bias = vb.at(c);
      real* plane = dst + c * oh * ow;
      for (long p2 = 0; p2 < oh * ow; ++p2) plane[p2] += bias;
    }
  }

  ConvSpec spec = s;
  return t.make(std::move(y), {x.id, w.id, b.id},
                [x, w, b, spec, n, xt = std::move(xt)](Tape& tt, int self) {
    const long oh = spec.tr_out_h(), ow = spec.tr_out_w();
    const long hw = spec.in_h * spec.in_w;
    const long chw = spec.in_c * hw;
    const long patch = spec.kernel * spec.kernel * spec.out_c;
    const Tensor& g = tt.grad_buf(self);
    if (tt.wants_grad(b.id)) {
      Tensor& gb = tt.grad_buf(b.id);
      for (long i = 0; i < n; ++i)
        for (long c = 0; c < spec.out_c; ++c) {
          real acc = 0;
          const real* gp = g.data() + i * spec.out_c * oh * ow + c * oh * ow;
          for (long p2 = 0; p2 < oh * ow; ++p2) acc += gp[p2];
          gb.at(c) += acc;
        }
    }
    // Patch matrix of the upstream gradient over the output grid.
    Tensor dcol({n * hw, patch});
    for (long i = 0; i < n; ++i)
      im2col(g.data() + i * spec.out_c * oh * ow, spec.out_c, oh, ow, spec.kernel, spec.stride,
             spec.pad, spec.in_h, spec.in_w, dcol.data() + i * hw * patch);
    if (tt.wants_grad(w.id)) {
      as_mat(tt.grad_buf(w.id), spec.in_c, patch).noalias() +=
          as_mat(xt, n * hw, spec.in_c).transpose() * as_mat(dcol, n * hw, patch);
    }
    if (tt.wants_grad(x.id)) {
      const Tensor& vw2 = tt.node(w.id).value;
      Tensor dxt({n * hw, spec.in_c});
      as_mat(dxt, n * hw, spec.in_c).noalias() =
          as_mat(dcol, n * hw, patch) * as_mat(vw2, spec.in_c, patch).transpose();
      Tensor& gx = tt.grad_buf(x.id);
      for (long i = 0; i < n; ++i)
        for (long c = 0; c < spec.in_c; ++c)
          for (long p2 = 0; p2 < hw; ++p2)
            gx.at(i * chw + c * hw + p2) += dxt.at((i * hw + p2) * spec.in_c + c);
    }
  });
}

}  // namespace ops

double inverse_norm_cdf(double p) {
  // Acklam's rational approximation followed by one Halley refinement.
  if (p <= 0.0) p = 1e-300;
  if (p >= 1.0) p = 1.0 - 1e-16;
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // Halley step against the exact CDF.
  const double e = 0.5 * std::erfc(-x / 1.4142135623730951) - p;
  const double u = e * 2.506628274631000502416 * std::exp(x * x / 2);
  x = x - u / (1 + x * u / 2);
  return x;
}

Tensor sample_onehot_groups(const Tensor& probs, long classes, Rng& rng) {
  const long n = probs.rows(), c = probs.cols();
  Tensor out({n, c});
  for (long r = 0; r < n; ++r) {
    for (long g0 = 0; g0 < c; g0 += classes) {
      const real* p = probs.data() + r * c + g0;
      const double u = rng.uniform();
      double acc = 0;
      long pick = classes - 1;
      for (long j = 0; j < classes; ++j) {
        acc += p[j];
        if (u < acc) {
          pick = j;
          break;
        }
      }
      out.at(r * c + g0 + pick) = real(1);
    }
  }
  return out;
}

}  // namespace apv
