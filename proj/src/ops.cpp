#include "afd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "afd/kernels.hpp"

namespace afd::ops {

namespace {

using detail::Node;

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": non-finite input of shape " + shape_str(t.shape()));
  }
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

void require_2d(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
}

// Parent's grad buffer, or nullptr when that parent does not need a gradient.
std::vector<double>* pgrad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape r;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) r.push_back(s[i]);
  if (r.empty()) r.push_back(1);
  return r;
}

inline std::size_t at(const AxisSplit& sp, std::size_t o, std::size_t j, std::size_t in) {
  return (o * sp.n + j) * sp.inner + in;
}

enum class Bin { add, sub, mul };

Tensor binary(const char* op, Bin kind, const Tensor& a, const Tensor& b) {
  check_finite(op, a);
  check_finite(op, b);
  const bool same = a.shape() == b.shape();
  const bool a_scalar = a.numel() == 1 && !same;
  const bool b_scalar = b.numel() == 1 && !same;
  if (!same && !a_scalar && !b_scalar) shape_fail(op, a, b);
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    out[i] = kind == Bin::add ? x + y : kind == Bin::sub ? x - y : x * y;
  }
  return make_op(op, out_shape, std::move(out), {a, b}, [kind, a_scalar, b_scalar, n](Node& self) {
    const auto& g = self.grad;
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    if (auto* ga = pgrad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = kind == Bin::mul ? g[i] * y[b_scalar ? 0 : i] : g[i];
        (*ga)[a_scalar ? 0 : i] += d;
      }
    }
    if (auto* gb = pgrad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = kind == Bin::mul ? g[i] * x[a_scalar ? 0 : i] : kind == Bin::sub ? -g[i] : g[i];
        (*gb)[b_scalar ? 0 : i] += d;
      }
    }
  });
}

template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D df) {
  check_finite(op, x);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_op(op, x.shape(), std::move(out), {x}, [df](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      const auto& xin = self.parents[0]->value;
      for (std::size_t i = 0; i < xin.size(); ++i) (*gx)[i] += self.grad[i] * df(xin[i], self.value[i]);
    }
  });
}

constexpr double kGeluA = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluB = 0.044715;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", Bin::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", Bin::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", Bin::mul, a, b); }

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary("add_scalar", x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (v <= 0.0) throw NonFiniteError("log: non-positive input in tensor of shape " + shape_str(x.shape()));
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluA * (v + kGeluB * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kGeluA * (v + kGeluB * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluA * (1.0 + 3.0 * kGeluB * v * v);
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a.cols() != b.rows()) shape_fail("matmul", a, b);
  check_finite("matmul", a);
  check_finite("matmul", b);
  const kernels::MatDims d{a.rows(), a.cols(), b.cols()};
  std::vector<double> out(d.m * d.n);
  kernels::matmul(a.values(), b.values(), out, d);
  return make_op("matmul", {d.m, d.n}, std::move(out), {a, b}, [d](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* ga = pgrad(self, 0)) {
      // dA = dC * B^T
      std::vector<double> tmp(d.m * d.k);
      kernels::matmul_nt(self.grad, bv, tmp, {d.m, d.n, d.k});
      for (std::size_t i = 0; i < tmp.size(); ++i) (*ga)[i] += tmp[i];
    }
    if (auto* gb = pgrad(self, 1)) {
      // dB = A^T * dC
      std::vector<double> tmp(d.k * d.n);
      kernels::matmul_tn(av, self.grad, tmp, {d.k, d.m, d.n});
      for (std::size_t i = 0; i < tmp.size(); ++i) (*gb)[i] += tmp[i];
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_2d("transpose", x);
  check_finite("transpose", x);
  const std::size_t r = x.rows(), c = x.cols();
  auto xv = x.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return make_op("transpose", {c, r}, std::move(out), {x}, [r, c](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += self.grad[j * r + i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d("add_bias", x);
  if (bias.numel() != x.cols()) shape_fail("add_bias", x, bias);
  check_finite("add_bias", x);
  check_finite("add_bias", bias);
  const std::size_t r = x.rows(), c = x.cols();
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
  return make_op("add_bias", x.shape(), std::move(out), {x, bias}, [r, c](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      for (std::size_t i = 0; i < r * c; ++i) (*gx)[i] += self.grad[i];
    }
    if (auto* gb = pgrad(self, 1)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += self.grad[i * c + j];
    }
  });
}

Tensor mul_columns(const Tensor& x, const Tensor& gain) {
  require_2d("mul_columns", x);
  if (gain.numel() != x.cols()) shape_fail("mul_columns", x, gain);
  check_finite("mul_columns", x);
  check_finite("mul_columns", gain);
  const std::size_t r = x.rows(), c = x.cols();
  auto xv = x.values();
  auto gv = gain.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * gv[j];
  return make_op("mul_columns", x.shape(), std::move(out), {x, gain}, [r, c](Node& self) {
    const auto& xin = self.parents[0]->value;
    const auto& gin = self.parents[1]->value;
    if (auto* gx = pgrad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += self.grad[i * c + j] * gin[j];
    }
    if (auto* gg = pgrad(self, 1)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gg)[j] += self.grad[i * c + j] * xin[i * c + j];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_2d("gather_rows", table);
  if (ids.empty()) throw ShapeError("gather_rows: empty id list");
  const std::size_t r = table.rows(), c = table.cols();
  for (auto id : ids) {
    if (id >= r) throw ShapeError("gather_rows: id " + std::to_string(id) + " out of range for table " + shape_str(table.shape()));
  }
  check_finite("gather_rows", table);
  auto tv = table.values();
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) std::copy_n(tv.begin() + ids[i] * c, c, out.begin() + i * c);
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return make_op("gather_rows", {ids.size(), c}, std::move(out), {table}, [saved, c](Node& self) {
    if (auto* gt = pgrad(self, 0)) {
      for (std::size_t i = 0; i < saved.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) (*gt)[saved[i] * c + j] += self.grad[i * c + j];
    }
  });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> cols) {
  require_2d("pick", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (cols.size() != r) throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + shape_str(x.shape()));
  for (auto j : cols) {
    if (j >= c) throw ShapeError("pick: column " + std::to_string(j) + " out of range for " + shape_str(x.shape()));
  }
  check_finite("pick", x);
  auto xv = x.values();
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = xv[i * c + cols[i]];
  std::vector<std::size_t> saved(cols.begin(), cols.end());
  return make_op("pick", {r}, std::move(out), {x}, [saved, c](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      for (std::size_t i = 0; i < saved.size(); ++i) (*gx)[i * c + saved[i]] += self.grad[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  check_finite("reshape", x);
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    check_finite("concat", p);
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) shape_fail("concat", parts.front(), p);
    out_shape[axis] += s[axis];
  }
  const AxisSplit outer = split("concat", out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const AxisSplit ps = split("concat", p.shape(), axis);
    auto pv = p.values();
    for (std::size_t o = 0; o < ps.outer; ++o)
      for (std::size_t j = 0; j < ps.n; ++j)
        for (std::size_t in = 0; in < ps.inner; ++in) out[at(outer, o, off + j, in)] = pv[at(ps, o, j, in)];
    off += ps.n;
  }
  return make_op("concat", out_shape, std::move(out), parts, [outer, offsets, axis](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto* gp = pgrad(self, k);
      if (!gp) continue;
      const AxisSplit ps = split("concat", self.parents[k]->shape, axis);
      for (std::size_t o = 0; o < ps.outer; ++o)
        for (std::size_t j = 0; j < ps.n; ++j)
          for (std::size_t in = 0; in < ps.inner; ++in)
            (*gp)[at(ps, o, j, in)] += self.grad[at(outer, o, offsets[k] + j, in)];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit sp = split("slice", x.shape(), axis);
  if (begin >= end || end > sp.n) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  check_finite("slice", x);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const AxisSplit os{sp.outer, end - begin, sp.inner};
  auto xv = x.values();
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < os.n; ++j)
      for (std::size_t in = 0; in < sp.inner; ++in) out[at(os, o, j, in)] = xv[at(sp, o, begin + j, in)];
  return make_op("slice", out_shape, std::move(out), {x}, [sp, os, begin](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < os.n; ++j)
          for (std::size_t in = 0; in < sp.inner; ++in) (*gx)[at(sp, o, begin + j, in)] += self.grad[at(os, o, j, in)];
    }
  });
}

Tensor sum(const Tensor& x) {
  check_finite("sum", x);
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op("sum", {1}, {s}, {x}, [](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      for (auto& g : *gx) g += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, std::size_t axis) {
  check_finite("sum", x);
  const AxisSplit sp = split("sum", x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t in = 0; in < sp.inner; ++in) out[o * sp.inner + in] += xv[at(sp, o, j, in)];
  return make_op("sum_axis", drop_axis(x.shape(), axis), std::move(out), {x}, [sp](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < sp.n; ++j)
          for (std::size_t in = 0; in < sp.inner; ++in) (*gx)[at(sp, o, j, in)] += self.grad[o * sp.inner + in];
    }
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const double n = static_cast<double>(x.dim(axis));
  return scale(sum(x, axis), 1.0 / n);
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_finite("softmax", x);
  const AxisSplit sp = split("softmax", x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, xv[at(sp, o, j, in)]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const double e = std::exp(xv[at(sp, o, j, in)] - mx);
        out[at(sp, o, j, in)] = e;
        z += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[at(sp, o, j, in)] /= z;
    }
  return make_op("softmax", x.shape(), std::move(out), {x}, [sp](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      const auto& y = self.value;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
          double dot = 0.0;
          for (std::size_t j = 0; j < sp.n; ++j) dot += y[at(sp, o, j, in)] * self.grad[at(sp, o, j, in)];
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = at(sp, o, j, in);
            (*gx)[idx] += y[idx] * (self.grad[idx] - dot);
          }
        }
    }
  });
}

namespace {

// Per-slice log-sum-exp values, outer*inner of them.
std::vector<double> lse_slices(std::span<const double> xv, const AxisSplit& sp) {
  std::vector<double> lse(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, xv[at(sp, o, j, in)]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) z += std::exp(xv[at(sp, o, j, in)] - mx);
      lse[o * sp.inner + in] = mx + std::log(z);
    }
  return lse;
}

}  // namespace

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  check_finite("log_softmax", x);
  const AxisSplit sp = split("log_softmax", x.shape(), axis);
  auto xv = x.values();
  const auto lse = lse_slices(xv, sp);
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t in = 0; in < sp.inner; ++in) out[at(sp, o, j, in)] = xv[at(sp, o, j, in)] - lse[o * sp.inner + in];
  return make_op("log_softmax", x.shape(), std::move(out), {x}, [sp](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
          double gsum = 0.0;
          for (std::size_t j = 0; j < sp.n; ++j) gsum += self.grad[at(sp, o, j, in)];
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = at(sp, o, j, in);
            (*gx)[idx] += self.grad[idx] - std::exp(self.value[idx]) * gsum;
          }
        }
    }
  });
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  check_finite("logsumexp", x);
  const AxisSplit sp = split("logsumexp", x.shape(), axis);
  auto lse = lse_slices(x.values(), sp);
  return make_op("logsumexp", drop_axis(x.shape(), axis), std::move(lse), {x}, [sp](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      const auto& xin = self.parents[0]->value;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const double l = self.value[o * sp.inner + in];
          const double g = self.grad[o * sp.inner + in];
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = at(sp, o, j, in);
            (*gx)[idx] += g * std::exp(xin[idx] - l);
          }
        }
    }
  });
}

Tensor logsumexp(const Tensor& x) { return logsumexp(reshape(x, {x.numel()}), 0); }

Tensor layer_norm(const Tensor& x, std::size_t axis, double eps) {
  check_finite("layer_norm", x);
  if (!(eps > 0.0)) throw Error("layer_norm: eps must be positive");
  const AxisSplit sp = split("layer_norm", x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(sp.outer * sp.inner);
  const double n = static_cast<double>(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      double mu = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) mu += xv[at(sp, o, j, in)];
      mu /= n;
      double var = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const double dlt = xv[at(sp, o, j, in)] - mu;
        var += dlt * dlt;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * sp.inner + in] = is;
      for (std::size_t j = 0; j < sp.n; ++j) out[at(sp, o, j, in)] = (xv[at(sp, o, j, in)] - mu) * is;
    }
  return make_op("layer_norm", x.shape(), std::move(out), {x}, [sp, inv_std, n](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      const auto& y = self.value;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
          double gmean = 0.0, gy = 0.0;
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = at(sp, o, j, in);
            gmean += self.grad[idx];
            gy += self.grad[idx] * y[idx];
          }
          gmean /= n;
          gy /= n;
          const double is = inv_std[o * sp.inner + in];
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = at(sp, o, j, in);
            (*gx)[idx] += is * (self.grad[idx] - gmean - y[idx] * gy);
          }
        }
    }
  });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis) {
  check_finite("l2_normalize", x);
  const AxisSplit sp = split("l2_normalize", x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(xv.size(), 0.0);
  std::vector<double> norms(sp.outer * sp.inner);
  bool zero_seen = false;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      double ss = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) ss += xv[at(sp, o, j, in)] * xv[at(sp, o, j, in)];
      const double nrm = std::sqrt(ss);
      norms[o * sp.inner + in] = nrm;
      if (nrm == 0.0) {
        zero_seen = true;
        continue;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[at(sp, o, j, in)] = xv[at(sp, o, j, in)] / nrm;
    }
  if (zero_seen) warn("l2_normalize: zero vector left as zero");
  return make_op("l2_normalize", x.shape(), std::move(out), {x}, [sp, norms](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      const auto& y = self.value;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const double nrm = norms[o * sp.inner + in];
          if (nrm == 0.0) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < sp.n; ++j) dot += y[at(sp, o, j, in)] * self.grad[at(sp, o, j, in)];
          for (std::size_t j = 0; j < sp.n; ++j) {
            const auto idx = at(sp, o, j, in);
            (*gx)[idx] += (self.grad[idx] - y[idx] * dot) / nrm;
          }
        }
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& opts) {
  require_2d("attention", q);
  require_2d("attention", k);
  require_2d("attention", v);
  if (k.shape() != v.shape()) shape_fail("attention", k, v);
  if (q.cols() != k.cols()) shape_fail("attention", q, k);
  const std::size_t d = q.cols();
  if (opts.heads == 0 || d % opts.heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(opts.heads) + " heads");
  }
  check_finite("attention", q);
  check_finite("attention", k);
  check_finite("attention", v);
  const kernels::AttnDims dims{q.rows(), k.rows(), d, opts.heads, opts.causal};
  auto probs = std::make_shared<std::vector<double>>(dims.heads * dims.l1 * dims.l2);
  std::vector<double> out(dims.l1 * d);
  kernels::attention_forward(q.values(), k.values(), v.values(), *probs, out, dims);
  if (opts.counter) {
    // Query-key pairs; heads share a pair.
    std::uint64_t scores = 0;
    if (opts.causal) {
      for (std::size_t i = 0; i < dims.l1; ++i) scores += std::min(i + 1, dims.l2);
    } else {
      scores = static_cast<std::uint64_t>(dims.l1) * dims.l2;
    }
    if (opts.cross) {
      opts.counter->cross_scores += scores;
      ++opts.counter->cross_calls;
    } else {
      opts.counter->self_scores += scores;
      ++opts.counter->self_calls;
    }
  }
  return make_op("attention", {dims.l1, d}, std::move(out), {q, k, v}, [dims, probs](Node& self) {
    const auto& qv = self.parents[0]->value;
    const auto& kv = self.parents[1]->value;
    const auto& vv = self.parents[2]->value;
    std::vector<double> dq(qv.size(), 0.0), dk(kv.size(), 0.0), dv(vv.size(), 0.0);
    kernels::attention_backward(qv, kv, vv, *probs, self.grad, dq, dk, dv, dims);
    if (auto* g = pgrad(self, 0))
      for (std::size_t i = 0; i < dq.size(); ++i) (*g)[i] += dq[i];
    if (auto* g = pgrad(self, 1))
      for (std::size_t i = 0; i < dk.size(); ++i) (*g)[i] += dk[i];
    if (auto* g = pgrad(self, 2))
      for (std::size_t i = 0; i < dv.size(); ++i) (*g)[i] += dv[i];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_2d("cross_entropy", logits);
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + shape_str(logits.shape()));
  for (auto t : targets) {
    if (t >= c) throw ShapeError("cross_entropy: target " + std::to_string(t) + " out of range for " + shape_str(logits.shape()));
  }
  check_finite("cross_entropy", logits);
  const AxisSplit sp{r, c, 1};
  auto xv = logits.values();
  const auto lse = lse_slices(xv, sp);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) loss += lse[i] - xv[i * c + targets[i]];
  loss /= static_cast<double>(r);
  std::vector<std::size_t> saved(targets.begin(), targets.end());
  return make_op("cross_entropy", {1}, {loss}, {logits}, [saved, lse, r, c](Node& self) {
    if (auto* gx = pgrad(self, 0)) {
      const auto& xin = self.parents[0]->value;
      const double g = self.grad[0] / static_cast<double>(r);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += g * std::exp(xin[i * c + j] - lse[i]);
        (*gx)[i * c + saved[i]] -= g;
      }
    }
  });
}

}  // namespace afd::ops
