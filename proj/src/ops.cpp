// SPDX-License-Identifier: Apache-2.0
#include "ta2n/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ta2n/error.hpp"

namespace ta2n::ops {
namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t dim = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  require(axis < shape.size(), ErrorCode::kInvalidArgument,
          "axis " + std::to_string(axis) + " invalid for " + shape_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.dim = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  require(a.rank() == rank, ErrorCode::kShapeMismatch,
          std::string(op) + " expects rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
}

std::uint64_t fold(std::uint64_t h, std::uint64_t v) { return (h ^ v) * 0x100000001b3ULL; }

template <typename Fwd, typename Deriv>
Var unary(Tape& t, Var a, const char* name, Fwd fwd, Deriv deriv) {
  const Tensor& x = t.value(a);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return t.record(name, std::move(y), {a}, [a, deriv](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor& gx = tp.grad(a);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * deriv(x[i]);
  });
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "add");
  Tensor out = x;
  add_inplace(out, y);
  return t.record("add", std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) add_inplace(tp.grad(a), g);
    if (tp.requires_grad(b)) add_inplace(tp.grad(b), g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "sub");
  Tensor out = x;
  add_inplace(out, y, -1.0);
  return t.record("sub", std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) add_inplace(tp.grad(a), g);
    if (tp.requires_grad(b)) add_inplace(tp.grad(b), g, -1.0);
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_same_shape(x, y, "mul");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return t.record("mul", std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    const Tensor& y = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& gx = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gy = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
    }
  });
}

Var scale(Tape& t, Var a, double factor) {
  Tensor out = t.value(a);
  for (auto& v : out.data()) v *= factor;
  return t.record("scale", std::move(out), {a},
                  [a, factor](Tape& tp, const Tensor& g) { add_inplace(tp.grad(a), g, factor); });
}

Var add_constant(Tape& t, Var a, const Tensor& c) {
  require_same_shape(t.value(a), c, "add_constant");
  Tensor out = t.value(a);
  add_inplace(out, c);
  return t.record("add_constant", std::move(out), {a},
                  [a](Tape& tp, const Tensor& g) { add_inplace(tp.grad(a), g); });
}

Var relu(Tape& t, Var a) {
  const Tensor& x = t.value(a);
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < x.size(); ++i) h = fold(h, x[i] > 0.0 ? i + 1 : 0);
  t.note_branch(h);
  return unary(
      t, a, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Tape& t, Var a) {
  return unary(
      t, a, "tanh", [](double v) { return std::tanh(v); },
      [](double v) {
        const double y = std::tanh(v);
        return 1.0 - y * y;
      });
}

Var sigmoid(Tape& t, Var a) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  return unary(t, a, "sigmoid", sig, [sig](double v) {
    const double y = sig(v);
    return y * (1.0 - y);
  });
}

Var clamp(Tape& t, Var a, double lo, double hi) {
  require(lo <= hi, ErrorCode::kInvalidArgument, "clamp bounds");
  const Tensor& x = t.value(a);
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < x.size(); ++i) h = fold(h, x[i] < lo ? 1 : (x[i] > hi ? 2 : 3));
  t.note_branch(h);
  return unary(
      t, a, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).data()) s += v;
  return t.record("sum", Tensor::scalar(s), {a}, [a](Tape& tp, const Tensor& g) {
    for (auto& v : tp.grad(a).data()) v += g[0];
  });
}

Var mean_axis(Tape& t, Var a, std::size_t axis) {
  const Tensor& x = t.value(a);
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(s.dim);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t d = 0; d < s.dim; ++d)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.dim + d) * s.inner + i] * inv;
  return t.record("mean_axis", std::move(out), {a}, [a, s, inv](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(a);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t d = 0; d < s.dim; ++d)
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.dim + d) * s.inner + i] += g[o * s.inner + i] * inv;
  });
}

Var reshape(Tape& t, Var a, Shape shape) {
  Tensor out = t.value(a).reshaped(std::move(shape));
  return t.record("reshape", std::move(out), {a}, [a](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var slice(Tape& t, Var a, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor& x = t.value(a);
  const AxisSplit s = split_axis(x.shape(), axis);
  require(length > 0 && start + length <= s.dim, ErrorCode::kInvalidArgument, "slice out of range");
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t d = 0; d < length; ++d)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((o * s.dim + start + d) * s.inner), s.inner,
                  out.data().begin() + static_cast<std::ptrdiff_t>((o * length + d) * s.inner));
  return t.record("slice", std::move(out), {a}, [a, s, start, length](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(a);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t d = 0; d < length; ++d)
        for (std::size_t i = 0; i < s.inner; ++i)
          gx[(o * s.dim + start + d) * s.inner + i] += g[(o * length + d) * s.inner + i];
  });
}

Var concat(Tape& t, Var a, Var b, std::size_t axis) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require(x.rank() == y.rank(), ErrorCode::kShapeMismatch, "concat rank mismatch");
  for (std::size_t i = 0; i < x.rank(); ++i)
    require(i == axis || x.dim(i) == y.dim(i), ErrorCode::kShapeMismatch,
            "concat: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  const AxisSplit sx = split_axis(x.shape(), axis);
  const AxisSplit sy = split_axis(y.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = sx.dim + sy.dim;
  Tensor out(out_shape);
  const std::size_t total = sx.dim + sy.dim;
  const std::size_t inner = sx.inner;
  for (std::size_t o = 0; o < sx.outer; ++o) {
    for (std::size_t d = 0; d < sx.dim; ++d)
      for (std::size_t i = 0; i < inner; ++i) out[(o * total + d) * inner + i] = x[(o * sx.dim + d) * inner + i];
    for (std::size_t d = 0; d < sy.dim; ++d)
      for (std::size_t i = 0; i < inner; ++i)
        out[(o * total + sx.dim + d) * inner + i] = y[(o * sy.dim + d) * inner + i];
  }
  return t.record("concat", std::move(out), {a, b}, [a, b, sx, sy, total, inner](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad(a);
      for (std::size_t o = 0; o < sx.outer; ++o)
        for (std::size_t d = 0; d < sx.dim; ++d)
          for (std::size_t i = 0; i < inner; ++i) ga[(o * sx.dim + d) * inner + i] += g[(o * total + d) * inner + i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad(b);
      for (std::size_t o = 0; o < sy.outer; ++o)
        for (std::size_t d = 0; d < sy.dim; ++d)
          for (std::size_t i = 0; i < inner; ++i)
            gb[(o * sy.dim + d) * inner + i] += g[(o * total + sx.dim + d) * inner + i];
    }
  });
}

Var concat_channels(Tape& t, Var a, Var b) {
  require_rank(t.value(a), 4, "concat_channels");
  require_rank(t.value(b), 4, "concat_channels");
  return concat(t, a, b, 0);
}

Var stack(Tape& t, const std::vector<Var>& items) {
  require(!items.empty(), ErrorCode::kInvalidArgument, "stack of nothing");
  const Shape& item_shape = t.value(items[0]).shape();
  const std::size_t n = shape_numel(item_shape);
  Shape out_shape{items.size()};
  out_shape.insert(out_shape.end(), item_shape.begin(), item_shape.end());
  Tensor out(out_shape);
  for (std::size_t k = 0; k < items.size(); ++k) {
    const Tensor& v = t.value(items[k]);
    require(v.shape() == item_shape, ErrorCode::kShapeMismatch, "stack: ragged items");
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(k * n));
  }
  return t.record("stack", std::move(out), items, [items, n](Tape& tp, const Tensor& g) {
    for (std::size_t k = 0; k < items.size(); ++k) {
      if (!tp.requires_grad(items[k])) continue;
      Tensor& gk = tp.grad(items[k]);
      for (std::size_t i = 0; i < n; ++i) gk[i] += g[k * n + i];
    }
  });
}

Var select(Tape& t, Var a, std::size_t flat_index) {
  const Tensor& x = t.value(a);
  require(flat_index < x.size(), ErrorCode::kInvalidArgument, "select index out of range");
  return t.record("select", Tensor::scalar(x[flat_index]), {a},
                  [a, flat_index](Tape& tp, const Tensor& g) { tp.grad(a)[flat_index] += g[0]; });
}

Var transpose(Tape& t, Var a) {
  const Tensor& x = t.value(a);
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return t.record("transpose", std::move(out), {a}, [a, r, c](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  require_rank(x, 2, "matmul");
  require_rank(y, 2, "matmul");
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  require(y.dim(0) == k, ErrorCode::kShapeMismatch,
          "matmul: " + shape_string(x.shape()) + " · " + shape_string(y.shape()));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += xv * y[p * n + j];
    }
  return t.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    const Tensor& y = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& gx = tp.grad(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[p * n + j];
          gx[i * k + p] += s;
        }
    }
    if (tp.requires_grad(b)) {
      Tensor& gy = tp.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gy[p * n + j] += xv * g[i * n + j];
        }
    }
  });
}

Var softmax(Tape& t, Var logits, std::size_t axis) {
  const Tensor& x = t.value(logits);
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto idx = [&](std::size_t d) { return (o * s.dim + d) * s.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t d = 0; d < s.dim; ++d) mx = std::max(mx, x[idx(d)]);
      double z = 0.0;
      for (std::size_t d = 0; d < s.dim; ++d) z += (y[idx(d)] = std::exp(x[idx(d)] - mx));
      for (std::size_t d = 0; d < s.dim; ++d) y[idx(d)] /= z;
    }
  Tensor saved = y;
  return t.record("softmax", std::move(y), {logits},
                  [logits, s, saved = std::move(saved)](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad(logits);
                    for (std::size_t o = 0; o < s.outer; ++o)
                      for (std::size_t i = 0; i < s.inner; ++i) {
                        auto idx = [&](std::size_t d) { return (o * s.dim + d) * s.inner + i; };
                        double dot = 0.0;
                        for (std::size_t d = 0; d < s.dim; ++d) dot += g[idx(d)] * saved[idx(d)];
                        for (std::size_t d = 0; d < s.dim; ++d) gx[idx(d)] += saved[idx(d)] * (g[idx(d)] - dot);
                      }
                  });
}

Var log_softmax(Tape& t, Var logits, std::size_t axis) {
  const Tensor& x = t.value(logits);
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto idx = [&](std::size_t d) { return (o * s.dim + d) * s.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t d = 0; d < s.dim; ++d) mx = std::max(mx, x[idx(d)]);
      double z = 0.0;
      for (std::size_t d = 0; d < s.dim; ++d) z += std::exp(x[idx(d)] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t d = 0; d < s.dim; ++d) y[idx(d)] = x[idx(d)] - lse;
    }
  Tensor saved = y;
  return t.record("log_softmax", std::move(y), {logits},
                  [logits, s, saved = std::move(saved)](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad(logits);
                    for (std::size_t o = 0; o < s.outer; ++o)
                      for (std::size_t i = 0; i < s.inner; ++i) {
                        auto idx = [&](std::size_t d) { return (o * s.dim + d) * s.inner + i; };
                        double gs = 0.0;
                        for (std::size_t d = 0; d < s.dim; ++d) gs += g[idx(d)];
                        for (std::size_t d = 0; d < s.dim; ++d) gx[idx(d)] += g[idx(d)] - std::exp(saved[idx(d)]) * gs;
                      }
                  });
}

Var cross_entropy(Tape& t, Var logits, std::size_t label) {
  const Tensor& x = t.value(logits);
  require_rank(x, 1, "cross_entropy");
  require(label < x.size(), ErrorCode::kInvalidArgument, "cross_entropy label out of range");
  Var lsm = log_softmax(t, logits, 0);
  return scale(t, select(t, lsm, label), -1.0);
}

Var global_avg_pool_spatial(Tape& t, Var f) {
  const Tensor& x = t.value(f);
  require_rank(x, 4, "global_avg_pool_spatial");
  const std::size_t ct = x.dim(0) * x.dim(1);
  const std::size_t hw = x.dim(2) * x.dim(3);
  Tensor out({x.dim(0), x.dim(1), 1, 1});
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t i = 0; i < ct; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
    out[i] = s * inv;
  }
  return t.record("global_avg_pool_spatial", std::move(out), {f}, [f, ct, hw, inv](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(f);
    for (std::size_t i = 0; i < ct; ++i)
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += g[i] * inv;
  });
}

Var max_pool_spatial2(Tape& t, Var f) {
  const Tensor& x = t.value(f);
  require(x.rank() >= 2, ErrorCode::kShapeMismatch, "max_pool_spatial2 needs [..., H, W]");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  require(h >= 2 && w >= 2, ErrorCode::kShapeMismatch, "max_pool_spatial2: grid smaller than 2x2");
  const std::size_t oh = h / 2, ow = w / 2;
  const std::size_t planes = x.size() / (h * w);
  Shape out_shape = x.shape();
  out_shape[x.rank() - 2] = oh;
  out_shape[x.rank() - 1] = ow;
  Tensor out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  std::uint64_t hash = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = p * h * w + (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t k = p * h * w + (2 * i + di) * w + 2 * j + dj;
            if (x[k] > x[best]) best = k;
          }
        const std::size_t o = (p * oh + i) * ow + j;
        out[o] = x[best];
        argmax[o] = best;
        hash = fold(hash, best);
      }
  t.note_branch(hash);
  return t.record("max_pool_spatial2", std::move(out), {f}, [f, argmax = std::move(argmax)](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(f);
    for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
  });
}

Var global_max_pool_spatial(Tape& t, Var f) {
  const Tensor& x = t.value(f);
  require(x.rank() >= 3, ErrorCode::kShapeMismatch, "global_max_pool_spatial needs [..., H, W]");
  const std::size_t hw = x.dim(x.rank() - 2) * x.dim(x.rank() - 1);
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  Tensor out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  std::uint64_t hash = 0;
  for (std::size_t p = 0; p < out.size(); ++p) {
    std::size_t best = p * hw;
    for (std::size_t k = p * hw; k < (p + 1) * hw; ++k)
      if (x[k] > x[best]) best = k;
    out[p] = x[best];
    argmax[p] = best;
    hash = fold(hash, best);
  }
  t.note_branch(hash);
  return t.record("global_max_pool_spatial", std::move(out), {f},
                  [f, argmax = std::move(argmax)](Tape& tp, const Tensor& g) {
                    Tensor& gx = tp.grad(f);
                    for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                  });
}

Var linear_project(Tape& t, Var x, Var weights, Var bias) {
  return linear_project(t, x, weights, bias, t.value(x).rank() - 1);
}

Var linear_project(Tape& t, Var x, Var weights, Var bias, std::size_t axis) {
  const Tensor& in = t.value(x);
  const Tensor& w = t.value(weights);
  const Tensor& b = t.value(bias);
  require_rank(w, 2, "linear_project weights");
  const AxisSplit s = split_axis(in.shape(), axis);
  const std::size_t cin = w.dim(0), cout = w.dim(1);
  require(s.dim == cin, ErrorCode::kShapeMismatch,
          "linear_project: input " + shape_string(in.shape()) + " axis " + std::to_string(axis) +
              " vs weights " + shape_string(w.shape()));
  require(b.rank() == 1 && b.dim(0) == cout, ErrorCode::kShapeMismatch, "linear_project bias");
  Shape out_shape = in.shape();
  out_shape[axis] = cout;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < cout; ++j) {
      double* dst = &out[(o * cout + j) * s.inner];
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] = b[j];
      for (std::size_t k = 0; k < cin; ++k) {
        const double wk = w[k * cout + j];
        const double* src = &in[(o * cin + k) * s.inner];
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += wk * src[i];
      }
    }
  return t.record("linear_project", std::move(out), {x, weights, bias},
                  [x, weights, bias, s, cin, cout](Tape& tp, const Tensor& g) {
                    const Tensor& in = tp.value(x);
                    const Tensor& w = tp.value(weights);
                    if (tp.requires_grad(x)) {
                      Tensor& gx = tp.grad(x);
                      for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t k = 0; k < cin; ++k) {
                          double* dst = &gx[(o * cin + k) * s.inner];
                          for (std::size_t j = 0; j < cout; ++j) {
                            const double wk = w[k * cout + j];
                            const double* src = &g[(o * cout + j) * s.inner];
                            for (std::size_t i = 0; i < s.inner; ++i) dst[i] += wk * src[i];
                          }
                        }
                    }
                    if (tp.requires_grad(weights)) {
                      Tensor& gw = tp.grad(weights);
                      for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t k = 0; k < cin; ++k) {
                          const double* xs = &in[(o * cin + k) * s.inner];
                          for (std::size_t j = 0; j < cout; ++j) {
                            const double* gs = &g[(o * cout + j) * s.inner];
                            double acc = 0.0;
                            for (std::size_t i = 0; i < s.inner; ++i) acc += xs[i] * gs[i];
                            gw[k * cout + j] += acc;
                          }
                        }
                    }
                    if (tp.requires_grad(bias)) {
                      Tensor& gb = tp.grad(bias);
                      for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t j = 0; j < cout; ++j)
                          for (std::size_t i = 0; i < s.inner; ++i) gb[j] += g[(o * cout + j) * s.inner + i];
                    }
                  });
}

Var temporal_conv1d(Tape& t, Var x, Var weights, Var bias) {
  const Tensor& in = t.value(x);
  const Tensor& w = t.value(weights);
  const Tensor& b = t.value(bias);
  require_rank(in, 2, "temporal_conv1d");
  require_rank(w, 3, "temporal_conv1d weights");
  const std::size_t cin = in.dim(0), len = in.dim(1), cout = w.dim(0);
  require(w.dim(1) == cin && w.dim(2) == 3, ErrorCode::kShapeMismatch, "temporal_conv1d weights");
  require(b.rank() == 1 && b.dim(0) == cout, ErrorCode::kShapeMismatch, "temporal_conv1d bias");
  Tensor out({cout, len});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t tt = 0; tt < len; ++tt) {
      double acc = b[co];
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t k = 0; k < 3; ++k) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + k) - 1;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          acc += w[(co * cin + ci) * 3 + k] * in[ci * len + static_cast<std::size_t>(src)];
        }
      out[co * len + tt] = acc;
    }
  return t.record("temporal_conv1d", std::move(out), {x, weights, bias},
                  [x, weights, bias, cin, cout, len](Tape& tp, const Tensor& g) {
                    const Tensor& in = tp.value(x);
                    const Tensor& w = tp.value(weights);
                    const bool gx_on = tp.requires_grad(x), gw_on = tp.requires_grad(weights);
                    Tensor* gx = gx_on ? &tp.grad(x) : nullptr;
                    Tensor* gw = gw_on ? &tp.grad(weights) : nullptr;
                    for (std::size_t co = 0; co < cout; ++co)
                      for (std::size_t tt = 0; tt < len; ++tt) {
                        const double go = g[co * len + tt];
                        for (std::size_t ci = 0; ci < cin; ++ci)
                          for (std::size_t k = 0; k < 3; ++k) {
                            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + k) - 1;
                            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                            const std::size_t si = ci * len + static_cast<std::size_t>(src);
                            const std::size_t wi = (co * cin + ci) * 3 + k;
                            if (gx) (*gx)[si] += go * w[wi];
                            if (gw) (*gw)[wi] += go * in[si];
                          }
                      }
                    if (tp.requires_grad(bias)) {
                      Tensor& gb = tp.grad(bias);
                      for (std::size_t co = 0; co < cout; ++co)
                        for (std::size_t tt = 0; tt < len; ++tt) gb[co] += g[co * len + tt];
                    }
                  });
}

namespace {

struct Conv3dGeom {
  std::size_t batch, cin, cout, depth, height, width;
  std::size_t volume() const { return depth * height * width; }
  std::size_t taps() const { return cin * 27; }
};

// Column matrix [cin·27, D·H·W] for one batch item; zero padding 1.
void im2col3d(const double* in, const Conv3dGeom& g, std::vector<double>& col) {
  const std::size_t vol = g.volume();
  col.assign(g.taps() * vol, 0.0);
  const auto D = static_cast<std::ptrdiff_t>(g.depth), H = static_cast<std::ptrdiff_t>(g.height),
             W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::ptrdiff_t kt = 0; kt < 3; ++kt)
      for (std::ptrdiff_t ky = 0; ky < 3; ++ky)
        for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
          double* row = &col[((ci * 3 + static_cast<std::size_t>(kt)) * 9 + static_cast<std::size_t>(ky * 3 + kx)) * vol];
          const double* plane = in + ci * vol;
          for (std::ptrdiff_t z = 0; z < D; ++z) {
            const std::ptrdiff_t sz = z + kt - 1;
            if (sz < 0 || sz >= D) continue;
            for (std::ptrdiff_t y = 0; y < H; ++y) {
              const std::ptrdiff_t sy = y + ky - 1;
              if (sy < 0 || sy >= H) continue;
              const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, 1 - kx);
              const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W + 1 - kx);
              double* dst = row + (z * H + y) * W;
              const double* src = plane + (sz * H + sy) * W + kx - 1;
              for (std::ptrdiff_t x = x0; x < x1; ++x) dst[x] = src[x];
            }
          }
        }
}

void col2im3d(const std::vector<double>& col, const Conv3dGeom& g, double* out) {
  const std::size_t vol = g.volume();
  const auto D = static_cast<std::ptrdiff_t>(g.depth), H = static_cast<std::ptrdiff_t>(g.height),
             W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::ptrdiff_t kt = 0; kt < 3; ++kt)
      for (std::ptrdiff_t ky = 0; ky < 3; ++ky)
        for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
          const double* row =
              &col[((ci * 3 + static_cast<std::size_t>(kt)) * 9 + static_cast<std::size_t>(ky * 3 + kx)) * vol];
          double* plane = out + ci * vol;
          for (std::ptrdiff_t z = 0; z < D; ++z) {
            const std::ptrdiff_t sz = z + kt - 1;
            if (sz < 0 || sz >= D) continue;
            for (std::ptrdiff_t y = 0; y < H; ++y) {
              const std::ptrdiff_t sy = y + ky - 1;
              if (sy < 0 || sy >= H) continue;
              const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, 1 - kx);
              const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W + 1 - kx);
              const double* src = row + (z * H + y) * W;
              double* dst = plane + (sz * H + sy) * W + kx - 1;
              for (std::ptrdiff_t x = x0; x < x1; ++x) dst[x] += src[x];
            }
          }
        }
}

}  // namespace

Var conv3d(Tape& t, Var x, Var weights, Var bias) {
  const Tensor& in = t.value(x);
  const Tensor& w = t.value(weights);
  const Tensor& b = t.value(bias);
  require_rank(in, 5, "conv3d");
  require_rank(w, 5, "conv3d weights");
  Conv3dGeom geom{in.dim(0), in.dim(1), w.dim(0), in.dim(2), in.dim(3), in.dim(4)};
  require(w.dim(1) == geom.cin && w.dim(2) == 3 && w.dim(3) == 3 && w.dim(4) == 3, ErrorCode::kShapeMismatch,
          "conv3d weights " + shape_string(w.shape()) + " for input " + shape_string(in.shape()));
  require(b.rank() == 1 && b.dim(0) == geom.cout, ErrorCode::kShapeMismatch, "conv3d bias");
  const std::size_t vol = geom.volume(), taps = geom.taps();
  Tensor out({geom.batch, geom.cout, geom.depth, geom.height, geom.width});
  std::vector<double> col;
  for (std::size_t n = 0; n < geom.batch; ++n) {
    im2col3d(&in[n * geom.cin * vol], geom, col);
    double* base = &out[n * geom.cout * vol];
    for (std::size_t co = 0; co < geom.cout; ++co)
      for (std::size_t i = 0; i < vol; ++i) base[co * vol + i] = b[co];
    // Tap-major so each column row streams through cache once.
    for (std::size_t k = 0; k < taps; ++k) {
      const double* src = &col[k * vol];
      for (std::size_t co = 0; co < geom.cout; ++co) {
        const double wk = w[co * taps + k];
        if (wk == 0.0) continue;
        double* dst = base + co * vol;
        for (std::size_t i = 0; i < vol; ++i) dst[i] += wk * src[i];
      }
    }
  }
  return t.record("conv3d", std::move(out), {x, weights, bias}, [x, weights, bias, geom](Tape& tp, const Tensor& g) {
    const Tensor& in = tp.value(x);
    const Tensor& w = tp.value(weights);
    const std::size_t vol = geom.volume(), taps = geom.taps();
    const bool gx_on = tp.requires_grad(x), gw_on = tp.requires_grad(weights);
    std::vector<double> col, gcol;
    for (std::size_t n = 0; n < geom.batch; ++n) {
      const double* go = &g[n * geom.cout * vol];
      if (gw_on) {
        Tensor& gw = tp.grad(weights);
        im2col3d(&in[n * geom.cin * vol], geom, col);
        for (std::size_t k = 0; k < taps; ++k)
          for (std::size_t co = 0; co < geom.cout; ++co) {
            const double* src = &col[k * vol];
            const double* gr = go + co * vol;
            double acc = 0.0;
            for (std::size_t i = 0; i < vol; ++i) acc += src[i] * gr[i];
            gw[co * taps + k] += acc;
          }
      }
      if (gx_on) {
        gcol.assign(taps * vol, 0.0);
        for (std::size_t k = 0; k < taps; ++k) {
          double* dst = &gcol[k * vol];
          for (std::size_t co = 0; co < geom.cout; ++co) {
            const double wk = w[co * taps + k];
            if (wk == 0.0) continue;
            const double* gr = go + co * vol;
            for (std::size_t i = 0; i < vol; ++i) dst[i] += wk * gr[i];
          }
        }
        col2im3d(gcol, geom, &tp.grad(x)[n * geom.cin * vol]);
      }
    }
    if (tp.requires_grad(bias)) {
      Tensor& gb = tp.grad(bias);
      for (std::size_t n = 0; n < geom.batch; ++n)
        for (std::size_t co = 0; co < geom.cout; ++co)
          for (std::size_t i = 0; i < vol; ++i) gb[co] += g[(n * geom.cout + co) * vol + i];
    }
  });
}

Var batch_norm(Tape& t, Var x, Var gamma, Var beta, bool training, const BatchNormStats& running,
               BatchNormStats* batch_stats, double eps) {
  const Tensor& in = t.value(x);
  require(in.rank() >= 2, ErrorCode::kShapeMismatch, "batch_norm needs B×C×...");
  const std::size_t batch = in.dim(0), ch = in.dim(1);
  const std::size_t inner = in.size() / (batch * ch);
  const Tensor& gm = t.value(gamma);
  const Tensor& bt = t.value(beta);
  require(gm.rank() == 1 && gm.dim(0) == ch && bt.rank() == 1 && bt.dim(0) == ch, ErrorCode::kShapeMismatch,
          "batch_norm affine parameters");
  const double count = static_cast<double>(batch * inner);
  Tensor mean({ch}), var({ch});
  if (training) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < inner; ++i) mean[c] += in[(n * ch + c) * inner + i];
    for (std::size_t c = 0; c < ch; ++c) mean[c] /= count;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = in[(n * ch + c) * inner + i] - mean[c];
          var[c] += d * d;
        }
    for (std::size_t c = 0; c < ch; ++c) var[c] /= count;
    if (batch_stats) *batch_stats = {mean, var};
  } else {
    require(running.mean.size() == ch && running.variance.size() == ch, ErrorCode::kShapeMismatch,
            "batch_norm running statistics");
    mean = running.mean;
    var = running.variance;
  }
  Tensor inv_std({ch});
  for (std::size_t c = 0; c < ch; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  Tensor xhat(in.shape()), out(in.shape());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = (n * ch + c) * inner + i;
        xhat[k] = (in[k] - mean[c]) * inv_std[c];
        out[k] = gm[c] * xhat[k] + bt[c];
      }
  return t.record("batch_norm", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, training, batch, ch, inner, count, inv_std, xhat = std::move(xhat)](
                      Tape& tp, const Tensor& g) {
                    const Tensor& gm = tp.value(gamma);
                    Tensor sum_g({ch}), sum_gx({ch});
                    for (std::size_t n = 0; n < batch; ++n)
                      for (std::size_t c = 0; c < ch; ++c)
                        for (std::size_t i = 0; i < inner; ++i) {
                          const std::size_t k = (n * ch + c) * inner + i;
                          sum_g[c] += g[k];
                          sum_gx[c] += g[k] * xhat[k];
                        }
                    if (tp.requires_grad(gamma)) add_inplace(tp.grad(gamma), sum_gx);
                    if (tp.requires_grad(beta)) add_inplace(tp.grad(beta), sum_g);
                    if (!tp.requires_grad(x)) return;
                    Tensor& gx = tp.grad(x);
                    for (std::size_t n = 0; n < batch; ++n)
                      for (std::size_t c = 0; c < ch; ++c) {
                        const double a = gm[c] * inv_std[c];
                        for (std::size_t i = 0; i < inner; ++i) {
                          const std::size_t k = (n * ch + c) * inner + i;
                          if (training)
                            gx[k] += a * (g[k] - sum_g[c] / count - xhat[k] * sum_gx[c] / count);
                          else
                            gx[k] += a * g[k];
                        }
                      }
                  });
}

Var temporal_affine_warp(Tape& t, Var f, Var a, Var b) {
  const Tensor& x = t.value(f);
  require(x.rank() >= 2, ErrorCode::kShapeMismatch, "temporal_affine_warp needs C×T×...");
  const double av = t.value(a).item(), bv = t.value(b).item();
  constexpr double kTol = 1e-9;
  require(std::isfinite(av) && std::isfinite(bv) && av > 0.0 && av <= 1.0 + kTol && bv >= -kTol &&
              av + bv <= 1.0 + kTol,
          ErrorCode::kInvalidArgument,
          "warp parameters (a=" + std::to_string(av) + ", b=" + std::to_string(bv) + ") leave [0, 1]");
  const AxisSplit s = split_axis(x.shape(), 1);
  const std::size_t len = s.dim;
  require(len >= 2, ErrorCode::kShapeMismatch, "temporal_affine_warp needs T >= 2");
  const double last = static_cast<double>(len - 1);
  std::vector<std::size_t> lo(len);
  std::vector<double> frac(len);
  std::uint64_t hash = 0;
  for (std::size_t i = 0; i < len; ++i) {
    const double src = std::clamp(bv * last + av * static_cast<double>(i), 0.0, last);
    lo[i] = std::min(static_cast<std::size_t>(std::floor(src)), len - 2);
    frac[i] = src - static_cast<double>(lo[i]);
    hash = fold(hash, lo[i] * 2 + (frac[i] == 0.0 ? 1 : 0));
  }
  t.note_branch(hash);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < len; ++i) {
      const double* p0 = &x[(o * len + lo[i]) * s.inner];
      const double* p1 = p0 + s.inner;
      double* dst = &out[(o * len + i) * s.inner];
      const double w1 = frac[i], w0 = 1.0 - frac[i];
      for (std::size_t k = 0; k < s.inner; ++k) dst[k] = w0 * p0[k] + w1 * p1[k];
    }
  return t.record("temporal_affine_warp", std::move(out), {f, a, b},
                  [f, a, b, s, len, last, lo = std::move(lo), frac = std::move(frac)](Tape& tp, const Tensor& g) {
                    const Tensor& x = tp.value(f);
                    double ga = 0.0, gb = 0.0;
                    Tensor* gx = tp.requires_grad(f) ? &tp.grad(f) : nullptr;
                    for (std::size_t o = 0; o < s.outer; ++o)
                      for (std::size_t i = 0; i < len; ++i) {
                        const std::size_t base0 = (o * len + lo[i]) * s.inner;
                        const std::size_t base1 = base0 + s.inner;
                        const double* go = &g[(o * len + i) * s.inner];
                        double dsrc = 0.0;
                        for (std::size_t k = 0; k < s.inner; ++k) {
                          dsrc += go[k] * (x[base1 + k] - x[base0 + k]);
                          if (gx) {
                            (*gx)[base0 + k] += go[k] * (1.0 - frac[i]);
                            (*gx)[base1 + k] += go[k] * frac[i];
                          }
                        }
                        ga += dsrc * static_cast<double>(i);
                        gb += dsrc * last;
                      }
                    if (tp.requires_grad(a)) tp.grad(a)[0] += ga;
                    if (tp.requires_grad(b)) tp.grad(b)[0] += gb;
                  });
}

Var mix_time(Tape& t, Var mix, Var v) {
  const Tensor& m = t.value(mix);
  const Tensor& x = t.value(v);
  require_rank(m, 2, "mix_time");
  require(x.rank() >= 2 && x.dim(1) == m.dim(1), ErrorCode::kShapeMismatch,
          "mix_time: " + shape_string(m.shape()) + " with " + shape_string(x.shape()));
  const AxisSplit s = split_axis(x.shape(), 1);
  const std::size_t tout = m.dim(0), tin = m.dim(1);
  Shape out_shape = x.shape();
  out_shape[1] = tout;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < tout; ++i) {
      double* dst = &out[(o * tout + i) * s.inner];
      for (std::size_t j = 0; j < tin; ++j) {
        const double w = m[i * tin + j];
        const double* src = &x[(o * tin + j) * s.inner];
        for (std::size_t k = 0; k < s.inner; ++k) dst[k] += w * src[k];
      }
    }
  return t.record("mix_time", std::move(out), {mix, v}, [mix, v, s, tout, tin](Tape& tp, const Tensor& g) {
    const Tensor& m = tp.value(mix);
    const Tensor& x = tp.value(v);
    const bool gm_on = tp.requires_grad(mix), gv_on = tp.requires_grad(v);
    Tensor* gm = gm_on ? &tp.grad(mix) : nullptr;
    Tensor* gv = gv_on ? &tp.grad(v) : nullptr;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < tout; ++i) {
        const double* go = &g[(o * tout + i) * s.inner];
        for (std::size_t j = 0; j < tin; ++j) {
          const std::size_t base = (o * tin + j) * s.inner;
          if (gm) {
            double acc = 0.0;
            for (std::size_t k = 0; k < s.inner; ++k) acc += go[k] * x[base + k];
            (*gm)[i * tin + j] += acc;
          }
          if (gv) {
            const double w = m[i * tin + j];
            for (std::size_t k = 0; k < s.inner; ++k) (*gv)[base + k] += w * go[k];
          }
        }
      }
  });
}

namespace {

enum class MaskRegion : std::uint8_t { kPlateau, kSlope, kZero };

struct MaskSample {
  double value;
  double dvalue_dcentre;
  MaskRegion region;
};

MaskSample mask_1d(double coord, double centre, double gamma) {
  const double dist = std::abs(coord - centre);
  if (dist < 1.0) return {1.0, 0.0, MaskRegion::kPlateau};
  const double v = 1.0 - gamma * (dist - 1.0);
  if (v <= 0.0) return {0.0, 0.0, MaskRegion::kZero};
  const double sign = coord > centre ? 1.0 : -1.0;
  return {v, gamma * sign, MaskRegion::kSlope};
}

}  // namespace

Var offset_mask(Tape& t, Var offsets, std::size_t height, std::size_t width, double gamma) {
  const Tensor& o = t.value(offsets);
  require(o.rank() == 2 && o.dim(1) == 2, ErrorCode::kShapeMismatch, "offset_mask expects T×2 offsets");
  require(height > 0 && width > 0 && gamma > 0.0, ErrorCode::kInvalidArgument, "offset_mask geometry");
  require(o.all_finite(), ErrorCode::kNumerical, "offset_mask: non-finite offset");
  const std::size_t len = o.dim(0);
  const double cx0 = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy0 = (static_cast<double>(height) - 1.0) / 2.0;
  Tensor out({len, height, width});
  std::vector<MaskSample> mx(len * width), my(len * height);
  std::uint64_t hash = 0;
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t x = 0; x < width; ++x) {
      mx[i * width + x] = mask_1d(static_cast<double>(x), cx0 + o[i * 2], gamma);
      hash = fold(hash, static_cast<std::uint64_t>(mx[i * width + x].region) * 2 + (mx[i * width + x].dvalue_dcentre > 0));
    }
    for (std::size_t y = 0; y < height; ++y) {
      my[i * height + y] = mask_1d(static_cast<double>(y), cy0 + o[i * 2 + 1], gamma);
      hash = fold(hash, static_cast<std::uint64_t>(my[i * height + y].region) * 2 + (my[i * height + y].dvalue_dcentre > 0));
    }
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out[(i * height + y) * width + x] = mx[i * width + x].value * my[i * height + y].value;
  }
  t.note_branch(hash);
  return t.record("offset_mask", std::move(out), {offsets},
                  [offsets, len, height, width, mx = std::move(mx), my = std::move(my)](Tape& tp, const Tensor& g) {
                    Tensor& go = tp.grad(offsets);
                    for (std::size_t i = 0; i < len; ++i) {
                      double gx = 0.0, gy = 0.0;
                      for (std::size_t y = 0; y < height; ++y)
                        for (std::size_t x = 0; x < width; ++x) {
                          const double gv = g[(i * height + y) * width + x];
                          const MaskSample& sx = mx[i * width + x];
                          const MaskSample& sy = my[i * height + y];
                          gx += gv * sx.dvalue_dcentre * sy.value;
                          gy += gv * sx.value * sy.dvalue_dcentre;
                        }
                      go[i * 2] += gx;
                      go[i * 2 + 1] += gy;
                    }
                  });
}

Var masked_spatial_average(Tape& t, Var f, Var mask, double floor) {
  const Tensor& x = t.value(f);
  const Tensor& m = t.value(mask);
  require_rank(x, 4, "masked_spatial_average");
  require(m.rank() == 3 && m.dim(0) == x.dim(1) && m.dim(1) == x.dim(2) && m.dim(2) == x.dim(3),
          ErrorCode::kShapeMismatch,
          "masked_spatial_average: mask " + shape_string(m.shape()) + " for " + shape_string(x.shape()));
  const std::size_t ch = x.dim(0), len = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> total(len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t k = 0; k < hw; ++k) total[i] += m[i * hw + k] + floor;
    require(total[i] > 0.0, ErrorCode::kNumerical, "masked_spatial_average: mask sums to zero");
  }
  Tensor out({ch, len});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t i = 0; i < len; ++i) {
      const double* src = &x[(c * len + i) * hw];
      const double* w = &m[i * hw];
      double acc = 0.0;
      for (std::size_t k = 0; k < hw; ++k) acc += (w[k] + floor) * src[k];
      out[c * len + i] = acc / total[i];
    }
  Tensor saved = out;
  return t.record("masked_spatial_average", std::move(out), {f, mask},
                  [f, mask, floor, ch, len, hw, total = std::move(total), saved = std::move(saved)](
                      Tape& tp, const Tensor& g) {
                    const Tensor& x = tp.value(f);
                    const Tensor& m = tp.value(mask);
                    if (tp.requires_grad(f)) {
                      Tensor& gx = tp.grad(f);
                      for (std::size_t c = 0; c < ch; ++c)
                        for (std::size_t i = 0; i < len; ++i) {
                          const double s = g[c * len + i] / total[i];
                          for (std::size_t k = 0; k < hw; ++k) gx[(c * len + i) * hw + k] += s * (m[i * hw + k] + floor);
                        }
                    }
                    if (tp.requires_grad(mask)) {
                      Tensor& gm = tp.grad(mask);
                      for (std::size_t c = 0; c < ch; ++c)
                        for (std::size_t i = 0; i < len; ++i) {
                          const double s = g[c * len + i] / total[i];
                          const double mean = saved[c * len + i];
                          for (std::size_t k = 0; k < hw; ++k) gm[i * hw + k] += s * (x[(c * len + i) * hw + k] - mean);
                        }
                    }
                  });
}

Var frame_cosine_distance(Tape& t, Var f, Var p) {
  const Tensor& a = t.value(f);
  const Tensor& b = t.value(p);
  require_rank(a, 2, "frame_cosine_distance");
  require_same_shape(a, b, "frame_cosine_distance");
  constexpr double kEps = 1e-12;
  const std::size_t ch = a.dim(0), len = a.dim(1);
  std::vector<double> na(len), nb(len), cosv(len);
  double dist = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t c = 0; c < ch; ++c) {
      const double x = a[c * len + i], y = b[c * len + i];
      saa += x * x;
      sbb += y * y;
      sab += x * y;
    }
    na[i] = std::sqrt(saa + kEps * kEps);
    nb[i] = std::sqrt(sbb + kEps * kEps);
    cosv[i] = sab / (na[i] * nb[i]);
    dist += 1.0 - cosv[i];
  }
  return t.record("frame_cosine_distance", Tensor::scalar(dist), {f, p},
                  [f, p, ch, len, na = std::move(na), nb = std::move(nb), cosv = std::move(cosv)](
                      Tape& tp, const Tensor& g) {
                    const Tensor& a = tp.value(f);
                    const Tensor& b = tp.value(p);
                    const double go = g[0];
                    Tensor* ga = tp.requires_grad(f) ? &tp.grad(f) : nullptr;
                    Tensor* gb = tp.requires_grad(p) ? &tp.grad(p) : nullptr;
                    for (std::size_t i = 0; i < len; ++i) {
                      const double inv = 1.0 / (na[i] * nb[i]);
                      for (std::size_t c = 0; c < ch; ++c) {
                        const std::size_t k = c * len + i;
                        if (ga) (*ga)[k] -= go * (b[k] * inv - cosv[i] * a[k] / (na[i] * na[i]));
                        if (gb) (*gb)[k] -= go * (a[k] * inv - cosv[i] * b[k] / (nb[i] * nb[i]));
                      }
                    }
                  });
}

}  // namespace ta2n::ops
