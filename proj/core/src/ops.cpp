#include "ssigan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "ssigan/blas.hpp"

namespace ssigan::ad {

namespace {

bool tracked(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_to_string(a) + " and " +
                              shape_to_string(b));
}

std::int64_t prod(const Shape& s, int from, int to) {
  std::int64_t n = 1;
  for (int i = from; i < to; ++i) n *= s[i];
  return n;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
  return true;
}

// dst[perm-reordered index] = src; odometer walk over the source, no div/mod.
void permute_copy(const double* src, const Shape& sshape,
                  const std::vector<int>& perm, double* dst, bool accumulate) {
  const int nd = static_cast<int>(sshape.size());
  Shape oshape(nd);
  for (int i = 0; i < nd; ++i) oshape[i] = sshape[perm[i]];
  std::vector<std::int64_t> ostride(nd);
  std::int64_t s = 1;
  for (int i = nd - 1; i >= 0; --i) {
    ostride[i] = s;
    s *= oshape[i];
  }
  // stride in the output for a step along source axis i
  std::vector<std::int64_t> step(nd);
  for (int i = 0; i < nd; ++i) {
    int where = 0;
    while (perm[where] != i) ++where;
    step[i] = ostride[where];
  }
  // axes forming an identity suffix of perm stay contiguous in the output,
  // so they can move as one block instead of element by element
  int tail = nd;
  while (tail > 0 && perm[tail - 1] == tail - 1) --tail;
  const std::int64_t block = prod(sshape, tail, nd);
  std::vector<std::int64_t> idx(nd, 0);
  const std::int64_t outer = prod(sshape, 0, tail);
  std::int64_t opos = 0;
  const double* sp = src;
  for (std::int64_t lin = 0; lin < outer; ++lin, sp += block) {
    double* dp = dst + opos;
    if (accumulate)
      for (std::int64_t i = 0; i < block; ++i) dp[i] += sp[i];
    else
      std::memcpy(dp, sp, block * sizeof(double));
    for (int ax = tail - 1; ax >= 0; --ax) {
      opos += step[ax];
      if (++idx[ax] < sshape[ax]) break;
      opos -= step[ax] * sshape[ax];
      idx[ax] = 0;
    }
  }
}

Tensor make_output(const Shape& shape, bool requires_grad) {
  Tensor out(shape, requires_grad);
  return out;
}

void softmax_rows_inplace(double* m, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = m + r * cols;
    double mx = row[0];
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t c = 0; c < cols; ++c) row[c] *= inv;
  }
}

}  // namespace

// --------------------------------------------------------------------------

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (!is_suffix(b.shape(), a.shape())) shape_error("add", a.shape(), b.shape());
  const std::int64_t n = a.size(), bn = b.size();
  const bool rg = tracked(tape, {&a, &b});
  Tensor out = make_output(a.shape(), rg);
  const double* av = a.data();
  const double* bv = b.data();
  double* ov = out.data();
  if (bn == n) {
    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  } else {
    for (std::int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % bn];
  }
  if (rg) {
    auto an = a.node, bb = b.node, on = out.node;
    tape->record([an, bb, on, n, bn] {
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        double* ga = an->grad.data();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bb->requires_grad) {
        bb->ensure_grad();
        double* gb = bb->grad.data();
        for (std::int64_t i = 0; i < n; ++i) gb[i % bn] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  const std::int64_t n = a.size();
  const bool rg = tracked(tape, {&a, &b});
  Tensor out = make_output(a.shape(), rg);
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (rg) {
    auto an = a.node, bn = b.node, on = out.node;
    tape->record([an, bn, on, n] {
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) an->grad[i] += g[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) bn->grad[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  const std::int64_t n = a.size();
  const bool rg = tracked(tape, {&a, &b});
  Tensor out = make_output(a.shape(), rg);
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (rg) {
    auto an = a.node, bn = b.node, on = out.node;
    tape->record([an, bn, on, n] {
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) an->grad[i] += g[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) bn->grad[i] += g[i] * an->values[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  const std::int64_t n = a.size();
  const bool rg = tracked(tape, {&a});
  Tensor out = make_output(a.shape(), rg);
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, n, s] {
      an->ensure_grad();
      const double* g = on->grad.data();
      for (std::int64_t i = 0; i < n; ++i) an->grad[i] += g[i] * s;
    });
  }
  return out;
}

Tensor add_scalar(Tape* tape, const Tensor& a, double c) {
  const std::int64_t n = a.size();
  const bool rg = tracked(tape, {&a});
  Tensor out = make_output(a.shape(), rg);
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, n] {
      an->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor reshape(Tape* tape, const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    shape_error("reshape", a.shape(), shape);
  const bool rg = tracked(tape, {&a});
  Tensor out(std::move(shape), a.node->values, rg);
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on] {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i)
        an->grad[i] += on->grad[i];
    });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& a, const std::vector<int>& perm) {
  const int nd = a.ndim();
  if (static_cast<int>(perm.size()) != nd)
    throw std::invalid_argument("transpose: permutation rank mismatch");
  Shape oshape(nd);
  for (int i = 0; i < nd; ++i) oshape[i] = a.shape()[perm[i]];
  const bool rg = tracked(tape, {&a});
  Tensor out = make_output(oshape, rg);
  permute_copy(a.data(), a.shape(), perm, out.data(), false);
  if (rg) {
    auto an = a.node, on = out.node;
    std::vector<int> inv(nd);
    for (int i = 0; i < nd; ++i) inv[perm[i]] = i;
    tape->record([an, on, inv, oshape] {
      an->ensure_grad();
      permute_copy(on->grad.data(), oshape, inv, an->grad.data(), true);
    });
  }
  return out;
}

Tensor concatenate(Tape* tape, const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concatenate: no inputs");
  const Shape& s0 = parts[0].shape();
  const int nd = static_cast<int>(s0.size());
  std::int64_t total_axis = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.ndim() != nd) shape_error("concatenate", s0, p.shape());
    for (int i = 0; i < nd; ++i)
      if (i != axis && p.shape()[i] != s0[i])
        shape_error("concatenate", s0, p.shape());
    total_axis += p.shape()[axis];
    rg = rg || (tape && p.requires_grad());
  }
  Shape oshape = s0;
  oshape[axis] = total_axis;
  Tensor out = make_output(oshape, rg && tape);
  const std::int64_t outer = prod(s0, 0, axis);
  const std::int64_t inner = prod(s0, axis + 1, nd);
  std::int64_t off = 0;
  for (const Tensor& p : parts) {
    const std::int64_t pa = p.shape()[axis];
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * total_axis + off) * inner,
                  p.data() + o * pa * inner, sizeof(double) * pa * inner);
    off += pa;
  }
  if (rg && tape) {
    auto on = out.node;
    std::vector<std::shared_ptr<TensorData>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node);
    tape->record([on, nodes, outer, inner, total_axis, axis] {
      std::int64_t off2 = 0;
      for (auto& pn : nodes) {
        const std::int64_t pa = pn->shape[axis];
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::int64_t o = 0; o < outer; ++o) {
            const double* g = on->grad.data() + (o * total_axis + off2) * inner;
            double* dst = pn->grad.data() + o * pa * inner;
            for (std::int64_t i = 0; i < pa * inner; ++i) dst[i] += g[i];
          }
        }
        off2 += pa;
      }
    });
  }
  return out;
}

Tensor slice(Tape* tape, const Tensor& a, int axis, std::int64_t start,
             std::int64_t len) {
  const int nd = a.ndim();
  if (axis < 0 || axis >= nd || start < 0 || len < 1 ||
      start + len > a.shape()[axis])
    throw std::invalid_argument("slice: range [" + std::to_string(start) +
                                ", " + std::to_string(start + len) +
                                ") invalid for shape " +
                                shape_to_string(a.shape()));
  Shape oshape = a.shape();
  oshape[axis] = len;
  const bool rg = tracked(tape, {&a});
  Tensor out = make_output(oshape, rg);
  const std::int64_t outer = prod(a.shape(), 0, axis);
  const std::int64_t d = a.shape()[axis];
  const std::int64_t inner = prod(a.shape(), axis + 1, nd);
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner,
                a.data() + (o * d + start) * inner, sizeof(double) * len * inner);
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, outer, d, inner, start, len] {
      an->ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* g = on->grad.data() + o * len * inner;
        double* dst = an->grad.data() + (o * d + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor roll(Tape* tape, const Tensor& a, std::int64_t offset, int axis) {
  const int nd = a.ndim();
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument("roll: axis " + std::to_string(axis) +
                                " invalid for shape " +
                                shape_to_string(a.shape()));
  const std::int64_t d = a.shape()[axis];
  std::int64_t off = ((offset % d) + d) % d;
  const bool rg = tracked(tape, {&a});
  Tensor out = make_output(a.shape(), rg);
  const std::int64_t outer = prod(a.shape(), 0, axis);
  const std::int64_t inner = prod(a.shape(), axis + 1, nd);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < d; ++i)
      std::memcpy(out.data() + (o * d + (i + off) % d) * inner,
                  a.data() + (o * d + i) * inner, sizeof(double) * inner);
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, outer, d, inner, off] {
      an->ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < d; ++i) {
          const double* g = on->grad.data() + (o * d + (i + off) % d) * inner;
          double* dst = an->grad.data() + (o * d + i) * inner;
          for (std::int64_t j = 0; j < inner; ++j) dst[j] += g[j];
        }
    });
  }
  return out;
}

// --------------------------------------------------------------------------

namespace {

template <typename F, typename G>
Tensor pointwise(Tape* tape, const Tensor& a, F fwd, G dfn) {
  const std::int64_t n = a.size();
  const bool rg = tracked(tape, {&a});
  Tensor out = make_output(a.shape(), rg);
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, n, dfn] {
      an->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        an->grad[i] += on->grad[i] * dfn(an->values[i], on->values[i]);
    });
  }
  return out;
}

}  // namespace

Tensor leaky_relu(Tape* tape, const Tensor& a, double alpha) {
  return pointwise(
      tape, a, [alpha](double v) { return v > 0 ? v : alpha * v; },
      [alpha](double v, double) { return v > 0 ? 1.0 : alpha; });
}

Tensor tanh_op(Tape* tape, const Tensor& a) {
  return pointwise(
      tape, a, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tape* tape, const Tensor& a) {
  return pointwise(
      tape, a,
      [](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_op(Tape* tape, const Tensor& a) {
  return pointwise(
      tape, a, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log_op(Tape* tape, const Tensor& a) {
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (!(a.data()[i] > 0.0))
      throw std::domain_error("log: non-positive input " +
                              std::to_string(a.data()[i]) + " at index " +
                              std::to_string(i));
  return pointwise(
      tape, a, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor clamp(Tape* tape, const Tensor& a, double lo, double hi) {
  return pointwise(
      tape, a, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// --------------------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() != 2 ||
      a.shape().back() != b.shape()[0])
    shape_error("matmul", a.shape(), b.shape());
  const std::int64_t k = b.shape()[0], n = b.shape()[1];
  const std::int64_t m = a.size() / k;
  Shape oshape = a.shape();
  oshape.back() = n;
  const bool rg = tracked(tape, {&a, &b});
  Tensor out = make_output(oshape, rg);
  gemm(false, false, static_cast<int>(m), static_cast<int>(n),
       static_cast<int>(k), 1.0, a.data(), static_cast<int>(k), b.data(),
       static_cast<int>(n), 0.0, out.data(), static_cast<int>(n));
  if (rg) {
    auto an = a.node, bn = b.node, on = out.node;
    tape->record([an, bn, on, m, n, k] {
      const double* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        gemm(false, true, static_cast<int>(m), static_cast<int>(k),
             static_cast<int>(n), 1.0, g, static_cast<int>(n),
             bn->values.data(), static_cast<int>(n), 1.0, an->grad.data(),
             static_cast<int>(k));
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        gemm(true, false, static_cast<int>(k), static_cast<int>(n),
             static_cast<int>(m), 1.0, an->values.data(), static_cast<int>(k),
             g, static_cast<int>(n), 1.0, bn->grad.data(),
             static_cast<int>(n));
      }
    });
  }
  return out;
}

Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.shape()[0] != b.shape()[0] ||
      a.shape()[2] != b.shape()[1])
    shape_error("bmm", a.shape(), b.shape());
  const std::int64_t nb = a.shape()[0], m = a.shape()[1], k = a.shape()[2],
                     n = b.shape()[2];
  const bool rg = tracked(tape, {&a, &b});
  Tensor out = make_output({nb, m, n}, rg);
  for (std::int64_t i = 0; i < nb; ++i)
    gemm(false, false, static_cast<int>(m), static_cast<int>(n),
         static_cast<int>(k), 1.0, a.data() + i * m * k, static_cast<int>(k),
         b.data() + i * k * n, static_cast<int>(n), 0.0,
         out.data() + i * m * n, static_cast<int>(n));
  if (rg) {
    auto an = a.node, bn = b.node, on = out.node;
    tape->record([an, bn, on, nb, m, n, k] {
      for (std::int64_t i = 0; i < nb; ++i) {
        const double* g = on->grad.data() + i * m * n;
        if (an->requires_grad) {
          an->ensure_grad();
          gemm(false, true, static_cast<int>(m), static_cast<int>(k),
               static_cast<int>(n), 1.0, g, static_cast<int>(n),
               bn->values.data() + i * k * n, static_cast<int>(n), 1.0,
               an->grad.data() + i * m * k, static_cast<int>(k));
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          gemm(true, false, static_cast<int>(k), static_cast<int>(n),
               static_cast<int>(m), 1.0, an->values.data() + i * m * k,
               static_cast<int>(k), g, static_cast<int>(n), 1.0,
               bn->grad.data() + i * k * n, static_cast<int>(n));
        }
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------

Tensor reduce_sum(Tape* tape, const Tensor& a) {
  const std::int64_t n = a.size();
  const bool rg = tracked(tape, {&a});
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += a.data()[i];
  Tensor out({1}, {s}, rg);
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, n] {
      an->ensure_grad();
      const double g = on->grad[0];
      for (std::int64_t i = 0; i < n; ++i) an->grad[i] += g;
    });
  }
  return out;
}

Tensor reduce_mean(Tape* tape, const Tensor& a) {
  const std::int64_t n = a.size();
  const bool rg = tracked(tape, {&a});
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += a.data()[i];
  Tensor out({1}, {s / n}, rg);
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, n] {
      an->ensure_grad();
      const double g = on->grad[0] / n;
      for (std::int64_t i = 0; i < n; ++i) an->grad[i] += g;
    });
  }
  return out;
}

Tensor global_average_pool(Tape* tape, const Tensor& x) {
  if (x.ndim() != 3)
    throw std::invalid_argument("global_average_pool: expected [B,T,D], got " +
                                shape_to_string(x.shape()));
  const std::int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  const bool rg = tracked(tape, {&x});
  Tensor out = make_output({b, d}, rg);
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < t; ++j)
      for (std::int64_t c = 0; c < d; ++c)
        out.data()[i * d + c] += x.data()[(i * t + j) * d + c] / t;
  if (rg) {
    auto xn = x.node, on = out.node;
    tape->record([xn, on, b, t, d] {
      xn->ensure_grad();
      for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t j = 0; j < t; ++j)
          for (std::int64_t c = 0; c < d; ++c)
            xn->grad[(i * t + j) * d + c] += on->grad[i * d + c] / t;
    });
  }
  return out;
}

Tensor softmax(Tape* tape, const Tensor& a) {
  const std::int64_t k = a.shape().back();
  const std::int64_t rows = a.size() / k;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a.data()[i]))
      throw std::domain_error("softmax: non-finite logit at index " +
                              std::to_string(i));
  const bool rg = tracked(tape, {&a});
  Tensor out(a.shape(), a.node->values, rg);
  softmax_rows_inplace(out.data(), rows, k);
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, rows, k] {
      an->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* p = on->values.data() + r * k;
        const double* g = on->grad.data() + r * k;
        double dot = 0.0;
        for (std::int64_t c = 0; c < k; ++c) dot += p[c] * g[c];
        double* ga = an->grad.data() + r * k;
        for (std::int64_t c = 0; c < k; ++c) ga[c] += p[c] * (g[c] - dot);
      }
    });
  }
  return out;
}

Tensor row_logsumexp(Tape* tape, const Tensor& a) {
  if (a.ndim() < 1)
    throw std::invalid_argument("row_logsumexp: scalar input");
  const std::int64_t k = a.shape().back();
  const std::int64_t rows = a.size() / k;
  Shape oshape(a.shape().begin(), a.shape().end() - 1);
  if (oshape.empty()) oshape = {1};
  const bool rg = tracked(tape, {&a});
  Tensor out = make_output(oshape, rg);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = a.data() + r * k;
    double mx = row[0];
    for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (std::int64_t c = 0; c < k; ++c) s += std::exp(row[c] - mx);
    out.data()[r] = mx + std::log(s);
  }
  if (rg) {
    auto an = a.node, on = out.node;
    tape->record([an, on, rows, k] {
      an->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double lse = on->values[r];
        const double g = on->grad[r];
        const double* row = an->values.data() + r * k;
        double* ga = an->grad.data() + r * k;
        for (std::int64_t c = 0; c < k; ++c)
          ga[c] += g * std::exp(row[c] - lse);
      }
    });
  }
  return out;
}

Tensor cross_entropy(Tape* tape, const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape())
    shape_error("cross_entropy", probs.shape(), targets.shape());
  const std::int64_t k = probs.shape().back();
  const std::int64_t rows = probs.size() / k;
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t c = 0; c < k; ++c) s += targets.data()[r * k + c];
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument("cross_entropy: target row " +
                                  std::to_string(r) + " sums to " +
                                  std::to_string(s));
  }
  double loss = 0.0;
  for (std::int64_t i = 0; i < probs.size(); ++i)
    loss -= targets.data()[i] * std::log(std::max(probs.data()[i], 1e-12));
  loss /= rows;
  const bool rg = tracked(tape, {&probs, &targets});
  Tensor out({1}, {loss}, rg);
  if (rg) {
    auto pn = probs.node, tn = targets.node, on = out.node;
    tape->record([pn, tn, on, rows] {
      if (!pn->requires_grad) return;
      pn->ensure_grad();
      const double g = on->grad[0] / rows;
      for (std::size_t i = 0; i < pn->values.size(); ++i) {
        const double p = pn->values[i];
        if (p > 1e-12) pn->grad[i] -= g * tn->values[i] / p;
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             const Tensor& targets) {
  if (logits.shape() != targets.shape())
    shape_error("softmax_cross_entropy", logits.shape(), targets.shape());
  for (std::int64_t i = 0; i < logits.size(); ++i)
    if (!std::isfinite(logits.data()[i]))
      throw std::domain_error(
          "softmax_cross_entropy: non-finite logit at index " +
          std::to_string(i));
  const std::int64_t k = logits.shape().back();
  const std::int64_t rows = logits.size() / k;
  std::vector<double> probs(logits.data(), logits.data() + logits.size());
  softmax_rows_inplace(probs.data(), rows, k);
  double loss = 0.0;
  for (std::int64_t i = 0; i < logits.size(); ++i)
    loss -= targets.data()[i] * std::log(std::max(probs[i], 1e-300));
  loss /= rows;
  const bool rg = tracked(tape, {&logits, &targets});
  Tensor out({1}, {loss}, rg);
  if (rg) {
    auto ln = logits.node, tn = targets.node, on = out.node;
    tape->record([ln, tn, on, rows, probs = std::move(probs)] {
      if (!ln->requires_grad) return;
      ln->ensure_grad();
      const double g = on->grad[0] / rows;
      for (std::size_t i = 0; i < ln->values.size(); ++i)
        ln->grad[i] += g * (probs[i] - tn->values[i]);
    });
  }
  return out;
}

// --------------------------------------------------------------------------

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  const std::int64_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d)
    shape_error("layer_norm", x.shape(), gamma.shape());
  const std::int64_t rows = x.size() / d;
  const bool rg = tracked(tape, {&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), rg);
  std::vector<double> inv_std(rows), mean(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xv = x.data() + r * d;
    double mu = 0.0;
    for (std::int64_t c = 0; c < d; ++c) mu += xv[c];
    mu /= d;
    double var = 0.0;
    for (std::int64_t c = 0; c < d; ++c) var += (xv[c] - mu) * (xv[c] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    double* ov = out.data() + r * d;
    for (std::int64_t c = 0; c < d; ++c)
      ov[c] = gamma.data()[c] * ((xv[c] - mu) * is) + beta.data()[c];
  }
  if (rg) {
    auto xn = x.node, gn = gamma.node, bn = beta.node, on = out.node;
    tape->record([xn, gn, bn, on, rows, d, mean = std::move(mean),
                  inv_std = std::move(inv_std)] {
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* xv = xn->values.data() + r * d;
        const double* g = on->grad.data() + r * d;
        const double mu = mean[r], is = inv_std[r];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::int64_t c = 0; c < d; ++c) {
          const double xhat = (xv[c] - mu) * is;
          const double dxhat = g[c] * gn->values[c];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (gn->requires_grad) gn->grad[c] += g[c] * xhat;
          if (bn->requires_grad) bn->grad[c] += g[c];
        }
        if (xn->requires_grad) {
          double* gx = xn->grad.data() + r * d;
          for (std::int64_t c = 0; c < d; ++c) {
            const double xhat = (xv[c] - mu) * is;
            const double dxhat = g[c] * gn->values[c];
            gx[c] += is * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, BatchNormStats& stats, Mode mode,
                  double momentum, double eps) {
  const std::int64_t c = x.shape().back();
  if (gamma.size() != c || beta.size() != c)
    shape_error("batch_norm", x.shape(), gamma.shape());
  const std::int64_t m = x.size() / c;
  const bool rg = tracked(tape, {&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), rg);

  if (mode == Mode::kTraining) {
    if (m < 2)
      throw std::invalid_argument(
          "batch_norm: degenerate batch of 1 in training mode");
    std::vector<double> mu(c, 0.0), var(c, 0.0);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < c; ++j) mu[j] += x.data()[i * c + j];
    for (std::int64_t j = 0; j < c; ++j) mu[j] /= m;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < c; ++j) {
        const double d = x.data()[i * c + j] - mu[j];
        var[j] += d * d;
      }
    for (std::int64_t j = 0; j < c; ++j) var[j] /= m;

    if (!stats.initialized) {
      stats.running_mean = mu;
      stats.running_var = var;
      stats.initialized = true;
    } else {
      for (std::int64_t j = 0; j < c; ++j) {
        stats.running_mean[j] =
            momentum * stats.running_mean[j] + (1.0 - momentum) * mu[j];
        stats.running_var[j] =
            momentum * stats.running_var[j] + (1.0 - momentum) * var[j];
      }
    }

    std::vector<double> inv_std(c);
    for (std::int64_t j = 0; j < c; ++j)
      inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        out.data()[i * c + j] =
            gamma.data()[j] * (x.data()[i * c + j] - mu[j]) * inv_std[j] +
            beta.data()[j];

    if (rg) {
      auto xn = x.node, gn = gamma.node, bn = beta.node, on = out.node;
      tape->record([xn, gn, bn, on, m, c, mu = std::move(mu),
                    inv_std = std::move(inv_std)] {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        std::vector<double> sum_g(c, 0.0), sum_g_xhat(c, 0.0);
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const double xhat =
                (xn->values[i * c + j] - mu[j]) * inv_std[j];
            const double g = on->grad[i * c + j];
            sum_g[j] += g;
            sum_g_xhat[j] += g * xhat;
          }
        for (std::int64_t j = 0; j < c; ++j) {
          if (gn->requires_grad) gn->grad[j] += sum_g_xhat[j];
          if (bn->requires_grad) bn->grad[j] += sum_g[j];
        }
        if (xn->requires_grad)
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < c; ++j) {
              const double xhat =
                  (xn->values[i * c + j] - mu[j]) * inv_std[j];
              const double g = on->grad[i * c + j];
              xn->grad[i * c + j] +=
                  gn->values[j] * inv_std[j] *
                  (g - sum_g[j] / m - xhat * sum_g_xhat[j] / m);
            }
      });
    }
  } else {
    std::vector<double> mu(c, 0.0), var(c, 1.0);
    if (stats.initialized) {
      mu = stats.running_mean;
      var = stats.running_var;
    }
    std::vector<double> inv_std(c);
    for (std::int64_t j = 0; j < c; ++j)
      inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        out.data()[i * c + j] =
            gamma.data()[j] * (x.data()[i * c + j] - mu[j]) * inv_std[j] +
            beta.data()[j];
    if (rg) {
      auto xn = x.node, gn = gamma.node, bn = beta.node, on = out.node;
      tape->record([xn, gn, bn, on, m, c, mu = std::move(mu),
                    inv_std = std::move(inv_std)] {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const double g = on->grad[i * c + j];
            const double xhat =
                (xn->values[i * c + j] - mu[j]) * inv_std[j];
            if (gn->requires_grad) gn->grad[j] += g * xhat;
            if (bn->requires_grad) bn->grad[j] += g;
            if (xn->requires_grad)
              xn->grad[i * c + j] += g * gn->values[j] * inv_std[j];
          }
      });
    }
  }
  return out;
}

// --------------------------------------------------------------------------

Tensor dropout(Tape* tape, const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate " + std::to_string(rate) +
                                " outside [0, 1)");
  if (mode == Mode::kInference || rate == 0.0) {
    const bool rg = tracked(tape, {&x});
    Tensor out(x.shape(), x.node->values, rg);
    if (rg) {
      auto xn = x.node, on = out.node;
      tape->record([xn, on] {
        xn->ensure_grad();
        for (std::size_t i = 0; i < xn->grad.size(); ++i)
          xn->grad[i] += on->grad[i];
      });
    }
    return out;
  }
  const std::int64_t n = x.size();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<std::uint8_t> mask(n);
  const bool rg = tracked(tape, {&x});
  Tensor out = make_output(x.shape(), rg);
  for (std::int64_t i = 0; i < n; ++i) {
    mask[i] = rng.uniform() >= rate;
    out.data()[i] = mask[i] ? x.data()[i] * keep_scale : 0.0;
  }
  if (rg) {
    auto xn = x.node, on = out.node;
    tape->record([xn, on, n, keep_scale, mask = std::move(mask)] {
      xn->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        if (mask[i]) xn->grad[i] += on->grad[i] * keep_scale;
    });
  }
  return out;
}

// --------------------------------------------------------------------------

Tensor conv2d_transpose(Tape* tape, const Tensor& x, const Tensor& kernel,
                        int stride) {
  if (x.ndim() != 4 || kernel.ndim() != 4)
    shape_error("conv2d_transpose", x.shape(), kernel.shape());
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2),
                     cin = x.dim(3);
  const std::int64_t kc = kernel.dim(0), kh = kernel.dim(1),
                     kw = kernel.dim(2), cout = kernel.dim(3);
  if (kc != cin || kh != kw)
    shape_error("conv2d_transpose", x.shape(), kernel.shape());
  const std::int64_t kk = kh;
  if (kk < stride || (kk - stride) % 2 != 0)
    throw std::invalid_argument(
        "conv2d_transpose: kernel " + std::to_string(kk) + " and stride " +
        std::to_string(stride) + " cannot produce a same-style output");
  const std::int64_t pad = (kk - stride) / 2;
  const std::int64_t oh = h * stride, ow = w * stride;
  const bool rg = tracked(tape, {&x, &kernel});
  Tensor out = make_output({b, oh, ow, cout}, rg);

  // cols = x[(b,i,j), cin] * kernel[cin, (a,e,cout)], then scatter-add.
  const std::int64_t patch = kk * kk * cout;
  const std::int64_t chunk = std::max<std::int64_t>(
      1, (4 << 20) / std::max<std::int64_t>(1, h * w * patch));
  std::vector<double> cols;
  for (std::int64_t b0 = 0; b0 < b; b0 += chunk) {
    const std::int64_t bc = std::min(chunk, b - b0);
    cols.assign(static_cast<std::size_t>(bc * h * w * patch), 0.0);
    gemm(false, false, static_cast<int>(bc * h * w), static_cast<int>(patch),
         static_cast<int>(cin), 1.0, x.data() + b0 * h * w * cin,
         static_cast<int>(cin), kernel.data(), static_cast<int>(patch), 0.0,
         cols.data(), static_cast<int>(patch));
    for (std::int64_t bi = 0; bi < bc; ++bi)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          const double* col =
              cols.data() + ((bi * h + i) * w + j) * patch;
          for (std::int64_t a = 0; a < kk; ++a) {
            const std::int64_t oi = i * stride + a - pad;
            if (oi < 0 || oi >= oh) continue;
            for (std::int64_t e = 0; e < kk; ++e) {
              const std::int64_t oj = j * stride + e - pad;
              if (oj < 0 || oj >= ow) continue;
              double* dst =
                  out.data() +
                  (((b0 + bi) * oh + oi) * ow + oj) * cout;
              const double* src = col + (a * kk + e) * cout;
              for (std::int64_t cc = 0; cc < cout; ++cc) dst[cc] += src[cc];
            }
          }
        }
  }

  if (rg) {
    auto xn = x.node, kn = kernel.node, on = out.node;
    tape->record([xn, kn, on, b, h, w, cin, cout, kk, pad, stride, oh, ow,
                  patch, chunk] {
      if (xn->requires_grad) xn->ensure_grad();
      if (kn->requires_grad) kn->ensure_grad();
      std::vector<double> dcols;
      for (std::int64_t b0 = 0; b0 < b; b0 += chunk) {
        const std::int64_t bc = std::min(chunk, b - b0);
        dcols.assign(static_cast<std::size_t>(bc * h * w * patch), 0.0);
        // gather d_cols from the output gradient
        for (std::int64_t bi = 0; bi < bc; ++bi)
          for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) {
              double* col = dcols.data() + ((bi * h + i) * w + j) * patch;
              for (std::int64_t a = 0; a < kk; ++a) {
                const std::int64_t oi = i * stride + a - pad;
                if (oi < 0 || oi >= oh) continue;
                for (std::int64_t e = 0; e < kk; ++e) {
                  const std::int64_t oj = j * stride + e - pad;
                  if (oj < 0 || oj >= ow) continue;
                  const double* src =
                      on->grad.data() +
                      (((b0 + bi) * oh + oi) * ow + oj) * cout;
                  double* dst = col + (a * kk + e) * cout;
                  for (std::int64_t cc = 0; cc < cout; ++cc)
                    dst[cc] = src[cc];
                }
              }
            }
        if (xn->requires_grad)
          gemm(false, true, static_cast<int>(bc * h * w),
               static_cast<int>(cin), static_cast<int>(patch), 1.0,
               dcols.data(), static_cast<int>(patch), kn->values.data(),
               static_cast<int>(patch), 1.0,
               xn->grad.data() + b0 * h * w * cin, static_cast<int>(cin));
        if (kn->requires_grad)
          gemm(true, false, static_cast<int>(cin), static_cast<int>(patch),
               static_cast<int>(bc * h * w), 1.0,
               xn->values.data() + b0 * h * w * cin, static_cast<int>(cin),
               dcols.data(), static_cast<int>(patch), 1.0, kn->grad.data(),
               static_cast<int>(patch));
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------

// --------------------------------------------------------------------------

namespace {

// dst[b, (i + off) % t, :] = src[b, i, :]
void roll_rows(const double* src, double* dst, std::int64_t nb, std::int64_t t,
               std::int64_t cols, std::int64_t off) {
  off = ((off % t) + t) % t;
  for (std::int64_t b = 0; b < nb; ++b)
    for (std::int64_t i = 0; i < t; ++i)
      std::memcpy(dst + (b * t + (i + off) % t) * cols,
                  src + (b * t + i) * cols, sizeof(double) * cols);
}

// like roll_rows but accumulating
void roll_rows_add(const double* src, double* dst, std::int64_t nb,
                   std::int64_t t, std::int64_t cols, std::int64_t off) {
  off = ((off % t) + t) % t;
  for (std::int64_t b = 0; b < nb; ++b)
    for (std::int64_t i = 0; i < t; ++i) {
      double* d = dst + (b * t + (i + off) % t) * cols;
      const double* s = src + (b * t + i) * cols;
      for (std::int64_t j = 0; j < cols; ++j) d[j] += s[j];
    }
}

void add_bias_rows(double* m, const double* bias, std::int64_t rows,
                   std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) m[r * cols + c] += bias[c];
}

void accumulate_colsum(const double* m, double* out, std::int64_t rows,
                       std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
}

}  // namespace

Tensor dense_layer(Tape* tape, const Tensor& x, const Tensor& w,
                   const Tensor& b, Activation act, double alpha,
                   double dropout_rate, Mode mode, Rng* rng) {
  if (x.ndim() < 2 || w.ndim() != 2 || x.shape().back() != w.shape()[0])
    shape_error("dense_layer", x.shape(), w.shape());
  if (b.ndim() != 1 || b.dim(0) != w.shape()[1])
    shape_error("dense_layer bias", b.shape(), w.shape());
  if (alpha < 0.0)
    throw std::invalid_argument("dense_layer: negative leaky slope");
  const bool drop = dropout_rate > 0.0 && mode == Mode::kTraining;
  if (drop && act == Activation::kTanh)
    throw std::invalid_argument("dense_layer: dropout after tanh unsupported");
  if (drop && (dropout_rate >= 1.0 || rng == nullptr))
    throw std::invalid_argument("dense_layer: dropout needs rate < 1 and rng");
  const std::int64_t kk = w.shape()[0], n = w.shape()[1];
  const std::int64_t m = x.size() / kk;
  Shape oshape = x.shape();
  oshape.back() = n;
  const bool rg = tracked(tape, {&x, &w, &b});
  Tensor out = make_output(oshape, rg);
  gemm(false, false, static_cast<int>(m), static_cast<int>(n),
       static_cast<int>(kk), 1.0, x.data(), static_cast<int>(kk), w.data(),
       static_cast<int>(n), 0.0, out.data(), static_cast<int>(n));
  add_bias_rows(out.data(), b.data(), m, n);
  double* o = out.data();
  if (act == Activation::kLeakyRelu) {
    for (std::int64_t i = 0; i < m * n; ++i)
      if (o[i] < 0.0) o[i] *= alpha;
  } else if (act == Activation::kTanh) {
    for (std::int64_t i = 0; i < m * n; ++i) o[i] = std::tanh(o[i]);
  }
  const double keep = 1.0 - dropout_rate;
  auto mask = std::make_shared<std::vector<std::uint8_t>>();
  if (drop) {
    mask->resize(static_cast<std::size_t>(m * n));
    const double inv_keep = 1.0 / keep;
    for (std::int64_t i = 0; i < m * n; ++i) {
      const bool kept = rng->uniform() >= dropout_rate;
      (*mask)[i] = kept;
      o[i] = kept ? o[i] * inv_keep : 0.0;
    }
  }
  if (rg) {
    auto xn = x.node, wn = w.node, bn = b.node, on = out.node;
    tape->record([xn, wn, bn, on, mask, m, n, kk, act, alpha, drop, keep] {
      const double* g = on->grad.data();
      const double* y = on->values.data();
      std::vector<double> dpre(static_cast<std::size_t>(m * n));
      const double inv_keep = 1.0 / keep;
      for (std::int64_t i = 0; i < m * n; ++i) {
        double f;
        if (drop && !(*mask)[i]) {
          f = 0.0;
        } else {
          switch (act) {
            case Activation::kNone: f = 1.0; break;
            case Activation::kLeakyRelu: f = y[i] > 0.0 ? 1.0 : alpha; break;
            default: f = 1.0 - y[i] * y[i]; break;  // tanh
          }
          if (drop) f *= inv_keep;
        }
        dpre[i] = g[i] * f;
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        gemm(true, false, static_cast<int>(kk), static_cast<int>(n),
             static_cast<int>(m), 1.0, xn->values.data(),
             static_cast<int>(kk), dpre.data(), static_cast<int>(n), 1.0,
             wn->grad.data(), static_cast<int>(n));
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        accumulate_colsum(dpre.data(), bn->grad.data(), m, n);
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        gemm(false, true, static_cast<int>(m), static_cast<int>(kk),
             static_cast<int>(n), 1.0, dpre.data(), static_cast<int>(n),
             wn->values.data(), static_cast<int>(n), 1.0, xn->grad.data(),
             static_cast<int>(kk));
      }
    });
  }
  return out;
}

Tensor multi_head_window_attention(Tape* tape, const Tensor& x,
                                   const Tensor& wq, const Tensor& bq,
                                   const Tensor& wk, const Tensor& bk,
                                   const Tensor& wv, const Tensor& bv,
                                   const Tensor& wo, const Tensor& bo,
                                   int window_size, int shift, int num_heads,
                                   int head_size) {
  if (x.ndim() != 3)
    throw std::invalid_argument("window attention: expected [B,T,E], got " +
                                shape_to_string(x.shape()));
  const std::int64_t nb = x.dim(0), t = x.dim(1), e = x.dim(2);
  const std::int64_t inner =
      static_cast<std::int64_t>(num_heads) * head_size;
  if (window_size < 1 || t % window_size != 0)
    throw std::invalid_argument("window attention: sequence of " +
                                std::to_string(t) +
                                " tokens not divisible into windows of " +
                                std::to_string(window_size));
  if (shift < 0 || shift >= window_size)
    throw std::invalid_argument("window attention: shift " +
                                std::to_string(shift) +
                                " outside [0, window_size)");
  if (wq.ndim() != 2 || wq.dim(0) != e || wq.dim(1) != inner ||
      wk.shape() != wq.shape() || wv.shape() != wq.shape())
    shape_error("window attention q/k/v weights", x.shape(), wq.shape());
  if (wo.ndim() != 2 || wo.dim(0) != inner || wo.dim(1) != e)
    shape_error("window attention output weights", wo.shape(), x.shape());
  if (bq.size() != inner || bk.size() != inner || bv.size() != inner ||
      bo.size() != e)
    shape_error("window attention biases", bq.shape(), bo.shape());

  const std::int64_t rows = nb * t;
  const std::int64_t ws = window_size, nw = t / ws;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_size));
  const bool rg =
      tracked(tape, {&x, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo});
  Tensor out = make_output({nb, t, e}, rg);

  // everything below lives in plain scratch buffers; backward recomputes
  // the projections and attention probabilities instead of keeping them
  std::vector<double> h;
  const double* hp = x.data();
  if (shift != 0) {
    h.resize(static_cast<std::size_t>(rows * e));
    roll_rows(x.data(), h.data(), nb, t, e, -shift);
    hp = h.data();
  }
  auto project = [&](const Tensor& w, const Tensor& bias,
                     std::vector<double>& dst) {
    dst.resize(static_cast<std::size_t>(rows * inner));
    gemm(false, false, static_cast<int>(rows), static_cast<int>(inner),
         static_cast<int>(e), 1.0, hp, static_cast<int>(e), w.data(),
         static_cast<int>(inner), 0.0, dst.data(), static_cast<int>(inner));
    add_bias_rows(dst.data(), bias.data(), rows, inner);
  };
  std::vector<double> q, k, v;
  project(wq, bq, q);
  project(wk, bk, k);
  project(wv, bv, v);

  std::vector<double> att(static_cast<std::size_t>(rows * inner));
  std::vector<double> p(static_cast<std::size_t>(ws * ws));
  for (std::int64_t b = 0; b < nb; ++b)
    for (std::int64_t w = 0; w < nw; ++w) {
      const std::int64_t row0 = b * t + w * ws;
      for (int hd = 0; hd < num_heads; ++hd) {
        const std::int64_t col0 = static_cast<std::int64_t>(hd) * head_size;
        const double* qw = q.data() + row0 * inner + col0;
        const double* kw = k.data() + row0 * inner + col0;
        const double* vw = v.data() + row0 * inner + col0;
        gemm(false, true, static_cast<int>(ws), static_cast<int>(ws),
             head_size, inv_sqrt_d, qw, static_cast<int>(inner), kw,
             static_cast<int>(inner), 0.0, p.data(), static_cast<int>(ws));
        softmax_rows_inplace(p.data(), ws, ws);
        gemm(false, false, static_cast<int>(ws), head_size,
             static_cast<int>(ws), 1.0, p.data(), static_cast<int>(ws), vw,
             static_cast<int>(inner), 0.0,
             att.data() + row0 * inner + col0, static_cast<int>(inner));
      }
    }

  std::vector<double> out_pre;
  double* op = out.data();
  if (shift != 0) {
    out_pre.resize(static_cast<std::size_t>(rows * e));
    op = out_pre.data();
  }
  gemm(false, false, static_cast<int>(rows), static_cast<int>(e),
       static_cast<int>(inner), 1.0, att.data(), static_cast<int>(inner),
       wo.data(), static_cast<int>(e), 0.0, op, static_cast<int>(e));
  add_bias_rows(op, bo.data(), rows, e);
  if (shift != 0) roll_rows(out_pre.data(), out.data(), nb, t, e, shift);

  if (rg) {
    auto xn = x.node, on = out.node;
    auto wqn = wq.node, bqn = bq.node, wkn = wk.node, bkn = bk.node,
         wvn = wv.node, bvn = bv.node, won = wo.node, bon = bo.node;
    const int hs = head_size, nh = num_heads;
    tape->record([xn, on, wqn, bqn, wkn, bkn, wvn, bvn, won, bon, nb, t, e,
                  inner, ws, nw, hs, nh, shift, inv_sqrt_d] {
      const std::int64_t rows = nb * t;
      // rolled input
      std::vector<double> h(static_cast<std::size_t>(rows * e));
      if (shift != 0)
        roll_rows(xn->values.data(), h.data(), nb, t, e, -shift);
      else
        std::memcpy(h.data(), xn->values.data(),
                    sizeof(double) * static_cast<std::size_t>(rows * e));
      // recompute projections
      std::vector<double> q(static_cast<std::size_t>(rows * inner)),
          k(static_cast<std::size_t>(rows * inner)),
          v(static_cast<std::size_t>(rows * inner));
      auto project = [&](const TensorData* w, const TensorData* bias,
                         std::vector<double>& dst) {
        gemm(false, false, static_cast<int>(rows), static_cast<int>(inner),
             static_cast<int>(e), 1.0, h.data(), static_cast<int>(e),
             w->values.data(), static_cast<int>(inner), 0.0, dst.data(),
             static_cast<int>(inner));
        add_bias_rows(dst.data(), bias->values.data(), rows, inner);
      };
      project(wqn.get(), bqn.get(), q);
      project(wkn.get(), bkn.get(), k);
      project(wvn.get(), bvn.get(), v);

      // gradient flowing into the pre-roll output
      std::vector<double> dout(static_cast<std::size_t>(rows * e));
      if (shift != 0)
        roll_rows(on->grad.data(), dout.data(), nb, t, e, -shift);
      else
        std::memcpy(dout.data(), on->grad.data(),
                    sizeof(double) * static_cast<std::size_t>(rows * e));

      if (bon->requires_grad) {
        bon->ensure_grad();
        accumulate_colsum(dout.data(), bon->grad.data(), rows, e);
      }
      // datt = dout woT
      std::vector<double> datt(static_cast<std::size_t>(rows * inner));
      gemm(false, true, static_cast<int>(rows), static_cast<int>(inner),
           static_cast<int>(e), 1.0, dout.data(), static_cast<int>(e),
           won->values.data(), static_cast<int>(e), 0.0, datt.data(),
           static_cast<int>(inner));
      if (won->requires_grad) won->ensure_grad();

      std::vector<double> dq(static_cast<std::size_t>(rows * inner), 0.0),
          dk(static_cast<std::size_t>(rows * inner), 0.0),
          dv(static_cast<std::size_t>(rows * inner), 0.0);
      std::vector<double> p(static_cast<std::size_t>(ws * ws)),
          dp(static_cast<std::size_t>(ws * ws)),
          attw(static_cast<std::size_t>(ws) * hs);
      for (std::int64_t b = 0; b < nb; ++b)
        for (std::int64_t w = 0; w < nw; ++w) {
          const std::int64_t row0 = b * t + w * ws;
          for (int hd = 0; hd < nh; ++hd) {
            const std::int64_t col0 = static_cast<std::int64_t>(hd) * hs;
            const double* qw = q.data() + row0 * inner + col0;
            const double* kw = k.data() + row0 * inner + col0;
            const double* vw = v.data() + row0 * inner + col0;
            const double* gw = datt.data() + row0 * inner + col0;
            // recompute probabilities for this window/head
            gemm(false, true, static_cast<int>(ws), static_cast<int>(ws), hs,
                 inv_sqrt_d, qw, static_cast<int>(inner), kw,
                 static_cast<int>(inner), 0.0, p.data(),
                 static_cast<int>(ws));
            softmax_rows_inplace(p.data(), ws, ws);
            if (won->requires_grad) {
              // recompute attw = p v, accumulate dwo rows for this head
              gemm(false, false, static_cast<int>(ws), hs,
                   static_cast<int>(ws), 1.0, p.data(), static_cast<int>(ws),
                   vw, static_cast<int>(inner), 0.0, attw.data(), hs);
              gemm(true, false, hs, static_cast<int>(e),
                   static_cast<int>(ws), 1.0, attw.data(), hs,
                   dout.data() + row0 * e, static_cast<int>(e), 1.0,
                   won->grad.data() + col0 * e, static_cast<int>(e));
            }
            // dv += pT g
            gemm(true, false, static_cast<int>(ws), hs, static_cast<int>(ws),
                 1.0, p.data(), static_cast<int>(ws), gw,
                 static_cast<int>(inner), 1.0,
                 dv.data() + row0 * inner + col0, static_cast<int>(inner));
            // dp = g vT; ds = p o (dp - rowsum(dp o p))
            gemm(false, true, static_cast<int>(ws), static_cast<int>(ws), hs,
                 1.0, gw, static_cast<int>(inner), vw,
                 static_cast<int>(inner), 0.0, dp.data(),
                 static_cast<int>(ws));
            for (std::int64_t r = 0; r < ws; ++r) {
              double dot = 0.0;
              for (std::int64_t c = 0; c < ws; ++c)
                dot += dp[r * ws + c] * p[r * ws + c];
              for (std::int64_t c = 0; c < ws; ++c)
                dp[r * ws + c] = p[r * ws + c] * (dp[r * ws + c] - dot);
            }
            gemm(false, false, static_cast<int>(ws), hs,
                 static_cast<int>(ws), inv_sqrt_d, dp.data(),
                 static_cast<int>(ws), kw, static_cast<int>(inner), 1.0,
                 dq.data() + row0 * inner + col0, static_cast<int>(inner));
            gemm(true, false, static_cast<int>(ws), hs, static_cast<int>(ws),
                 inv_sqrt_d, dp.data(), static_cast<int>(ws), qw,
                 static_cast<int>(inner), 1.0,
                 dk.data() + row0 * inner + col0, static_cast<int>(inner));
          }
        }

      // back through the projections into dh, then undo the roll
      std::vector<double> dh;
      const bool need_dx = xn->requires_grad;
      if (need_dx) dh.assign(static_cast<std::size_t>(rows * e), 0.0);
      auto unproject = [&](const std::vector<double>& dproj, TensorData* w,
                           TensorData* bias) {
        if (w->requires_grad) {
          w->ensure_grad();
          gemm(true, false, static_cast<int>(e), static_cast<int>(inner),
               static_cast<int>(rows), 1.0, h.data(), static_cast<int>(e),
               dproj.data(), static_cast<int>(inner), 1.0, w->grad.data(),
               static_cast<int>(inner));
        }
        if (bias->requires_grad) {
          bias->ensure_grad();
          accumulate_colsum(dproj.data(), bias->grad.data(), rows, inner);
        }
        if (need_dx)
          gemm(false, true, static_cast<int>(rows), static_cast<int>(e),
               static_cast<int>(inner), 1.0, dproj.data(),
               static_cast<int>(inner), w->values.data(),
               static_cast<int>(inner), 1.0, dh.data(),
               static_cast<int>(e));
      };
      unproject(dq, wqn.get(), bqn.get());
      unproject(dk, wkn.get(), bkn.get());
      unproject(dv, wvn.get(), bvn.get());
      if (need_dx) {
        xn->ensure_grad();
        roll_rows_add(dh.data(), xn->grad.data(), nb, t, e, shift);
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------

Tensor scaled_dot_attention(Tape* tape, const Tensor& q, const Tensor& k,
                            const Tensor& v) {
  if (q.ndim() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    shape_error("scaled_dot_attention", q.shape(), k.shape());
  const std::int64_t nb = q.dim(0), t = q.dim(1), d = q.dim(2);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const bool rg = tracked(tape, {&q, &k, &v});
  Tensor out = make_output({nb, t, d}, rg);
  std::vector<double> p(static_cast<std::size_t>(t * t));
  for (std::int64_t i = 0; i < nb; ++i) {
    gemm(false, true, static_cast<int>(t), static_cast<int>(t),
         static_cast<int>(d), inv_sqrt_d, q.data() + i * t * d,
         static_cast<int>(d), k.data() + i * t * d, static_cast<int>(d), 0.0,
         p.data(), static_cast<int>(t));
    softmax_rows_inplace(p.data(), t, t);
    gemm(false, false, static_cast<int>(t), static_cast<int>(d),
         static_cast<int>(t), 1.0, p.data(), static_cast<int>(t),
         v.data() + i * t * d, static_cast<int>(d), 0.0,
         out.data() + i * t * d, static_cast<int>(d));
  }
  if (rg) {
    auto qn = q.node, kn = k.node, vn = v.node, on = out.node;
    tape->record([qn, kn, vn, on, nb, t, d, inv_sqrt_d] {
      if (qn->requires_grad) qn->ensure_grad();
      if (kn->requires_grad) kn->ensure_grad();
      if (vn->requires_grad) vn->ensure_grad();
      std::vector<double> p(static_cast<std::size_t>(t * t));
      std::vector<double> dp(static_cast<std::size_t>(t * t));
      for (std::int64_t i = 0; i < nb; ++i) {
        const double* qi = qn->values.data() + i * t * d;
        const double* ki = kn->values.data() + i * t * d;
        const double* vi = vn->values.data() + i * t * d;
        const double* g = on->grad.data() + i * t * d;
        // recompute attention probabilities
        gemm(false, true, static_cast<int>(t), static_cast<int>(t),
             static_cast<int>(d), inv_sqrt_d, qi, static_cast<int>(d), ki,
             static_cast<int>(d), 0.0, p.data(), static_cast<int>(t));
        softmax_rows_inplace(p.data(), t, t);
        if (vn->requires_grad)
          gemm(true, false, static_cast<int>(t), static_cast<int>(d),
               static_cast<int>(t), 1.0, p.data(), static_cast<int>(t), g,
               static_cast<int>(d), 1.0, vn->grad.data() + i * t * d,
               static_cast<int>(d));
        // dP = g viT; dS = P o (dP - rowsum(dP o P))
        gemm(false, true, static_cast<int>(t), static_cast<int>(t),
             static_cast<int>(d), 1.0, g, static_cast<int>(d), vi,
             static_cast<int>(d), 0.0, dp.data(), static_cast<int>(t));
        for (std::int64_t r = 0; r < t; ++r) {
          double dot = 0.0;
          for (std::int64_t c2 = 0; c2 < t; ++c2)
            dot += dp[r * t + c2] * p[r * t + c2];
          for (std::int64_t c2 = 0; c2 < t; ++c2)
            dp[r * t + c2] = p[r * t + c2] * (dp[r * t + c2] - dot);
        }
        if (qn->requires_grad)
          gemm(false, false, static_cast<int>(t), static_cast<int>(d),
               static_cast<int>(t), inv_sqrt_d, dp.data(),
               static_cast<int>(t), ki, static_cast<int>(d), 1.0,
               qn->grad.data() + i * t * d, static_cast<int>(d));
        if (kn->requires_grad)
          gemm(true, false, static_cast<int>(t), static_cast<int>(d),
               static_cast<int>(t), inv_sqrt_d, dp.data(),
               static_cast<int>(t), qi, static_cast<int>(d), 1.0,
               kn->grad.data() + i * t * d, static_cast<int>(d));
      }
    });
  }
  return out;
}

Tensor attention_probabilities(const Tensor& q, const Tensor& k) {
  if (q.ndim() != 3 || q.shape() != k.shape())
    shape_error("attention_probabilities", q.shape(), k.shape());
  const std::int64_t nb = q.dim(0), t = q.dim(1), d = q.dim(2);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out({nb, t, t});
  for (std::int64_t i = 0; i < nb; ++i) {
    gemm(false, true, static_cast<int>(t), static_cast<int>(t),
         static_cast<int>(d), inv_sqrt_d, q.data() + i * t * d,
         static_cast<int>(d), k.data() + i * t * d, static_cast<int>(d), 0.0,
         out.data() + i * t * t, static_cast<int>(t));
    softmax_rows_inplace(out.data() + i * t * t, t, t);
  }
  return out;
}

}  // namespace ssigan::ad
