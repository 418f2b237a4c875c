#include "lesion/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "lesion/error.hpp"
#include "lesion/rng.hpp"

namespace lesion {

namespace {

using detail::Node;

// For each element of `out`, the flat index of the element of `from` it reads
// under trailing-aligned broadcasting.
std::vector<std::size_t> broadcast_index(const Shape& from, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - from.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t d = from.size(); d-- > 0;) {
    stride[d + offset] = from[d] == 1 ? 0 : s;
    s *= from[d];
  }
  std::vector<std::size_t> index(numel(out));
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    index[i] = flat;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      flat += stride[d];
      if (counter[d] < out[d]) break;
      flat -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return index;
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) fail(ErrorKind::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  AxisSplit s;
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  s.extent = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d != axis) out.push_back(shape[d]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    fail(ErrorKind::ShapeMismatch, std::string(what) + " expects rank " + std::to_string(rank) + ", got " + to_string(t.shape()));
  }
}

constexpr double kSigmoidLo = std::numeric_limits<double>::min();
constexpr double kSigmoidHi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;

enum class Binary { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  auto ia = broadcast_index(a.shape(), out_shape);
  auto ib = broadcast_index(b.shape(), out_shape);
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(n);
  switch (kind) {
    case Binary::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = da[ia[i]] + db[ib[i]];
      break;
    case Binary::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = da[ia[i]] - db[ib[i]];
      break;
    case Binary::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = da[ia[i]] * db[ib[i]];
      break;
  }
  const char* name = kind == Binary::Add ? "add" : kind == Binary::Sub ? "sub" : "mul";
  return Tensor::from_op(out_shape, std::move(out), name, {a, b},
                         [kind, ia = std::move(ia), ib = std::move(ib)](Node& self) {
                           const auto& g = self.grad;
                           const auto& va = self.inputs[0]->data;
                           const auto& vb = self.inputs[1]->data;
                           if (double* ga = self.input_grad(0)) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               ga[ia[i]] += kind == Binary::Mul ? g[i] * vb[ib[i]] : g[i];
                             }
                           }
                           if (double* gb = self.input_grad(1)) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               gb[ib[i]] += kind == Binary::Mul ? g[i] * va[ia[i]] : kind == Binary::Sub ? -g[i] : g[i];
                             }
                           }
                         });
}

// Row-major gather/scatter shared by reshape-like ops.
Tensor gather_impl(const Tensor& x, std::vector<std::size_t> index, Shape shape, const char* name) {
  if (numel(shape) != index.size()) fail(ErrorKind::ShapeMismatch, "gather index count does not match shape " + to_string(shape));
  auto src = x.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= src.size()) fail(ErrorKind::ShapeMismatch, "gather index out of range");
    out[i] = src[index[i]];
  }
  return Tensor::from_op(std::move(shape), std::move(out), name, {x}, [index = std::move(index)](Node& self) {
    if (double* gx = self.input_grad(0)) {
      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += self.grad[i];
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = fwd(src[i]);
  return Tensor::from_op(x.shape(), std::move(out), name, {x}, [deriv](Node& self) {
    if (double* gx = self.input_grad(0)) {
      const auto& in = self.inputs[0]->data;
      for (std::size_t i = 0; i < in.size(); ++i) gx[i] += self.grad[i] * deriv(in[i], self.data[i]);
    }
  });
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(ErrorKind::ShapeMismatch, "cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Mul); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) fail(ErrorKind::ShapeMismatch, "matmul needs rank >= 2 operands");
  const std::size_t m = a.shape()[a.rank() - 2], k = a.shape().back();
  const std::size_t k2 = b.shape()[b.rank() - 2], n = b.shape().back();
  if (k != k2) fail(ErrorKind::ShapeMismatch, "matmul inner dims differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));

  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch_out;
  if (!batch_a.empty() || !batch_b.empty()) {
    batch_out = broadcast_shape(batch_a.empty() ? Shape{1} : batch_a, batch_b.empty() ? Shape{1} : batch_b);
  }
  const Shape batch_iter = batch_out.empty() ? Shape{1} : batch_out;
  auto ia = broadcast_index(batch_a.empty() ? Shape{1} : batch_a, batch_iter);
  auto ib = broadcast_index(batch_b.empty() ? Shape{1} : batch_b, batch_iter);

  Shape out_shape = batch_out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto da = a.data();
  auto db = b.data();
  std::vector<double> out(numel(out_shape), 0.0);
  for (std::size_t bi = 0; bi < ia.size(); ++bi) {
    const double* pa = da.data() + ia[bi] * m * k;
    const double* pb = db.data() + ib[bi] * k * n;
    double* pc = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        for (std::size_t j = 0; j < n; ++j) pc[i * n + j] += av * pb[p * n + j];
      }
    }
  }
  return Tensor::from_op(std::move(out_shape), std::move(out), "matmul", {a, b},
                         [m, k, n, ia = std::move(ia), ib = std::move(ib)](Node& self) {
                           const auto& va = self.inputs[0]->data;
                           const auto& vb = self.inputs[1]->data;
                           double* ga = self.input_grad(0);
                           double* gb = self.input_grad(1);
                           for (std::size_t bi = 0; bi < ia.size(); ++bi) {
                             const double* gc = self.grad.data() + bi * m * n;
                             const double* pa = va.data() + ia[bi] * m * k;
                             const double* pb = vb.data() + ib[bi] * k * n;
                             if (ga) {
                               double* qa = ga + ia[bi] * m * k;
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t p = 0; p < k; ++p) {
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) acc += gc[i * n + j] * pb[p * n + j];
                                   qa[i * k + p] += acc;
                                 }
                             }
                             if (gb) {
                               double* qb = gb + ib[bi] * k * n;
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t p = 0; p < k; ++p) {
                                   const double av = pa[i * k + p];
                                   for (std::size_t j = 0; j < n; ++j) qb[p * n + j] += av * gc[i * n + j];
                                 }
                             }
                           }
                         });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear weight");
  if (x.shape().back() != weight.dim(0)) {
    fail(ErrorKind::ShapeMismatch, "linear input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  }
  Tensor y;
  if (x.rank() == 1) {
    y = reshape(matmul(reshape(x, {1, x.dim(0)}), weight), {weight.dim(1)});
  } else {
    y = matmul(x, weight);
  }
  if (!bias.defined()) return y;
  if (bias.shape() != Shape{weight.dim(1)}) fail(ErrorKind::ShapeMismatch, "linear bias shape " + to_string(bias.shape()));
  return add(y, bias);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    fail(ErrorKind::ShapeMismatch, "cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::from_op(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    if (double* gx = self.input_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  if (axes.size() != in.size()) fail(ErrorKind::ShapeMismatch, "permute axes do not match rank");
  std::vector<bool> used(in.size(), false);
  for (std::size_t a : axes) {
    if (a >= in.size() || used[a]) fail(ErrorKind::ShapeMismatch, "permute axes are not a permutation");
    used[a] = true;
  }
  std::vector<std::size_t> in_stride(in.size(), 1);
  for (std::size_t d = in.size() - 1; d-- > 0;) in_stride[d] = in_stride[d + 1] * in[d + 1];
  Shape out(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) out[d] = in[axes[d]];

  std::vector<std::size_t> index(x.size());
  std::vector<std::size_t> counter(out.size(), 0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::size_t flat = 0;
    for (std::size_t d = 0; d < out.size(); ++d) flat += counter[d] * in_stride[axes[d]];
    index[i] = flat;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++counter[d] < out[d]) break;
      counter[d] = 0;
    }
  }
  return gather_impl(x, std::move(index), std::move(out), "permute");
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) fail(ErrorKind::ShapeMismatch, "transpose needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorKind::ShapeMismatch, "concat of nothing");
  Shape out = parts[0].shape();
  if (axis >= out.size()) fail(ErrorKind::ShapeMismatch, "concat axis out of range");
  out[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != out.size()) fail(ErrorKind::ShapeMismatch, "concat rank mismatch");
    for (std::size_t d = 0; d < out.size(); ++d) {
      if (d != axis && p.dim(d) != parts[0].dim(d)) fail(ErrorKind::ShapeMismatch, "concat shape mismatch");
    }
    out[axis] += p.dim(axis);
  }
  const AxisSplit s = split_axis(out, axis);
  std::vector<double> data(numel(out));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t ext = p.dim(axis);
    auto src = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(src.begin() + o * ext * s.inner, ext * s.inner, data.begin() + (o * s.extent + offset) * s.inner);
    }
    offset += ext;
  }
  return Tensor::from_op(std::move(out), std::move(data), "concat", parts, [s, offsets, axis](Node& self) {
    for (std::size_t pi = 0; pi < self.inputs.size(); ++pi) {
      double* gp = self.input_grad(pi);
      if (!gp) continue;
      const std::size_t ext = self.inputs[pi]->shape[axis];
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* g = self.grad.data() + (o * s.extent + offsets[pi]) * s.inner;
        for (std::size_t i = 0; i < ext * s.inner; ++i) gp[o * ext * s.inner + i] += g[i];
      }
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts) {
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const Tensor& p : parts) {
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat(lifted, 0);
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape shape) {
  return gather_impl(x, std::move(index), std::move(shape), "gather");
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::from_op({1}, {acc}, "sum", {x}, [](Node& self) {
    if (double* gx = self.input_grad(0)) {
      for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) gx[i] += self.grad[0];
    }
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  auto src = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += src[(o * s.extent + e) * s.inner + i];
  return Tensor::from_op(drop_axis(x.shape(), axis), std::move(out), "sum_axis", {x}, [s](Node& self) {
    if (double* gx = self.input_grad(0)) {
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
    }
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding, std::size_t stride) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    fail(ErrorKind::ShapeMismatch, "conv2d kernel " + to_string(kernel.shape()) + " vs input " + to_string(input.shape()));
  }
  if (kh % 2 == 0 || kw % 2 == 0) fail(ErrorKind::InvalidConfig, "conv2d kernel sides must be odd");
  if (stride == 0) fail(ErrorKind::InvalidConfig, "conv2d stride must be >= 1");
  if (h + 2 * padding < kh || w + 2 * padding < kw || (h + 2 * padding - kh) % stride != 0 ||
      (w + 2 * padding - kw) % stride != 0) {
    fail(ErrorKind::InvalidConfig, "conv2d output size is not integral");
  }
  if (bias.defined() && bias.shape() != Shape{cout}) fail(ErrorKind::ShapeMismatch, "conv2d bias must be [Cout]");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;

  auto in = input.data();
  auto k = kernel.data();
  std::vector<double> out(cout * ho * wo);
  for (std::size_t co = 0; co < cout; ++co) {
    const double b = bias.defined() ? bias[co] : 0.0;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = b;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += in[(ci * h + iy) * w + ix] * k[((co * cin + ci) * kh + ky) * kw + kx];
            }
          }
        }
        out[(co * ho + oy) * wo + ox] = acc;
      }
    }
  }
  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::from_op({cout, ho, wo}, std::move(out), "conv2d", std::move(inputs),
                         [=](Node& self) {
                           const auto& vin = self.inputs[0]->data;
                           const auto& vk = self.inputs[1]->data;
                           double* gi = self.input_grad(0);
                           double* gk = self.input_grad(1);
                           double* gb = self.inputs.size() > 2 ? self.input_grad(2) : nullptr;
                           for (std::size_t co = 0; co < cout; ++co) {
                             for (std::size_t oy = 0; oy < ho; ++oy) {
                               for (std::size_t ox = 0; ox < wo; ++ox) {
                                 const double g = self.grad[(co * ho + oy) * wo + ox];
                                 if (gb) gb[co] += g;
                                 for (std::size_t ci = 0; ci < cin; ++ci) {
                                   for (std::size_t ky = 0; ky < kh; ++ky) {
                                     const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                                     if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                     for (std::size_t kx = 0; kx < kw; ++kx) {
                                       const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                                       if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                       const std::size_t ii = (ci * h + iy) * w + ix;
                                       const std::size_t ki = ((co * cin + ci) * kh + ky) * kw + kx;
                                       if (gi) gi[ii] += g * vk[ki];
                                       if (gk) gk[ki] += g * vin[ii];
                                     }
                                   }
                                 }
                               }
                             }
                           }
                         });
}

Tensor conv1d(const Tensor& input, const Tensor& kernel) {
  if (kernel.rank() != 1) fail(ErrorKind::InvalidConfig, "conv1d kernel must be rank 1");
  const std::size_t k = kernel.dim(0);
  if (k % 2 == 0) fail(ErrorKind::InvalidConfig, "conv1d kernel size must be odd, got " + std::to_string(k));
  if (!(input.rank() == 1 || (input.rank() == 2 && input.dim(0) == 1))) {
    fail(ErrorKind::ShapeMismatch, "conv1d input must be [C] or [1,C], got " + to_string(input.shape()));
  }
  const std::size_t c = input.size();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  auto in = input.data();
  auto kv = kernel.data();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + j) - half;
      if (src >= 0 && src < static_cast<std::ptrdiff_t>(c)) acc += kv[j] * in[src];
    }
    out[i] = acc;
  }
  return Tensor::from_op(input.shape(), std::move(out), "conv1d", {input, kernel}, [c, k, half](Node& self) {
    const auto& vin = self.inputs[0]->data;
    const auto& vk = self.inputs[1]->data;
    double* gi = self.input_grad(0);
    double* gk = self.input_grad(1);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + j) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(c)) continue;
        if (gi) gi[src] += self.grad[i] * vk[j];
        if (gk) gk[j] += self.grad[i] * vin[src];
      }
    }
  });
}

Tensor global_pool(const Tensor& input, PoolMode mode) {
  require_rank(input, 3, "global_pool");
  const std::size_t c = input.dim(0), hw = input.dim(1) * input.dim(2);
  auto in = input.data();
  std::vector<double> out(c);
  std::vector<std::size_t> argmax(c, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = in.data() + ch * hw;
    if (mode == PoolMode::Avg) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      out[ch] = acc / static_cast<double>(hw);
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < hw; ++i) {
        if (p[i] > p[best]) best = i;
      }
      argmax[ch] = ch * hw + best;
      out[ch] = p[best];
    }
  }
  return Tensor::from_op({c, 1, 1}, std::move(out), mode == PoolMode::Avg ? "global_avg_pool" : "global_max_pool", {input},
                         [mode, c, hw, argmax = std::move(argmax)](Node& self) {
                           double* gx = self.input_grad(0);
                           if (!gx) return;
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             if (mode == PoolMode::Avg) {
                               const double g = self.grad[ch] / static_cast<double>(hw);
                               for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += g;
                             } else {
                               gx[argmax[ch]] += self.grad[ch];
                             }
                           }
                         });
}

Tensor channel_pool(const Tensor& input, PoolMode mode) {
  require_rank(input, 3, "channel_pool");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2), hw = h * w;
  auto in = input.data();
  std::vector<double> out(hw);
  std::vector<std::size_t> argmax(hw, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    if (mode == PoolMode::Avg) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) acc += in[ch * hw + i];
      out[i] = acc / static_cast<double>(c);
    } else {
      std::size_t best = 0;
      for (std::size_t ch = 1; ch < c; ++ch) {
        if (in[ch * hw + i] > in[best * hw + i]) best = ch;
      }
      argmax[i] = best * hw + i;
      out[i] = in[argmax[i]];
    }
  }
  return Tensor::from_op({1, h, w}, std::move(out), mode == PoolMode::Avg ? "channel_avg_pool" : "channel_max_pool", {input},
                         [mode, c, hw, argmax = std::move(argmax)](Node& self) {
                           double* gx = self.input_grad(0);
                           if (!gx) return;
                           for (std::size_t i = 0; i < hw; ++i) {
                             if (mode == PoolMode::Avg) {
                               const double g = self.grad[i] / static_cast<double>(c);
                               for (std::size_t ch = 0; ch < c; ++ch) gx[ch * hw + i] += g;
                             } else {
                               gx[argmax[i]] += self.grad[i];
                             }
                           }
                         });
}

Tensor avg_pool2(const Tensor& input) {
  require_rank(input, 3, "avg_pool2");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h < 2 || w < 2) fail(ErrorKind::InvalidConfig, "avg_pool2 needs spatial size >= 2, got " + to_string(input.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  auto in = input.data();
  std::vector<double> out(c * ho * wo);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t x = 0; x < wo; ++x) {
        const double* p = in.data() + (ch * h + 2 * y) * w + 2 * x;
        out[(ch * ho + y) * wo + x] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  return Tensor::from_op({c, ho, wo}, std::move(out), "avg_pool2", {input}, [c, h, w, ho, wo](Node& self) {
    double* gx = self.input_grad(0);
    if (!gx) return;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          const double g = 0.25 * self.grad[(ch * ho + y) * wo + x];
          double* p = gx + (ch * h + 2 * y) * w + 2 * x;
          p[0] += g;
          p[1] += g;
          p[w] += g;
          p[w + 1] += g;
        }
  });
}

Tensor sigmoid(const Tensor& x) {
  // Clamped one ulp inside (0,1) so the open-interval codomain survives rounding.
  return unary(
      x, "sigmoid",
      [](double v) {
        const double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::clamp(y, kSigmoidLo, kSigmoidHi);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = in[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, in[base + e * s.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(in[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  return Tensor::from_op(x.shape(), std::move(out), "softmax", {x}, [s](Node& self) {
    double* gx = self.input_grad(0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t j = base + e * s.inner;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || shift.shape() != Shape{d}) {
    fail(ErrorKind::ShapeMismatch, "layer_norm gain/shift must be [" + std::to_string(d) + "]");
  }
  if (!(eps > 0.0)) fail(ErrorKind::InvalidConfig, "layer_norm eps must be > 0");
  const std::size_t rows = x.size() / d;
  auto in = x.data();
  auto gv = gain.data();
  auto sv = shift.data();
  std::vector<double> out(in.size());
  std::vector<double> xhat(in.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += p[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (p[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + sv[j];
    }
  }
  return Tensor::from_op(x.shape(), std::move(out), "layer_norm", {x, gain, shift},
                         [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                           double* gx = self.input_grad(0);
                           double* gg = self.input_grad(1);
                           double* gs = self.input_grad(2);
                           const auto& gain_v = self.inputs[1]->data;
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* g = self.grad.data() + r * d;
                             const double* xh = xhat.data() + r * d;
                             if (gg || gs) {
                               for (std::size_t j = 0; j < d; ++j) {
                                 if (gg) gg[j] += g[j] * xh[j];
                                 if (gs) gs[j] += g[j];
                               }
                             }
                             if (!gx) continue;
                             double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                               const double dxh = g[j] * gain_v[j];
                               mean_dxh += dxh;
                               mean_dxh_xh += dxh * xh[j];
                             }
                             mean_dxh /= static_cast<double>(d);
                             mean_dxh_xh /= static_cast<double>(d);
                             for (std::size_t j = 0; j < d; ++j) {
                               gx[r * d + j] += rstd[r] * (g[j] * gain_v[j] - mean_dxh - xh[j] * mean_dxh_xh);
                             }
                           }
                         });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::InvalidConfig, "dropout rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto in = x.data();
  std::vector<double> mask(in.size());
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = in[i] * mask[i];
  }
  return Tensor::from_op(x.shape(), std::move(out), "dropout", {x}, [mask = std::move(mask)](Node& self) {
    if (double* gx = self.input_grad(0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) fail(ErrorKind::ShapeMismatch, "cross_entropy label count does not match batch");
  auto in = logits.data();
  std::vector<double> probs(in.size());
  std::vector<int> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (lab[r] < 0 || static_cast<std::size_t>(lab[r]) >= k) {
      fail(ErrorKind::InvalidLabel, "label " + std::to_string(lab[r]) + " outside [0," + std::to_string(k) + ")");
    }
    const double* p = in.data() + r * k;
    double mx = p[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, p[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(p[j] - mx);
    const double lse = mx + std::log(total);
    loss += lse - p[lab[r]];
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(p[j] - lse);
  }
  loss /= static_cast<double>(n);
  return Tensor::from_op({1}, {loss}, "cross_entropy", {logits},
                         [n, k, probs = std::move(probs), lab = std::move(lab)](Node& self) {
                           double* gx = self.input_grad(0);
                           if (!gx) return;
                           const double g = self.grad[0] / static_cast<double>(n);
                           for (std::size_t r = 0; r < n; ++r) {
                             for (std::size_t j = 0; j < k; ++j) {
                               const double target = static_cast<std::size_t>(lab[r]) == j ? 1.0 : 0.0;
                               gx[r * k + j] += g * (probs[r * k + j] - target);
                             }
                           }
                         });
}

}  // namespace lesion
