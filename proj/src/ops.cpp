#include "s2t/ops.hpp"

#include <algorithm>
#include <cmath>

namespace s2t {
namespace {

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename Scalar>
bool wants(const Tensor<Scalar>& t) {
  return t.defined() && t.requires_grad();
}

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Map = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using CMap = Eigen::Map<const RowMat<Scalar>>;

template <typename Scalar>
Map<Scalar> grad_map(const Tensor<Scalar>& t, Index rows, Index cols) {
  return Map<Scalar>(t.grad().data(), rows, cols);
}

template <typename Scalar>
CMap<Scalar> out_grad_map(const Tensor<Scalar>& t, Index rows, Index cols) {
  return CMap<Scalar>(t.grad().data(), rows, cols);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("add", a, b);
  Tensor<Scalar> out(a.shape());
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  record_op<Scalar>("add", out, {&a, &b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (wants(a)) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants(b)) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("sub", a, b);
  Tensor<Scalar> out(a.shape());
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
  record_op<Scalar>("sub", out, {&a, &b}, [a, b, out]() mutable {
    auto g = out.grad();
    if (wants(a)) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants(b)) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("mul", a, b);
  Tensor<Scalar> out(a.shape());
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  record_op<Scalar>("mul", out, {&a, &b}, [a, b, out]() mutable {
    auto g = out.grad();
    auto av = a.values();
    auto bv = b.values();
    if (wants(a)) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (wants(b)) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out(x.shape());
  auto o = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
  record_op<Scalar>("scale", out, {&x}, [x, out, factor]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  auto o = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::abs(xv[i]);
  record_op<Scalar>("abs", out, {&x}, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Scalar s = xv[i] > 0 ? Scalar(1) : (xv[i] < 0 ? Scalar(-1) : Scalar(0));
      gx[i] += g[i] * s;
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> reciprocal(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  auto o = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = Scalar(1) / xv[i];
  record_op<Scalar>("reciprocal", out, {&x}, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto ov = out.values();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i] * ov[i] * ov[i];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> clamp_min(const Tensor<Scalar>& x, Scalar floor) {
  Tensor<Scalar> out(x.shape());
  auto o = out.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::max(xv[i], floor);
  record_op<Scalar>("clamp_min", out, {&x}, [x, out, floor]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto xv = x.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > floor) gx[i] += g[i];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Scalar acc = 0;
  for (Scalar v : x.values()) acc += v;
  Tensor<Scalar> out = Tensor<Scalar>::scalar(acc);
  record_op<Scalar>("sum", out, {&x}, [x, out]() mutable {
    const Scalar g = out.grad()[0];
    for (Scalar& gx : x.grad()) gx += g;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  Scalar acc = 0;
  for (Scalar v : x.values()) acc += v;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.numel());
  Tensor<Scalar> out = Tensor<Scalar>::scalar(acc * inv);
  record_op<Scalar>("mean", out, {&x}, [x, out, inv]() mutable {
    const Scalar g = out.grad()[0] * inv;
    for (Scalar& gx : x.grad()) gx += g;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<Scalar> out(std::move(shape), std::vector<Scalar>(x.values().begin(), x.values().end()));
  record_op<Scalar>("reshape", out, {&x}, [x, out]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& x, const IndexMap& index, Shape shape) {
  if (shape_numel(shape) != static_cast<Index>(index->size())) {
    throw DimensionError("gather: index of length " + std::to_string(index->size()) + " does not fill shape " +
                         shape_str(shape));
  }
  Tensor<Scalar> out(std::move(shape));
  auto o = out.values();
  auto xv = x.values();
  const auto& idx = *index;
  const std::size_t n = xv.size();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (idx[i] >= n) throw DimensionError("gather: index " + std::to_string(idx[i]) + " out of range for " + shape_str(x.shape()));
    o[i] = xv[idx[i]];
  }
  record_op<Scalar>("gather", out, {&x}, [x, out, index]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    const auto& idx = *index;
    for (std::size_t i = 0; i < g.size(); ++i) gx[idx[i]] += g[i];
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_last(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Index ca = a.dim(-1);
  const Index cb = b.dim(-1);
  const Index rows = a.numel() / ca;
  Shape sa(a.shape().begin(), a.shape().end() - 1);
  Shape sb(b.shape().begin(), b.shape().end() - 1);
  if (sa != sb) {
    throw DimensionError("concat_last: leading dims differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Shape so = sa;
  so.push_back(ca + cb);
  Tensor<Scalar> out(so);
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (Index r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * ca, ca, o.begin() + r * (ca + cb));
    std::copy_n(bv.begin() + r * cb, cb, o.begin() + r * (ca + cb) + ca);
  }
  record_op<Scalar>("concat_last", out, {&a, &b}, [a, b, out, rows, ca, cb]() mutable {
    auto g = out.grad();
    if (wants(a)) {
      auto ga = a.grad();
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < ca; ++c) ga[r * ca + c] += g[r * (ca + cb) + c];
    }
    if (wants(b)) {
      auto gb = b.grad();
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cb; ++c) gb[r * cb + c] += g[r * (ca + cb) + ca + c];
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& x) {
  return x.clone();
}

namespace {

struct BroadcastLayout {
  Index groups, reps, inner;
};

template <typename Scalar>
BroadcastLayout broadcast_layout(const char* op, const Tensor<Scalar>& x, const Tensor<Scalar>& b, Index groups) {
  const Index nb = b.numel();
  if (groups <= 0 || nb % groups != 0 || x.numel() % nb != 0) {
    throw DimensionError(std::string(op) + ": cannot tile " + shape_str(b.shape()) + " in " + std::to_string(groups) +
                         " groups over " + shape_str(x.shape()));
  }
  return {groups, x.numel() / nb, nb / groups};
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add_broadcast(const Tensor<Scalar>& x, const Tensor<Scalar>& b, Index groups) {
  const auto L = broadcast_layout("add_broadcast", x, b, groups);
  Tensor<Scalar> out(x.shape());
  auto o = out.values();
  auto xv = x.values();
  auto bv = b.values();
  for (Index a = 0; a < L.groups; ++a)
    for (Index r = 0; r < L.reps; ++r) {
      const Index base = (a * L.reps + r) * L.inner;
      for (Index c = 0; c < L.inner; ++c) o[base + c] = xv[base + c] + bv[a * L.inner + c];
    }
  record_op<Scalar>("add_broadcast", out, {&x, &b}, [x, b, out, L]() mutable {
    auto g = out.grad();
    if (wants(x)) {
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (wants(b)) {
      auto gb = b.grad();
      for (Index a = 0; a < L.groups; ++a)
        for (Index r = 0; r < L.reps; ++r) {
          const Index base = (a * L.reps + r) * L.inner;
          for (Index c = 0; c < L.inner; ++c) gb[a * L.inner + c] += g[base + c];
        }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul_broadcast(const Tensor<Scalar>& x, const Tensor<Scalar>& b, Index groups) {
  const auto L = broadcast_layout("mul_broadcast", x, b, groups);
  Tensor<Scalar> out(x.shape());
  auto o = out.values();
  auto xv = x.values();
  auto bv = b.values();
  for (Index a = 0; a < L.groups; ++a)
    for (Index r = 0; r < L.reps; ++r) {
      const Index base = (a * L.reps + r) * L.inner;
      for (Index c = 0; c < L.inner; ++c) o[base + c] = xv[base + c] * bv[a * L.inner + c];
    }
  record_op<Scalar>("mul_broadcast", out, {&x, &b}, [x, b, out, L]() mutable {
    auto g = out.grad();
    auto xv = x.values();
    auto bv = b.values();
    const bool gx_on = wants(x);
    const bool gb_on = wants(b);
    std::span<Scalar> gx = gx_on ? x.grad() : std::span<Scalar>{};
    std::span<Scalar> gb = gb_on ? b.grad() : std::span<Scalar>{};
    for (Index a = 0; a < L.groups; ++a)
      for (Index r = 0; r < L.reps; ++r) {
        const Index base = (a * L.reps + r) * L.inner;
        for (Index c = 0; c < L.inner; ++c) {
          if (gx_on) gx[base + c] += g[base + c] * bv[a * L.inner + c];
          if (gb_on) gb[a * L.inner + c] += g[base + c] * xv[base + c];
        }
      }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<Scalar> out(Shape{m, n});
  out.matrix(m, n).noalias() = a.matrix(m, k) * b.matrix(k, n);
  record_op<Scalar>("matmul", out, {&a, &b}, [a, b, out, m, k, n]() mutable {
    auto g = out_grad_map(out, m, n);
    if (wants(a)) grad_map(a, m, k).noalias() += g * b.matrix(k, n).transpose();
    if (wants(b)) grad_map(b, k, n).noalias() += a.matrix(m, k).transpose() * g;
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> batched_matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_a, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw DimensionError("batched_matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const Index batch = a.dim(0);
  const Index ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const Index m = transpose_a ? ac : ar;
  const Index ka = transpose_a ? ar : ac;
  const Index kb = transpose_b ? bc : br;
  const Index n = transpose_b ? br : bc;
  if (ka != kb) {
    throw DimensionError("batched_matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  Tensor<Scalar> out(Shape{batch, m, n});
  const Scalar* ap = a.values().data();
  const Scalar* bp = b.values().data();
  Scalar* op = out.values().data();
  for (Index i = 0; i < batch; ++i) {
    CMap<Scalar> A(ap + i * ar * ac, ar, ac);
    CMap<Scalar> B(bp + i * br * bc, br, bc);
    Map<Scalar> C(op + i * m * n, m, n);
    if (!transpose_a && !transpose_b) C.noalias() = A * B;
    else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
    else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  record_op<Scalar>("batched_matmul", out, {&a, &b},
                    [a, b, out, batch, ar, ac, br, bc, m, n, transpose_a, transpose_b]() mutable {
    const Scalar* ap = a.values().data();
    const Scalar* bp = b.values().data();
    const Scalar* gp = out.grad().data();
    Scalar* gap = wants(a) ? a.grad().data() : nullptr;
    Scalar* gbp = wants(b) ? b.grad().data() : nullptr;
    for (Index i = 0; i < batch; ++i) {
      CMap<Scalar> A(ap + i * ar * ac, ar, ac);
      CMap<Scalar> B(bp + i * br * bc, br, bc);
      CMap<Scalar> G(gp + i * m * n, m, n);
      if (gap) {
        Map<Scalar> GA(gap + i * ar * ac, ar, ac);
        // d op(A) = G op(B)^T
        if (!transpose_a && !transpose_b) GA.noalias() += G * B.transpose();
        else if (!transpose_a && transpose_b) GA.noalias() += G * B;
        else if (transpose_a && !transpose_b) GA.noalias() += B * G.transpose();
        else GA.noalias() += B.transpose() * G.transpose();
      }
      if (gbp) {
        Map<Scalar> GB(gbp + i * br * bc, br, bc);
        // d op(B) = op(A)^T G
        if (!transpose_a && !transpose_b) GB.noalias() += A.transpose() * G;
        else if (transpose_a && !transpose_b) GB.noalias() += A * G;
        else if (!transpose_a && transpose_b) GB.noalias() += G.transpose() * A;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& bias) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const Index in = w.dim(0), outc = w.dim(1);
  const Index rows = x.numel() / in;
  if (bias.defined() && bias.numel() != outc) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  Shape so(x.shape().begin(), x.shape().end() - 1);
  so.push_back(outc);
  Tensor<Scalar> out(so);
  auto O = out.matrix(rows, outc);
  O.noalias() = x.matrix(rows, in) * w.matrix(in, outc);
  if (bias.defined()) O.rowwise() += bias.matrix(1, outc).row(0);
  record_op<Scalar>("linear", out, {&x, &w, &bias}, [x, w, bias, out, rows, in, outc]() mutable {
    auto G = out_grad_map(out, rows, outc);
    if (wants(x)) grad_map(x, rows, in).noalias() += G * w.matrix(in, outc).transpose();
    if (wants(w)) grad_map(w, in, outc).noalias() += x.matrix(rows, in).transpose() * G;
    if (wants(bias)) grad_map(bias, 1, outc) += G.colwise().sum();
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_last(const Tensor<Scalar>& x) {
  const Index n = x.dim(-1);
  const Index rows = x.numel() / n;
  Tensor<Scalar> out(x.shape());
  auto xv = x.values();
  auto o = out.values();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* xr = xv.data() + r * n;
    Scalar* orow = o.data() + r * n;
    const Scalar mx = *std::max_element(xr, xr + n);
    Scalar z = 0;
    for (Index j = 0; j < n; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      z += orow[j];
    }
    const Scalar inv = Scalar(1) / z;
    for (Index j = 0; j < n; ++j) orow[j] *= inv;
  }
  record_op<Scalar>("softmax_last", out, {&x}, [x, out, rows, n]() mutable {
    auto g = out.grad();
    auto y = out.values();
    auto gx = x.grad();
    for (Index r = 0; r < rows; ++r) {
      Scalar dot = 0;
      for (Index j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (Index j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias, Scalar eps) {
  const Index c = x.dim(-1);
  if (gain.numel() != c || bias.numel() != c) {
    throw DimensionError("layer_norm: affine params " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match input " + shape_str(x.shape()));
  }
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const Index rows = x.numel() / c;
  Tensor<Scalar> out(x.shape());
  auto normed = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(rows));
  auto xv = x.values();
  auto o = out.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* xr = xv.data() + r * c;
    Scalar mu = 0;
    for (Index j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<Scalar>(c);
    Scalar var = 0;
    for (Index j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<Scalar>(c);
    const Scalar rs = Scalar(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (Index j = 0; j < c; ++j) {
      const Scalar xh = (xr[j] - mu) * rs;
      (*normed)[r * c + j] = xh;
      o[r * c + j] = xh * gv[j] + bv[j];
    }
  }
  record_op<Scalar>("layer_norm", out, {&x, &gain, &bias}, [x, gain, bias, out, normed, rstd, rows, c]() mutable {
    auto g = out.grad();
    auto gv = gain.values();
    const auto& xh = *normed;
    if (wants(gain)) {
      auto gg = gain.grad();
      for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < c; ++j) gg[j] += g[r * c + j] * xh[r * c + j];
    }
    if (wants(bias)) {
      auto gb = bias.grad();
      for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < c; ++j) gb[j] += g[r * c + j];
    }
    if (wants(x)) {
      auto gx = x.grad();
      const Scalar inv_c = Scalar(1) / static_cast<Scalar>(c);
      for (Index r = 0; r < rows; ++r) {
        Scalar m1 = 0, m2 = 0;
        for (Index j = 0; j < c; ++j) {
          const Scalar d = g[r * c + j] * gv[j];
          m1 += d;
          m2 += d * xh[r * c + j];
        }
        m1 *= inv_c;
        m2 *= inv_c;
        const Scalar rs = (*rstd)[r];
        for (Index j = 0; j < c; ++j) {
          const Scalar d = g[r * c + j] * gv[j];
          gx[r * c + j] += rs * (d - m1 - xh[r * c + j] * m2);
        }
      }
    }
  });
  return out;
}

namespace {
constexpr double kGeluCoeff = 0.044715;
constexpr double kSqrt2OverPi = 0.7978845608028654;
}  // namespace

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  auto xv = x.values();
  auto o = out.values();
  const Scalar k = static_cast<Scalar>(kSqrt2OverPi);
  const Scalar a = static_cast<Scalar>(kGeluCoeff);
  for (std::size_t i = 0; i < o.size(); ++i) {
    const Scalar v = xv[i];
    o[i] = Scalar(0.5) * v * (Scalar(1) + std::tanh(k * (v + a * v * v * v)));
  }
  record_op<Scalar>("gelu", out, {&x}, [x, out, k, a]() mutable {
    auto g = out.grad();
    auto xv = x.values();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Scalar v = xv[i];
      const Scalar t = std::tanh(k * (v + a * v * v * v));
      const Scalar d = Scalar(0.5) * (Scalar(1) + t) +
                       Scalar(0.5) * v * (Scalar(1) - t * t) * k * (Scalar(1) + Scalar(3) * a * v * v);
      gx[i] += g[i] * d;
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv2d_3x3(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias) {
  if (x.rank() != 3) throw DimensionError("conv2d_3x3: input must be [h, w, c], got " + shape_str(x.shape()));
  if (kernel.rank() != 4 || kernel.dim(0) != 3 || kernel.dim(1) != 3 || kernel.dim(2) != x.dim(2)) {
    throw DimensionError("conv2d_3x3: kernel " + shape_str(kernel.shape()) + " does not match input " +
                         shape_str(x.shape()));
  }
  const Index h = x.dim(0), w = x.dim(1), cin = x.dim(2), cout = kernel.dim(3);
  if (bias.defined() && bias.numel() != cout) {
    throw DimensionError("conv2d_3x3: bias " + shape_str(bias.shape()) + " does not match kernel " +
                         shape_str(kernel.shape()));
  }
  const Index kdim = 9 * cin;
  auto col = std::make_shared<RowMat<Scalar>>(RowMat<Scalar>::Zero(h * w, kdim));
  auto xv = x.values();
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx) {
      Scalar* row = col->data() + (y * w + xx) * kdim;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index sx = xx + kx - 1;
          if (sx < 0 || sx >= w) continue;
          std::copy_n(xv.data() + (sy * w + sx) * cin, cin, row + (ky * 3 + kx) * cin);
        }
      }
    }
  Tensor<Scalar> out(Shape{h, w, cout});
  auto O = out.matrix(h * w, cout);
  O.noalias() = (*col) * kernel.matrix(kdim, cout);
  if (bias.defined()) O.rowwise() += bias.matrix(1, cout).row(0);
  if (!(grad_enabled() && (wants(x) || wants(kernel) || wants(bias)))) return out;
  record_op<Scalar>("conv2d_3x3", out, {&x, &kernel, &bias}, [x, kernel, bias, out, col, h, w, cin, cout, kdim]() mutable {
    auto G = out_grad_map(out, h * w, cout);
    if (wants(kernel)) grad_map(kernel, kdim, cout).noalias() += col->transpose() * G;
    if (wants(bias)) grad_map(bias, 1, cout) += G.colwise().sum();
    if (wants(x)) {
      RowMat<Scalar> dcol = G * kernel.matrix(kdim, cout).transpose();
      auto gx = x.grad();
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < w; ++xx) {
          const Scalar* row = dcol.data() + (y * w + xx) * kdim;
          for (Index ky = 0; ky < 3; ++ky) {
            const Index sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (Index kx = 0; kx < 3; ++kx) {
              const Index sx = xx + kx - 1;
              if (sx < 0 || sx >= w) continue;
              Scalar* dst = gx.data() + (sy * w + sx) * cin;
              const Scalar* src = row + (ky * 3 + kx) * cin;
              for (Index c = 0; c < cin; ++c) dst[c] += src[c];
            }
          }
        }
    }
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> block_mean(const Tensor<Scalar>& x, Index patch) {
  if (x.rank() != 3) throw DimensionError("block_mean: input must be [h, w, c], got " + shape_str(x.shape()));
  if (patch <= 0) throw ContractError("block_mean: patch must be positive");
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const Index ph = (h + patch - 1) / patch, pw = (w + patch - 1) / patch;
  Tensor<Scalar> out(Shape{ph, pw});
  auto counts = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(ph * pw), Scalar(0));
  auto xv = x.values();
  auto o = out.values();
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < w; ++xx) {
      const Index p = (y / patch) * pw + xx / patch;
      for (Index k = 0; k < c; ++k) o[p] += xv[(y * w + xx) * c + k];
      (*counts)[p] += static_cast<Scalar>(c);
    }
  for (Index p = 0; p < ph * pw; ++p) o[p] /= (*counts)[p];
  record_op<Scalar>("block_mean", out, {&x}, [x, out, counts, h, w, c, patch, pw]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < w; ++xx) {
        const Index p = (y / patch) * pw + xx / patch;
        const Scalar d = g[p] / (*counts)[p];
        for (Index k = 0; k < c; ++k) gx[(y * w + xx) * c + k] += d;
      }
  });
  return out;
}

#define S2T_INSTANTIATE_OPS(S)                                                                   \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> scale(const Tensor<S>&, S);                                                 \
  template Tensor<S> abs(const Tensor<S>&);                                                      \
  template Tensor<S> reciprocal(const Tensor<S>&);                                               \
  template Tensor<S> clamp_min(const Tensor<S>&, S);                                             \
  template Tensor<S> sum(const Tensor<S>&);                                                      \
  template Tensor<S> mean(const Tensor<S>&);                                                     \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                           \
  template Tensor<S> gather(const Tensor<S>&, const IndexMap&, Shape);                           \
  template Tensor<S> concat_last(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> detach(const Tensor<S>&);                                                   \
  template Tensor<S> add_broadcast(const Tensor<S>&, const Tensor<S>&, Index);                   \
  template Tensor<S> mul_broadcast(const Tensor<S>&, const Tensor<S>&, Index);                   \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> batched_matmul(const Tensor<S>&, const Tensor<S>&, bool, bool);             \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> softmax_last(const Tensor<S>&);                                             \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);        \
  template Tensor<S> gelu(const Tensor<S>&);                                                     \
  template Tensor<S> conv2d_3x3(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);           \
  template Tensor<S> block_mean(const Tensor<S>&, Index);

S2T_INSTANTIATE_OPS(float)
S2T_INSTANTIATE_OPS(double)

}  // namespace s2t
