#include <cmath>

#include "doctest.h"
#include "s2t/gradcheck.hpp"
#include "s2t/ops.hpp"
#include "test_util.hpp"

using namespace s2t;
using s2t::testing::random_tensor;

namespace {

// Contract every output of `op` against fixed random weights so the check sees
// all output entries.
template <typename Fn>
GradCheckReport check_op(Fn op, std::vector<NamedTensor<double>> params, const Shape& out_shape, double step = 1e-5,
                         double tol = 1e-4) {
  Tensor<double> w = s2t::testing::probe_weights<double>(out_shape, 7);
  LossFn<double> f = [&]() { return sum(mul(op(), w)); };
  GradCheckOptions opts;
  opts.step = step;
  opts.tol = tol;
  return grad_check(f, params, opts);
}

}  // namespace

TEST_CASE("matmul identity and hand case") {
  Tensor<double> eye(Shape{3, 3});
  eye[0] = eye[4] = eye[8] = 1.0;
  Rng rng(1);
  auto x = random_tensor<double>({3, 2}, rng);
  auto y = matmul(eye, x);
  for (Index i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  Tensor<double> a(Shape{2, 2}, {1, 2, 3, 4});
  Tensor<double> i2(Shape{2, 2}, {1, 0, 0, 1});
  auto b = matmul(a, i2);
  CHECK(b.values()[0] == 1);
  CHECK(b.values()[1] == 2);
  CHECK(b.values()[2] == 3);
  CHECK(b.values()[3] == 4);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor<float> a(Shape{2, 3}), b(Shape{2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient vs central differences") {
  Rng rng(2);
  auto a = random_tensor<double>({5, 4}, rng);
  auto b = random_tensor<double>({4, 3}, rng);
  auto r = check_op([&] { return matmul(a, b); }, {{"a", a}, {"b", b}}, {5, 3}, 1e-4);
  CHECK_MESSAGE(r.passed(), r.failures());
}

TEST_CASE("batched_matmul gradient for every transpose combination") {
  Rng rng(3);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      auto a = random_tensor<double>(ta ? Shape{3, 4, 2} : Shape{3, 2, 4}, rng);
      auto b = random_tensor<double>(tb ? Shape{3, 5, 4} : Shape{3, 4, 5}, rng);
      auto r = check_op([&] { return batched_matmul(a, b, ta == 1, tb == 1); }, {{"a", a}, {"b", b}}, {3, 2, 5});
      CHECK_MESSAGE(r.passed(), r.failures());
    }
}

TEST_CASE("softmax_last examples") {
  Tensor<double> z(Shape{3}, 0.0);
  auto s = softmax_last(z);
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor<float> big(Shape{2}, {1000.f, 0.f});
  auto sb = softmax_last(big);
  CHECK(std::isfinite(sb[0]));
  CHECK(sb[0] == doctest::Approx(1.0));
  CHECK(sb[1] == doctest::Approx(0.0));

  Rng rng(4);
  auto x = random_tensor<double>({3, 4}, rng, -2, 2);
  auto r = check_op([&] { return softmax_last(x); }, {{"x", x}}, {3, 4});
  CHECK_MESSAGE(r.passed(), r.failures());
}

TEST_CASE("softmax slices are positive and sum to one") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Index n = 1 + static_cast<Index>(rng.below(8));
    const Index rows = 1 + static_cast<Index>(rng.below(16));
    auto x = random_tensor<float>({rows, n}, rng, -20, 20);
    auto y = softmax_last(x);
    for (Index r = 0; r < rows; ++r) {
      double s = 0.0;
      for (Index j = 0; j < n; ++j) {
        CHECK(y[r * n + j] > 0.0f);
        s += y[r * n + j];
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer_norm examples") {
  Tensor<double> g(Shape{3}, 1.0), b(Shape{3}, 0.0);
  auto c = layer_norm(Tensor<double>(Shape{3}, 5.0), g, b);
  for (double v : c.values()) CHECK(v == 0.0);

  auto y = layer_norm(Tensor<double>(Shape{3}, {1, 2, 3}), g, b);
  const double r = std::sqrt(1.5);
  CHECK(std::abs(y[0] + r) < 1e-5);
  CHECK(std::abs(y[1]) < 1e-5);
  CHECK(std::abs(y[2] - r) < 1e-5);

  Rng rng(5);
  auto x = random_tensor<double>({4, 6}, rng);
  auto gain = random_tensor<double>({6}, rng, 0.5, 1.5);
  auto bias = random_tensor<double>({6}, rng);
  auto rep = check_op([&] { return layer_norm(x, gain, bias); }, {{"x", x}, {"gain", gain}, {"bias", bias}}, {4, 6});
  CHECK_MESSAGE(rep.passed(), rep.failures());
}

TEST_CASE("layer_norm moments and shift invariance") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Index c = 2 + static_cast<Index>(rng.below(7));
    const Index rows = 1 + static_cast<Index>(rng.below(8));
    auto x = random_tensor<double>({rows, c}, rng, -3, 3);
    Tensor<double> g(Shape{c}, 1.0), b(Shape{c}, 0.0);
    auto y = layer_norm(x, g, b);
    for (Index r = 0; r < rows; ++r) {
      double m = 0, v = 0;
      for (Index j = 0; j < c; ++j) m += y[r * c + j];
      m /= c;
      for (Index j = 0; j < c; ++j) v += (y[r * c + j] - m) * (y[r * c + j] - m);
      v /= c;
      CHECK(std::abs(m) < 1e-5);
      // eps shrinks the variance by var/(var+eps); slices here have var >> eps.
      CHECK(std::abs(v - 1.0) < 1e-3);
    }
    auto shifted = x.clone();
    for (Index r = 0; r < rows; ++r) {
      const double s = rng.uniform(-10, 10);
      for (Index j = 0; j < c; ++j) shifted[r * c + j] += s;
    }
    auto ys = layer_norm(shifted, g, b);
    for (Index i = 0; i < y.numel(); ++i) CHECK(std::abs(ys[i] - y[i]) < 1e-5);
  }
}

TEST_CASE("gelu examples and erf deviation") {
  Tensor<double> x(Shape{2}, {0.0, 10.0});
  auto y = gelu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(10.0).epsilon(1e-9));

  double worst = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double v = -5.0 + 10.0 * i / 1000.0;
    const double exact = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    auto g = gelu(Tensor<double>::scalar(v));
    worst = std::max(worst, std::abs(g.item() - exact));
  }
  CHECK(worst < 1e-3);

  Rng rng(6);
  auto z = random_tensor<double>({3, 5}, rng, -4, 4);
  auto r = check_op([&] { return gelu(z); }, {{"z", z}}, {3, 5});
  CHECK_MESSAGE(r.passed(), r.failures());
}

TEST_CASE("conv2d_3x3 identity kernel and hand sum") {
  Rng rng(7);
  auto x = random_tensor<double>({4, 5, 3}, rng);
  Tensor<double> k(Shape{3, 3, 3, 3}, 0.0);
  for (Index c = 0; c < 3; ++c) k[((1 * 3 + 1) * 3 + c) * 3 + c] = 1.0;
  Tensor<double> b(Shape{3}, 0.0);
  auto y = conv2d_3x3(x, k, b);
  CHECK(y.shape() == x.shape());
  for (Index i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  Tensor<double> ones(Shape{3, 3, 1}, 1.0), k1(Shape{3, 3, 1, 1}, 1.0), b1(Shape{1}, 0.0);
  auto s = conv2d_3x3(ones, k1, b1);
  CHECK(s[1 * 3 + 1] == 9.0);
  CHECK(s[0] == 4.0);

  Tensor<double> bad(Shape{3, 3, 2, 1});
  CHECK_THROWS_AS(conv2d_3x3(ones, bad, b1), DimensionError);
}

TEST_CASE("conv2d_3x3 gradient vs central differences") {
  Rng rng(8);
  auto x = random_tensor<double>({5, 4, 2}, rng);
  auto k = random_tensor<double>({3, 3, 2, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto r = check_op([&] { return conv2d_3x3(x, k, b); }, {{"x", x}, {"kernel", k}, {"bias", b}}, {5, 4, 3});
  CHECK_MESSAGE(r.passed(), r.failures());
}

TEST_CASE("elementwise, broadcast and layout ops pass gradient checks on random shapes") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(100 + seed);
    const Index h = 1 + static_cast<Index>(rng.below(8));
    const Index w = 1 + static_cast<Index>(rng.below(8));
    const Index c = 1 + static_cast<Index>(rng.below(8));
    auto a = random_tensor<double>({h, w, c}, rng, 0.2, 2.0);
    auto b = random_tensor<double>({h, w, c}, rng, -1, 1);
    auto cb = random_tensor<double>({c}, rng);
    std::vector<std::uint32_t> perm(static_cast<std::size_t>(a.numel()));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::uint32_t>(perm.size() - 1 - i);
    auto idx = make_index_map(perm);
    const Shape s{h, w, c};

    auto r1 = check_op([&] { return add(mul(a, b), sub(a, scale(b, 3.0))); }, {{"a", a}, {"b", b}}, s);
    auto r2 = check_op([&] { return reciprocal(clamp_min(a, 0.1)); }, {{"a", a}}, s);
    auto r3 = check_op([&] { return add_broadcast(mul_broadcast(b, cb), cb); }, {{"b", b}, {"cb", cb}}, s);
    auto r4 = check_op([&] { return gather(abs(b), idx, {h * w, c}); }, {{"b", b}}, {h * w, c});
    auto r5 = check_op([&] { return concat_last(a, b); }, {{"a", a}, {"b", b}}, {h, w, 2 * c});
    auto r6 = check_op([&] { return reshape(block_mean(b, 3), {1, ((h + 2) / 3) * ((w + 2) / 3)}); }, {{"b", b}},
                       {1, ((h + 2) / 3) * ((w + 2) / 3)});
    for (const auto* r : {&r1, &r2, &r3, &r4, &r5, &r6}) CHECK_MESSAGE(r->passed(), r->failures());
  }
}

TEST_CASE("linear gradient") {
  Rng rng(9);
  auto x = random_tensor<double>({2, 3, 4}, rng);
  auto w = random_tensor<double>({4, 5}, rng);
  auto b = random_tensor<double>({5}, rng);
  auto r = check_op([&] { return linear(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}}, {2, 3, 5});
  CHECK_MESSAGE(r.passed(), r.failures());
}

TEST_CASE("backward basics") {
  auto& graph = Graph<double>::current();
  graph.clear();
  Rng rng(10);
  auto x = random_tensor<double>({2, 3}, rng);
  x.set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  graph.clear();
  auto loss = scale(sum(mul(x, x)), 0.5);
  backward(loss);
  for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(x[i]));

  // A second pass over the same graph accumulates into leaves.
  backward(loss);
  for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i]));
  graph.clear();

  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
  graph.clear();
}

TEST_CASE("no-grad mode records nothing") {
  auto& graph = Graph<float>::current();
  graph.clear();
  Tensor<float> x(Shape{4}, 1.0f);
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    auto y = gelu(mul(x, x));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(graph.size() == 0);
  auto y = gelu(x);
  CHECK(graph.size() == 1);
  graph.clear();
}

TEST_CASE("grad_check report semantics") {
  Rng rng(11);
  auto x = random_tensor<double>({6}, rng);
  auto w = random_tensor<double>({6}, rng);
  std::vector<NamedTensor<double>> params{{"x", x}};
  LossFn<double> lin = [&] { return sum(mul(x, w)); };
  auto r = grad_check(lin, params);
  CHECK(r.passed());
  CHECK(r.worst() < 1e-9);

  // Softmax cross-entropy toy: -log softmax(x)[2].
  Tensor<double> onehot(Shape{6}, 0.0);
  onehot[2] = 1.0;
  LossFn<double> ce = [&] {
    auto p = softmax_last(x);
    auto picked = sum(mul(p, onehot));
    // -log(picked) through reciprocal-free identity: d(-log u) = -du/u.
    Tensor<double> out = Tensor<double>::scalar(-std::log(picked.item()));
    record_op<double>("neg_log", out, {&picked}, [picked, out]() mutable {
      picked.grad()[0] += -out.grad()[0] / picked.values()[0];
    });
    return out;
  };
  GradCheckOptions opts;
  opts.tol = 1e-4;
  CHECK(grad_check(ce, params, opts).passed());

  // Negative control: a square op whose backward is off by a factor of 1.5.
  auto y = random_tensor<double>({5}, rng, 0.5, 1.5);
  std::vector<NamedTensor<double>> yp{{"corrupted_input", y}};
  LossFn<double> bad = [&] {
    Tensor<double> out(y.shape());
    for (Index i = 0; i < y.numel(); ++i) out[i] = y[i] * y[i];
    record_op<double>("bad_square", out, {&y}, [y, out]() mutable {
      for (Index i = 0; i < y.numel(); ++i) y.grad()[i] += 3.0 * y.values()[i] * out.grad()[i];
    });
    return sum(out);
  };
  auto rb = grad_check(bad, yp, opts);
  CHECK_FALSE(rb.passed());
  CHECK(rb.failures().find("corrupted_input") != std::string::npos);
}

TEST_CASE("ops are deterministic") {
  Rng r1(12), r2(12);
  auto a1 = random_tensor<float>({6, 5, 4}, r1);
  auto a2 = random_tensor<float>({6, 5, 4}, r2);
  auto k1 = random_tensor<float>({3, 3, 4, 2}, r1);
  auto k2 = random_tensor<float>({3, 3, 4, 2}, r2);
  Tensor<float> b(Shape{2}, 0.1f);
  auto f = [&](const Tensor<float>& a, const Tensor<float>& k) { return softmax_last(gelu(conv2d_3x3(a, k, b))); };
  auto y1 = f(a1, k1);
  auto y2 = f(a2, k2);
  for (Index i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("detach copies values and blocks gradients") {
  Rng rng(12);
  auto x = random_tensor<double>({3, 4}, rng);
  x.set_requires_grad(true);
  auto d = detach(x);
  for (Index i = 0; i < x.numel(); ++i) CHECK(d[i] == x[i]);
  CHECK_FALSE(d.requires_grad());
  backward(sum(add(mul(d, x), x)));
  for (Index i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(d[i] + 1.0));
  Graph<double>::current().clear();
}
