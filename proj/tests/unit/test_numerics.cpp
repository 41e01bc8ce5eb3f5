#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "vts/error.hpp"
#include "vts/numerics/grad_check.hpp"
#include "vts/numerics/layers.hpp"

using namespace vts;
using vts::test::max_abs_diff;
using vts::test::random_array;

TEST_CASE("linear") {
  const Array w = Array::matrix({{1, 2}, {3, 4}});
  CHECK(linear(constant(Array::matrix({{1, 0}, {0, 1}})), constant(w)).value() == w);

  Rng rng(1);
  Var y = linear(constant(Array::zeros(3, 4)), constant(random_array(4, 2, rng)), constant(Array::row({1, 1})));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.value()[i] == 1.0);

  Var z = linear(constant(Array::row({1, 1})), constant(Array::matrix({{2}, {3}})), constant(Array::row({0.5})));
  CHECK(z.item() == doctest::Approx(5.5).epsilon(1e-15));

  CHECK_THROWS_AS(linear(constant(Array::zeros(2, 3)), constant(Array::zeros(2, 2))), DimensionError);
  try {
    linear(constant(Array::zeros(2, 3)), constant(Array::zeros(2, 2)));
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax") {
  const double inf = std::numeric_limits<double>::infinity();
  Var a = softmax(constant(Array::row({0, 0, 0})));
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Var b = softmax(constant(Array::row({-inf, 3, 2})));
  CHECK(b.value()[0] == 0.0);
  const double e3 = std::exp(3.0), e2 = std::exp(2.0);
  CHECK(b.value()[1] == doctest::Approx(e3 / (e3 + e2)).epsilon(1e-14));
  CHECK(b.value()[1] == doctest::Approx(0.7311).epsilon(1e-4));

  Var c = softmax(constant(Array::row({1000, 999})));
  CHECK(std::isfinite(c.value()[0]));
  CHECK(c.value()[0] == doctest::Approx(b.value()[1]).epsilon(1e-14));
  CHECK(c.value()[1] == doctest::Approx(0.2689).epsilon(1e-4));

  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    Array x = random_array(3, 7, rng, 5.0);
    Array shifted = x;
    for (auto& v : shifted.vec()) v += 123.25;
    Var s = softmax(constant(x));
    Var s2 = softmax(constant(shifted));
    CHECK(max_abs_diff(s.value(), s2.value()) < 1e-12);
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (double v : s.value().row_span(r)) {
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }

  // axis 0 is the transpose of axis 1
  Array x = random_array(4, 3, rng);
  Var cols = softmax(constant(x), 0);
  Var rows = softmax(transpose(constant(x)), 1);
  CHECK(max_abs_diff(cols.value(), transpose(rows).value()) < 1e-15);
}

TEST_CASE("layer_norm") {
  Var g = constant(Array::row({1, 1, 1}));
  Var b = constant(Array::row({0, 0, 0}));
  Var y = layer_norm(constant(Array::row({5, 5, 5})), g, b);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.value()[i] == 0.0);

  Var y2 = layer_norm(constant(Array::row({1, -1})), constant(Array::row({1, 1})), constant(Array::row({0, 0})));
  // mean 0, variance 1
  CHECK(y2.value()[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));
  CHECK(y2.value()[1] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-14));

  Var y3 = layer_norm(constant(Array::row({3, -2, 9})), constant(Array::row({0, 0, 0})), constant(Array::row({7, 7, 7})));
  for (std::size_t i = 0; i < 3; ++i) CHECK(y3.value()[i] == 7.0);
}

namespace {

// Per-head attention written out with plain loops.
Array naive_attention(const Array& q_in, const Array& kv_in, const Array& wq, const Array& wk, const Array& wv,
                      const Array& wo, std::size_t heads, const std::vector<std::uint8_t>& mask) {
  const std::size_t n = q_in.rows(), m = kv_in.rows(), d = wq.cols(), dh = d / heads;
  auto project = [](const Array& x, const Array& w) {
    Array y({x.rows(), w.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        for (std::size_t k = 0; k < x.cols(); ++k) y.at(i, j) += x.at(i, k) * w.at(k, j);
    return y;
  };
  const Array q = project(q_in, wq), k = project(kv_in, wk), v = project(kv_in, wv);
  Array concat({n, d});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(m);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < m; ++j) {
        if (!mask.empty() && !mask[j]) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q.at(i, h * dh + c) * k.at(j, h * dh + c);
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        s[j] = (!mask.empty() && !mask[j]) ? 0.0 : std::exp(s[j] - mx);
        z += s[j];
      }
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t c = 0; c < dh; ++c) concat.at(i, h * dh + c) += s[j] / z * v.at(j, h * dh + c);
    }
  }
  return project(concat, wo);
}

struct AttnFixture {
  std::vector<ParamTensor> p;
  AttentionWeights w;
  AttnFixture(std::size_t d, std::size_t heads, Rng& rng) {
    for (const char* name : {"wq", "wk", "wv", "wo"}) p.emplace_back(name, random_array(d, d, rng, 0.5));
    w.wq = parameter(p[0]);
    w.wk = parameter(p[1]);
    w.wv = parameter(p[2]);
    w.wo = parameter(p[3]);
    w.heads = heads;
  }
};

}  // namespace

TEST_CASE("multi_head_attention matches a per-head loop") {
  Rng rng(3);
  for (auto [n, d, heads] : {std::tuple{4u, 8u, 2u}, {16u, 32u, 4u}, {7u, 12u, 3u}, {1u, 8u, 2u}}) {
    AttnFixture f(d, heads, rng);
    const Array x = random_array(n, d, rng);
    std::vector<std::uint8_t> mask(n, 1);
    if (n > 2) mask[n / 2] = 0;
    Var out = multi_head_attention(constant(x), constant(x), constant(x), f.w, mask);
    const Array ref = naive_attention(x, x, f.p[0].value, f.p[1].value, f.p[2].value, f.p[3].value, heads, mask);
    CHECK(max_abs_diff(out.value(), ref) < 1e-10);

    // cross-attention with a different key/value sequence
    const Array kv = random_array(n + 3, d, rng);
    Var cross = multi_head_attention(constant(x), constant(kv), constant(kv), f.w, {});
    CHECK(max_abs_diff(cross.value(), naive_attention(x, kv, f.p[0].value, f.p[1].value, f.p[2].value, f.p[3].value,
                                                      heads, {})) < 1e-10);
  }
}

TEST_CASE("multi_head_attention single position and masking") {
  Rng rng(4);
  AttnFixture f(8, 2, rng);
  const Array x = random_array(1, 8, rng);
  Var out = multi_head_attention(constant(x), constant(x), constant(x), f.w, {});
  const Array vo = linear(linear(constant(x), f.w.wv), f.w.wo).value();
  CHECK(max_abs_diff(out.value(), vo) < 1e-14);

  // masked value row receives no gradient
  const Array q = random_array(5, 8, rng);
  ParamTensor v("v", random_array(5, 8, rng));
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 1};
  backward(sum(multi_head_attention(constant(q), constant(q), parameter(v), f.w, mask)));
  for (double g : v.grad.row_span(2)) CHECK(g == 0.0);
  double other = 0.0;
  for (double g : v.grad.row_span(1)) other += std::abs(g);
  CHECK(other > 0.0);

  AttnFixture bad(6, 4, rng);
  CHECK_THROWS_AS(multi_head_attention(constant(Array::zeros(2, 6)), constant(Array::zeros(2, 6)),
                                       constant(Array::zeros(2, 6)), bad.w, {}),
                  ConfigError);
}

TEST_CASE("feed_forward") {
  Rng rng(5);
  std::vector<ParamTensor> p{{"w1", random_array(4, 6, rng)}, {"b1", random_array(1, 6, rng)},
                             {"w2", random_array(6, 4, rng)}, {"b2", random_array(1, 4, rng)}};
  FeedForwardWeights w{parameter(p[0]), parameter(p[1]), parameter(p[2]), parameter(p[3])};
  const Array x = random_array(3, 4, rng);
  Var y = feed_forward(constant(x), w);

  Array ref({3, 4});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t o = 0; o < 4; ++o) {
      double acc = p[3].value[o];
      for (std::size_t h = 0; h < 6; ++h) {
        double pre = p[1].value[h];
        for (std::size_t k = 0; k < 4; ++k) pre += x.at(i, k) * p[0].value.at(k, h);
        acc += 0.5 * pre * (1.0 + std::erf(pre / std::sqrt(2.0))) * p[2].value.at(h, o);
      }
      ref.at(i, o) = acc;
    }
  }
  CHECK(max_abs_diff(y.value(), ref) < 1e-12);

  std::vector<ParamTensor> z{{"w1", Array::zeros(4, 6)}, {"b1", Array::zeros(1, 6)},
                             {"w2", Array::zeros(6, 4)}, {"b2", Array::zeros(1, 4)}};
  Var y0 = feed_forward(constant(x), {parameter(z[0]), parameter(z[1]), parameter(z[2]), parameter(z[3])});
  for (double v : y0.value().vec()) CHECK(v == 0.0);

  std::vector<ParamTensor*> ptrs{&p[0], &p[1], &p[2], &p[3]};
  auto r = grad_check(
      [&] {
        return sum(square(feed_forward(constant(x), {parameter(p[0]), parameter(p[1]), parameter(p[2]), parameter(p[3])})));
      },
      ptrs);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("dropout") {
  Rng rng(6);
  const Array x = random_array(10, 10, rng);
  CHECK(dropout(constant(x), 0.0, rng, true).value() == x);
  CHECK(dropout(constant(x), 0.7, rng, false).value() == x);
  CHECK_THROWS_AS(dropout(constant(x), 1.0, rng, true), ConfigError);

  DeterministicGuard off(false);
  const std::size_t n = 1000;
  Var y = dropout(constant(Array({n, n}, 1.0)), 0.5, rng, true);
  std::size_t zeros = 0;
  double total = 0.0;
  for (double v : y.value().vec()) {
    zeros += v == 0.0;
    total += v;
    CHECK((v == 0.0 || v == 2.0));
  }
  const double frac = static_cast<double>(zeros) / static_cast<double>(n * n);
  CHECK(frac >= 0.498);
  CHECK(frac <= 0.502);
  CHECK(std::abs(total / static_cast<double>(n * n) - 1.0) < 0.005);

  DeterministicGuard on(true);
  CHECK(dropout(constant(x), 0.5, rng, true).value() == x);
}

TEST_CASE("grad_check") {
  Rng rng(7);
  ParamTensor w("w", random_array(3, 2, rng));
  ParamTensor b("b", random_array(1, 2, rng));
  const Array x = random_array(4, 3, rng);
  std::vector<ParamTensor*> ptrs{&w, &b};
  CHECK(grad_check([&] { return sum(linear(constant(x), parameter(w), parameter(b))); }, ptrs).max_rel_error < 1e-8);

  auto c = grad_check([&] { return constant(Array::scalar(4.0)); }, ptrs);
  CHECK(c.max_rel_error == 0.0);
  CHECK(w.grad == Array(w.value.shape()));

  int calls = 0;
  CHECK_THROWS(grad_check([&] { return constant(Array::scalar(static_cast<double>(++calls))); }, ptrs));

  // Every differentiable op on random inputs.
  ParamTensor a("a", random_array(3, 4, rng));
  ParamTensor m("m", random_array(4, 3, rng));
  ParamTensor pos("pos", random_array(3, 4, rng));
  for (auto& v : pos.value.vec()) v = std::abs(v) + 0.5;
  std::vector<ParamTensor*> all{&a, &m, &pos};
  const std::vector<std::pair<const char*, std::function<Var()>>> cases = {
      {"add/sub/mul/div", [&] { return sum(div(mul(sub(parameter(a), parameter(pos)), add(parameter(a), parameter(pos))), parameter(pos))); }},
      {"exp/log", [&] { return sum(add(exp(scale(parameter(a), 0.3)), log(parameter(pos)))); }},
      {"sigmoid/softplus/gelu", [&] { return sum(mul(sigmoid(parameter(a)), add(softplus(parameter(a)), gelu(parameter(pos))))); }},
      {"normal_cdf", [&] { return sum(normal_cdf(parameter(a))); }},
      {"matmul", [&] { return sum(square(matmul(parameter(a), parameter(m)))); }},
      {"matmul_nt", [&] { return sum(square(matmul_nt(parameter(a), parameter(pos)))); }},
      {"softmax", [&] { return sum(mul(softmax(parameter(a)), parameter(pos))); }},
      {"softmax axis 0", [&] { return sum(mul(softmax(parameter(a), 0), parameter(pos))); }},
      {"logsumexp", [&] { return sum(square(logsumexp_cols(parameter(a)))); }},
      {"layer_norm", [&] {
         return sum(mul(layer_norm(parameter(a), slice_rows(parameter(pos), 0, 1), slice_rows(parameter(a), 1, 2)),
                        parameter(pos)));
       }},
      {"concat/slice", [&] {
         return sum(square(concat_cols({slice_cols(parameter(a), 1, 3), transpose(slice_rows(parameter(m), 0, 2))})));
       }},
      {"take/scatter/gather", [&] {
         Var t = take_rows(parameter(a), {2, 0, 2});
         return add(sum(square(scatter_rows(t, {1, 3, 0}, 5))), sum(gather(parameter(pos), {0, 5, 11})));
       }},
      {"cosine", [&] { return sum(cosine_matrix(parameter(a), parameter(pos))); }},
      {"keep_topk+softmax", [&] { return sum(mul(softmax(keep_topk_rows(parameter(a), 2)), parameter(pos))); }},
      {"reductions", [&] { return add(sum(square(sum_rows(parameter(a)))), sum(square(sum_cols(parameter(pos))))); }},
      {"mean/neg/add_scalar", [&] { return mean(square(neg(add_scalar(parameter(a), 2.0)))); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(grad_check(fn, all).max_rel_error < 1e-6);
  }
}

TEST_CASE("gradients accumulate until zeroed") {
  ParamTensor w("w", Array::row({2.0}));
  backward(square(parameter(w)));
  backward(square(parameter(w)));
  CHECK(w.grad[0] == 8.0);
  w.zero_grad();
  CHECK(w.grad[0] == 0.0);
}

TEST_CASE("no-grad guard builds no graph") {
  ParamTensor w("w", Array::row({1.0, 2.0}));
  NoGradGuard g;
  Var y = sum(square(parameter(w)));
  CHECK(!y.requires_grad());
}

TEST_CASE("rng streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  Rng f1 = c.fork(1), f2 = c.fork(2);
  CHECK(f1.next_u64() != f2.next_u64());
  Rng u(9);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}
