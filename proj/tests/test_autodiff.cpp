#include <doctest.h>

#include <cmath>

#include "dcnt/errors.hpp"
#include "dcnt/gradcheck.hpp"
#include "dcnt/ops.hpp"
#include "dcnt/optim.hpp"
#include "helpers.hpp"

using namespace dcnt;
using namespace dcnt::ad;

TEST_CASE("forward examples") {
  const auto s = softmax(Tensor::from({2}, {0.0, 0.0}), 0);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));

  std::mt19937_64 rng(1);
  const auto x = testing::random_tensor({2, 3}, rng);
  const auto y = matmul(Tensor::from({2, 2}, {1, 0, 0, 1}), x);
  for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == x[i]);

  const auto m = testing::random_tensor({2, 4, 5}, rng);
  const auto w = Tensor::from({2, 2, 1, 1}, {2, 0, 0, 2});
  const auto c = conv2d(m, w, Tensor{}, {});
  for (std::size_t i = 0; i < m.numel(); ++i) CHECK(c[i] == doctest::Approx(2.0 * m[i]));
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(2);
  const auto x = testing::random_tensor({3, 7, 6}, rng);
  const auto w = testing::random_tensor({4, 3, 3, 2}, rng);
  const auto b = testing::random_tensor({4}, rng);
  const Conv2dParams p{2, 1, 1, 1};
  const auto y = conv2d(x, w, b, p);
  const std::size_t oh = (7 + 2 - 3) / 2 + 1, ow = (6 + 2 - 2) / 2 + 1;
  REQUIRE(y.shape() == Shape{4, oh, ow});
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c) {
        double s = b[o];
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t kh = 0; kh < 3; ++kh)
            for (std::size_t kw = 0; kw < 2; ++kw) {
              const long yy = static_cast<long>(r * 2 + kh) - 1, xx = static_cast<long>(c * 2 + kw) - 1;
              if (yy < 0 || xx < 0 || yy >= 7 || xx >= 6) continue;
              s += w[((o * 3 + i) * 3 + kh) * 2 + kw] * x[(i * 7 + static_cast<std::size_t>(yy)) * 6 + static_cast<std::size_t>(xx)];
            }
        CHECK(y[(o * oh + r) * ow + c] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("bilinear upsampling keeps constants and interpolates") {
  const auto c = bilinear_upsample(Tensor::full({1, 2, 3}, 1.25), 4);
  REQUIRE(c.shape() == Shape{1, 8, 12});
  for (double v : c.values()) CHECK(v == 1.25);
  // Half-pixel centres: output x maps to source (x + 0.5) / 4 - 0.5, clamped.
  const auto r = bilinear_upsample(Tensor::from({1, 1, 2}, {0.0, 8.0}), 4);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == doctest::Approx(1.0));
  CHECK(r[3] == doctest::Approx(3.0));
  CHECK(r[5] == doctest::Approx(7.0));
  CHECK(r[7] == 8.0);
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(3);
  auto x = testing::random_tensor({5}, rng, -1, 1, true);
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i]));

  auto y = testing::random_tensor({8}, rng, -1, 1, true);
  backward(mean(y));
  for (double g : y.grad()) CHECK(g == doctest::Approx(1.0 / 8));
}

TEST_CASE("leaf gradients accumulate and reset on request") {
  auto x = Tensor::from({1}, {3.0}, true);
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 2.0)));
  CHECK(x.grad()[0] == 4.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("backward contract errors") {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);
  NoGradGuard guard;
  const auto off_tape = sum(x);
  CHECK_THROWS_AS(backward(off_tape), ContractError);
}

TEST_CASE("shape errors name both shapes") {
  try {
    add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2}));
    FAIL("expected a shape error");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(3,2)") != std::string::npos);
  }
}

TEST_CASE("non-finite values are traced to their op") {
  auto x = Tensor::from({2}, {0.0, 1.0}, true);
  const auto y = sum(softmax(scale(x, 1e308 * 10.0), 0));
  CHECK_FALSE(find_nonfinite(y).empty());
}

TEST_CASE("composite conv -> relu -> softmax -> CE passes grad check") {
  std::mt19937_64 rng(4);
  auto x = testing::random_tensor({2, 5, 5}, rng, -1, 1, true);
  auto w = testing::random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
  auto b = testing::random_tensor({3}, rng, -1, 1, true);
  std::vector<std::uint16_t> labels(25);
  for (std::size_t i = 0; i < 25; ++i) labels[i] = static_cast<std::uint16_t>(i % 4);
  const auto report = grad_check(
      [&] {
        const auto logits = relu(conv2d(x, w, b, {1, 1, 1, 1}));
        return softmax_cross_entropy(logits, labels);
      },
      {x, w, b});
  CHECK(report.ok(1e-4));
}

TEST_CASE("grad check on a quadratic is near exact") {
  std::mt19937_64 rng(5);
  auto a = testing::random_tensor({4, 4}, rng);
  auto x = testing::random_tensor({4, 1}, rng, -1, 1, true);
  const auto report = grad_check([&] { return sum(mul(x, matmul(a, x))); }, {x});
  CHECK(report.max_rel_error < 1e-8);
}

TEST_CASE("maxpool tie is excluded as a kink") {
  auto x = Tensor::from({1, 2, 2}, {1.0, 1.0, 0.0, -1.0}, true);
  const auto report = grad_check([&] { return sum(maxpool2d(x, 2)); }, {x});
  CHECK(report.excluded >= 2);
  CHECK(report.ok(1e-4));
}

TEST_CASE("grad check rejects out-of-range eps") {
  auto x = Tensor::from({1}, {1.0}, true);
  GradCheckOptions o;
  o.eps = 1e-2;
  CHECK_THROWS_AS(grad_check([&] { return sum(x); }, {x}, o), ContractError);
}

TEST_CASE("sgd with momentum") {
  auto make = [](double w0) {
    ParameterList p;
    p.emplace_back("w", Tensor::from({1}, {w0}, true), ParamGroup::backbone);
    return p;
  };
  SUBCASE("plain step") {
    auto p = make(1.0);
    p[0].tensor().mutable_grad()[0] = 0.5;
    SgdMomentum(0.0, 0.0).step(p, 0.1, 1.0);
    CHECK(p[0].tensor()[0] == doctest::Approx(0.95));
  }
  SUBCASE("two steps against a scalar simulation") {
    const double lr = 0.001, m = 0.9, wd = 0.0001, g = 0.7;
    auto p = make(2.0);
    SgdMomentum opt(m, wd);
    double w = 2.0, v = 0.0;
    for (int k = 0; k < 2; ++k) {
      p[0].tensor().mutable_grad()[0] = g;
      opt.step(p, lr, 10 * lr);
      v = m * v + g + wd * w;
      w -= lr * v;
      CHECK(p[0].tensor()[0] == doctest::Approx(w).epsilon(1e-14));
    }
    // Without decay the two updates total lr * (1 + 1.9) * g.
    auto q = make(0.0);
    SgdMomentum plain(m, 0.0);
    for (int k = 0; k < 2; ++k) {
      q[0].tensor().mutable_grad()[0] = g;
      plain.step(q, lr, lr);
    }
    CHECK(q[0].tensor()[0] == doctest::Approx(-lr * 2.9 * g));
  }
  SUBCASE("head group uses its own rate") {
    ParameterList p;
    p.emplace_back("h", Tensor::from({1}, {0.0}, true), ParamGroup::head);
    p[0].tensor().mutable_grad()[0] = 1.0;
    SgdMomentum(0.0, 0.0).step(p, 0.001, 0.01);
    CHECK(p[0].tensor()[0] == doctest::Approx(-0.01));
  }
}

TEST_CASE("poly schedule") {
  CHECK(poly_lr(0.001, 0, 100) == 0.001);
  CHECK(poly_lr(0.001, 100, 100) == 0.0);
  CHECK(poly_lr(0.001, 50, 100) == doctest::Approx(0.001 * std::pow(0.5, 0.9)));
  CHECK(poly_lr(0.001, 50, 100) == doctest::Approx(5.359e-4).epsilon(1e-3));
  double prev = 1.0;
  for (std::uint64_t i = 0; i <= 37; ++i) {
    const double lr = poly_lr(0.01, i, 37);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(poly_lr(0.001, 0, 0), DomainError);
  CHECK_THROWS_AS(poly_lr(0.001, 5, 4), DomainError);
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir("ckpt");
  std::mt19937_64 rng(6);
  ParameterList a;
  a.emplace_back("x.weight", testing::random_tensor({2, 3}, rng, -1, 1, true), ParamGroup::backbone);
  a.emplace_back("x.bias", testing::random_tensor({3}, rng, -1, 1, true), ParamGroup::head);
  save_checkpoint(a, dir / "c.ckpt");
  ParameterList b;
  b.emplace_back("x.weight", Tensor::zeros({2, 3}, true), ParamGroup::backbone);
  b.emplace_back("x.bias", Tensor::zeros({3}, true), ParamGroup::head);
  load_checkpoint(b, dir / "c.ckpt");
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(b[0].tensor()[i] == static_cast<double>(static_cast<float>(a[0].tensor()[i])));

  ParameterList wrong;
  wrong.emplace_back("x.weight", Tensor::zeros({3, 2}, true), ParamGroup::backbone);
  wrong.emplace_back("x.bias", Tensor::zeros({3}, true), ParamGroup::head);
  CHECK_THROWS(load_checkpoint(wrong, dir / "c.ckpt"));
}
