#include <doctest.h>

#include <cmath>
#include <vector>

#include "ovdlab/autograd.hpp"
#include "ovdlab/nn.hpp"
#include "support/gradcheck.hpp"

using namespace ovdlab;
using ovdlab::testing::gradcheck;

namespace {

Matrix random_matrix(Rng& rng, int r, int c, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.values()) v = rng.normal(0.0, scale);
  return m;
}

// Contract a matrix-valued op output to a scalar with fixed random weights so
// every output element contributes a distinct gradient.
ag::Var contract(const ag::Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return ag::sum(ag::mul(y, ag::Var::constant(random_matrix(rng, y.rows(), y.cols()))));
}

void expect_clean(const ovdlab::testing::GradCheckReport& rep) {
  INFO("worst: " << rep.worst_where << " rel=" << rep.worst_rel);
  CHECK(rep.checked > 0);
  CHECK(rep.failed == 0);
}

}  // namespace

TEST_CASE("matmul kernel accumulates in index order independent of shape") {
  Rng rng(1);
  auto a = random_matrix(rng, 5, 7);
  auto b = random_matrix(rng, 7, 3);
  auto full = matmul(a, b);
  for (int i = 0; i < 5; ++i) {
    Matrix row(1, 7);
    for (int k = 0; k < 7; ++k) row(0, k) = a(i, k);
    auto single = matmul(row, b);
    for (int j = 0; j < 3; ++j) CHECK(single(0, j) == full(i, j));
  }
}

TEST_CASE("elementwise and linear ops match finite differences") {
  Rng rng(3);
  auto a = ag::Var::leaf(random_matrix(rng, 3, 4), true);
  auto b = ag::Var::leaf(random_matrix(rng, 3, 4), true);
  auto w = ag::Var::leaf(random_matrix(rng, 4, 2), true);
  auto row = ag::Var::leaf(random_matrix(rng, 1, 4), true);
  auto s = ag::Var::leaf(Matrix(1, 1, 0.7), true);
  auto pos = ag::Var::leaf(random_matrix(rng, 3, 4), true);
  for (auto& v : pos.mutable_value().values()) v = 1.5 + std::fabs(v);

  std::vector<ovdlab::testing::GradTarget> all = {{"a", a}, {"b", b}, {"w", w}, {"row", row}, {"s", s}, {"pos", pos}};

  SUBCASE("matmul") { expect_clean(gradcheck([&] { return contract(ag::matmul(a, w), 11); }, all)); }
  SUBCASE("transpose") { expect_clean(gradcheck([&] { return contract(ag::transpose(a), 12); }, all)); }
  SUBCASE("add sub mul div") {
    expect_clean(gradcheck([&] { return contract(ag::div(ag::mul(a + b, a - b), pos), 13); }, all));
  }
  SUBCASE("add_row scale scale_by add_scalar neg") {
    expect_clean(gradcheck(
        [&] { return contract(ag::neg(ag::add_scalar(ag::scale_by(ag::scale(ag::add_row(a, row), 1.3), s), 0.2)), 14); },
        all));
  }
  SUBCASE("abs exp relu gelu sigmoid") {
    // Nudge values off the kinks of abs/relu.
    for (auto& v : a.mutable_value().values())
      if (std::fabs(v) < 0.05) v += 0.2;
    expect_clean(gradcheck(
        [&] {
          auto y = ag::abs(a) + ag::exp(b) + ag::relu(a) + ag::gelu(b) + ag::sigmoid(a);
          return contract(y, 15);
        },
        all));
  }
  SUBCASE("minimum maximum") {
    expect_clean(gradcheck([&] { return contract(ag::minimum(a, b) + ag::maximum(a, b) * b, 16); }, all));
  }
  SUBCASE("reductions") {
    expect_clean(gradcheck(
        [&] { return ag::sum(a) + ag::mean(ag::mul(b, b)) + contract(ag::mean_rows(ag::mul(a, b)), 17); }, all));
  }
  SUBCASE("concat slice gather add_at_row") {
    expect_clean(gradcheck(
        [&] {
          std::vector<ag::Var> rows = {a, b};
          std::vector<ag::Var> cols = {a, b};
          auto r = ag::concat_rows(rows);
          auto c = ag::concat_cols(cols);
          std::vector<int> idx = {5, 0, 5, 2};
          auto g = ag::gather_rows(r, idx);
          auto at = ag::add_at_row(g, 1, ag::slice_rows(b, 2, 1));
          return contract(at, 18) + contract(ag::slice_cols(c, 3, 3), 19);
        },
        all));
  }
}

TEST_CASE("fused ops match finite differences") {
  Rng rng(5);
  auto x = ag::Var::leaf(random_matrix(rng, 6, 5), true);
  auto gain = ag::Var::leaf(random_matrix(rng, 1, 5), true);
  auto bias = ag::Var::leaf(random_matrix(rng, 1, 5), true);
  std::vector<ovdlab::testing::GradTarget> all = {{"x", x}, {"gain", gain}, {"bias", bias}};

  SUBCASE("softmax") {
    expect_clean(gradcheck([&] { return contract(ag::softmax_rows(x, false), 21); }, all));
    expect_clean(gradcheck([&] { return contract(ag::softmax_rows(x, true), 22); }, all));
  }
  SUBCASE("layer_norm") { expect_clean(gradcheck([&] { return contract(ag::layer_norm(x, gain, bias), 23); }, all)); }
  SUBCASE("l2 normalize") { expect_clean(gradcheck([&] { return contract(ag::l2_normalize_rows(x), 24); }, all)); }
  SUBCASE("bilinear resize up and down") {
    expect_clean(gradcheck([&] { return contract(ag::resize_bilinear(x, 2, 3, 5, 4), 25); }, all));
    expect_clean(gradcheck([&] { return contract(ag::resize_bilinear(x, 3, 2, 1, 1), 26); }, all));
  }
  SUBCASE("masked cross entropy") {
    std::vector<int> targets = {1, 4, 0, 2, 3, 3};
    std::vector<bool> mask_v = {true, false, true, true, false, true};
    bool mask[6];
    for (int i = 0; i < 6; ++i) mask[i] = mask_v[i];
    expect_clean(gradcheck([&] { return ag::masked_cross_entropy(x, targets, mask); }, all));
  }
  SUBCASE("sigmoid focal loss") {
    Matrix t(6, 5);
    t(0, 1) = 1;
    t(3, 4) = 1;
    t(5, 0) = 1;
    expect_clean(gradcheck([&] { return ag::sigmoid_focal_loss(x, t, 0.25, 2.0, 3.0); }, all));
  }
}

TEST_CASE("causal softmax leaves future positions at zero") {
  auto x = ag::Var::constant(Matrix(3, 3, 1.0));
  auto y = ag::softmax_rows(x, true).value();
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 0) == 1.0);
  CHECK(y(1, 0) == doctest::Approx(0.5));
  CHECK(y(2, 2) == doctest::Approx(1.0 / 3));
}

TEST_CASE("bilinear resize keeps a constant map exactly constant") {
  Matrix m(6, 2);
  for (int i = 0; i < 6; ++i) {
    m(i, 0) = 0.1234567;
    m(i, 1) = -3.3;
  }
  auto y = ag::resize_bilinear(ag::Var::constant(m), 2, 3, 7, 5).value();
  for (int i = 0; i < y.rows(); ++i) {
    CHECK(y(i, 0) == 0.1234567);
    CHECK(y(i, 1) == -3.3);
  }
}

TEST_CASE("masked cross entropy with an empty mask is a constant zero") {
  auto logits = ag::Var::leaf(Matrix(2, 3, 0.5), true);
  std::vector<int> t = {0, 1};
  bool mask[2] = {false, false};
  auto l = ag::masked_cross_entropy(logits, t, mask);
  CHECK(l.item() == 0.0);
  CHECK_FALSE(l.requires_grad());
}

TEST_CASE("frozen leaves receive no gradient buffers") {
  Rng rng(9);
  auto x = ag::Var::leaf(random_matrix(rng, 2, 3), true);
  auto g = ag::Var::leaf(Matrix(1, 3, 1.0), false);
  auto b = ag::Var::leaf(Matrix(1, 3, 0.0), false);
  ag::backward(contract(ag::layer_norm(x, g, b), 3));
  CHECK(x.has_grad());
  CHECK_FALSE(g.has_grad());
  CHECK_FALSE(b.has_grad());
}

TEST_CASE("no-grad guard records no graph") {
  auto x = ag::Var::leaf(Matrix(1, 1, 2.0), true);
  ag::Var y;
  {
    ag::NoGradGuard ng;
    y = ag::mul(x, x);
  }
  CHECK_FALSE(y.requires_grad());
  auto z = ag::mul(x, x);
  CHECK(z.requires_grad());
}

TEST_CASE("parameter streams are keyed by name") {
  ParamStore a(42);
  ParamStore b(42);
  a.add_normal("first", "g", 2, 2, 1.0);
  auto wa = a.add_normal("second", "g", 3, 3, 1.0);
  auto wb = b.add_normal("second", "g", 3, 3, 1.0);
  CHECK(wa.value().bitwise_equal(wb.value()));
  auto z = b.add_normal("zero", "g", 2, 2, 0.0);
  for (double v : z.value().values()) CHECK(v == 0.0);
}
