#include <doctest.h>

#include <array>
#include <stdexcept>

#include "dermnet/autodiff.hpp"
#include "dermnet/rng.hpp"
#include "dermnet/tensor.hpp"
#include "support/testutil.hpp"

using dermnet::Rng;
using dermnet::Tape;
using dermnet::Tensor;

TEST_CASE("sum_all gradient is ones") {
  Rng rng(1);
  Tensor x = testutil::random_tensor(rng, {2, 3}, -1.0f, 1.0f);
  Tape tape;
  tape.watch(x);
  Tensor loss = sum_all(x, &tape);
  tape.backward(loss);
  REQUIRE(x.has_grad());
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("product rule and chain rule") {
  Tensor x({3}, {1, -2, 3});
  Tensor y({3}, {4, 5, -6});
  Tape tape;
  tape.watch(x);
  tape.watch(y);
  // loss = sum(3 * (x*y + x)) so dx = 3(y+1), dy = 3x.
  Tensor loss = sum_all(scale(add(mul(x, y, &tape), x, &tape), 3.0f, &tape), &tape);
  CHECK(loss.item() == doctest::Approx(3.0 * ((4 - 10 - 18) + (1 - 2 + 3))));
  tape.backward(loss);
  const std::array<float, 3> want_x{15, 18, -15};
  const std::array<float, 3> want_y{3, -6, 9};
  for (int i = 0; i < 3; ++i) {
    CHECK(x.grad()[static_cast<size_t>(i)] == want_x[static_cast<size_t>(i)]);
    CHECK(y.grad()[static_cast<size_t>(i)] == want_y[static_cast<size_t>(i)]);
  }
}

TEST_CASE("shared inputs accumulate instead of overwrite") {
  Tensor x({2}, {3, -1});
  Tape tape;
  tape.watch(x);
  // d/dx sum(x*x) = 2x; x feeds the same node twice.
  Tensor loss = sum_all(mul(x, x, &tape), &tape);
  tape.backward(loss);
  CHECK(x.grad()[0] == 6.0f);
  CHECK(x.grad()[1] == -2.0f);

  Tensor z({2}, {2, 5});
  Tape tape2;
  tape2.watch(z);
  Tensor loss2 = sum_all(add(z, z, &tape2), &tape2);
  tape2.backward(loss2);
  CHECK(z.grad()[0] == 2.0f);
  CHECK(z.grad()[1] == 2.0f);
}

TEST_CASE("gradients are linear in the loss") {
  Rng rng(7);
  Tensor base = testutil::random_tensor(rng, {4}, -1.0f, 1.0f);
  Tensor c = testutil::random_tensor(rng, {4}, -1.0f, 1.0f);
  const float a = 1.7f, b = -0.6f;

  auto grad_of_loss = [&](float fa, float fb) {
    Tensor x = base;
    Tape tape;
    tape.watch(x);
    Tensor f = sum_all(mul(x, x, &tape), &tape);
    Tensor g = sum_all(mul(x, c, &tape), &tape);
    Tensor loss = add(scale(f, fa, &tape), scale(g, fb, &tape), &tape);
    tape.backward(loss);
    return x.grad();
  };

  const std::vector<float> combined = grad_of_loss(a, b);
  const std::vector<float> just_f = grad_of_loss(1.0f, 0.0f);
  const std::vector<float> just_g = grad_of_loss(0.0f, 1.0f);
  for (size_t i = 0; i < combined.size(); ++i) {
    CHECK(combined[i] ==
          doctest::Approx(a * just_f[i] + b * just_g[i]).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("watched tensor unused by the loss gets zero gradient") {
  Tensor x({2}, {1, 2});
  Tensor unused({3}, {4, 5, 6});
  Tape tape;
  tape.watch(x);
  tape.watch(unused);
  Tensor loss = sum_all(x, &tape);
  auto grads = tape.backward(loss);
  REQUIRE(unused.has_grad());
  for (float g : unused.grad()) CHECK(g == 0.0f);
  CHECK(grads.size() == 2);
}

TEST_CASE("a tape serves exactly one backward pass") {
  Tensor x({2}, {1, 2});
  Tape tape;
  tape.watch(x);
  Tensor loss = sum_all(x, &tape);
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("ops do not record untracked inputs") {
  Tensor a({2}, {1, 2});
  Tensor b({2}, {3, 4});
  Tensor x({2}, {5, 6});
  Tape tape;
  tape.watch(x);
  Tensor untracked = mul(a, b, &tape);
  CHECK_FALSE(tape.tracks(untracked));
  Tensor tracked = mul(x, b, &tape);
  CHECK(tape.tracks(tracked));
}

TEST_CASE("grad_of exposes intermediate gradients") {
  Tensor x({3}, {1, 2, 3});
  Tape tape;
  tape.watch(x);
  Tensor mid = mul(x, x, &tape);
  Tensor loss = sum_all(scale(mid, 2.0f, &tape), &tape);
  tape.backward(loss);
  Tensor g = tape.grad_of(mid);
  REQUIRE(g.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(g[i] == 2.0f);
}

TEST_CASE("broadcast add routes gradients to the channel vector") {
  Tensor rows({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor bias({3}, {0, 0, 0});
  Tape tape;
  tape.watch(bias);
  Tensor loss = sum_all(add(rows, bias, &tape), &tape);
  tape.backward(loss);
  for (float g : bias.grad()) CHECK(g == 2.0f);

  Tensor x4({1, 2, 2, 2}, {1, 1, 1, 1, 2, 2, 2, 2});
  Tensor gamma({2}, {3, 5});
  Tape tape2;
  tape2.watch(gamma);
  Tensor loss2 = sum_all(mul(x4, gamma, &tape2), &tape2);
  tape2.backward(loss2);
  CHECK(gamma.grad()[0] == 4.0f);
  CHECK(gamma.grad()[1] == 8.0f);
}

TEST_CASE("matmul and reduce gradients match finite differences") {
  Rng rng(21);
  Tensor a = testutil::random_tensor(rng, {3, 4}, -1.0f, 1.0f);
  Tensor b = testutil::random_tensor(rng, {4, 2}, -1.0f, 1.0f);
  Tensor r = testutil::random_tensor(rng, {3, 2}, 0.5f, 1.5f);

  Tape tape;
  tape.watch(a);
  tape.watch(b);
  Tensor loss = sum_all(mul(matmul(a, b, &tape), r, &tape), &tape);
  tape.backward(loss);

  const std::vector<double> a0 = testutil::widen(a.data());
  const std::vector<double> b0 = testutil::widen(b.data());
  auto objective_a = [&](std::span<const double> v) {
    double total = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += v[static_cast<size_t>(i * 4 + k)] * b0[static_cast<size_t>(k * 2 + j)];
        total += acc * r[i * 2 + j];
      }
    }
    return total;
  };
  auto check_a = testutil::check_gradient(a.grad(), objective_a, a0);
  CHECK(check_a.skipped == 0);
  CHECK(check_a.max_rel_err < 1e-4);

  Tensor x = testutil::random_tensor(rng, {2, 3, 4, 4}, -1.0f, 1.0f);
  Tape tape2;
  tape2.watch(x);
  Tensor pooled = reduce_mean(x, std::array<int, 2>{2, 3}, false, &tape2);
  Tensor loss2 = sum_all(pooled, &tape2);
  tape2.backward(loss2);
  for (float g : x.grad()) CHECK(g == doctest::Approx(1.0 / 16.0));
}
