#include "bardip/nn/adam.hpp"
#include "bardip/nn/layers.hpp"
#include "bardip/unet.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace bardip;
using namespace bardip::nn;
using test::gradient_error;
using test::probe;
using test::random_tensor;

namespace {
constexpr double kTol = 1e-4;
}

TEST_CASE("tensor bookkeeping") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS(Tensor({2, 2}, Buffer(3)));
  CHECK_THROWS(add(Tensor({2}), Tensor({3})));
  CHECK_THROWS(Tensor({2}).item());
}

TEST_CASE("linear with identity weights is the identity") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 4}, rng, false);
  Tensor w({4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    w.values()[i * 4 + i] = 1.0;
  }
  const Tensor y = linear(x, w, Tensor({4}));
  CHECK(std::equal(y.values().begin(), y.values().end(), x.values().begin()));
}

TEST_CASE("mse of a tensor with itself is zero with zero gradient") {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({5}, rng);
  Tensor loss = mse_loss(x, x.detach());
  CHECK(loss.item() == 0.0);
  loss.backward();
  for (double g : x.grad()) {
    CHECK(g == 0.0);
  }
}

TEST_CASE("gradients accumulate through shared subexpressions") {
  Tensor x({1}, Buffer{3.0}, true);
  Tensor y = add(mul(x, x), x); // x^2 + x
  y = sum(y);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("no-grad guard skips graph recording") {
  Tensor x({2}, 1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(scale(x, 2.0).requires_grad());
  }
  CHECK(scale(x, 2.0).requires_grad());
}

TEST_CASE("elementwise gradients") {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  CHECK(gradient_error([&] { return probe(add(a, b)); }, {a, b}) < kTol);
  CHECK(gradient_error([&] { return probe(sub(a, b)); }, {a, b}) < kTol);
  CHECK(gradient_error([&] { return probe(mul(a, b)); }, {a, b}) < kTol);
  CHECK(gradient_error([&] { return probe(scale(a, -2.5)); }, {a}) < kTol);
  CHECK(gradient_error([&] { return sum(a); }, {a}) < kTol);
  CHECK(gradient_error([&] { return probe(relu(a)); }, {a}) < kTol);
  CHECK(gradient_error([&] { return probe(leaky_relu(a)); }, {a}) < kTol);
  CHECK(gradient_error([&] { return probe(sigmoid(a)); }, {a}) < kTol);
  CHECK(gradient_error([&] { return probe(nn::tanh(a)); }, {a}) < kTol);
  CHECK(gradient_error([&] { return probe(reshape(a, {2, 6})); }, {a}) < kTol);
  CHECK(gradient_error([&] { return probe(slice_columns(a, 1, 2)); }, {a}) < kTol);
  CHECK(gradient_error([&] { return probe(transpose(a)); }, {a}) < kTol);
  CHECK(gradient_error([&] { return probe(l2_normalize_rows(a)); }, {a}) < kTol);
}

TEST_CASE("linear layer gradient") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({5, 3}, rng);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  CHECK(gradient_error([&] { return probe(linear(x, w, b)); }, {x, w, b}) < kTol);
  CHECK(gradient_error([&] { return probe(linear(x, w, Tensor())); }, {x, w}) < kTol);
  CHECK_THROWS_AS(linear(x, random_tensor({4, 2}, rng), b), DimensionError);
}

TEST_CASE("convolution gradients") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 3, 6, 5}, rng);
  Tensor b = random_tensor({4}, rng);
  for (auto [k, stride, pad] : {std::tuple<std::size_t, std::size_t, std::size_t>{3, 1, 1}, {3, 2, 1}, {1, 1, 0},
                                {2, 2, 0}, {3, 1, 0}}) {
    Tensor w = random_tensor({4, 3, k, k}, rng);
    CAPTURE(k);
    CAPTURE(stride);
    CHECK(gradient_error([&] { return probe(conv2d(x, w, b, stride, pad)); }, {x, w, b}) < kTol);
  }
  Tensor wt = random_tensor({3, 4, 2, 2}, rng);
  const Tensor yt = conv_transpose2d(x, wt, b, 2);
  CHECK(yt.shape() == Shape{2, 4, 12, 10});
  CHECK(gradient_error([&] { return probe(conv_transpose2d(x, wt, b, 2)); }, {x, wt, b}) < kTol);
  Tensor wt3 = random_tensor({3, 4, 3, 3}, rng);
  CHECK(gradient_error([&] { return probe(conv_transpose2d(x, wt3, b, 1)); }, {x, wt3, b}) < kTol);
  CHECK_THROWS_AS(conv2d(x, random_tensor({4, 2, 3, 3}, rng), b, 1, 1), DimensionError);
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({1, 3, 8, 8}, rng, false);
  const Tensor w = random_tensor({4, 3, 2, 2}, rng, false);
  const Tensor y = random_tensor({1, 4, 4, 4}, rng, false);
  const Tensor cx = conv2d(x, w, Tensor(), 2, 0);
  const Tensor ty = conv_transpose2d(y, w, Tensor(), 2);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    lhs += cx.values()[i] * y.values()[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    rhs += x.values()[i] * ty.values()[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("pooling, normalisation and reshaping gradients") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 3, 4, 6}, rng);
  Tensor y = random_tensor({2, 2, 4, 6}, rng);
  CHECK(gradient_error([&] { return probe(max_pool2d(x)); }, {x}) < kTol);
  CHECK(gradient_error([&] { return probe(upsample_nearest2d(x)); }, {x}) < kTol);
  CHECK(gradient_error([&] { return probe(instance_norm2d(x)); }, {x}) < kTol);
  CHECK(gradient_error([&] { return probe(concat_channels(x, y)); }, {x, y}) < kTol);
  CHECK(gradient_error([&] { return probe(pad2d(x, 2, 1)); }, {x}) < kTol);
  CHECK(gradient_error([&] { return probe(crop2d(x, 3, 5)); }, {x}) < kTol);
  CHECK_THROWS(max_pool2d(random_tensor({1, 1, 3, 4}, rng)));
  CHECK_THROWS(concat_channels(x, random_tensor({2, 2, 4, 5}, rng)));
}

TEST_CASE("loss gradients") {
  std::mt19937_64 rng(8);
  Tensor p = random_tensor({4, 3}, rng);
  Tensor t = random_tensor({4, 3}, rng);
  CHECK(gradient_error([&] { return mse_loss(p, t); }, {p, t}) < kTol);
  CHECK(gradient_error([&] { return mae_loss(p, t); }, {p, t}) < kTol);
  CHECK(gradient_error([&] { return sse_loss(p, t); }, {p, t}) < kTol);
  CHECK(gradient_error([&] { return sae_loss(p, t); }, {p, t}) < kTol);
}

TEST_CASE("MLP and U-Net gradients") {
  Rng rng(9);
  for (Activation a : {Activation::relu, Activation::leaky_relu, Activation::tanh, Activation::sigmoid}) {
    const Mlp mlp({4, 6, 5, 2}, a, rng);
    std::mt19937_64 g(10);
    Tensor x = random_tensor({3, 4}, g);
    auto inputs = tensors(mlp.parameters("mlp"));
    inputs.push_back(x);
    CHECK(gradient_error([&] { return probe(mlp.forward(x)); }, inputs) < kTol);
  }

  const Unet unet(UnetConfig{.levels = 2, .base_channels = 2, .in_channels = 2, .out_channels = 2}, rng);
  std::mt19937_64 g(11);
  Tensor x = random_tensor({1, 2, 5, 6}, g);
  const Tensor y = unet.forward(x);
  CHECK(y.shape() == Shape{1, 2, 5, 6});
  auto inputs = tensors(unet.parameters());
  inputs.push_back(x);
  CHECK(gradient_error([&] { return probe(unet.forward(x)); }, inputs) < kTol);
}

TEST_CASE("weight initialisation is seeded") {
  Rng a(5), b(5);
  const Mlp m1({3, 4, 2}, Activation::relu, a);
  const Mlp m2({3, 4, 2}, Activation::relu, b);
  const auto p1 = m1.parameters("m");
  const auto p2 = m2.parameters("m");
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(std::equal(p1[i].tensor.values().begin(), p1[i].tensor.values().end(), p2[i].tensor.values().begin()));
  }
  // Kaiming bound sqrt(6 / fan_in), zero bias.
  for (double w : p1[0].tensor.values()) {
    CHECK(std::abs(w) <= std::sqrt(6.0 / 3.0));
  }
  for (double v : p1[1].tensor.values()) {
    CHECK(v == 0.0);
  }
}

TEST_CASE("Adam recurrence by hand") {
  const AdamConfig cfg{.lr = 0.1};
  Tensor p({1}, Buffer{1.0}, true);
  Adam adam({p}, cfg);
  double m = 0.0, v = 0.0, want = 1.0;
  for (int t = 1; t <= 3; ++t) {
    adam.zero_grad();
    p.grad()[0] = 1.0;
    adam.step();
    m = 0.9 * m + 0.1;
    v = 0.999 * v + 0.001;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    want -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p.values()[0] == doctest::Approx(want).epsilon(1e-14));
  }
  // First update is -lr / (1 + eps).
  Tensor q({1}, Buffer{0.0}, true);
  Adam first({q}, cfg);
  q.grad()[0] = 1.0;
  first.step();
  CHECK(q.values()[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(AdamConfig{}.lr == 1e-4);
}

TEST_CASE("Adam edge cases") {
  Tensor p({2}, Buffer{1.0, -2.0}, true);
  Adam adam({p});
  p.grad()[0] = 0.0;
  adam.step();
  CHECK(adam.steps() == 1);
  CHECK(p.values()[0] == 1.0);
  CHECK(p.values()[1] == -2.0);

  p.grad()[1] = std::nan("");
  CHECK_THROWS_AS(adam.step(), TrainingDiverged);
  CHECK(p.values()[1] == -2.0);
  CHECK_THROWS(Adam({p}, AdamConfig{.lr = 0.0}));
  CHECK_THROWS(Adam({p}, AdamConfig{.beta1 = 1.0}));
}

TEST_CASE("checkpoint round trip") {
  const auto path = std::filesystem::temp_directory_path() / "bardip_ckpt.bin";
  Rng a(1), b(2);
  const Mlp m1({3, 4, 2}, Activation::tanh, a);
  const Mlp m2({3, 4, 2}, Activation::tanh, b);
  save_checkpoint(path, m1.parameters("m"));
  auto params = m2.parameters("m");
  load_checkpoint(path, params);
  std::mt19937_64 g(3);
  const Tensor x = random_tensor({2, 3}, g, false);
  const Tensor y1 = m1.forward(x), y2 = m2.forward(x);
  CHECK(std::equal(y1.values().begin(), y1.values().end(), y2.values().begin()));

  const Mlp wrong({3, 5, 2}, Activation::tanh, b);
  auto wrong_params = wrong.parameters("m");
  CHECK_THROWS(load_checkpoint(path, wrong_params));
  std::filesystem::remove(path);
}
