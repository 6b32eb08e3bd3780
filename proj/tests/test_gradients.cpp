#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <depthup/gradcheck.hpp>
#include <depthup/loss.hpp>
#include <depthup/model.hpp>
#include <depthup/ops.hpp>

using namespace depthup;

// Central finite differences (step 1e-5, double precision) against the
// analytic backward of every layer type, probed through J = sum(R .* f(x)).

namespace {

constexpr double kTol = 1e-5;

struct ConvCase {
  Tensor<double> in, k;
  std::vector<double> bias;
  Tensor<double> probe;
  int stride;
  Padding pad;

  double eval() const { return probe_sum(conv2d(in, k, bias, stride, pad), probe); }
};

}  // namespace

TEST_CASE("linear 1x1 convolution gradient is exact to machine precision") {
  Rng rng(101);
  ConvCase c{random_uniform<double>(1, 3, 3, 1, rng), random_uniform<double>(1, 1, 1, 1, rng),
             {0.3}, {}, 1, Padding::same};
  c.probe = random_uniform<double>(1, 3, 3, 1, rng);
  ConvGrads<double> g = conv2d_backward(c.in, c.k, c.probe, c.stride, c.pad);
  const double err = grad_check_tensor(c.in, [&] { return c.eval(); }, g.input);
  CHECK(err < 1e-7);  // pure finite-difference roundoff; the derivative is exact
}

TEST_CASE("conv2d gradients pass finite-difference checks") {
  Rng rng(103);
  ConvCase c{random_uniform<double>(1, 6, 6, 3, rng), random_uniform<double>(3, 3, 3, 4, rng),
             {0.1, -0.2, 0.05, 0.4}, {}, 1, Padding::same};
  c.probe = random_uniform<double>(1, 6, 6, 4, rng);
  ConvGrads<double> g = conv2d_backward(c.in, c.k, c.probe, c.stride, c.pad);

  CHECK(grad_check_tensor(c.in, [&] { return c.eval(); }, g.input) < kTol);
  CHECK(grad_check_tensor(c.k, [&] { return c.eval(); }, g.kernel) < kTol);
  CHECK(grad_check_span(std::span<double>(c.bias), [&] { return c.eval(); },
                        std::span<const double>(g.bias)) < kTol);
}

TEST_CASE("conv2d strided valid-padding gradients pass") {
  Rng rng(105);
  ConvCase c{random_uniform<double>(2, 6, 5, 2, rng), random_uniform<double>(3, 3, 2, 3, rng),
             {0.0, 0.1, -0.1}, {}, 2, Padding::valid};
  ConvGeom geom = conv_geometry(6, 5, 3, 3, 2, Padding::valid);
  c.probe = random_uniform<double>(2, geom.out_h, geom.out_w, 3, rng);
  ConvGrads<double> g = conv2d_backward(c.in, c.k, c.probe, c.stride, c.pad);
  CHECK(grad_check_tensor(c.in, [&] { return c.eval(); }, g.input) < kTol);
  CHECK(grad_check_tensor(c.k, [&] { return c.eval(); }, g.kernel) < kTol);
}

TEST_CASE("scalar conv chain rule: grad_input = w*g, grad_kernel = x*g") {
  Tensor<double> x(1, 1, 1, 1), w(1, 1, 1, 1), g(1, 1, 1, 1);
  x.data[0] = 1.7;
  w.data[0] = -0.6;
  g.data[0] = 2.5;
  ConvGrads<double> grads = conv2d_backward(x, w, g);
  CHECK(grads.input.data[0] == doctest::Approx(-0.6 * 2.5));
  CHECK(grads.kernel.data[0] == doctest::Approx(1.7 * 2.5));
  CHECK(grads.bias[0] == doctest::Approx(2.5));
}

TEST_CASE("zero grad_out produces zero gradients") {
  Rng rng(107);
  Tensor<double> in = random_uniform<double>(1, 4, 4, 2, rng);
  Tensor<double> k = random_uniform<double>(3, 3, 2, 2, rng);
  Tensor<double> zeros(1, 4, 4, 2);
  ConvGrads<double> g = conv2d_backward(in, k, zeros);
  for (double v : g.input.data) CHECK(v == 0.0);
  for (double v : g.kernel.data) CHECK(v == 0.0);
  for (double v : g.bias) CHECK(v == 0.0);
}

TEST_CASE("separable conv gradients pass finite-difference checks") {
  Rng rng(109);
  const int cin = 3, cout = 3;
  Tensor<double> in = random_uniform<double>(1, 6, 6, cin, rng);
  Tensor<double> dw = random_uniform<double>(3, 3, cin, 1, rng);
  Tensor<double> pw = random_uniform<double>(1, 1, cin, cout, rng);
  std::vector<double> bias{0.1, 0.0, -0.3};
  Tensor<double> probe = random_uniform<double>(1, 6, 6, cout, rng);

  auto eval = [&] { return probe_sum(separable_conv2d(in, dw, pw, bias), probe); };
  Tensor<double> mid = depthwise_conv2d(in, dw);
  SeparableGrads<double> g = separable_conv2d_backward(in, dw, pw, mid, probe);

  CHECK(grad_check_tensor(in, eval, g.input) < kTol);
  CHECK(grad_check_tensor(dw, eval, g.depthwise) < kTol);
  CHECK(grad_check_tensor(pw, eval, g.pointwise) < kTol);
  CHECK(grad_check_span(std::span<double>(bias), eval, std::span<const double>(g.bias)) < kTol);
}

TEST_CASE("transposed conv gradients pass finite-difference checks") {
  Rng rng(111);
  const int cin = 2, cout = 3;
  Tensor<double> in = random_uniform<double>(1, 3, 4, cin, rng);
  Tensor<double> k = random_uniform<double>(3, 3, cout, cin, rng);
  std::vector<double> bias{0.2, -0.1, 0.4};
  Tensor<double> probe = random_uniform<double>(1, 6, 8, cout, rng);

  auto eval = [&] { return probe_sum(conv2d_transpose(in, k, bias, 2), probe); };
  ConvGrads<double> g = conv2d_transpose_backward(in, k, probe, 2);

  CHECK(grad_check_tensor(in, eval, g.input) < kTol);
  CHECK(grad_check_tensor(k, eval, g.kernel) < kTol);
  CHECK(grad_check_span(std::span<double>(bias), eval, std::span<const double>(g.bias)) < kTol);
}

TEST_CASE("maxpool routing gradient passes finite-difference checks") {
  Rng rng(113);
  Tensor<double> in = random_uniform<double>(1, 6, 6, 3, rng);
  Tensor<double> probe = random_uniform<double>(1, 3, 3, 3, rng);
  auto eval = [&] { return probe_sum(maxpool2d(in).out, probe); };
  PoolResult<double> r = maxpool2d(in);
  Tensor<double> g = maxpool2d_backward(r.argmax, 1, 6, 6, 3, probe);
  CHECK(grad_check_tensor(in, eval, g) < kTol);
}

TEST_CASE("relu gradient passes finite-difference checks away from the kink") {
  Rng rng(115);
  Tensor<double> in = random_uniform<double>(1, 4, 6, 3, rng);
  for (auto& v : in.data)
    if (std::abs(v) < 0.01) v = 0.05;  // keep the step away from the kink
  Tensor<double> probe = random_uniform<double>(1, 4, 6, 3, rng);
  auto eval = [&] { return probe_sum(relu(in), probe); };
  Tensor<double> g = relu_backward(in, probe);
  CHECK(grad_check_tensor(in, eval, g) < kTol);
}

TEST_CASE("concat gradient passes finite-difference checks") {
  Rng rng(117);
  Tensor<double> a = random_uniform<double>(1, 4, 4, 2, rng);
  Tensor<double> b = random_uniform<double>(1, 4, 4, 3, rng);
  Tensor<double> probe = random_uniform<double>(1, 4, 4, 5, rng);
  auto eval = [&] { return probe_sum(concat_channels(a, b), probe); };
  auto [ga, gb] = split_channels(probe, 2);
  CHECK(grad_check_tensor(a, eval, ga) < kTol);
  CHECK(grad_check_tensor(b, eval, gb) < kTol);
}

TEST_CASE("masked RMSE head gradient passes finite-difference checks") {
  Rng rng(119);
  Tensor<double> pred = random_uniform<double>(1, 5, 6, 1, rng, 0.0, 1.0);
  Tensor<double> gt = random_uniform<double>(1, 5, 6, 1, rng, 0.0, 1.0);
  ValidityMask mask(5, 6);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) mask.set(y, x, (x + y) % 3 != 0);
  auto eval = [&] { return masked_rmse(pred, gt, mask); };
  Tensor<double> g = masked_rmse_grad(pred, gt, mask);
  GradCheckSettings s;
  s.step = 1e-6;  // rmse curvature is higher than the linear layer probes
  CHECK(grad_check_tensor(pred, eval, g, s) < 1e-6);
}

TEST_CASE("the checker catches a deliberately corrupted gradient") {
  Rng rng(121);
  ConvCase c{random_uniform<double>(1, 4, 4, 2, rng), random_uniform<double>(3, 3, 2, 2, rng),
             {0.0, 0.0}, {}, 1, Padding::same};
  c.probe = random_uniform<double>(1, 4, 4, 2, rng);
  ConvGrads<double> g = conv2d_backward(c.in, c.k, c.probe, c.stride, c.pad);
  for (auto& v : g.kernel.data) v *= 1.10;  // +10% fault injection
  CHECK(grad_check_tensor(c.k, [&] { return c.eval(); }, g.kernel) > 1e-2);
}

TEST_CASE("full tiny network end-to-end gradient check") {
  NetworkConfig cfg;
  cfg.cascades = 2;
  cfg.base_filters = 4;
  cfg.input_h = 16;
  cfg.input_w = 16;
  Network<double> net(cfg, 5);

  Rng rng(123);
  Sample<double> s;
  s.c_t = random_uniform<double>(1, 16, 16, 3, rng, 0.0, 1.0);
  s.d_t = random_uniform<double>(1, 16, 16, 1, rng, 0.0, 1.0);
  s.c_next = random_uniform<double>(1, 16, 16, 3, rng, 0.0, 1.0);
  s.gt = random_uniform<double>(1, 16, 16, 1, rng, 0.1, 1.0);
  s.gt_mask = ValidityMask(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) s.gt_mask.set(y, x, (3 * x + y) % 4 != 0);

  auto eval = [&] { return masked_rmse(net.forward(s.c_t, s.d_t, s.c_next), s.gt, s.gt_mask); };

  typename Network<double>::Trace tr;
  Tensor<double> pred = net.forward(s.c_t, s.d_t, s.c_next, &tr);
  net.zero_grads();
  net.backward(tr, masked_rmse_grad(pred, s.gt, s.gt_mask));

  // step 1e-6 keeps the probes off relu kinks that a wider step would cross;
  // the floor keeps noise-level gradients (|g| ~ 1e-6 against J ~ 0.6) from
  // being judged on relative error alone
  GradCheckSettings settings;
  settings.step = 1e-6;
  settings.floor_scale = 1e-5;
  double worst = 0;
  for (auto& [name, p] : net.named_params()) {
    const double err = grad_check_tensor(p->value, eval, p->grad, settings);
    INFO(name, " rel err ", err);
    CHECK(err < 1e-4);
    worst = std::max(worst, err);
  }
  MESSAGE("worst parameter gradient error: ", worst);
}
