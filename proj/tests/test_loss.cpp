#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <depthup/image.hpp>
#include <depthup/loss.hpp>

using namespace depthup;

namespace {

// two-loop brute-force reference
double rmse_reference(const Tensor<double>& pred, const Tensor<double>& gt, const ValidityMask& m) {
  double sum = 0;
  long n = 0;
  for (int y = 0; y < pred.h; ++y)
    for (int x = 0; x < pred.w; ++x) {
      if (!m.valid(y, x)) continue;
      const double d = pred.at(0, y, x, 0) - gt.at(0, y, x, 0);
      sum += d * d;
      ++n;
    }
  return std::sqrt(sum / double(n));
}

}  // namespace

TEST_CASE("validity_mask marks exactly the zero-depth pixels") {
  std::vector<uint16_t> depth = {100, 0, 55, 0, 1, 65535};
  ValidityMask m = validity_mask(depth, 2, 3);
  CHECK(m.valid(0, 0));
  CHECK_FALSE(m.valid(0, 1));
  CHECK(m.valid(0, 2));
  CHECK_FALSE(m.valid(1, 0));
  CHECK(m.valid(1, 1));
  CHECK(m.valid(1, 2));

  ValidityMask all = validity_mask(std::vector<uint16_t>(6, 7), 2, 3);
  CHECK(all.count_valid() == 6);
  ValidityMask none = validity_mask(std::vector<uint16_t>(6, 0), 2, 3);
  CHECK(none.count_valid() == 0);
}

TEST_CASE("validity_mask with planted zeros") {
  Rng rng(3);
  const int h = 9, w = 13;
  std::vector<uint16_t> depth(size_t(h) * w);
  std::vector<size_t> planted;
  for (size_t i = 0; i < depth.size(); ++i) depth[i] = uint16_t(500 + rng.next_below(3000));
  for (int k = 0; k < 20; ++k) {
    size_t i = rng.next_below(depth.size());
    depth[i] = 0;
    planted.push_back(i);
  }
  ValidityMask m = validity_mask(depth, h, w);
  for (size_t i = 0; i < depth.size(); ++i) CHECK(m.bits[i] == (depth[i] != 0 ? 1 : 0));
}

TEST_CASE("invalid_fraction") {
  ValidityMask m(4, 4);
  CHECK(invalid_fraction(m) == 0.0);
  for (int x = 0; x < 4; ++x) m.set(1, x, false);
  for (int x = 0; x < 4; ++x) m.set(3, x, false);
  CHECK(invalid_fraction(m) == doctest::Approx(0.5));
}

TEST_CASE("masked_rmse basics") {
  Tensor<double> pred(1, 1, 2, 1), gt(1, 1, 2, 1);
  ValidityMask m(1, 2);

  pred.data = {1, 2};
  gt.data = {0, 2};
  CHECK(masked_rmse(pred, gt, m) == doctest::Approx(std::sqrt(0.5)));  // 0.70711

  CHECK(masked_rmse(gt, gt, m) == 0.0);

  // invalid pixel excluded no matter how wrong the prediction is
  Tensor<double> pred2(1, 1, 2, 1), gt2(1, 1, 2, 1);
  pred2.data = {999, 5};
  gt2.data = {0, 5};
  ValidityMask m2(1, 2);
  m2.set(0, 0, false);
  CHECK(masked_rmse(pred2, gt2, m2) == 0.0);

  ValidityMask none(1, 2, false);
  CHECK_THROWS_AS(masked_rmse(pred, gt, none), MetricError);
}

TEST_CASE("masked_rmse properties on random data") {
  Rng rng(17);
  Tensor<double> pred = random_uniform<double>(1, 8, 11, 1, rng, 0.0, 1.0);
  Tensor<double> gt = random_uniform<double>(1, 8, 11, 1, rng, 0.0, 1.0);
  ValidityMask m(8, 11);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 11; ++x) m.set(y, x, rng.next_double() > 0.3);

  const double r = masked_rmse(pred, gt, m);
  // brute-force agreement
  CHECK(std::abs(r - rmse_reference(pred, gt, m)) < 1e-12);
  // symmetry
  CHECK(masked_rmse(gt, pred, m) == doctest::Approx(r).epsilon(1e-15));
  // bounds
  double max_abs = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 11; ++x)
      if (m.valid(y, x)) max_abs = std::max(max_abs, std::abs(pred.at(0, y, x, 0) - gt.at(0, y, x, 0)));
  CHECK(r >= 0.0);
  CHECK(r <= max_abs + 1e-15);
  // invariance to values at invalid pixels
  Tensor<double> scrambled = pred;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 11; ++x)
      if (!m.valid(y, x)) scrambled.at(0, y, x, 0) = 1e6;
  CHECK(masked_rmse(scrambled, gt, m) == r);
}

TEST_CASE("masked_rmse_grad closed forms") {
  // single valid pixel: gradient is exactly 1 for any positive difference
  Tensor<double> pred(1, 1, 2, 1), gt(1, 1, 2, 1);
  pred.data = {0.7, 4.0};
  gt.data = {0.2, 4.0};
  ValidityMask m(1, 2);
  m.set(0, 1, false);
  Tensor<double> g = masked_rmse_grad(pred, gt, m);
  CHECK(g.data[0] == doctest::Approx(1.0));
  CHECK(g.data[1] == 0.0);

  // zero rmse returns the zero subgradient
  Tensor<double> g0 = masked_rmse_grad(gt, gt, m);
  for (double v : g0.data) CHECK(v == 0.0);
}

TEST_CASE("inpainting_report counts pixels invalid in both masks") {
  const int h = 6, w = 6;
  Tensor<double> pred = Tensor<double>::full(1, h, w, 1, 0.5);
  Tensor<double> gt = Tensor<double>::full(1, h, w, 1, 0.5);
  ValidityMask input(h, w), gtm(h, w);

  SUBCASE("no invalid pixels") {
    InpaintingReport r = inpainting_report(pred, input, gtm, gt);
    CHECK(r.inpainted_count == 0);
    CHECK_FALSE(r.mean_abs_neighbor_gap.has_value());
  }

  SUBCASE("planted 3-pixel hole") {
    for (int x = 1; x <= 3; ++x) {
      input.set(2, x, false);
      gtm.set(2, x, false);
    }
    // a pixel invalid only in the input does not count
    input.set(4, 4, false);
    InpaintingReport r = inpainting_report(pred, input, gtm, gt);
    CHECK(r.inpainted_count == 3);
    CHECK(r.inpainted_fraction == doctest::Approx(3.0 / 36.0));
    // constant scene: predictions equal the neighbors
    CHECK(r.mean_abs_neighbor_gap.has_value());
    CHECK(*r.mean_abs_neighbor_gap == doctest::Approx(0.0));
  }

  SUBCASE("gap reflects the difference to the nearest valid gt") {
    input.set(0, 0, false);
    gtm.set(0, 0, false);
    Tensor<double> pred2 = gt;
    pred2.at(0, 0, 0, 0) = 0.9;  // neighbors hold 0.5
    InpaintingReport r = inpainting_report(pred2, input, gtm, gt);
    CHECK(r.inpainted_count == 1);
    CHECK(*r.mean_abs_neighbor_gap == doctest::Approx(0.4));
  }
}

TEST_CASE("mask intersection and frame helpers") {
  DepthFrame f(3, 2);
  f.at(0, 0) = 100;
  f.at(1, 2) = 50;
  ValidityMask m = validity_mask(f);
  CHECK(m.count_valid() == 2);

  ValidityMask other(2, 3);
  other.set(0, 0, false);
  ValidityMask both = m & other;
  CHECK(both.count_valid() == 1);
  CHECK(both.valid(1, 2));

  apply_mask(f, other);
  CHECK(f.at(0, 0) == 0);
}
