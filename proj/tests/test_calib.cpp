#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <depthup/calib.hpp>
#include <filesystem>

using namespace depthup;

namespace {

CameraIntrinsics test_intrinsics(int w = 64, int h = 48) {
  CameraIntrinsics in;
  in.width = w;
  in.height = h;
  in.fx = in.fy = 1.2 * w;
  in.cx = (w - 1) / 2.0;
  in.cy = (h - 1) / 2.0;
  return in;
}

}  // namespace

TEST_CASE("undistort with zero coefficients is bit-identical") {
  CameraIntrinsics in = test_intrinsics();
  Rng rng(3);
  RgbFrame img(in.width, in.height);
  for (auto& b : img.data) b = uint8_t(rng.next_below(256));
  RgbFrame out = undistort_image(img, in);
  CHECK(out.data == img.data);

  DepthFrame d(in.width, in.height);
  for (auto& v : d.mm) v = uint16_t(rng.next_below(5000));
  CHECK(undistort_image(d, in).mm == d.mm);
}

TEST_CASE("principal point is a fixed point of the distortion model") {
  CameraIntrinsics in = test_intrinsics();
  in.k1 = -0.3;
  in.k2 = 0.07;
  in.p1 = 0.001;
  in.p2 = -0.002;
  double xd, yd;
  distort_normalized(in, 0.0, 0.0, xd, yd);
  CHECK(xd == 0.0);
  CHECK(yd == 0.0);
  double xu, yu;
  undistort_normalized(in, 0.0, 0.0, xu, yu);
  CHECK(xu == 0.0);
  CHECK(yu == 0.0);
}

TEST_CASE("fixed-point inversion recovers the undistorted point") {
  CameraIntrinsics in = test_intrinsics();
  in.k1 = -0.28;
  in.k2 = 0.05;
  in.k3 = -0.002;
  in.p1 = 0.0008;
  in.p2 = -0.0011;
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-0.4, 0.4), y = rng.uniform(-0.3, 0.3);
    double xd, yd, xr, yr;
    distort_normalized(in, x, y, xd, yd);
    undistort_normalized(in, xd, yd, xr, yr);
    CHECK(std::abs(xr - x) < 1e-6);
    CHECK(std::abs(yr - y) < 1e-6);
  }
}

TEST_CASE("barrel distortion round trip keeps chart lines straight") {
  CameraIntrinsics in = test_intrinsics(160, 120);
  in.k1 = -0.25;

  // bright vertical lines on a dark background
  Tensor<double> chart(1, in.height, in.width, 1);
  std::vector<int> line_cols = {30, 60, 90, 120};
  for (int y = 0; y < in.height; ++y)
    for (int c : line_cols) chart.at(0, y, c, 0) = 1.0;

  // render the distorted capture: each distorted pixel samples the chart at
  // its undistorted position
  Tensor<double> captured(1, in.height, in.width, 1);
  for (int v = 0; v < in.height; ++v)
    for (int u = 0; u < in.width; ++u) {
      double xu, yu;
      undistort_normalized(in, (u - in.cx) / in.fx, (v - in.cy) / in.fy, xu, yu);
      const double sx = xu * in.fx + in.cx, sy = yu * in.fy + in.cy;
      const int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
      if (x0 < 0 || y0 < 0 || x0 + 1 >= in.width || y0 + 1 >= in.height) continue;
      const double ax = sx - x0, ay = sy - y0;
      captured.at(0, v, u, 0) = (1 - ay) * ((1 - ax) * chart.at(0, y0, x0, 0) + ax * chart.at(0, y0, x0 + 1, 0)) +
                                ay * ((1 - ax) * chart.at(0, y0 + 1, x0, 0) + ax * chart.at(0, y0 + 1, x0 + 1, 0));
    }

  Tensor<double> restored = undistort_image(captured, in);

  // intensity-weighted centroid per row near each line must form a straight column
  for (int c : line_cols) {
    std::vector<double> centroids;
    for (int y = 10; y < in.height - 10; ++y) {
      double wsum = 0, xsum = 0;
      for (int x = c - 6; x <= c + 6; ++x) {
        const double wv = restored.at(0, y, x, 0);
        wsum += wv;
        xsum += wv * x;
      }
      if (wsum > 0.3) centroids.push_back(xsum / wsum);
    }
    REQUIRE(centroids.size() > 40);
    double mean = 0;
    for (double v : centroids) mean += v;
    mean /= double(centroids.size());
    double worst = 0;
    for (double v : centroids) worst = std::max(worst, std::abs(v - mean));
    CHECK(worst < 0.5);  // straightness residual in pixels
  }
}

TEST_CASE("depth_to_pointcloud pinhole formulas") {
  CameraIntrinsics in;
  in.width = 64;
  in.height = 48;
  in.fx = in.fy = 500;
  in.cx = 32;
  in.cy = 24;

  DepthFrame d(64, 48);
  d.at(24, 32) = 1000;  // on the optical axis
  PointCloud pc = depth_to_pointcloud(d, in);
  REQUIRE(pc.points.size() == 1);
  CHECK(pc.points[0].x == doctest::Approx(0.0));
  CHECK(pc.points[0].y == doctest::Approx(0.0));
  CHECK(pc.points[0].z == doctest::Approx(1.0));

  // u = cx + fx  =>  X = 1.0 m at Z = 1 m (fx = 500 needs u - cx = 500; fold
  // the same ratio into a reachable pixel: u - cx = 16 -> X = 16/500 * Z)
  DepthFrame d2(64, 48);
  d2.at(24, 48) = 1000;
  PointCloud pc2 = depth_to_pointcloud(d2, in);
  REQUIRE(pc2.points.size() == 1);
  CHECK(pc2.points[0].x == doctest::Approx(16.0 / 500.0));

  DepthFrame zeros(64, 48);
  CHECK(depth_to_pointcloud(zeros, in).points.empty());
}

TEST_CASE("pinhole X = 1 m when u - cx equals fx") {
  CameraIntrinsics in;
  in.width = 1024;
  in.height = 48;
  in.fx = in.fy = 500;
  in.cx = 100;
  in.cy = 24;
  DepthFrame d(1024, 48);
  d.at(24, 600) = 1000;  // u - cx = 500 = fx
  PointCloud pc = depth_to_pointcloud(d, in);
  REQUIRE(pc.points.size() == 1);
  CHECK(pc.points[0].x == doctest::Approx(1.0));
  CHECK(pc.points[0].z == doctest::Approx(1.0));
}

TEST_CASE("project_to_camera: identity round trip within 1 mm") {
  CameraIntrinsics in = test_intrinsics(96, 72);
  Rng rng(11);
  DepthFrame d(96, 72);
  for (int y = 0; y < 72; ++y)
    for (int x = 0; x < 96; ++x)
      if (rng.next_double() > 0.25) d.at(y, x) = uint16_t(800 + rng.next_below(3000));

  PointCloud pc = depth_to_pointcloud(d, in);
  for (const auto& p : pc.points) CHECK(p.z > 0.0);

  DepthFrame back = project_to_camera(pc, Extrinsics{}, in, 96, 72);
  for (int y = 0; y < 72; ++y)
    for (int x = 0; x < 96; ++x)
      if (d.at(y, x) != 0) CHECK(std::abs(int(back.at(y, x)) - int(d.at(y, x))) <= 1);
}

TEST_CASE("project_to_camera: pure z translation shifts all depths") {
  CameraIntrinsics in = test_intrinsics(32, 32);
  DepthFrame d(32, 32);
  for (int y = 12; y < 20; ++y)
    for (int x = 12; x < 20; ++x) d.at(y, x) = 2000;
  Extrinsics extr;
  extr.translation_m = {0, 0, 1.0};
  DepthFrame out = project_to_camera(depth_to_pointcloud(d, in), extr, in, 32, 32);
  long checked = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (out.at(y, x) != 0) {
        CHECK(out.at(y, x) == 3000);
        ++checked;
      }
  CHECK(checked > 10);
}

TEST_CASE("project_to_camera: nearer point wins the pixel") {
  CameraIntrinsics in = test_intrinsics(32, 32);
  PointCloud pc;
  pc.points.push_back({0.0, 0.0, 2.0, 0, 0});
  pc.points.push_back({0.0, 0.0, 1.5, 0, 0});  // same ray, nearer
  DepthFrame out = project_to_camera(pc, Extrinsics{}, in, 32, 32);
  const int u = int(std::lround(in.cx)), v = int(std::lround(in.cy));
  CHECK(out.at(v, u) == 1500);
}

TEST_CASE("extrinsics validation") {
  Extrinsics e;
  e.validate();  // identity passes
  e.rotation = {1, 0, 0, 0, 1, 0, 0, 0, -1};  // det = -1
  CHECK_THROWS_AS(e.validate(), ConfigError);
  e.rotation = {1, 0.1, 0, 0, 1, 0, 0, 0, 1};  // not orthonormal
  CHECK_THROWS_AS(e.validate(), ConfigError);
}

TEST_CASE("center_crop") {
  RgbFrame img(1920, 1080);
  img.px(540, 960)[0] = 200;  // center marker
  RgbFrame out = center_crop(img, 2);
  CHECK(out.w == 960);
  CHECK(out.h == 540);
  CHECK(out.px(270, 480)[0] == 200);  // marker stays at the new center

  RgbFrame odd(31, 20);
  CHECK_THROWS_AS(center_crop(odd, 2), ConfigError);

  // factor 1 crop of a crop is the identity
  RgbFrame same = center_crop(out, 1);
  CHECK(same.data == out.data);
}

TEST_CASE("resize_nearest") {
  // 960x540 -> 480x270 -> 960x540 shape round trip
  DepthFrame d(960, 540);
  DepthFrame half = resize_nearest(d, 480, 270);
  CHECK(half.w == 480);
  CHECK(half.h == 270);
  DepthFrame back = resize_nearest(half, 960, 540);
  CHECK(back.w == 960);
  CHECK(back.h == 540);

  // constant image stays constant at any size
  RgbFrame c(17, 13);
  for (auto& b : c.data) b = 77;
  RgbFrame r = resize_nearest(c, 40, 9);
  for (auto b : r.data) CHECK(b == 77);

  // 2x upscale replicates each value into a 2x2 block
  DepthFrame small(2, 2);
  small.at(0, 0) = 1;
  small.at(0, 1) = 2;
  small.at(1, 0) = 3;
  small.at(1, 1) = 4;
  DepthFrame up = resize_nearest(small, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(up.at(y, x) == small.at(y / 2, x / 2));

  CHECK_THROWS_AS(resize_nearest(small, 0, 4), ConfigError);
}

TEST_CASE("calibration file round trip and errors") {
  namespace fs = std::filesystem;
  const std::string dir = fs::temp_directory_path() / "depthup_calib_test";
  fs::create_directories(dir);

  CalibrationSet c;
  c.depth = test_intrinsics(640, 576);
  c.color = test_intrinsics(1920, 1080);
  c.color.k1 = -0.21;
  c.color.p2 = 0.0004;
  c.extrinsics.translation_m = {0.012, -0.004, 0.002};
  write_calibration(c, dir + "/calib.json");

  CalibrationSet r = read_calibration(dir + "/calib.json");
  CHECK(r.depth.fx == doctest::Approx(c.depth.fx));
  CHECK(r.color.k1 == doctest::Approx(c.color.k1));
  CHECK(r.extrinsics.translation_m[0] == doctest::Approx(0.012));

  {
    std::ofstream bad(dir + "/bad.json");
    bad << "{\"intrinsics_depth\": {}}";
  }
  CHECK_THROWS_AS(read_calibration(dir + "/bad.json"), FormatError);
  CHECK_THROWS_AS(read_calibration(dir + "/missing.json"), FormatError);
  fs::remove_all(dir);
}
