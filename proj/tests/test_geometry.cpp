#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "sf/geometry.hpp"
#include "sf/rng.hpp"

using sf::Camera;
using sf::Ray;
using sf::Vec3;

namespace {

Camera identity_camera() {
  Camera c;
  c.fx = c.fy = 50;
  c.cx = c.cy = 32;
  c.width = c.height = 64;
  return c;
}

Camera random_camera(sf::Rng& rng) {
  Camera c;
  c.fx = rng.uniform(40, 90);
  c.fy = rng.uniform(40, 90);
  c.cx = rng.uniform(28, 36);
  c.cy = rng.uniform(28, 36);
  c.width = c.height = 64;
  const Eigen::Quaterniond q =
      Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
  c.R = q.toRotationMatrix();
  c.t = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("principal-point ray is the optical axis; one-focal-length offset tilts 45 degrees") {
  const Camera c = identity_camera();
  const Ray axis = sf::generate_ray(c, c.cx, c.cy, 0.1, 10.0);
  CHECK((axis.dir - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK((axis.origin - c.t).norm() == 0.0);

  const Ray tilt = sf::generate_ray(c, c.cx + c.fx, c.cy, 0.1, 10.0);
  CHECK((tilt.dir - Vec3(1, 0, 1).normalized()).norm() < 1e-12);
}

TEST_CASE("out-of-bounds pixels and bad depth ranges are rejected") {
  const Camera c = identity_camera();
  CHECK_THROWS_AS((void)sf::generate_ray(c, -1.0, 5.0, 0.1, 10.0), sf::TensorError);
  CHECK_THROWS_AS((void)sf::generate_ray(c, 5.0, 65.0, 0.1, 10.0), sf::TensorError);
  CHECK_THROWS_AS((void)sf::generate_ray(c, 5.0, 5.0, 0.0, 10.0), sf::TensorError);
  CHECK_THROWS_AS((void)sf::generate_ray(c, 5.0, 5.0, 2.0, 1.0), sf::TensorError);
}

TEST_CASE("project-unproject round trip recovers the pixel within 1e-4 px") {
  sf::Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const Camera c = random_camera(rng);
    c.validate();
    const double u = rng.uniform(0.5, 63.5), v = rng.uniform(0.5, 63.5);
    const Ray r = sf::generate_ray(c, u, v, 0.1, 20.0);
    const Vec3 p = r.origin + rng.uniform(0.2, 18.0) * r.dir;
    double u2, v2;
    REQUIRE(sf::project(c, p, &u2, &v2));
    CHECK(std::abs(u2 - u) < 1e-4);
    CHECK(std::abs(v2 - v) < 1e-4);
  }
}

TEST_CASE("camera validation catches non-orthonormal rotations") {
  Camera c = identity_camera();
  c.R(0, 0) = 1.5;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("orthonormal"), sf::TensorError);
}

TEST_CASE("stratified sampling: one sample per bin, increasing depths, positive deltas") {
  Ray ray;
  ray.origin = Vec3(0, 0, 0);
  ray.dir = Vec3(0, 0, 1);
  ray.near = 1.0;
  ray.far = 3.0;

  SUBCASE("single bin") {
    const double off = 0.25;
    const auto s = sf::stratified_sample(ray, 1, &off);
    CHECK(s.t[0] == doctest::Approx(1.5));
    CHECK(s.delta[0] == doctest::Approx(3.0 - 1.5));
  }

  SUBCASE("128 bins, randomized") {
    sf::Rng rng(23);
    const int n = 128;
    std::vector<double> offs(n);
    for (auto& o : offs) o = rng.uniform();
    const auto s = sf::stratified_sample(ray, n, offs.data());
    const double bin = (ray.far - ray.near) / n;
    for (int i = 0; i < n; ++i) {
      CHECK(s.delta[static_cast<size_t>(i)] > 0);
      if (i + 1 < n) CHECK(s.t[static_cast<size_t>(i)] < s.t[static_cast<size_t>(i + 1)]);
      // exactly one sample per bin
      CHECK(s.t[static_cast<size_t>(i)] >= ray.near + i * bin);
      CHECK(s.t[static_cast<size_t>(i)] < ray.near + (i + 1) * bin);
    }
  }
}

TEST_CASE("stratified offsets are uniform per bin (KS test over 10k draws)") {
  Ray ray;
  ray.origin = Vec3(0, 0, 0);
  ray.dir = Vec3(0, 0, 1);
  ray.near = 0.5;
  ray.far = 2.5;
  const int n = 16;
  sf::Rng rng(31);
  std::vector<double> within;
  std::vector<double> offs(n);
  const double bin = (ray.far - ray.near) / n;
  for (int draw = 0; draw < 10000 / n; ++draw) {
    for (auto& o : offs) o = rng.uniform();
    const auto s = sf::stratified_sample(ray, n, offs.data());
    for (int i = 0; i < n; ++i)
      within.push_back((s.t[static_cast<size_t>(i)] - (ray.near + i * bin)) / bin);
  }
  CHECK(oracle::ks_uniform_pvalue(within) > 0.01);
}

TEST_CASE("positional encoding matches its closed forms") {
  double out[5];
  const double zero = 0.0;
  sf::positional_encode(&zero, 1, 2, true, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 1.0);
  CHECK(out[3] == 0.0);
  CHECK(out[4] == 1.0);

  const double half_pi = M_PI / 2;
  double o2[5];
  sf::positional_encode(&half_pi, 1, 2, true, o2);
  CHECK(o2[1] == doctest::Approx(1.0));
  CHECK(o2[2] == doctest::Approx(0.0).epsilon(1e-12));

  CHECK(sf::positional_encode_dim(3, 6, true) == 39);
  double v3[3] = {0.3, -0.7, 0.9};
  std::vector<double> enc(39);
  sf::positional_encode(v3, 3, 6, true, enc.data());
  // sin/cos components never exceed 1 in magnitude
  for (int d = 0; d < 3; ++d) {
    for (int k = 1; k < 13; ++k) CHECK(std::abs(enc[static_cast<size_t>(13 * d + k)]) <= 1.0);
  }
}

TEST_CASE("camera JSON round trip") {
  sf::Rng rng(41);
  std::vector<Camera> cams;
  for (int i = 0; i < 3; ++i) cams.push_back(random_camera(rng));
  const std::string path = "/tmp/sf_test_cams.json";
  sf::save_cameras(path, cams);
  const auto loaded = sf::load_cameras(path);
  REQUIRE(loaded.size() == cams.size());
  for (size_t i = 0; i < cams.size(); ++i) {
    CHECK((loaded[i].R - cams[i].R).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((loaded[i].t - cams[i].t).norm() < 1e-12);
    CHECK(loaded[i].fx == doctest::Approx(cams[i].fx));
  }
}

TEST_SUITE_END();
