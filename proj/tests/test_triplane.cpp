#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "sf/triplane.hpp"

using sf::Bounds3;
using sf::Tensor;
using sf::Vec3;

namespace {

Bounds3 cube(double lo, double hi) {
  Bounds3 b;
  b.lo = Vec3::Constant(lo);
  b.hi = Vec3::Constant(hi);
  return b;
}

// independent scalar reimplementation of the query: project, bilinearly
// interpolate each plane per channel, multiply
std::vector<double> query_ref(const std::array<std::vector<double>, 3>& planes,
                              const std::array<std::array<int64_t, 2>, 3>& dims, int64_t d,
                              const Bounds3& b, double voxel, const Vec3& x) {
  const double u[3] = {(x.x() - b.lo.x()) / voxel - 0.5, (x.y() - b.lo.y()) / voxel - 0.5,
                       (x.z() - b.lo.z()) / voxel - 0.5};
  std::vector<double> out(static_cast<size_t>(d), 1.0);
  for (int p = 0; p < 3; ++p) {
    const auto ax = sf::kPlaneAxes[static_cast<size_t>(p)];
    for (int64_t ch = 0; ch < d; ++ch) {
      out[static_cast<size_t>(ch)] *=
          oracle::bilinear_ref(planes[static_cast<size_t>(p)], d, ch,
                               dims[static_cast<size_t>(p)][0], dims[static_cast<size_t>(p)][1],
                               u[ax[0]], u[ax[1]]);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("triplane");

TEST_CASE("geometry raster: a single voxel gives 1x1 planes holding its encoding") {
  const double vs = 0.01;
  auto r = sf::build_geometry_raster<double>(cube(0, vs), vs, 6);
  CHECK(r.res == std::array<int64_t, 3>{1, 1, 1});
  // the center normalizes to the origin, whose encoding is [0, (0,1)*6] per axis
  std::vector<double> enc(39);
  const double zero[3] = {0, 0, 0};
  sf::positional_encode(zero, 3, 6, true, enc.data());
  for (int p = 0; p < 3; ++p) {
    REQUIRE(r.planes[static_cast<size_t>(p)].shape() == sf::Shape{39, 1, 1});
    for (int64_t k = 0; k < 39; ++k)
      CHECK(r.planes[static_cast<size_t>(p)].values()[static_cast<size_t>(k)] ==
            doctest::Approx(enc[static_cast<size_t>(k)]).epsilon(1e-12));
  }
}

TEST_CASE("geometry raster: 4x4x4 pooling matches brute-force averaging exactly") {
  const double vs = 0.01;
  const Bounds3 b = cube(0, 4 * vs);
  auto r = sf::build_geometry_raster<double>(b, vs, 2);
  const int64_t din = r.feature_dim;
  REQUIRE(din == 3 * (1 + 2 * 2));
  // P_xy cell (i, j) must equal the mean over the 4 z-voxels at (i, j)
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < 4; ++j) {
      std::vector<double> mean(static_cast<size_t>(din), 0.0);
      for (int64_t k = 0; k < 4; ++k) {
        const Vec3 center(b.lo.x() + (i + 0.5) * vs, b.lo.y() + (j + 0.5) * vs,
                          b.lo.z() + (k + 0.5) * vs);
        const Vec3 n = sf::normalize_to_unit(center, b.lo, b.hi);
        std::vector<double> enc(static_cast<size_t>(din));
        sf::positional_encode(n.data(), 3, 2, true, enc.data());
        for (int64_t c = 0; c < din; ++c) mean[static_cast<size_t>(c)] += enc[static_cast<size_t>(c)] / 4.0;
      }
      for (int64_t c = 0; c < din; ++c) {
        CHECK(r.planes[0].at({c, i, j}) == doctest::Approx(mean[static_cast<size_t>(c)]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("geometry raster: resolution cap failure names the fix") {
  CHECK_THROWS_WITH_AS(
      (void)sf::build_geometry_raster<float>(cube(0, 1), 0.001, 6, 512),
      doctest::Contains("voxel"), sf::TensorError);
}

TEST_CASE("plane encoder: all-zero weights produce all-zero features; shape is preserved") {
  sf::Rng rng(3);
  sf::ParamMap<double> pm;
  sf::PlaneEncoder<double> enc(pm, "enc", 9, 4, rng);
  for (auto& [k, t] : pm) t.mutable_values().assign(t.values().size(), 0.0);

  for (const int64_t hw : {8, 10, 7}) {  // divisible by 4 and not
    auto raw = Tensor<double>::uniform({9, hw, hw}, rng, -1, 1);
    auto out = enc.forward(raw);
    CHECK(out.shape() == sf::Shape{4, hw, hw});
    for (double v : out.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("plane encoder gradients match finite differences") {
  sf::Rng rng(5);
  sf::ParamMap<double> pm;
  sf::PlaneEncoder<double> enc(pm, "enc", 5, 3, rng);
  auto raw = Tensor<double>::uniform({5, 8, 8}, rng, -1, 1);
  std::vector<Tensor<double>*> leaves;
  for (auto& [k, v] : pm) leaves.push_back(&v);
  // centered loss: the bias-1 initialization would otherwise park the loss
  // near 200 and drown small gradients in finite-difference roundoff
  const double err = oracle::max_grad_error(
      leaves, [&] { return sf::sum(sf::square(enc.forward(raw) - 1.0)); });
  CHECK(err < 1e-5);
}

TEST_CASE("query: multiplicative identity, annihilator, node exactness, oracle agreement") {
  const Bounds3 b = cube(-0.5, 0.5);
  const double vs = 0.125;  // 8x8 planes
  sf::Rng rng(7);
  sf::ParamMap<double> pm;
  auto field = sf::TriPlaneField<double>::direct(pm, "f", b, vs, 6, rng);

  auto set_plane = [&](const char* name, double v) {
    auto& t = pm.at(std::string("f.plane_") + name);
    t.mutable_values().assign(t.values().size(), v);
  };

  SUBCASE("constant planes of ones give the one-vector") {
    set_plane("xy", 1.0);
    set_plane("xz", 1.0);
    set_plane("yz", 1.0);
    auto f = field.query(Tensor<double>::from_data({1, 3}, {0.13, -0.21, 0.4}));
    for (double v : f.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("one zero plane annihilates the product") {
    set_plane("xz", 0.0);
    auto f = field.query(Tensor<double>::from_data({1, 3}, {0.13, -0.21, 0.4}));
    for (double v : f.values()) CHECK(v == 0.0);
  }

  SUBCASE("grid-node query returns the product of the stored node vectors") {
    const int64_t i = 2, j = 5, k = 3;
    const Vec3 x(b.lo.x() + (i + 0.5) * vs, b.lo.y() + (j + 0.5) * vs, b.lo.z() + (k + 0.5) * vs);
    auto f = field.query(Tensor<double>::from_data({1, 3}, {x.x(), x.y(), x.z()}));
    const auto& pxy = pm.at("f.plane_xy");
    const auto& pxz = pm.at("f.plane_xz");
    const auto& pyz = pm.at("f.plane_yz");
    for (int64_t ch = 0; ch < 6; ++ch) {
      const double expect = pxy.at({ch, i, j}) * pxz.at({ch, i, k}) * pyz.at({ch, j, k});
      CHECK(f.at({0, ch}) == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  SUBCASE("10k random points match the scalar oracle") {
    std::array<std::vector<double>, 3> planes;
    std::array<std::array<int64_t, 2>, 3> dims;
    static const char* kNames[3] = {"xy", "xz", "yz"};
    for (int p = 0; p < 3; ++p) {
      const auto& t = pm.at(std::string("f.plane_") + kNames[p]);
      planes[static_cast<size_t>(p)] = t.values();
      dims[static_cast<size_t>(p)] = {t.dim(1), t.dim(2)};
    }
    std::vector<double> pts;
    std::vector<Vec3> xs;
    for (int i = 0; i < 10000; ++i) {
      const Vec3 x(rng.uniform(b.lo.x(), b.hi.x()), rng.uniform(b.lo.y(), b.hi.y()),
                   rng.uniform(b.lo.z(), b.hi.z()));
      xs.push_back(x);
      pts.insert(pts.end(), {x.x(), x.y(), x.z()});
    }
    auto f = field.query(Tensor<double>::from_data({10000, 3}, std::move(pts)));
    double worst = 0;
    for (int64_t i = 0; i < 10000; ++i) {
      const auto ref = query_ref(planes, dims, 6, b, vs, xs[static_cast<size_t>(i)]);
      for (int64_t ch = 0; ch < 6; ++ch)
        worst = std::max(worst, std::abs(f.at({i, ch}) - ref[static_cast<size_t>(ch)]));
    }
    CHECK(worst < 1e-6);
  }

  SUBCASE("out-of-bounds points are rejected") {
    CHECK_THROWS_WITH_AS((void)field.query(Tensor<double>::from_data({1, 3}, {0.9, 0.0, 0.0})),
                         doctest::Contains("outside"), sf::TensorError);
  }
}

TEST_CASE("bilinear interpolation reproduces per-channel affine functions exactly") {
  const Bounds3 b = cube(-0.5, 0.5);
  const double vs = 0.125;
  sf::Rng rng(11);
  sf::ParamMap<double> pm;
  auto field = sf::TriPlaneField<double>::direct(pm, "f", b, vs, 2, rng);
  // plane_xy affine in (row, col); the other two constant 1
  auto& pxy = pm.at("f.plane_xy");
  const int64_t h = pxy.dim(1), w = pxy.dim(2);
  for (int64_t ch = 0; ch < 2; ++ch)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c)
        pxy.mutable_values()[static_cast<size_t>((ch * h + r) * w + c)] =
            0.3 * static_cast<double>(r) - 0.7 * static_cast<double>(c) + 0.1 + static_cast<double>(ch);
  for (const char* nm : {"f.plane_xz", "f.plane_yz"}) {
    auto& t = pm.at(nm);
    t.mutable_values().assign(t.values().size(), 1.0);
  }
  for (int trial = 0; trial < 200; ++trial) {
    // stay inside the interpolation interior (u in [0, n-1])
    const double ux = rng.uniform(0.0, static_cast<double>(h - 1));
    const double uy = rng.uniform(0.0, static_cast<double>(w - 1));
    const Vec3 x(b.lo.x() + (ux + 0.5) * vs, b.lo.y() + (uy + 0.5) * vs, 0.0);
    auto f = field.query(Tensor<double>::from_data({1, 3}, {x.x(), x.y(), x.z()}));
    for (int64_t ch = 0; ch < 2; ++ch) {
      const double expect = 0.3 * ux - 0.7 * uy + 0.1 + static_cast<double>(ch);
      CHECK(f.at({0, ch}) == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("query is continuous across cell boundaries") {
  const Bounds3 b = cube(-0.5, 0.5);
  sf::Rng rng(13);
  sf::ParamMap<double> pm;
  auto field = sf::TriPlaneField<double>::direct(pm, "f", b, 0.125, 4, rng);
  const double edge_x = b.lo.x() + 3.0 * 0.125 + 0.5 * 0.125;  // a cell-center line
  for (int trial = 0; trial < 50; ++trial) {
    const double y = rng.uniform(-0.4, 0.4), z = rng.uniform(-0.4, 0.4);
    auto fa = field.query(Tensor<double>::from_data({1, 3}, {edge_x - 1e-8, y, z}));
    auto fb = field.query(Tensor<double>::from_data({1, 3}, {edge_x + 1e-8, y, z}));
    for (int64_t ch = 0; ch < 4; ++ch)
      CHECK(std::abs(fa.at({0, ch}) - fb.at({0, ch})) < 1e-6);
  }
}

TEST_CASE("sum aggregation (test flag) swaps the product for a sum on the same path") {
  const Bounds3 b = cube(-0.5, 0.5);
  sf::Rng rng(17);
  sf::ParamMap<double> pm, pm2;
  auto had = sf::TriPlaneField<double>::direct(pm, "f", b, 0.25, 3, rng,
                                               512, sf::PlaneAggregation::kHadamard);
  sf::Rng rng2(17);
  auto summed = sf::TriPlaneField<double>::direct(pm2, "f", b, 0.25, 3, rng2,
                                                  512, sf::PlaneAggregation::kSum);
  auto pts = Tensor<double>::from_data({1, 3}, {0.1, 0.2, -0.3});
  auto fh = had.query(pts);
  auto fs = summed.query(pts);
  // reconstruct per-plane factors from the two aggregates' difference at a
  // constant-plane configuration
  for (const char* nm : {"f.plane_xy", "f.plane_xz", "f.plane_yz"}) {
    pm.at(nm).mutable_values().assign(pm.at(nm).values().size(), 2.0);
    pm2.at(nm).mutable_values().assign(pm2.at(nm).values().size(), 2.0);
  }
  fh = had.query(pts);
  fs = summed.query(pts);
  for (int64_t ch = 0; ch < 3; ++ch) {
    CHECK(fh.at({0, ch}) == doctest::Approx(8.0));
    CHECK(fs.at({0, ch}) == doctest::Approx(6.0));
  }
}

TEST_CASE("geometry-guided field: query gradients reach the encoder weights") {
  const Bounds3 b = cube(-0.5, 0.5);
  sf::Rng rng(19);
  sf::ParamMap<double> pm;
  auto raster = sf::build_geometry_raster<double>(b, 0.25, 1);  // 4x4 planes, 9 channels
  sf::TriPlaneField<double> field(pm, "f", std::move(raster), 3, rng);
  std::vector<Tensor<double>*> leaves;
  for (auto& [k, v] : pm) leaves.push_back(&v);
  auto pts = Tensor<double>::from_data({4, 3}, {0.1, 0.2, -0.3, -0.2, 0.0, 0.4,
                                                0.3, -0.4, 0.0, 0.0, 0.1, 0.1});
  const double err = oracle::max_grad_error(leaves, [&] {
    field.invalidate_cache();
    return sf::sum(sf::square(field.query(pts)));
  });
  CHECK(err < 1e-5);
}

TEST_SUITE_END();
