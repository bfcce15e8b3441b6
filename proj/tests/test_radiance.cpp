#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "sf/radiance.hpp"

using sf::Bounds3;
using sf::Tensor;
using sf::Vec3;

namespace {

// a small scene+human model with seeded parameters, no training required
sf::SceneModel<float> tiny_model(sf::ParamMap<float>& pm, uint64_t seed) {
  sf::SceneModel<float> m;
  Bounds3 sb;
  sb.lo = Vec3(-1, -1, -1);
  sb.hi = Vec3(1, 1, 1);
  sf::Rng rng(seed);
  m.scene_field = sf::TriPlaneField<float>(
      pm, "scene.tri", sf::build_geometry_raster<float>(sb, 0.25, 2), 8, rng);
  m.scene_head = sf::FieldHead<float>(pm, "scene.head", 8, 16, rng);

  sf::Capsule torso;
  torso.a = Vec3(0, -0.15, 0);
  torso.b = Vec3(0, 0.2, 0);
  torso.radius = 0.1;
  m.skeleton.parts = {torso};
  Bounds3 hb;
  m.skeleton.bounds(&hb.lo, &hb.hi, 0.15);
  m.human_field = sf::TriPlaneField<float>(
      pm, "human.tri", sf::build_geometry_raster<float>(hb, 0.05, 2), 8, rng);
  m.human_head = sf::FieldHead<float>(pm, "human.head", 8, 16, rng);
  m.correction = sf::CorrectionNet<float>(pm, "human.corr", sb.lo, sb.hi, rng);
  m.near = 0.2;
  m.far = 2.5;
  m.n_scene = 24;
  m.n_human = 12;
  return m;
}

sf::Camera front_camera() {
  sf::Camera c;
  c.fx = c.fy = 40;
  c.cx = c.cy = 16;
  c.width = c.height = 32;
  c.t = Vec3(0, 0, -0.95);
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("radiance");

TEST_CASE("field head: zero parameters give sigma = ln 2 and zero features; hidden width 128") {
  sf::ParamMap<double> pm;
  sf::Rng rng(3);
  sf::FieldHead<double> head(pm, "h", 8, 16, rng);
  CHECK(head.hidden.bias.numel() == 128);
  for (auto& [k, t] : pm) t.mutable_values().assign(t.values().size(), 0.0);

  auto feat = Tensor<double>::uniform({5, 8}, rng, -1, 1);
  auto dirs = Tensor<double>::uniform({5, sf::dir_encode_dim()}, rng, -1, 1);
  auto [sigma, out] = head.eval(feat, dirs, /*rgb=*/false);
  for (double v : sigma.values()) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (double v : out.values()) CHECK(v == 0.0);

  auto [s2, rgb] = head.eval(feat, dirs, /*rgb=*/true);
  for (double v : rgb.values()) CHECK(v == doctest::Approx(0.5));  // sigmoid(0)
}

TEST_CASE("field head gradients match finite differences") {
  sf::ParamMap<double> pm;
  sf::Rng rng(7);
  sf::FieldHead<double> head(pm, "h", 6, 5, rng);
  auto feat = Tensor<double>::uniform({4, 6}, rng, -1, 1);
  auto dirs = Tensor<double>::uniform({4, sf::dir_encode_dim()}, rng, -1, 1);
  std::vector<Tensor<double>*> leaves;
  for (auto& [k, v] : pm) leaves.push_back(&v);
  const double err = oracle::max_grad_error(leaves, [&] {
    auto [sigma, out] = head.eval(feat, dirs, false);
    return sf::sum(sf::square(out)) + sf::sum(sf::square(sigma));
  });
  CHECK(err < 1e-5);
}

TEST_CASE("volume rendering closed forms") {
  SUBCASE("all-zero densities render nothing") {
    auto sigma = Tensor<double>::zeros({1, 4});
    auto delta = Tensor<double>::full({1, 4}, 0.3);
    auto feats = Tensor<double>::ones({1, 4, 2});
    auto out = sf::volume_render(sigma, delta, feats, {0.1, 0.2, 0.3, 0.4});
    CHECK(out.alpha.item() == 0.0);
    for (double v : out.feature.values()) CHECK(v == 0.0);
    for (double v : out.weights.values()) CHECK(v == 0.0);
  }
  SUBCASE("sigma*delta = ln 2 gives w = 1/2; two such samples give (1/2, 1/4)") {
    const double ln2 = std::log(2.0);
    auto one = sf::volume_render(Tensor<double>::from_data({1, 1}, {ln2}),
                                 Tensor<double>::ones({1, 1}),
                                 Tensor<double>::ones({1, 1, 1}), {0.5});
    CHECK(std::abs(one.weights.item() - 0.5) < 1e-12);

    auto two = sf::volume_render(Tensor<double>::from_data({1, 2}, {ln2, ln2}),
                                 Tensor<double>::ones({1, 2}),
                                 Tensor<double>::ones({1, 2, 1}), {0.5, 1.5});
    CHECK(std::abs(two.weights.at({0, 0}) - 0.5) < 1e-12);
    CHECK(std::abs(two.weights.at({0, 1}) - 0.25) < 1e-12);
    CHECK(std::abs(two.alpha.item() - 0.75) < 1e-12);
  }
}

TEST_CASE("128 random samples match the direct-formula oracle below 1e-10") {
  sf::Rng rng(11);
  const int s = 128, c = 3;
  std::vector<double> sigma(s), delta(s), feats(static_cast<size_t>(s * c)), depths(s);
  double t = 0.1;
  for (int i = 0; i < s; ++i) {
    sigma[static_cast<size_t>(i)] = rng.uniform(0, 8);
    delta[static_cast<size_t>(i)] = rng.uniform(0.001, 0.05);
    t += rng.uniform(0.001, 0.05);
    depths[static_cast<size_t>(i)] = t;
    for (int ch = 0; ch < c; ++ch) feats[static_cast<size_t>(i * c + ch)] = rng.uniform(-1, 1);
  }
  auto out = sf::volume_render(Tensor<double>::from_data({1, s}, sigma),
                               Tensor<double>::from_data({1, s}, delta),
                               Tensor<double>::from_data({1, s, c}, feats), depths);
  const auto ref = oracle::volume_render_ref(sigma, delta, feats, c);
  CHECK(std::abs(out.alpha.item() - ref.alpha) < 1e-10);
  for (int ch = 0; ch < c; ++ch)
    CHECK(std::abs(out.feature.at({0, ch}) - ref.feature[static_cast<size_t>(ch)]) < 1e-10);
  for (int i = 0; i < s; ++i)
    CHECK(std::abs(out.weights.at({0, i}) - ref.weights[static_cast<size_t>(i)]) < 1e-10);
}

TEST_CASE("weight bounds, transmittance monotonicity, and density monotonicity on random rays") {
  sf::Rng rng(13);
  for (int ray = 0; ray < 500; ++ray) {
    const int s = 16;
    std::vector<double> sigma(s), delta(s), depths(s);
    double t = 0.1;
    for (int i = 0; i < s; ++i) {
      sigma[static_cast<size_t>(i)] = rng.uniform(0, 20);
      delta[static_cast<size_t>(i)] = rng.uniform(1e-4, 0.2);
      t += delta[static_cast<size_t>(i)];
      depths[static_cast<size_t>(i)] = t;
    }
    auto out = sf::volume_render(Tensor<double>::from_data({1, s}, sigma),
                                 Tensor<double>::from_data({1, s}, delta),
                                 Tensor<double>::zeros({1, s, 1}), depths);
    double wsum = 0, transmittance_prev = 1.0 + 1e-15;
    for (int i = 0; i < s; ++i) {
      const double w = out.weights.at({0, i});
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      wsum += w;
      const double a = 1.0 - std::exp(-sigma[static_cast<size_t>(i)] * delta[static_cast<size_t>(i)]);
      const double transmittance = a > 0 ? w / a : transmittance_prev;
      CHECK(transmittance <= transmittance_prev + 1e-12);
      transmittance_prev = transmittance;
    }
    CHECK(wsum <= 1.0 + 1e-9);

    // raising one density never lowers alpha
    const int j = static_cast<int>(rng.uniform_index(s));
    auto sigma2 = sigma;
    sigma2[static_cast<size_t>(j)] += rng.uniform(0.1, 5.0);
    auto out2 = sf::volume_render(Tensor<double>::from_data({1, s}, sigma2),
                                  Tensor<double>::from_data({1, s}, delta),
                                  Tensor<double>::zeros({1, s, 1}), depths);
    CHECK(out2.alpha.item() >= out.alpha.item() - 1e-9);
  }
}

TEST_CASE("unsorted depths are rejected") {
  CHECK_THROWS_WITH_AS(
      (void)sf::volume_render(Tensor<double>::ones({1, 2}), Tensor<double>::ones({1, 2}),
                              Tensor<double>::ones({1, 2, 1}), {1.0, 0.5}),
      doctest::Contains("sorted"), sf::TensorError);
}

TEST_CASE("volume rendering gradients match finite differences") {
  sf::Rng rng(17);
  auto sigma = Tensor<double>::uniform({2, 6}, rng, 0.1, 4.0).set_requires_grad(true);
  auto feats = Tensor<double>::uniform({2, 6, 3}, rng, -1, 1).set_requires_grad(true);
  auto delta = Tensor<double>::uniform({2, 6}, rng, 0.01, 0.2);
  std::vector<double> depths;
  for (int r = 0; r < 2; ++r) {
    double t = 0;
    for (int i = 0; i < 6; ++i) depths.push_back(t += 0.1);
  }
  const double err = oracle::max_grad_error({&sigma, &feats}, [&] {
    auto out = sf::volume_render(sigma, delta, feats, depths);
    return sf::sum(sf::square(out.feature)) + sf::sum(sf::square(out.alpha));
  });
  CHECK(err < 1e-5);
}

TEST_CASE("constant-color solid field renders c * alpha") {
  // rig the RGB head so every sample is the same color: zero weights, bias b
  // with sigmoid(b) = c, and a solid density
  sf::ParamMap<float> pm;
  auto model = tiny_model(pm, 23);
  for (const char* name : {"scene.head.hidden.w", "scene.head.out_rgb.w"}) {
    auto& t = pm.at(name);
    t.mutable_values().assign(t.values().size(), 0.f);
  }
  pm.at("scene.head.density.w").mutable_values().assign(8, 0.f);
  pm.at("scene.head.density.b").mutable_values()[0] = 5.f;  // sigma = softplus(5)
  auto& bias = pm.at("scene.head.out_rgb.b");
  bias.mutable_values() = {0.8f, -0.3f, 0.1f};

  const sf::Camera cam = front_camera();
  auto patch = sf::render_patch(model, cam, 4, 4, 3, 3, 99, sf::SkeletonPose::identity(1),
                                sf::RenderMode::kSceneOnly, /*rgb=*/true, 1);
  for (int px = 0; px < 9; ++px) {
    const float alpha = patch.alpha[static_cast<size_t>(px)];
    for (int ch = 0; ch < 3; ++ch) {
      const float c = 1.f / (1.f + std::exp(-bias.values()[static_cast<size_t>(ch)]));
      CHECK(patch.values[static_cast<size_t>(px * 3 + ch)] ==
            doctest::Approx(c * alpha).epsilon(1e-5));
    }
  }
}

TEST_CASE("absent human leaves the composite exactly equal to scene-only") {
  sf::ParamMap<float> pm;
  auto model = tiny_model(pm, 31);
  // kill the human: density weights zero, bias very negative
  pm.at("human.head.density.w").mutable_values().assign(8, 0.f);
  pm.at("human.head.density.b").mutable_values()[0] = -50.f;
  const sf::Camera cam = front_camera();
  const sf::SkeletonPose pose = sf::SkeletonPose::identity(1);

  auto scene_only = sf::render_patch(model, cam, 10, 10, 4, 4, 7, pose,
                                     sf::RenderMode::kSceneOnly, true, 1);
  auto composite = sf::render_patch(model, cam, 10, 10, 4, 4, 7, pose,
                                    sf::RenderMode::kComposite, true, 1);
  // softplus(-50) underflows to zero density: contributions vanish exactly
  for (size_t i = 0; i < scene_only.values.size(); ++i)
    CHECK(composite.values[i] == doctest::Approx(scene_only.values[i]).epsilon(1e-6));
  for (size_t i = 0; i < scene_only.alpha.size(); ++i)
    CHECK(composite.alpha_human[i] == doctest::Approx(0.f).epsilon(1e-7));
}

TEST_CASE("an opaque near sample bounds everything behind it by its transmittance") {
  const double ln = 3.0;
  // human sample at depth 0.4 with tau = 3; scene samples behind it
  auto sigma = Tensor<double>::from_data({1, 3}, {0.0, ln / 0.1, 5.0});
  auto delta = Tensor<double>::from_data({1, 3}, {0.1, 0.1, 0.5});
  auto feats = Tensor<double>::ones({1, 3, 1});
  auto out = sf::volume_render(sigma, delta, feats, {0.2, 0.4, 1.0});
  const double behind = out.weights.at({0, 2});
  CHECK(behind < std::exp(-ln) + 1e-12);
}

TEST_CASE("composite merge equals volume rendering of an independently merged list") {
  sf::ParamMap<float> pm;
  auto model = tiny_model(pm, 37);
  const sf::Camera cam = front_camera();
  const sf::SkeletonPose pose = sf::SkeletonPose::identity(1);
  // pixels near the center cross the capsule; corners miss it
  for (const auto [u, v] : {std::pair{16.2, 16.7}, {15.5, 17.5}, {2.5, 3.5}}) {
    const sf::Ray ray = sf::generate_ray(cam, u, v, model.near, model.far);
    const uint64_t seed = sf::pixel_seed(5, static_cast<int64_t>(u), static_cast<int64_t>(v));
    sf::SampleDump dump;
    sf::NoGradGuard ng;
    auto composite =
        sf::render_rays(model, {ray}, {seed}, pose, sf::RenderMode::kComposite, true, &dump);

    struct S {
      double depth, sigma, delta;
      std::array<double, 3> feat;
      int source;  // 0 scene, 1 human
    };
    std::vector<S> merged;
    for (int64_t i = 0; i < dump.s_scene; ++i) {
      S s;
      s.depth = dump.scene_depth[static_cast<size_t>(i)];
      s.sigma = dump.scene_sigma[static_cast<size_t>(i)];
      s.delta = dump.scene_delta[static_cast<size_t>(i)];
      for (int ch = 0; ch < 3; ++ch) s.feat[static_cast<size_t>(ch)] = dump.scene_feat[static_cast<size_t>(i * 3 + ch)];
      s.source = 0;
      merged.push_back(s);
    }
    for (int64_t i = 0; i < dump.s_human; ++i) {
      S s;
      s.depth = dump.human_depth[static_cast<size_t>(i)];
      s.sigma = dump.human_sigma[static_cast<size_t>(i)];
      s.delta = dump.human_delta[static_cast<size_t>(i)];
      for (int ch = 0; ch < 3; ++ch) s.feat[static_cast<size_t>(ch)] = dump.human_feat[static_cast<size_t>(i * 3 + ch)];
      s.source = 1;
      merged.push_back(s);
    }
    // hand merge: ascending depth, scene first on exact ties
    std::stable_sort(merged.begin(), merged.end(), [](const S& a, const S& b) {
      return a.depth < b.depth;
    });
    std::vector<double> sigma, delta, feats;
    for (const S& s : merged) {
      sigma.push_back(s.sigma);
      delta.push_back(s.delta);
      for (double f : s.feat) feats.push_back(f);
    }
    const auto ref = oracle::volume_render_ref(sigma, delta, feats, 3);
    CHECK(std::abs(composite.alpha.item() - ref.alpha) < 2e-6);
    double alpha_h = 0;
    for (size_t i = 0; i < merged.size(); ++i)
      if (merged[i].source == 1) alpha_h += ref.weights[i];
    CHECK(std::abs(composite.alpha_human.item() - alpha_h) < 2e-6);
    for (int ch = 0; ch < 3; ++ch)
      CHECK(std::abs(composite.color.at({0, ch}) - ref.feature[static_cast<size_t>(ch)]) < 2e-6);
  }
}

TEST_CASE("1x1 rect equals a single composite_render call") {
  sf::ParamMap<float> pm;
  auto model = tiny_model(pm, 41);
  const sf::Camera cam = front_camera();
  const sf::SkeletonPose pose = sf::SkeletonPose::identity(1);
  auto patch = sf::render_patch(model, cam, 12, 9, 1, 1, 77, pose,
                                sf::RenderMode::kComposite, true, 1);
  sf::NoGradGuard ng;
  auto single = sf::composite_render(model, cam, 12.5, 9.5, 77, pose, true);
  for (int ch = 0; ch < 3; ++ch)
    CHECK(patch.values[static_cast<size_t>(ch)] == single.color.at({0, ch}));
  CHECK(patch.alpha[0] == single.alpha.item());
}

TEST_CASE("disjoint rects tile into the full render bit-identically") {
  sf::ParamMap<float> pm;
  auto model = tiny_model(pm, 43);
  const sf::Camera cam = front_camera();
  const sf::SkeletonPose pose = sf::SkeletonPose::identity(1);
  auto whole = sf::render_patch(model, cam, 0, 0, 8, 8, 3, pose,
                                sf::RenderMode::kComposite, true, 1);
  for (const auto [x0, y0] : {std::pair{0, 0}, {4, 0}, {0, 4}, {4, 4}}) {
    auto tile = sf::render_patch(model, cam, x0, y0, 4, 4, 3, pose,
                                 sf::RenderMode::kComposite, true, 1);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          CHECK(tile.values[static_cast<size_t>((y * 4 + x) * 3 + ch)] ==
                whole.values[static_cast<size_t>(((y + y0) * 8 + x + x0) * 3 + ch)]);
        }
      }
    }
  }
}

TEST_CASE("1 thread and 8 threads render bit-identically") {
  sf::ParamMap<float> pm;
  auto model1 = tiny_model(pm, 47);
  const sf::Camera cam = front_camera();
  const sf::SkeletonPose pose = sf::SkeletonPose::identity(1);
  auto a = sf::render_patch(model1, cam, 0, 0, 16, 16, 11, pose,
                            sf::RenderMode::kComposite, true, 1);
  auto b = sf::render_patch(model1, cam, 0, 0, 16, 16, 11, pose,
                            sf::RenderMode::kComposite, true, 8);
  CHECK(a.values == b.values);
  CHECK(a.alpha == b.alpha);
  CHECK(a.alpha_human == b.alpha_human);
}

TEST_CASE("rect outside the image is rejected") {
  sf::ParamMap<float> pm;
  auto model = tiny_model(pm, 53);
  CHECK_THROWS_WITH_AS((void)sf::render_patch(model, front_camera(), 28, 28, 8, 8, 1,
                                              sf::SkeletonPose::identity(1),
                                              sf::RenderMode::kComposite, true, 1),
                       doctest::Contains("bounds"), sf::TensorError);
}

TEST_SUITE_END();
