#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "sf/style.hpp"

using sf::Tensor;

namespace {

Tensor<double> rand_image(int h, int w, sf::Rng& rng) {
  return Tensor<double>::uniform({3, h, w}, rng, 0.0, 1.0);
}

}  // namespace

TEST_SUITE_BEGIN("style");

TEST_CASE("extractor: zero image gives zero features, determinism, divisibility error") {
  sf::FeaturePyramid<double> pyr(5);
  auto zero = Tensor<double>::zeros({3, 16, 16});
  auto levels = pyr.extract(zero);
  for (double v : levels.l1.values()) CHECK(v == 0.0);
  for (double v : levels.l3.values()) CHECK(v == 0.0);
  CHECK(levels.l1.shape() == sf::Shape{16, 8, 8});
  CHECK(levels.l2.shape() == sf::Shape{32, 4, 4});
  CHECK(levels.l3.shape() == sf::Shape{64, 2, 2});

  sf::Rng rng(7);
  auto img = rand_image(16, 16, rng);
  auto a = pyr.extract(img);
  auto b = pyr.extract(img);
  CHECK(a.l2.values() == b.l2.values());

  CHECK_THROWS_WITH_AS((void)pyr.extract(Tensor<double>::zeros({3, 30, 42})),
                       doctest::Contains("32x48"), sf::TensorError);
}

TEST_CASE("extractor: level-1 features of a 2-px-shifted image are 1-px-shifted inside") {
  sf::FeaturePyramid<double> pyr(9);
  sf::Rng rng(11);
  const int h = 24, w = 24;
  auto img = rand_image(h, w, rng);
  // shift the image content 2 px right
  std::vector<double> shifted(img.values().size(), 0.0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 2; x < w; ++x)
        shifted[static_cast<size_t>((c * h + y) * w + x)] =
            img.values()[static_cast<size_t>((c * h + y) * w + x - 2)];
  auto l1a = pyr.extract(img).l1;
  auto l1b = pyr.extract(Tensor<double>::from_data({3, h, w}, std::move(shifted))).l1;
  // compare interiors away from the padded border
  for (int64_t c = 0; c < 16; ++c)
    for (int64_t y = 2; y < h / 2 - 2; ++y)
      for (int64_t x = 2; x < w / 2 - 2; ++x)
        CHECK(l1b.at({c, y, x}) == doctest::Approx(l1a.at({c, y, x - 1})).epsilon(1e-9));
}

TEST_CASE("adaattn: spatially constant style collapses to psi(v) everywhere") {
  sf::Rng rng(13);
  sf::ParamMap<double> pm;
  sf::AdaAttnLayer<double> layer(pm, "attn", 6, 4, 5, rng);
  auto content = Tensor<double>::uniform({9, 6}, rng, -1, 1);
  std::vector<double> v = {0.3, -0.8, 0.5, 1.2};
  std::vector<double> style_flat;
  for (int i = 0; i < 7; ++i) style_flat.insert(style_flat.end(), v.begin(), v.end());
  auto out = layer.forward(content, Tensor<double>::from_data({7, 4}, std::move(style_flat)));

  // expected: psi(v), identical at every position (S = sqrt(eps) ~ 3e-3
  // modulates the normalized content slightly; spread must stay tiny)
  for (int64_t ch = 0; ch < 5; ++ch) {
    for (int64_t i = 1; i < 9; ++i)
      CHECK(std::abs(out.at({i, ch}) - out.at({0, ch})) < 1e-2);
  }
  // against the closed form with S = sqrt(eps)
  auto vt = Tensor<double>::from_data({1, 4}, v);
  auto psi_v = layer.psi.forward(vt);
  for (int64_t ch = 0; ch < 5; ++ch) {
    CHECK(out.at({0, ch}) == doctest::Approx(psi_v.at({0, ch})).epsilon(0.05));
  }
}

TEST_CASE("adaattn: a single style position receives attention exactly 1") {
  sf::Rng rng(17);
  sf::ParamMap<double> pm;
  sf::AdaAttnLayer<double> layer(pm, "attn", 6, 4, 4, rng);
  // with one style position, M = that vector and S = sqrt(eps) regardless of content
  std::vector<double> v = {1.0, -2.0, 0.5, 3.0};
  auto content = Tensor<double>::uniform({5, 6}, rng, -1, 1);
  auto core_out = sf::adaattn_core(layer.phi.forward(content),
                                   Tensor<double>::from_data({1, 4}, v));
  for (int64_t i = 0; i < 5; ++i) {
    for (int64_t ch = 0; ch < 4; ++ch) {
      // S*Q term is O(sqrt(eps)); M dominates
      CHECK(core_out.at({i, ch}) ==
            doctest::Approx(v[static_cast<size_t>(ch)]).epsilon(1e-2).scale(1.0));
    }
  }
}

TEST_CASE("adaattn: identical keys (uniform attention) match the AdaIN oracle") {
  sf::Rng rng(19);
  const int64_t nc = 8, ns = 12, d = 4;
  // identical keys happen when every phi(F_c) row is the same vector
  std::vector<double> row;
  for (int64_t i = 0; i < d; ++i) row.push_back(rng.uniform(-1, 1));
  std::vector<double> content;
  for (int64_t i = 0; i < nc; ++i) content.insert(content.end(), row.begin(), row.end());
  auto content_t = Tensor<double>::from_data({nc, d}, content);
  auto style = Tensor<double>::uniform({ns, d}, rng, -2, 2);

  auto out = sf::adaattn_core(content_t, style);

  // oracle: global AdaIN statistics on the normalized content
  auto q = sf::channel_norm(content_t);
  std::vector<double> ref;
  oracle::adain_ref(q.values(), nc, d, style.values(), ns, &ref);
  for (int64_t i = 0; i < nc; ++i)
    for (int64_t ch = 0; ch < d; ++ch)
      CHECK(out.at({i, ch}) ==
            doctest::Approx(ref[static_cast<size_t>(i * d + ch)]).epsilon(1e-5));
}

TEST_CASE("adaattn attention rows sum to 1") {
  sf::Rng rng(23);
  auto q = Tensor<double>::uniform({6, 4}, rng, -1, 1);
  auto k = Tensor<double>::uniform({9, 4}, rng, -1, 1);
  auto attn = sf::softmax(sf::matmul(sf::channel_norm(q),
                                     sf::transpose2d(sf::channel_norm(k))) * 0.5, 1);
  for (int64_t i = 0; i < 6; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 9; ++j) s += attn.at({i, j});
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("adaattn rejects an empty style map") {
  sf::Rng rng(29);
  auto content = Tensor<double>::uniform({4, 4}, rng, -1, 1);
  CHECK_THROWS_WITH_AS((void)sf::adaattn_core(content, Tensor<double>::zeros({0, 4})),
                       doctest::Contains("empty"), sf::TensorError);
}

TEST_CASE("decoder: zero weights give a constant sigmoid(bias) image; shape preserved") {
  sf::Rng rng(31);
  sf::ParamMap<double> pm;
  sf::Decoder<double> dec(pm, "dec", 7, rng);
  for (auto& [k, t] : pm) t.mutable_values().assign(t.values().size(), 0.0);
  pm.at("dec.c3.b").mutable_values() = {0.4, -1.0, 2.0};
  auto out = dec.forward(Tensor<double>::uniform({7, 10, 12}, rng, -1, 1));
  CHECK(out.shape() == sf::Shape{3, 10, 12});
  for (int64_t c = 0; c < 3; ++c) {
    const double expect = 1.0 / (1.0 + std::exp(-pm.at("dec.c3.b").at({c})));
    for (int64_t y = 0; y < 10; ++y)
      for (int64_t x = 0; x < 12; ++x)
        CHECK(out.at({c, y, x}) == doctest::Approx(expect).epsilon(1e-12));
  }
  for (double v : out.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("decoder gradients match finite differences") {
  sf::Rng rng(37);
  sf::ParamMap<double> pm;
  sf::Decoder<double> dec(pm, "dec", 4, rng);
  auto input = Tensor<double>::uniform({4, 6, 6}, rng, -1, 1);
  std::vector<Tensor<double>*> leaves;
  for (auto& [k, v] : pm) leaves.push_back(&v);
  const double err =
      oracle::max_grad_error(leaves, [&] { return sf::sum(sf::square(dec.forward(input))); });
  CHECK(err < 1e-5);
}

TEST_CASE("style losses: zero at the style image itself, sensitive to contrast") {
  sf::FeaturePyramid<double> pyr(41);
  sf::Rng rng(43);
  auto style_img = rand_image(16, 16, rng);
  sf::StyleContext<double> ctx(pyr, style_img);

  auto content_levels = pyr.extract(style_img);
  auto losses = sf::style_losses(style_img, pyr, ctx, content_levels);
  CHECK(losses.global.item() == doctest::Approx(0.0).epsilon(1e-9));

  // doubling contrast must strictly change the global statistics
  auto doubled = sf::clamp(style_img * 2.0 - 0.5, 0.0, 1.0);
  auto losses2 = sf::style_losses(doubled, pyr, ctx, content_levels);
  CHECK(losses2.global.item() > 1e-3);
}

TEST_CASE("adaattn + decoder + style loss gradients match finite differences (1e-4)") {
  sf::FeaturePyramid<double> pyr(47);
  sf::Rng rng(53);
  sf::ParamMap<double> pm;
  sf::AdaAttnLayer<double> layer(pm, "attn", 5, 16, 6, rng);
  sf::Decoder<double> dec(pm, "dec", 6, rng);
  auto style_img = rand_image(16, 16, rng);
  sf::StyleContext<double> ctx(pyr, style_img);
  auto content = rand_image(8, 8, rng);
  auto content_levels = pyr.extract(content);
  auto fc = Tensor<double>::uniform({5, 8, 8}, rng, -1, 1);

  std::vector<Tensor<double>*> leaves;
  for (auto& [k, v] : pm) leaves.push_back(&v);
  const double err = oracle::max_grad_error(leaves, [&] {
    auto i_cs = sf::stylize_feature_map(fc, layer, ctx, dec);
    auto losses = sf::style_losses(i_cs, pyr, ctx, content_levels);
    return losses.global + losses.local;
  });
  CHECK(err < 1e-4);
}

TEST_SUITE_END();
