#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "sf/losses.hpp"

using sf::Tensor;

namespace {

// independent straight-line reimplementation of every human loss term
double human_loss_ref(const std::vector<double>& rgb, const std::vector<double>& gt,
                      const std::vector<double>& mask, const std::vector<double>& alpha,
                      const std::vector<double>& weights, const std::vector<double>& probe_sigma,
                      const std::vector<double>& probe_inside,
                      const std::vector<double>& line_alpha, const sf::LossWeights& w,
                      double lambda_a_now) {
  const size_t r = mask.size();
  double l_rgb = 0, l_alpha = 0;
  for (size_t i = 0; i < r; ++i) {
    double d2 = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = rgb[3 * i + static_cast<size_t>(c)] - gt[3 * i + static_cast<size_t>(c)];
      d2 += d * d;
    }
    l_rgb += mask[i] * std::sqrt(d2);
    l_alpha += mask[i] * std::abs(1.0 - alpha[i]);
  }
  l_rgb /= static_cast<double>(r);
  l_alpha /= static_cast<double>(r);

  double l_smpl = 0;
  for (size_t i = 0; i < probe_sigma.size(); ++i) {
    l_smpl += probe_inside[i] > 0.5 ? std::max(0.0, 1.0 - probe_sigma[i])
                                    : std::abs(probe_sigma[i]);
  }
  l_smpl /= static_cast<double>(probe_sigma.size());

  auto bin = [](double x) { return -std::log(std::exp(-std::abs(x)) + std::exp(-std::abs(1.0 - x))); };
  double l_hard = 0;
  for (double x : weights) l_hard += bin(x);
  l_hard /= static_cast<double>(weights.size());
  double l_edge = 0;
  for (double x : line_alpha) l_edge += bin(x);
  l_edge /= static_cast<double>(line_alpha.size());

  return l_rgb + lambda_a_now * l_alpha + w.lambda_smpl * l_smpl + w.lambda_hard * l_hard +
         w.lambda_edge * l_edge;
}

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("scene loss: zero at equality, 3-4-5 closed form, count mismatch rejected") {
  auto gt = Tensor<double>::from_data({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  CHECK(sf::loss_scene(gt, gt).item() == 0.0);

  auto pred = Tensor<double>::from_data({1, 3}, {0.3, 0.0, 0.4});
  CHECK(sf::loss_scene(pred, Tensor<double>::zeros({1, 3})).item() == doctest::Approx(0.5));

  CHECK_THROWS_WITH_AS((void)sf::loss_scene(gt, Tensor<double>::zeros({3, 3})),
                       doctest::Contains("mismatch"), sf::TensorError);
}

TEST_CASE("scene loss gradient vs finite differences (1e-6 floor)") {
  sf::Rng rng(3);
  auto pred = Tensor<double>::uniform({6, 3}, rng, 0, 1).set_requires_grad(true);
  auto gt = Tensor<double>::uniform({6, 3}, rng, 0, 1);
  const double err = oracle::max_grad_error({&pred}, [&] { return sf::loss_scene(pred, gt); });
  CHECK(err < 1e-5);
}

TEST_CASE("lambda_a decays linearly to zero, exactly") {
  CHECK(sf::lambda_a_at(0.01, 0, 1000) == 0.01);
  CHECK(sf::lambda_a_at(0.01, 250, 1000) == doctest::Approx(0.0075).epsilon(1e-15));
  CHECK(sf::lambda_a_at(0.01, 1000, 1000) == 0.0);
  CHECK(sf::lambda_a_at(0.01, 2000, 1000) == 0.0);
  const sf::LossWeights defaults;
  CHECK(defaults.lambda_a == 0.01);
  CHECK(defaults.lambda_smpl == 1.0);
  CHECK(defaults.lambda_hard == 0.1);
  CHECK(defaults.lambda_edge == 0.1);
}

TEST_CASE("binarization penalty closed forms and shape over [0,1]") {
  auto at = [](double x) {
    return sf::binarization_penalty(Tensor<double>::scalar(x)).item();
  };
  CHECK(at(0.0) == doctest::Approx(-std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(at(1.0) == doctest::Approx(-std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(at(0.5) == doctest::Approx(0.5 - std::log(2.0)).epsilon(1e-12));
  CHECK(at(0.5) > at(0.0));  // soft weights are penalized

  // dense scan: minimal exactly at the endpoints, maximal at 1/2
  double best = 1e9, worst = -1e9;
  int best_i = -1, worst_i = -1;
  for (int i = 0; i <= 1000; ++i) {
    const double v = at(i / 1000.0);
    if (v < best) best = v, best_i = i;
    if (v > worst) worst = v, worst_i = i;
  }
  CHECK((best_i == 0 || best_i == 1000));
  CHECK(worst_i == 500);
}

TEST_CASE("probe solidity: sigma = 1 inside costs nothing; exceeding 1 inside costs nothing") {
  sf::HumanLossInputs<double> in;
  in.rgb = Tensor<double>::zeros({1, 3});
  in.gt_rgb = Tensor<double>::zeros({1, 3});
  in.mask = Tensor<double>::zeros({1});
  in.alpha = Tensor<double>::zeros({1});
  in.weights = Tensor<double>::zeros({1, 1});
  in.line_alpha = Tensor<double>::zeros({1});
  in.probe_inside = Tensor<double>::from_data({3}, {1.0, 1.0, 0.0});
  in.probe_sigma = Tensor<double>::from_data({3}, {1.0, 7.0, 0.0});
  auto t = sf::loss_human(in, sf::LossWeights{}, 0.0);
  CHECK(t.smpl.item() == 0.0);

  in.probe_sigma = Tensor<double>::from_data({3}, {0.25, 7.0, 0.5});
  t = sf::loss_human(in, sf::LossWeights{}, 0.0);
  CHECK(t.smpl.item() == doctest::Approx((0.75 + 0.0 + 0.5) / 3.0).epsilon(1e-12));
}

TEST_CASE("full human loss matches the independent reimplementation below 1e-10") {
  sf::Rng rng(7);
  const int r = 17, s = 5, p = 23, l = 9;
  std::vector<double> rgb, gt, mask, alpha, weights, psig, pin, lalpha;
  for (int i = 0; i < r; ++i) {
    for (int c = 0; c < 3; ++c) {
      rgb.push_back(rng.uniform(0, 1));
      gt.push_back(rng.uniform(0, 1));
    }
    mask.push_back(rng.uniform() < 0.7 ? 1.0 : 0.0);
    alpha.push_back(rng.uniform(0, 1));
  }
  for (int i = 0; i < r * s; ++i) weights.push_back(rng.uniform(0, 1));
  for (int i = 0; i < p; ++i) {
    psig.push_back(rng.uniform(0, 3));
    pin.push_back(rng.uniform() < 0.3 ? 1.0 : 0.0);
  }
  for (int i = 0; i < l; ++i) lalpha.push_back(rng.uniform(0, 1));

  sf::HumanLossInputs<double> in;
  in.rgb = Tensor<double>::from_data({r, 3}, rgb);
  in.gt_rgb = Tensor<double>::from_data({r, 3}, gt);
  in.mask = Tensor<double>::from_data({r}, mask);
  in.alpha = Tensor<double>::from_data({r}, alpha);
  in.weights = Tensor<double>::from_data({r, s}, weights);
  in.probe_sigma = Tensor<double>::from_data({p}, psig);
  in.probe_inside = Tensor<double>::from_data({p}, pin);
  in.line_alpha = Tensor<double>::from_data({l}, lalpha);

  const sf::LossWeights w;
  const double la = sf::lambda_a_at(w.lambda_a, 137, 1000);
  const auto terms = sf::loss_human(in, w, la);
  const double ref =
      human_loss_ref(rgb, gt, mask, alpha, weights, psig, pin, lalpha, w, la);
  CHECK(std::abs(terms.total.item() - ref) < 1e-10);
}

TEST_CASE("human loss gradients match finite differences") {
  sf::Rng rng(11);
  auto rgb = Tensor<double>::uniform({4, 3}, rng, 0, 1).set_requires_grad(true);
  auto alpha = Tensor<double>::uniform({4}, rng, 0.1, 0.9).set_requires_grad(true);
  auto weights = Tensor<double>::uniform({4, 3}, rng, 0.05, 0.95).set_requires_grad(true);
  auto psig = Tensor<double>::uniform({6}, rng, 0.05, 2.5).set_requires_grad(true);
  auto lalpha = Tensor<double>::uniform({3}, rng, 0.1, 0.9).set_requires_grad(true);

  sf::HumanLossInputs<double> in;
  in.gt_rgb = Tensor<double>::uniform({4, 3}, rng, 0, 1);
  in.mask = Tensor<double>::from_data({4}, {1.0, 1.0, 0.0, 1.0});
  in.probe_inside = Tensor<double>::from_data({6}, {1, 0, 0, 1, 0, 1});
  const sf::LossWeights w;
  const double err = oracle::max_grad_error({&rgb, &alpha, &weights, &psig, &lalpha}, [&] {
    in.rgb = rgb;
    in.alpha = alpha;
    in.weights = weights;
    in.probe_sigma = psig;
    in.line_alpha = lalpha;
    return sf::loss_human(in, w, 0.007).total;
  });
  CHECK(err < 1e-4);
}

TEST_CASE("feature loss: zero at ground truth, misalignment rejected, finite differences") {
  sf::FeaturePyramid<double> pyr(13);
  sf::Rng rng(17);
  auto gt = Tensor<double>::uniform({3, 8, 8}, rng, 0, 1);
  auto fc = Tensor<double>::uniform({5, 8, 8}, rng, -1, 1);

  CHECK(sf::loss_feature(fc, fc, gt, gt, pyr).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sf::loss_feature(Tensor<double>::zeros({5, 8, 8}), Tensor<double>::zeros({5, 8, 8}),
                         Tensor<double>::zeros({3, 8, 8}), Tensor<double>::zeros({3, 8, 8}), pyr)
            .item() == 0.0);

  CHECK_THROWS_WITH_AS(
      (void)sf::loss_feature(fc, Tensor<double>::zeros({5, 4, 4}), gt, gt, pyr),
      doctest::Contains("misaligned"), sf::TensorError);

  auto fc_v = fc.set_requires_grad(true);
  auto img = Tensor<double>::uniform({3, 8, 8}, rng, 0.1, 0.9).set_requires_grad(true);
  auto target = Tensor<double>::uniform({5, 8, 8}, rng, -1, 1);
  const double err = oracle::max_grad_error({&fc_v, &img}, [&] {
    return sf::loss_feature(fc_v, target, img, gt, pyr);
  });
  CHECK(err < 1e-4);
}

TEST_SUITE_END();
