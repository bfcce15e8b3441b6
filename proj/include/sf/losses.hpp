#pragma once

#include <algorithm>

#include "sf/style.hpp"
#include "sf/tensor.hpp"

// Training objectives: scene reconstruction, the human loss bundle, and the
// feature/decoder loss.

namespace sf {

struct LossWeights {
  double lambda_a = 0.01;  // a.k.a. lambda_mask
  double lambda_smpl = 1.0;
  double lambda_hard = 0.1;
  double lambda_edge = 0.1;
};

// lambda_a decays linearly to zero over the reconstruction stage.
inline double lambda_a_at(double lambda_a0, int64_t step, int64_t total_steps) {
  const double f = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return lambda_a0 * std::max(0.0, f);
}

// Sum over rays of the per-ray color distance ||C(r) - C~(r)||.
template <typename T>
Tensor<T> loss_scene(const Tensor<T>& pred, const Tensor<T>& gt) {
  detail::require(pred.shape() == gt.shape(), "loss_scene",
                  "ray count mismatch " + shape_str(pred.shape()) + " vs " +
                      shape_str(gt.shape()));
  return sum(sqrt(sum(square(pred - gt), {1})));
}

// -log(e^{-|w|} + e^{-|1-w|}): minimal at w in {0, 1}, maximal at 0.5.
template <typename T>
Tensor<T> binarization_penalty(const Tensor<T>& w) {
  return -log(exp(-abs(w)) + exp(-abs(T(1) - w)));
}

template <typename T>
struct HumanLossInputs {
  Tensor<T> rgb;           // [R,3] human-only render
  Tensor<T> gt_rgb;        // [R,3]
  Tensor<T> mask;          // [R] human-mask values M(r)
  Tensor<T> alpha;         // [R] accumulated human alpha
  Tensor<T> weights;       // [R,S] per-sample weights along human rays
  Tensor<T> probe_sigma;   // [P] densities at canonical probe points
  Tensor<T> probe_inside;  // [P] 1 inside the canonical body, else 0
  Tensor<T> line_alpha;    // [L] accumulated alpha along random canonical lines
};

template <typename T>
struct HumanLossTerms {
  Tensor<T> rgb, alpha, smpl, hard, edge, total;
};

// L_h = L_r + lambda_a L_a + lambda_smpl L_smpl + lambda_hard L_hard +
// lambda_edge L_edge. Each term is a mean over its own population.
template <typename T>
HumanLossTerms<T> loss_human(const HumanLossInputs<T>& in, const LossWeights& w,
                             double lambda_a_now) {
  HumanLossTerms<T> t;
  Tensor<T> per_ray = sqrt(sum(square(in.rgb - in.gt_rgb), {1}));  // [R]
  t.rgb = mean(in.mask * per_ray);
  t.alpha = mean(in.mask * abs(T(1) - in.alpha));
  // inside the body the density must reach at least the solid level;
  // penalizing being above it would cap opacity and contradict the solidity
  // goal, so the inside term is one-sided
  t.smpl = mean(in.probe_inside * relu(T(1) - in.probe_sigma) +
                (T(1) - in.probe_inside) * abs(in.probe_sigma));
  t.hard = mean(binarization_penalty(in.weights));
  t.edge = mean(binarization_penalty(in.line_alpha));
  t.total = t.rgb + mul_scalar(t.alpha, static_cast<T>(lambda_a_now)) +
            mul_scalar(t.smpl, static_cast<T>(w.lambda_smpl)) +
            mul_scalar(t.hard, static_cast<T>(w.lambda_hard)) +
            mul_scalar(t.edge, static_cast<T>(w.lambda_edge));
  return t;
}

// ||F_c - F~_c|| + sum_l ||F^l(I) - F^l(I~)|| + ||I - I~||, all Frobenius.
template <typename T>
Tensor<T> loss_feature(const Tensor<T>& fc, const Tensor<T>& fc_target, const Tensor<T>& image,
                       const Tensor<T>& gt_image, const FeaturePyramid<T>& pyr) {
  detail::require(fc.shape() == fc_target.shape(), "loss_feature",
                  "feature maps misaligned: " + shape_str(fc.shape()) + " vs " +
                      shape_str(fc_target.shape()));
  detail::require(image.shape() == gt_image.shape(), "loss_feature",
                  "images misaligned: " + shape_str(image.shape()) + " vs " +
                      shape_str(gt_image.shape()));
  PyramidLevels<T> pl = pyr.extract(image);
  PyramidLevels<T> gl = pyr.extract(gt_image.detach());
  Tensor<T> loss = l2_norm_all(fc - fc_target);
  for (int l = 1; l <= 3; ++l) loss = loss + l2_norm_all(pl.level(l) - gl.level(l).detach());
  return loss + l2_norm_all(image - gt_image);
}

}  // namespace sf
