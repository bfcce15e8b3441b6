#pragma once

#include <string>
#include <vector>

#include "sf/nn.hpp"
#include "sf/tensor.hpp"

// Feature-space stylization: a frozen seeded feature pyramid (the stand-in
// for a pretrained perceptual net), the content/style mappings phi and psi,
// the AdaAttN attention-normalization layer, and the convolutional decoder.

namespace sf {

constexpr double kNormEps = 1e-5;

// Per-position normalization over channels of an [n, C] feature matrix.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x) {
  Tensor<T> m = mean(x, {1}, true);
  Tensor<T> centered = x - m;
  Tensor<T> var = mean(square(centered), {1}, true);
  return centered / sqrt(var + static_cast<T>(kNormEps));
}

// ---------------------------------------------------------------------------
// Frozen feature pyramid: three conv3x3 + relu + 2x average-pool stages,
// 3 -> 16 -> 32 -> 64 channels. Seeded, never trained, excluded from every
// optimizer.
// ---------------------------------------------------------------------------

template <typename T>
struct PyramidLevels {
  Tensor<T> l1, l2, l3;  // [16,h/2,w/2], [32,h/4,w/4], [64,h/8,w/8]

  const Tensor<T>& level(int l) const {
    switch (l) {
      case 1: return l1;
      case 2: return l2;
      default: return l3;
    }
  }
};

inline constexpr int kPyramidChannels[4] = {3, 16, 32, 64};

template <typename T>
class FeaturePyramid {
 public:
  explicit FeaturePyramid(uint64_t seed) {
    Rng rng(hash_combine(seed, 0x9d2c5680u));
    conv1_ = Conv2dLayer<T>(params_, "pyr.c1", 3, 16, 3, 1, rng);
    conv2_ = Conv2dLayer<T>(params_, "pyr.c2", 16, 32, 3, 1, rng);
    conv3_ = Conv2dLayer<T>(params_, "pyr.c3", 32, 64, 3, 1, rng);
    for (auto& [k, v] : params_) v.set_requires_grad(false);
  }

  PyramidLevels<T> extract(const Tensor<T>& image) const {
    detail::require(image.ndim() == 3 && image.dim(0) == 3, "extract_features",
                    "image must be [3,H,W], got " + shape_str(image.shape()));
    const int64_t h = image.dim(1), w = image.dim(2);
    if (h % 8 != 0 || w % 8 != 0)
      detail::fail("extract_features",
                   "spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                       " must be divisible by 8; pad to " + std::to_string((h + 7) / 8 * 8) +
                       "x" + std::to_string((w + 7) / 8 * 8));
    PyramidLevels<T> out;
    out.l1 = avg_pool2d(relu(conv1_.forward(image)));
    out.l2 = avg_pool2d(relu(conv2_.forward(out.l1)));
    out.l3 = avg_pool2d(relu(conv3_.forward(out.l2)));
    return out;
  }

 private:
  ParamMap<T> params_;
  Conv2dLayer<T> conv1_, conv2_, conv3_;
};

// Fixed seeded linear map from level-1 pyramid channels to the rendered
// feature dimension; defines the target space for the feature loss and the
// per-frame 2-D stylization baseline.
template <typename T>
class ContentProjection {
 public:
  ContentProjection(uint64_t seed, int64_t c_out) {
    Rng rng(hash_combine(seed, 0xb5297a4du));
    lin_ = Linear<T>(params_, "proj", kPyramidChannels[1], c_out, rng);
    for (auto& [k, v] : params_) v.set_requires_grad(false);
  }

  // Level-1 features of an image patch, upsampled back to patch resolution
  // and projected to the rendered-feature space: [C, h, w].
  Tensor<T> project(const FeaturePyramid<T>& pyr, const Tensor<T>& image) const {
    Tensor<T> l1 = upsample2x_nearest(pyr.extract(image).l1);  // [16, h, w]
    const int64_t c = l1.dim(0), h = l1.dim(1), w = l1.dim(2);
    Tensor<T> flat = transpose2d(reshape(l1, {c, h * w}));  // [h*w, 16]
    Tensor<T> proj = lin_.forward(flat);                    // [h*w, C]
    return reshape(transpose2d(proj), {proj.dim(1), h, w});
  }

 private:
  ParamMap<T> params_;
  Linear<T> lin_;
};

// ---------------------------------------------------------------------------
// AdaAttN
// ---------------------------------------------------------------------------

// Attention-weighted style statistics applied to normalized content:
//   Q = norm(phi(F_c)), K = norm(F_s), V = F_s
//   A = softmax(Q K^T / sqrt(dim))
//   M = A V,  S = sqrt(max(A (V*V) - M*M, 0) + eps)
//   out = S * Q + M
// The embedding-free core; phi/psi wrap it below.
template <typename T>
Tensor<T> adaattn_core(const Tensor<T>& content_embed, const Tensor<T>& style_flat) {
  detail::require(style_flat.ndim() == 2 && style_flat.dim(0) > 0, "adaattn",
                  "style feature map is empty");
  detail::require(content_embed.dim(1) == style_flat.dim(1), "adaattn",
                  "shape mismatch " + shape_str(content_embed.shape()) + " vs " +
                      shape_str(style_flat.shape()));
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(content_embed.dim(1))));
  Tensor<T> q = channel_norm(content_embed);
  Tensor<T> k = channel_norm(style_flat);
  Tensor<T> attn = softmax(mul_scalar(matmul(q, transpose2d(k)), scale), 1);
  Tensor<T> m = matmul(attn, style_flat);
  Tensor<T> e2 = matmul(attn, square(style_flat));
  Tensor<T> s = sqrt(relu(e2 - m * m) + static_cast<T>(kNormEps));
  return s * q + m;
}

// Learned wrapper: F_cs = psi(AdaAttN(phi(F_c), F_s)).
template <typename T>
struct AdaAttnLayer {
  Linear<T> phi;  // C -> style channel dim
  Linear<T> psi;  // style channel dim -> M

  AdaAttnLayer() = default;
  AdaAttnLayer(ParamMap<T>& pm, const std::string& prefix, int64_t content_dim,
               int64_t style_dim, int64_t out_dim, Rng& rng)
      : phi(pm, prefix + ".phi", content_dim, style_dim, rng),
        psi(pm, prefix + ".psi", style_dim, out_dim, rng) {}

  // content_flat: [n_c, C] rendered features; style_flat: [n_s, style_dim].
  Tensor<T> forward(const Tensor<T>& content_flat, const Tensor<T>& style_flat) const {
    return psi.forward(adaattn_core(phi.forward(content_flat), style_flat));
  }
};

// ---------------------------------------------------------------------------
// Decoder F_theta: three 3x3 convolutions without intermediate up/down
// sampling (receptive field 7 px), sigmoid output in [0, 1].
// ---------------------------------------------------------------------------

template <typename T>
struct Decoder {
  Conv2dLayer<T> c1, c2, c3;

  Decoder() = default;
  Decoder(ParamMap<T>& pm, const std::string& prefix, int64_t m, Rng& rng)
      : c1(pm, prefix + ".c1", m, 64, 3, 1, rng),
        c2(pm, prefix + ".c2", 64, 32, 3, 1, rng),
        c3(pm, prefix + ".c3", 32, 3, 3, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& fcs) const {
    return sigmoid(c3.forward(relu(c2.forward(relu(c1.forward(fcs))))));
  }
};

// ---------------------------------------------------------------------------
// Style context: everything derived from one style image, computed once and
// shared read-only afterwards.
// ---------------------------------------------------------------------------

template <typename T>
struct StyleContext {
  Tensor<T> image;            // [3, h, w]
  PyramidLevels<T> levels;    // detached
  Tensor<T> l1_flat;          // [n_s, 16]
  std::vector<Tensor<T>> level_mean, level_std;  // per level, [C_l]

  StyleContext() = default;
  StyleContext(const FeaturePyramid<T>& pyr, const Tensor<T>& style_image) {
    NoGradGuard ng;
    image = style_image;
    levels = pyr.extract(style_image);
    const Tensor<T>& l1 = levels.l1;
    l1_flat = transpose2d(reshape(l1, {l1.dim(0), l1.dim(1) * l1.dim(2)}));
    for (int l = 1; l <= 3; ++l) {
      const Tensor<T>& f = levels.level(l);
      Tensor<T> flat = reshape(f, {f.dim(0), f.dim(1) * f.dim(2)});
      Tensor<T> mu = mean(flat, {1});
      Tensor<T> var = mean(square(flat - reshape(mu, {f.dim(0), 1})), {1});
      level_mean.push_back(mu);
      level_std.push_back(sqrt(var + static_cast<T>(kNormEps)));
    }
  }
};

// Stylizes a [C, h, w] feature map and decodes it to RGB.
template <typename T>
Tensor<T> stylize_feature_map(const Tensor<T>& fc, const AdaAttnLayer<T>& layer,
                              const StyleContext<T>& ctx, const Decoder<T>& dec) {
  const int64_t c = fc.dim(0), h = fc.dim(1), w = fc.dim(2);
  Tensor<T> flat = transpose2d(reshape(fc, {c, h * w}));
  Tensor<T> fcs = layer.forward(flat, ctx.l1_flat);  // [h*w, M]
  Tensor<T> grid = reshape(transpose2d(fcs), {fcs.dim(1), h, w});
  return dec.forward(grid);
}

// ---------------------------------------------------------------------------
// Style losses: global statistics matching plus local attention targets.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> l2_norm_all(const Tensor<T>& x) {
  return sqrt(sum(square(x)));
}

template <typename T>
struct StyleLosses {
  Tensor<T> global;
  Tensor<T> local;
};

// I_cs: decoded stylized image [3,h,w]; content_levels: pyramid features of
// the content patch (targets detached inside).
template <typename T>
StyleLosses<T> style_losses(const Tensor<T>& i_cs, const FeaturePyramid<T>& pyr,
                            const StyleContext<T>& ctx, const PyramidLevels<T>& content_levels) {
  PyramidLevels<T> out_levels = pyr.extract(i_cs);
  Tensor<T> global = Tensor<T>::zeros({});
  Tensor<T> local = Tensor<T>::zeros({});
  for (int l = 1; l <= 3; ++l) {
    const Tensor<T>& f = out_levels.level(l);
    Tensor<T> flat = reshape(f, {f.dim(0), f.dim(1) * f.dim(2)});
    Tensor<T> mu = mean(flat, {1});
    Tensor<T> var = mean(square(flat - reshape(mu, {f.dim(0), 1})), {1});
    Tensor<T> sd = sqrt(var + static_cast<T>(kNormEps));
    global = global + l2_norm_all(mu - ctx.level_mean[static_cast<size_t>(l - 1)]) +
             l2_norm_all(sd - ctx.level_std[static_cast<size_t>(l - 1)]);

    // per-level attention target from the embedding-free AdaAttN
    Tensor<T> target;
    {
      NoGradGuard ng;
      const Tensor<T>& cf = content_levels.level(l);
      Tensor<T> c_flat = transpose2d(reshape(cf.detach(), {cf.dim(0), cf.dim(1) * cf.dim(2)}));
      const Tensor<T>& sf = ctx.levels.level(l);
      Tensor<T> s_flat = transpose2d(reshape(sf, {sf.dim(0), sf.dim(1) * sf.dim(2)}));
      Tensor<T> t = adaattn_core(c_flat, s_flat);  // [n_c, C_l]
      target = reshape(transpose2d(t), {cf.dim(0), cf.dim(1), cf.dim(2)});
    }
    local = local + l2_norm_all(f - target);
  }
  return {global, local};
}

}  // namespace sf
