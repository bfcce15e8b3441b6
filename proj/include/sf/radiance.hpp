#pragma once

#include <thread>
#include <vector>

#include "sf/articulation.hpp"
#include "sf/geometry.hpp"
#include "sf/nn.hpp"
#include "sf/triplane.hpp"

// Field heads mapping tri-plane features (+ encoded view direction) to
// density and a per-point feature vector, volume rendering, and composite
// rendering over merged human/scene ray samples.

namespace sf {

constexpr int kDirFreqs = 4;
inline int dir_encode_dim() { return positional_encode_dim(3, kDirFreqs, true); }

// Density branch: one fully connected layer D -> 1 then softplus. Feature
// branch: hidden layer of 128 units (relu) on [f(x); gamma_d(d)], then one
// output layer. Stage-1 training uses a temporary 3-channel sigmoid RGB
// output that is discarded afterwards.
template <typename T>
struct FieldHead {
  static constexpr int64_t kHidden = 128;

  Linear<T> density;   // D -> 1
  Linear<T> hidden;    // D + dim(gamma_d) -> 128
  Linear<T> out_rgb;   // 128 -> 3
  Linear<T> out_feat;  // 128 -> C

  FieldHead() = default;
  FieldHead(ParamMap<T>& pm, const std::string& prefix, int64_t d, int64_t c, Rng& rng)
      : density(pm, prefix + ".density", d, 1, rng),
        hidden(pm, prefix + ".hidden", d + dir_encode_dim(), kHidden, rng),
        out_rgb(pm, prefix + ".out_rgb", kHidden, 3, rng),
        out_feat(pm, prefix + ".out_feat", kHidden, c, rng) {
    // start near-empty so free space clears out before surfaces form
    density.bias.mutable_values()[0] = T(-1);
  }

  Tensor<T> eval_density(const Tensor<T>& feat) const {
    return softplus(density.forward(feat));  // [n, 1]
  }

  // (sigma [n,1], out [n,3 or C]); rgb selects the sigmoid RGB head.
  std::pair<Tensor<T>, Tensor<T>> eval(const Tensor<T>& feat, const Tensor<T>& dir_enc,
                                       bool rgb) const {
    Tensor<T> sigma = eval_density(feat);
    Tensor<T> h = relu(hidden.forward(concat<T>({feat, dir_enc}, 1)));
    Tensor<T> out = rgb ? sigmoid(out_rgb.forward(h)) : out_feat.forward(h);
    return {sigma, out};
  }
};

// ---------------------------------------------------------------------------
// Volume rendering (over pre-sorted samples):
//   w_i = T_i (1 - exp(-sigma_i delta_i)),  T_i = exp(-sum_{j<i} sigma_j delta_j)
// ---------------------------------------------------------------------------

template <typename T>
struct VolumeRenderResult {
  Tensor<T> feature;  // [R, C]
  Tensor<T> alpha;    // [R]
  Tensor<T> weights;  // [R, S]
};

// `depths` (row-major [R, S]) is only used to enforce the caller's
// sorted-ascending contract.
template <typename T>
VolumeRenderResult<T> volume_render(const Tensor<T>& sigma, const Tensor<T>& delta,
                                    const Tensor<T>& feats, const std::vector<double>& depths) {
  detail::require(sigma.ndim() == 2, "volume_render", "sigma must be [R,S]");
  detail::require(delta.shape() == sigma.shape(), "volume_render",
                  "shape mismatch " + shape_str(sigma.shape()) + " vs " +
                      shape_str(delta.shape()));
  detail::require(feats.ndim() == 3 && feats.dim(0) == sigma.dim(0) &&
                      feats.dim(1) == sigma.dim(1),
                  "volume_render", "feats must be [R,S,C]");
  const int64_t rows = sigma.dim(0), s = sigma.dim(1);
  detail::require(static_cast<int64_t>(depths.size()) == rows * s, "volume_render",
                  "depth count mismatch");
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t i = 0; i + 1 < s; ++i) {
      if (depths[static_cast<size_t>(r * s + i)] > depths[static_cast<size_t>(r * s + i + 1)])
        detail::fail("volume_render", "samples not sorted ascending in depth (ray " +
                                          std::to_string(r) + ")");
    }
  }
  const T* dv = delta.data();
  for (int64_t i = 0; i < delta.numel(); ++i)
    detail::require(dv[i] >= T(0), "volume_render", "negative sample interval");

  Tensor<T> tau = sigma * delta;                                // [R,S]
  Tensor<T> transmittance = exp(-cumsum(tau, 1, /*exclusive=*/true));
  Tensor<T> w = transmittance * (T(1) - exp(-tau));
  Tensor<T> wcol = reshape(w, {rows, s, 1});
  VolumeRenderResult<T> out;
  out.feature = sum(wcol * feats, {1});  // [R, C]
  out.alpha = sum(w, {1});               // [R]
  out.weights = w;
  return out;
}

// ---------------------------------------------------------------------------
// Composite renderer
// ---------------------------------------------------------------------------

enum class RenderMode { kComposite, kSceneOnly, kHumanOnly };

// Everything rendering needs; the training pipeline owns one of these.
template <typename T>
struct SceneModel {
  TriPlaneField<T> scene_field;
  FieldHead<T> scene_head;
  TriPlaneField<T> human_field;
  FieldHead<T> human_head;
  CorrectionNet<T> correction;
  Skeleton skeleton;
  double near = 0.1, far = 6.0;
  int n_scene = 128, n_human = 128;
  double human_pad = 0.1;  // bbox padding around the posed skeleton, meters

  void invalidate_caches() {
    scene_field.invalidate_cache();
    human_field.invalidate_cache();
  }
};

template <typename T>
struct RenderedRays {
  Tensor<T> color;        // [R, C] rgb or feature
  Tensor<T> alpha;        // [R]
  Tensor<T> alpha_human;  // [R] human contribution to alpha (zeros if none)
  Tensor<T> weights;      // [R, S_total] composite weights
  std::vector<double> expected_depth;  // aux, detached
  bool has_human = false;
};

// Detached pre-merge per-sample data, row-major over rays; lets tests merge
// and integrate with an independent routine.
struct SampleDump {
  int64_t s_scene = 0, s_human = 0, channels = 0;
  std::vector<double> scene_depth, human_depth;
  std::vector<double> scene_sigma, human_sigma;
  std::vector<double> scene_delta, human_delta;
  std::vector<double> scene_feat, human_feat;  // [R*S*C]
};

namespace detail_rad {

inline bool ray_aabb(const Ray& ray, const Vec3& lo, const Vec3& hi, double* t0, double* t1) {
  double a = ray.near, b = ray.far;
  for (int d = 0; d < 3; ++d) {
    const double inv = 1.0 / ray.dir[d];
    double ta = (lo[d] - ray.origin[d]) * inv;
    double tb = (hi[d] - ray.origin[d]) * inv;
    if (inv < 0) std::swap(ta, tb);
    a = std::max(a, ta);
    b = std::min(b, tb);
    if (a > b) return false;
  }
  *t0 = a;
  *t1 = b;
  return true;
}

template <typename T>
Tensor<T> encode_dirs(const std::vector<Vec3>& dirs) {
  const int gd = dir_encode_dim();
  std::vector<T> buf(dirs.size() * static_cast<size_t>(gd));
  std::vector<double> enc(static_cast<size_t>(gd));
  for (size_t i = 0; i < dirs.size(); ++i) {
    positional_encode(dirs[i].data(), 3, kDirFreqs, true, enc.data());
    for (int d = 0; d < gd; ++d)
      buf[i * static_cast<size_t>(gd) + static_cast<size_t>(d)] = static_cast<T>(enc[static_cast<size_t>(d)]);
  }
  return Tensor<T>::from_data({static_cast<int64_t>(dirs.size()), gd}, std::move(buf));
}

// Clamps each column of an [n,3] tensor into the field bounds (slightly
// shrunk): out-of-bounds samples are masked to zero density anyway, the
// clamp just keeps the query's bounds contract satisfied.
template <typename T>
Tensor<T> clamp_columns(const Tensor<T>& x, const Bounds3& b, double margin) {
  std::vector<Tensor<T>> cols;
  for (int d = 0; d < 3; ++d) {
    cols.push_back(clamp(index_select(x, 1, {d}), static_cast<T>(b.lo[d] + margin),
                         static_cast<T>(b.hi[d] - margin)));
  }
  return concat<T>(cols, 1);
}

template <typename T>
std::vector<T> inside_mask(const T* pts, int64_t n, const Bounds3& b) {
  std::vector<T> m(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const Vec3 x(static_cast<double>(pts[3 * i]), static_cast<double>(pts[3 * i + 1]),
                 static_cast<double>(pts[3 * i + 2]));
    m[static_cast<size_t>(i)] = b.contains(x, 0.0) ? T(1) : T(0);
  }
  return m;
}

}  // namespace detail_rad

// Renders a batch of rays through the composite of the human and scene
// fields. Per-ray seeds make sampling independent of batching, threading,
// and rect layout. Builds one graph when grad mode is on.
template <typename T>
RenderedRays<T> render_rays(SceneModel<T>& model, const std::vector<Ray>& rays,
                            const std::vector<uint64_t>& seeds, const SkeletonPose& pose,
                            RenderMode mode, bool rgb, SampleDump* dump = nullptr) {
  const int64_t nrays = static_cast<int64_t>(rays.size());
  detail::require(nrays > 0, "render_rays", "empty ray batch");
  detail::require(seeds.size() == rays.size(), "render_rays", "one seed per ray required");
  const int64_t c_out = rgb ? 3 : model.scene_head.out_feat.bias.numel();

  struct Block {
    std::vector<double> depth;   // [R*S]
    Tensor<T> sigma, delta, feats;  // [R,S], [R,S], [R,S,C]
    int64_t s = 0;
    bool present = false;
  };
  Block scene, human;

  // --- scene samples -------------------------------------------------------
  if (mode != RenderMode::kHumanOnly) {
    const int ns = model.n_scene;
    scene.s = ns;
    scene.present = true;
    scene.depth.resize(static_cast<size_t>(nrays * ns));
    std::vector<T> delta_v(static_cast<size_t>(nrays * ns));
    std::vector<T> pts(static_cast<size_t>(nrays * ns * 3));
    std::vector<Vec3> dirs(static_cast<size_t>(nrays * ns));
    std::vector<double> offs(static_cast<size_t>(ns));
    for (int64_t r = 0; r < nrays; ++r) {
      for (int i = 0; i < ns; ++i)
        offs[static_cast<size_t>(i)] = counter_uniform(seeds[static_cast<size_t>(r)], 1, static_cast<uint64_t>(i), 0);
      const RaySamples s = stratified_sample(rays[static_cast<size_t>(r)], ns, offs.data());
      for (int i = 0; i < ns; ++i) {
        const int64_t k = r * ns + i;
        scene.depth[static_cast<size_t>(k)] = s.t[static_cast<size_t>(i)];
        delta_v[static_cast<size_t>(k)] = static_cast<T>(s.delta[static_cast<size_t>(i)]);
        const Vec3 x = rays[static_cast<size_t>(r)].origin + s.t[static_cast<size_t>(i)] * rays[static_cast<size_t>(r)].dir;
        for (int d = 0; d < 3; ++d) pts[static_cast<size_t>(3 * k + d)] = static_cast<T>(x[d]);
        dirs[static_cast<size_t>(k)] = rays[static_cast<size_t>(r)].dir;
      }
    }
    Tensor<T> pts_t = Tensor<T>::from_data({nrays * ns, 3}, std::move(pts));
    std::vector<T> mask = detail_rad::inside_mask(pts_t.data(), nrays * ns, model.scene_field.bounds());
    Tensor<T> mask_t = Tensor<T>::from_data({nrays * ns, 1}, std::move(mask));
    Tensor<T> clamped = detail_rad::clamp_columns(pts_t, model.scene_field.bounds(), 1e-6);
    Tensor<T> feat = model.scene_field.query(clamped);
    auto [sig, out] = model.scene_head.eval(feat, detail_rad::encode_dirs<T>(dirs), rgb);
    scene.sigma = reshape(sig * mask_t, {nrays, scene.s});
    scene.delta = Tensor<T>::from_data({nrays, scene.s}, std::move(delta_v));
    scene.feats = reshape(out, {nrays, scene.s, c_out});
  }

  // --- human samples (within the posed skeleton bbox) ----------------------
  if (mode != RenderMode::kSceneOnly) {
    Vec3 lo = Vec3::Constant(1e30), hi = Vec3::Constant(-1e30);
    for (size_t k = 0; k < model.skeleton.parts.size(); ++k) {
      const Capsule& cap = model.skeleton.parts[k];
      for (const Vec3& e : {pose.parts[k] * cap.a, pose.parts[k] * cap.b}) {
        for (int d = 0; d < 3; ++d) {
          lo[d] = std::min(lo[d], e[d] - cap.radius - model.human_pad);
          hi[d] = std::max(hi[d], e[d] + cap.radius + model.human_pad);
        }
      }
    }
    const int nh = model.n_human;
    std::vector<int64_t> hit_rows;
    std::vector<double> h_depth;
    std::vector<T> h_delta;
    std::vector<Vec3> h_pts, h_dirs;
    std::vector<double> offs(static_cast<size_t>(nh));
    for (int64_t r = 0; r < nrays; ++r) {
      double t0, t1;
      if (!detail_rad::ray_aabb(rays[static_cast<size_t>(r)], lo, hi, &t0, &t1)) continue;
      hit_rows.push_back(r);
      for (int i = 0; i < nh; ++i)
        offs[static_cast<size_t>(i)] = counter_uniform(seeds[static_cast<size_t>(r)], 2, static_cast<uint64_t>(i), 0);
      Ray seg = rays[static_cast<size_t>(r)];
      seg.near = t0;
      seg.far = t1;
      const RaySamples s = stratified_sample(seg, nh, offs.data());
      for (int i = 0; i < nh; ++i) {
        h_depth.push_back(s.t[static_cast<size_t>(i)]);
        h_delta.push_back(static_cast<T>(s.delta[static_cast<size_t>(i)]));
        h_pts.push_back(seg.origin + s.t[static_cast<size_t>(i)] * seg.dir);
        h_dirs.push_back(seg.dir);
      }
    }
    if (!hit_rows.empty()) {
      const int64_t hr = static_cast<int64_t>(hit_rows.size());
      human.s = nh;
      human.present = true;
      Tensor<T> canonical =
          to_canonical<T>(h_pts, model.skeleton, pose, model.correction, nullptr);
      std::vector<T> mask =
          detail_rad::inside_mask(canonical.data(), hr * nh, model.human_field.bounds());
      Tensor<T> mask_t = Tensor<T>::from_data({hr * nh, 1}, std::move(mask));
      Tensor<T> clamped =
          detail_rad::clamp_columns(canonical, model.human_field.bounds(), 1e-6);
      Tensor<T> feat = model.human_field.query(clamped);
      auto [sig, out] = model.human_head.eval(feat, detail_rad::encode_dirs<T>(h_dirs), rgb);
      // scatter compact [hr, ...] blocks into [nrays, ...]
      human.sigma = scatter_rows(reshape(sig * mask_t, {hr, human.s}), hit_rows, nrays);
      human.delta = scatter_rows(
          Tensor<T>::from_data({hr, human.s}, std::move(h_delta)), hit_rows, nrays);
      human.feats =
          scatter_rows(reshape(out, {hr, human.s, c_out}), hit_rows, nrays);
      human.depth.assign(static_cast<size_t>(nrays * nh), 0.0);
      // rays without human samples keep sigma = delta = 0; push their
      // depths past every scene sample so sorting leaves them inert
      const double inert = rays[0].far + 1.0;
      for (auto& d : human.depth) d = inert;
      for (int64_t j = 0; j < hr; ++j) {
        for (int i = 0; i < nh; ++i)
          human.depth[static_cast<size_t>(hit_rows[static_cast<size_t>(j)] * nh + i)] =
              h_depth[static_cast<size_t>(j * nh + i)];
      }
    }
  }

  if (dump) {
    auto fill = [&](const Block& blk, std::vector<double>* d, std::vector<double>* sg,
                    std::vector<double>* dl, std::vector<double>* ft) {
      if (!blk.present) return;
      *d = blk.depth;
      sg->assign(blk.sigma.values().begin(), blk.sigma.values().end());
      dl->assign(blk.delta.values().begin(), blk.delta.values().end());
      ft->assign(blk.feats.values().begin(), blk.feats.values().end());
    };
    dump->s_scene = scene.present ? scene.s : 0;
    dump->s_human = human.present ? human.s : 0;
    dump->channels = c_out;
    fill(scene, &dump->scene_depth, &dump->scene_sigma, &dump->scene_delta, &dump->scene_feat);
    fill(human, &dump->human_depth, &dump->human_sigma, &dump->human_delta, &dump->human_feat);
  }

  // --- merge by depth and integrate ----------------------------------------
  Tensor<T> sigma, delta, feats;
  std::vector<double> depth;
  std::vector<T> human_flag;  // provenance of each slot after concat
  if (scene.present && human.present) {
    sigma = concat<T>({scene.sigma, human.sigma}, 1);
    delta = concat<T>({scene.delta, human.delta}, 1);
    feats = concat<T>({scene.feats, human.feats}, 1);
    const int64_t stot = scene.s + human.s;
    depth.resize(static_cast<size_t>(nrays * stot));
    human_flag.assign(static_cast<size_t>(nrays * stot), T(0));
    for (int64_t r = 0; r < nrays; ++r) {
      std::memcpy(depth.data() + r * stot, scene.depth.data() + r * scene.s,
                  static_cast<size_t>(scene.s) * sizeof(double));
      std::memcpy(depth.data() + r * stot + scene.s, human.depth.data() + r * human.s,
                  static_cast<size_t>(human.s) * sizeof(double));
      for (int64_t i = 0; i < human.s; ++i)
        human_flag[static_cast<size_t>(r * stot + scene.s + i)] = T(1);
    }
    // stable sort on the double depths; scene slots precede human slots, so
    // exact ties resolve scene-first
    std::vector<int64_t> perm(depth.size());
    for (int64_t r = 0; r < nrays; ++r) {
      int64_t* pr = perm.data() + r * stot;
      std::iota(pr, pr + stot, 0);
      const double* drow = depth.data() + r * stot;
      std::stable_sort(pr, pr + stot,
                       [drow](int64_t a, int64_t b) { return drow[a] < drow[b]; });
    }
    sigma = gather_rows(sigma, perm, stot);
    delta = gather_rows(delta, perm, stot);
    feats = gather_rows(feats, perm, stot);
    std::vector<double> dsorted(depth.size());
    std::vector<T> fsorted(depth.size());
    for (int64_t r = 0; r < nrays; ++r) {
      for (int64_t i = 0; i < stot; ++i) {
        const int64_t src = perm[static_cast<size_t>(r * stot + i)];
        dsorted[static_cast<size_t>(r * stot + i)] = depth[static_cast<size_t>(r * stot + src)];
        fsorted[static_cast<size_t>(r * stot + i)] = human_flag[static_cast<size_t>(r * stot + src)];
      }
    }
    depth = std::move(dsorted);
    human_flag = std::move(fsorted);
  } else if (scene.present) {
    sigma = scene.sigma;
    delta = scene.delta;
    feats = scene.feats;
    depth = scene.depth;
    human_flag.assign(depth.size(), T(0));
  } else if (human.present) {
    sigma = human.sigma;
    delta = human.delta;
    feats = human.feats;
    depth = human.depth;
    human_flag.assign(depth.size(), T(1));
  } else {
    // nothing to integrate (human-only mode, no bbox hits)
    RenderedRays<T> out;
    out.color = Tensor<T>::zeros({nrays, c_out});
    out.alpha = Tensor<T>::zeros({nrays});
    out.alpha_human = Tensor<T>::zeros({nrays});
    out.weights = Tensor<T>::zeros({nrays, 1});
    out.expected_depth.assign(static_cast<size_t>(nrays), 0.0);
    return out;
  }

  auto vr = volume_render(sigma, delta, feats, depth);
  RenderedRays<T> out;
  out.color = vr.feature;
  out.alpha = vr.alpha;
  out.weights = vr.weights;
  out.has_human = human.present;
  if (human.present) {
    Tensor<T> flag = Tensor<T>::from_data(vr.weights.shape(), std::move(human_flag));
    out.alpha_human = sum(vr.weights * flag, {1});
  } else {
    out.alpha_human = Tensor<T>::zeros({nrays});
  }
  const int64_t stot = vr.weights.dim(1);
  out.expected_depth.assign(static_cast<size_t>(nrays), 0.0);
  const T* wv = vr.weights.data();
  for (int64_t r = 0; r < nrays; ++r) {
    double acc = 0;
    for (int64_t i = 0; i < stot; ++i)
      acc += static_cast<double>(wv[r * stot + i]) * depth[static_cast<size_t>(r * stot + i)];
    out.expected_depth[static_cast<size_t>(r)] = acc;
  }
  return out;
}

inline uint64_t pixel_seed(uint64_t base, int64_t px, int64_t py) {
  return hash_combine(hash_combine(base, static_cast<uint64_t>(px)),
                      static_cast<uint64_t>(py) ^ 0x5851f42d4c957f2dULL);
}

// Spec-shaped single-pixel entry point: a 1x1 patch render.
template <typename T>
RenderedRays<T> composite_render(SceneModel<T>& model, const Camera& cam, double u, double v,
                                 uint64_t base_seed, const SkeletonPose& pose, bool rgb) {
  const Ray ray = generate_ray(cam, u, v, model.near, model.far);
  return render_rays(model, {ray},
                     {pixel_seed(base_seed, static_cast<int64_t>(u), static_cast<int64_t>(v))},
                     pose, RenderMode::kComposite, rgb);
}

// A rendered rectangle with detached per-pixel outputs (inference path).
struct RenderedPatch {
  int x0 = 0, y0 = 0, w = 0, h = 0, channels = 0;
  std::vector<float> values;       // [h*w*channels], row-major
  std::vector<float> alpha;        // [h*w]
  std::vector<float> alpha_human;  // [h*w]
  std::vector<float> depth;        // [h*w]
};

// Deterministic parallel rendering: pixels are partitioned into row chunks,
// every pixel draws from its own counter-based stream, and results land in
// disjoint slots, so the output is identical for any thread count.
template <typename T>
RenderedPatch render_patch(SceneModel<T>& model, const Camera& cam, int x0, int y0, int w, int h,
                           uint64_t base_seed, const SkeletonPose& pose, RenderMode mode,
                           bool rgb, int threads = 1) {
  detail::require(x0 >= 0 && y0 >= 0 && x0 + w <= cam.width && y0 + h <= cam.height,
                  "render_patch", "rect outside image bounds");
  RenderedPatch out;
  out.x0 = x0;
  out.y0 = y0;
  out.w = w;
  out.h = h;
  out.channels = rgb ? 3 : static_cast<int>(model.scene_head.out_feat.bias.numel());
  out.values.assign(static_cast<size_t>(w * h * out.channels), 0.f);
  out.alpha.assign(static_cast<size_t>(w * h), 0.f);
  out.alpha_human.assign(static_cast<size_t>(w * h), 0.f);
  out.depth.assign(static_cast<size_t>(w * h), 0.f);

  // encoders run once up front so worker threads only read
  {
    NoGradGuard ng;
    if (mode != RenderMode::kHumanOnly) model.scene_field.encoded_plane(0), model.scene_field.encoded_plane(1), model.scene_field.encoded_plane(2);
    if (mode != RenderMode::kSceneOnly) model.human_field.encoded_plane(0), model.human_field.encoded_plane(1), model.human_field.encoded_plane(2);
  }

  auto render_rows = [&](int row_begin, int row_end) {
    NoGradGuard ng;
    for (int row = row_begin; row < row_end; ++row) {
      std::vector<Ray> rays;
      std::vector<uint64_t> seeds;
      rays.reserve(static_cast<size_t>(w));
      for (int col = 0; col < w; ++col) {
        const double u = x0 + col + 0.5, v = y0 + row + 0.5;
        rays.push_back(generate_ray(cam, u, v, model.near, model.far));
        seeds.push_back(pixel_seed(base_seed, x0 + col, y0 + row));
      }
      auto rr = render_rays(model, rays, seeds, pose, mode, rgb);
      const T* cv = rr.color.data();
      const T* av = rr.alpha.data();
      const T* ahv = rr.alpha_human.data();
      for (int col = 0; col < w; ++col) {
        const size_t px = static_cast<size_t>(row * w + col);
        for (int ch = 0; ch < out.channels; ++ch)
          out.values[px * static_cast<size_t>(out.channels) + static_cast<size_t>(ch)] =
              static_cast<float>(cv[col * out.channels + ch]);
        out.alpha[px] = static_cast<float>(av[col]);
        out.alpha_human[px] = static_cast<float>(ahv[col]);
        out.depth[px] = static_cast<float>(rr.expected_depth[static_cast<size_t>(col)]);
      }
    }
  };

  threads = std::max(1, std::min(threads, h));
  if (threads == 1) {
    render_rows(0, h);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (h + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int rb = t * chunk, re = std::min(h, rb + chunk);
      if (rb >= re) break;
      pool.emplace_back(render_rows, rb, re);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace sf
