#include "sf/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace sf {

namespace {
constexpr double kLn2 = 0.6931471805599453;

std::string ckpt_path(const std::string& run_dir, Stage s) {
  return run_dir + "/" + stage_name(s) + ".ckpt";
}
}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kRecon: return "recon";
    case Stage::kDecoder: return "decoder";
    default: return "style";
  }
}

Pipeline::Pipeline(Config cfg, SceneDataset ds)
    : cfg_(std::move(cfg)), ds_(std::move(ds)), pyramid_(hash_combine(cfg_.seed, 101)),
      projection_(hash_combine(cfg_.seed, 102), cfg_.c_feat) {
  model_.skeleton = ds_.poses.skeleton;
  model_.near = ds_.near;
  model_.far = ds_.far;
  model_.n_scene = cfg_.n_scene;
  model_.n_human = cfg_.n_human;
  model_.human_pad = cfg_.human_pad;

  Bounds3 human_bounds;
  model_.skeleton.bounds(&human_bounds.lo, &human_bounds.hi, 0.18);

  {
    Rng rng(hash_combine(cfg_.seed, 1));
    if (cfg_.geometry_guided) {
      auto raster = build_geometry_raster<float>(ds_.scene_bounds, cfg_.scene_voxel, 6,
                                                 cfg_.resolution_cap);
      model_.scene_field =
          TriPlaneField<float>(params_, "scene.tri", std::move(raster), cfg_.d_scene, rng);
    } else {
      model_.scene_field = TriPlaneField<float>::direct(
          params_, "scene.tri", ds_.scene_bounds, cfg_.scene_voxel, cfg_.d_scene, rng,
          cfg_.resolution_cap);
    }
  }
  {
    Rng rng(hash_combine(cfg_.seed, 2));
    if (cfg_.geometry_guided) {
      auto raster =
          build_geometry_raster<float>(human_bounds, cfg_.human_voxel, 6, cfg_.resolution_cap);
      model_.human_field =
          TriPlaneField<float>(params_, "human.tri", std::move(raster), cfg_.d_human, rng);
    } else {
      model_.human_field = TriPlaneField<float>::direct(
          params_, "human.tri", human_bounds, cfg_.human_voxel, cfg_.d_human, rng,
          cfg_.resolution_cap);
    }
  }
  {
    Rng rng(hash_combine(cfg_.seed, 3));
    model_.scene_head = FieldHead<float>(params_, "scene.head", cfg_.d_scene, cfg_.c_feat, rng);
  }
  {
    Rng rng(hash_combine(cfg_.seed, 4));
    model_.human_head = FieldHead<float>(params_, "human.head", cfg_.d_human, cfg_.c_feat, rng);
  }
  {
    Rng rng(hash_combine(cfg_.seed, 5));
    model_.correction = CorrectionNet<float>(params_, "human.corr", ds_.scene_bounds.lo,
                                             ds_.scene_bounds.hi, rng);
  }
  {
    Rng rng(hash_combine(cfg_.seed, 6));
    attn_ = AdaAttnLayer<float>(params_, "style.attn", cfg_.c_feat, kPyramidChannels[1],
                                cfg_.c_feat, rng);
    decoder_ = Decoder<float>(params_, "style.dec", cfg_.c_feat, rng);
  }

  for (int f = 0; f < ds_.n_frames(); ++f) {
    if (std::find(cfg_.heldout_frames.begin(), cfg_.heldout_frames.end(), f) ==
        cfg_.heldout_frames.end())
      train_frames_.push_back(f);
  }
  if (train_frames_.empty()) throw TensorError("pipeline: every frame is held out");
}

uint64_t Pipeline::frozen_checksum() const {
  uint64_t h = params_.checksum("scene.tri");
  h = hash_combine(h, params_.checksum("human.tri"));
  h = hash_combine(h, params_.checksum("scene.head.density"));
  h = hash_combine(h, params_.checksum("human.head.density"));
  h = hash_combine(h, params_.checksum("human.corr"));
  return h;
}

void Pipeline::apply_stage_freeze(Stage stage) {
  // default: everything trainable, then carve out the stage's frozen set
  for (auto& [name, p] : params_) p.set_requires_grad(true);
  auto freeze = [this](const std::string& prefix) {
    params_.set_trainable_by_prefix(prefix, false);
  };
  switch (stage) {
    case Stage::kRecon:
      freeze("style.");
      break;
    case Stage::kDecoder:
      // density branch and the layers shared by density and appearance stay
      // frozen from here on, as does the warp correction
      freeze("scene.tri");
      freeze("human.tri");
      freeze("scene.head.density");
      freeze("human.head.density");
      freeze("scene.head.out_rgb");
      freeze("human.head.out_rgb");
      freeze("human.corr");
      freeze("style.attn");
      break;
    case Stage::kStyle:
      freeze("scene.");
      freeze("human.");
      break;
  }
}

void Pipeline::pick_patch(Rng& rng, int* frame, int* x0, int* y0) const {
  *frame = train_frames_[rng.uniform_index(train_frames_.size())];
  const int size = cfg_.patch_size;
  const ImageF& mask = ds_.masks[static_cast<size_t>(*frame)];
  const int max_x = ds_.width - size, max_y = ds_.height - size;
  if (rng.uniform() < 0.5) {
    // center on a random human pixel when one exists
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int mx = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(ds_.width)));
      const int my = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(ds_.height)));
      if (mask.at(mx, my, 0) > 0.5f) {
        *x0 = std::clamp(mx - size / 2, 0, max_x);
        *y0 = std::clamp(my - size / 2, 0, max_y);
        return;
      }
    }
  }
  *x0 = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(max_x + 1)));
  *y0 = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(max_y + 1)));
}

Pipeline::RayBundle Pipeline::patch_rays(int frame, int x0, int y0, int size,
                                         uint64_t stream) const {
  RayBundle b;
  b.frame = frame;
  const Camera& cam = ds_.cameras[static_cast<size_t>(frame)];
  const ImageF& img = ds_.frames[static_cast<size_t>(frame)];
  const ImageF& mask = ds_.masks[static_cast<size_t>(frame)];
  for (int y = y0; y < y0 + size; ++y) {
    for (int x = x0; x < x0 + size; ++x) {
      b.rays.push_back(generate_ray(cam, x + 0.5, y + 0.5, ds_.near, ds_.far));
      b.seeds.push_back(hash_combine(stream, pixel_seed(hash_combine(cfg_.seed, static_cast<uint64_t>(frame)), x, y)));
      for (int c = 0; c < 3; ++c) b.gt_rgb.push_back(img.at(x, y, c));
      b.mask.push_back(mask.at(x, y, 0) > 0.5f ? 1.f : 0.f);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Reconstruction stage
// ---------------------------------------------------------------------------

StepMetrics Pipeline::recon_step(int step, Adam<float>& opt, Rng& rng) {
  const uint64_t stream = hash_combine(hash_combine(cfg_.seed, 0xA11CEull), static_cast<uint64_t>(step));

  // gather scene rays (mask off) across patches and human rays per frame
  std::vector<Ray> scene_rays;
  std::vector<uint64_t> scene_seeds;
  std::vector<float> scene_gt;
  std::map<int, RayBundle> human_by_frame;
  for (int p = 0; p < cfg_.patches_per_step; ++p) {
    int frame, x0, y0;
    pick_patch(rng, &frame, &x0, &y0);
    RayBundle b = patch_rays(frame, x0, y0, cfg_.patch_size, hash_combine(stream, static_cast<uint64_t>(p)));
    for (size_t i = 0; i < b.rays.size(); ++i) {
      if (b.mask[i] < 0.5f) {
        scene_rays.push_back(b.rays[i]);
        scene_seeds.push_back(b.seeds[i]);
        for (int c = 0; c < 3; ++c) scene_gt.push_back(b.gt_rgb[3 * i + static_cast<size_t>(c)]);
      } else {
        RayBundle& h = human_by_frame[b.frame];
        h.frame = b.frame;
        h.rays.push_back(b.rays[i]);
        h.seeds.push_back(b.seeds[i]);
        for (int c = 0; c < 3; ++c) h.gt_rgb.push_back(b.gt_rgb[3 * i + static_cast<size_t>(c)]);
        h.mask.push_back(1.f);
      }
    }
  }

  params_.zero_grad();
  StepMetrics m;
  m.step = step;
  Tensor<float> total = Tensor<float>::zeros({});

  if (!scene_rays.empty()) {
    auto rr = render_rays(model_, scene_rays, scene_seeds, ds_.poses.frames[0],
                          RenderMode::kSceneOnly, /*rgb=*/true);
    Tensor<float> gt = Tensor<float>::from_data({static_cast<int64_t>(scene_rays.size()), 3},
                                                std::move(scene_gt));
    Tensor<float> ls = loss_scene(rr.color, gt);
    m.terms["l_s"] = ls.item();
    total = total + ls;
  }

  // human rays, rendered per frame (the warp is pose-dependent)
  std::vector<Tensor<float>> h_rgb, h_alpha, h_weights, h_gt, h_mask;
  for (auto& [frame, b] : human_by_frame) {
    auto rr = render_rays(model_, b.rays, b.seeds, ds_.poses.frames[static_cast<size_t>(frame)],
                          RenderMode::kHumanOnly, /*rgb=*/true);
    if (!rr.has_human) continue;
    h_rgb.push_back(rr.color);
    h_alpha.push_back(rr.alpha);
    h_weights.push_back(reshape(rr.weights, {rr.weights.dim(0) * rr.weights.dim(1)}));
    h_gt.push_back(Tensor<float>::from_data({static_cast<int64_t>(b.rays.size()), 3}, b.gt_rgb));
    h_mask.push_back(Tensor<float>::from_data({static_cast<int64_t>(b.rays.size())}, b.mask));
  }

  // canonical probes for the solidity loss
  Rng probe_rng(hash_combine(stream, 0xBEEF));
  const Bounds3& hb = model_.human_field.bounds();
  std::vector<float> probe_pts;
  std::vector<float> probe_inside;
  for (int i = 0; i < cfg_.probe_count; ++i) {
    Vec3 x;
    for (int d = 0; d < 3; ++d) x[d] = probe_rng.uniform(hb.lo[d] + 1e-4, hb.hi[d] - 1e-4);
    for (int d = 0; d < 3; ++d) probe_pts.push_back(static_cast<float>(x[d]));
    probe_inside.push_back(inside_canonical_body(x, model_.skeleton) ? 1.f : 0.f);
  }
  Tensor<float> probes =
      Tensor<float>::from_data({cfg_.probe_count, 3}, std::move(probe_pts));
  Tensor<float> probe_sigma =
      reshape(model_.human_head.eval_density(model_.human_field.query(probes)),
              {cfg_.probe_count});

  // random canonical lines for the edge loss
  std::vector<float> line_pts, line_delta;
  for (int l = 0; l < cfg_.edge_lines; ++l) {
    Vec3 a, b;
    for (int d = 0; d < 3; ++d) {
      a[d] = probe_rng.uniform(hb.lo[d] + 1e-4, hb.hi[d] - 1e-4);
      b[d] = probe_rng.uniform(hb.lo[d] + 1e-4, hb.hi[d] - 1e-4);
    }
    const double len = (b - a).norm();
    for (int i = 0; i < cfg_.edge_samples; ++i) {
      const double t = (i + probe_rng.uniform()) / cfg_.edge_samples;
      const Vec3 p = a + t * (b - a);
      for (int d = 0; d < 3; ++d) line_pts.push_back(static_cast<float>(p[d]));
      line_delta.push_back(static_cast<float>(len / cfg_.edge_samples));
    }
  }
  Tensor<float> line_sigma = reshape(
      model_.human_head.eval_density(model_.human_field.query(Tensor<float>::from_data(
          {cfg_.edge_lines * cfg_.edge_samples, 3}, std::move(line_pts)))),
      {cfg_.edge_lines, cfg_.edge_samples});
  Tensor<float> line_tau =
      line_sigma * Tensor<float>::from_data({cfg_.edge_lines, cfg_.edge_samples},
                                            std::move(line_delta));
  Tensor<float> line_alpha =
      sum(exp(-cumsum(line_tau, 1, true)) * (1.f - exp(-line_tau)), {1});

  HumanLossInputs<float> hin;
  const bool have_rays = !h_rgb.empty();
  if (have_rays) {
    hin.rgb = h_rgb.size() == 1 ? h_rgb[0] : concat(h_rgb, 0);
    hin.alpha = h_alpha.size() == 1 ? h_alpha[0] : concat(h_alpha, 0);
    hin.gt_rgb = h_gt.size() == 1 ? h_gt[0] : concat(h_gt, 0);
    hin.mask = h_mask.size() == 1 ? h_mask[0] : concat(h_mask, 0);
    Tensor<float> flatw = h_weights.size() == 1 ? h_weights[0] : concat(h_weights, 0);
    hin.weights = reshape(flatw, {flatw.numel(), 1});
  } else {
    hin.rgb = Tensor<float>::zeros({1, 3});
    hin.gt_rgb = Tensor<float>::zeros({1, 3});
    hin.mask = Tensor<float>::zeros({1});
    hin.alpha = Tensor<float>::zeros({1});
    hin.weights = Tensor<float>::zeros({1, 1});
  }
  hin.probe_sigma = probe_sigma;
  hin.probe_inside = Tensor<float>::from_data({cfg_.probe_count}, std::move(probe_inside));
  hin.line_alpha = line_alpha;

  const double la = lambda_a_at(cfg_.weights.lambda_a, step, cfg_.recon_steps);
  auto ht = loss_human(hin, cfg_.weights, la);
  m.terms["l_r"] = ht.rgb.item();
  m.terms["l_a"] = ht.alpha.item();
  m.terms["l_smpl"] = ht.smpl.item();
  m.terms["l_hard"] = ht.hard.item();
  m.terms["l_edge"] = ht.edge.item();
  m.terms["lambda_a"] = la;
  total = total + ht.total;

  if (step == cfg_.inject_nan_at_step)
    total = total * Tensor<float>::scalar(std::numeric_limits<float>::quiet_NaN());

  m.loss = total.item();
  m.lr = opt.lr();
  if (!std::isfinite(m.loss)) return m;  // caller handles the failure
  total.backward();
  opt.step();
  model_.invalidate_caches();
  return m;
}

// ---------------------------------------------------------------------------
// Decoder stage
// ---------------------------------------------------------------------------

Tensor<float> Pipeline::gt_patch_tensor(int frame, int x0, int y0, int size) const {
  const ImageF& img = ds_.frames[static_cast<size_t>(frame)];
  std::vector<float> buf(static_cast<size_t>(3 * size * size));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        buf[static_cast<size_t>((c * size + y) * size + x)] = img.at(x0 + x, y0 + y, c);
  return Tensor<float>::from_data({3, size, size}, std::move(buf));
}

Tensor<float> Pipeline::patch_feature_grid(const RayBundle& b, int size) {
  auto rr = render_rays(model_, b.rays, b.seeds, ds_.poses.frames[static_cast<size_t>(b.frame)],
                        RenderMode::kComposite, /*rgb=*/false);
  return reshape(transpose2d(rr.color), {cfg_.c_feat, size, size});
}

StepMetrics Pipeline::decoder_step(int step, Adam<float>& opt, Rng& rng) {
  const uint64_t stream = hash_combine(hash_combine(cfg_.seed, 0xDECull), static_cast<uint64_t>(step));
  params_.zero_grad();
  Tensor<float> total = Tensor<float>::zeros({});
  for (int p = 0; p < cfg_.patches_per_step; ++p) {
    int frame, x0, y0;
    pick_patch(rng, &frame, &x0, &y0);
    RayBundle b = patch_rays(frame, x0, y0, cfg_.patch_size, hash_combine(stream, static_cast<uint64_t>(p)));
    Tensor<float> fc = patch_feature_grid(b, cfg_.patch_size);
    Tensor<float> gt = gt_patch_tensor(frame, x0, y0, cfg_.patch_size);
    Tensor<float> fc_target = projection_.project(pyramid_, gt).detach();
    Tensor<float> image = decoder_.forward(fc);
    total = total + loss_feature(fc, fc_target, image, gt, pyramid_);
  }
  StepMetrics m;
  m.step = step;
  m.loss = total.item();
  m.lr = opt.lr();
  if (step == cfg_.inject_nan_at_step) m.loss = std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(m.loss)) return m;
  total.backward();
  opt.step();
  return m;
}

// ---------------------------------------------------------------------------
// Stylization stage
// ---------------------------------------------------------------------------

StepMetrics Pipeline::style_step(int step, Adam<float>& opt, Rng& rng,
                                 std::vector<StyleContext<float>>& styles) {
  params_.zero_grad();
  Tensor<float> total = Tensor<float>::zeros({});
  StepMetrics m;
  m.step = step;
  double g_sum = 0, l_sum = 0;
  for (int p = 0; p < cfg_.patches_per_step; ++p) {
    int frame, x0, y0;
    pick_patch(rng, &frame, &x0, &y0);
    const StyleContext<float>& ctx = styles[rng.uniform_index(styles.size())];
    RayBundle b = patch_rays(frame, x0, y0, cfg_.patch_size,
                             hash_combine(hash_combine(cfg_.seed, 0x57711ull),
                                          static_cast<uint64_t>(step * 131 + p)));
    Tensor<float> fc = patch_feature_grid(b, cfg_.patch_size);
    Tensor<float> i_cs = stylize_feature_map(fc, attn_, ctx, decoder_);
    Tensor<float> gt = gt_patch_tensor(frame, x0, y0, cfg_.patch_size);
    PyramidLevels<float> content = pyramid_.extract(gt);
    auto sl = style_losses(i_cs, pyramid_, ctx, content);
    g_sum += sl.global.item();
    l_sum += sl.local.item();
    total = total + sl.global + sl.local;
  }
  m.terms["global"] = g_sum;
  m.terms["local"] = l_sum;
  m.loss = total.item();
  m.lr = opt.lr();
  if (step == cfg_.inject_nan_at_step) m.loss = std::numeric_limits<double>::quiet_NaN();
  if (!std::isfinite(m.loss)) return m;
  total.backward();
  opt.step();
  return m;
}

// ---------------------------------------------------------------------------
// Stage driver
// ---------------------------------------------------------------------------

void Pipeline::run_stage(Stage stage, const std::string& run_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  apply_stage_freeze(stage);
  model_.invalidate_caches();
  metrics_.clear();

  const int steps = stage == Stage::kRecon    ? cfg_.recon_steps
                    : stage == Stage::kDecoder ? cfg_.decoder_steps
                                               : cfg_.style_steps;
  const double lr0 = stage == Stage::kRecon    ? cfg_.lr_recon
                     : stage == Stage::kDecoder ? cfg_.lr_decoder
                                                : cfg_.lr_style;
  Adam<float> opt(params_, lr0);
  Rng rng(hash_combine(cfg_.seed, 0x5106 + static_cast<uint64_t>(stage)));

  std::vector<StyleContext<float>> styles;
  if (stage == Stage::kStyle) {
    if (ds_.style_paths.empty()) throw TensorError("train-style: dataset has no styles/");
    for (const auto& path : ds_.style_paths)
      styles.push_back(make_style_context(read_png(path)));
  }

  std::ofstream log(run_dir + "/" + stage_name(stage) + "_metrics.jsonl", std::ios::trunc);
  const std::string ckpt = ckpt_path(run_dir, stage);
  bool have_ckpt = false;

  for (int step = 0; step < steps; ++step) {
    // exponential decay, half-life = half the stage length
    opt.set_lr(lr0 * std::exp(-kLn2 * (2.0 * step / std::max(1, steps))));
    StepMetrics m = stage == Stage::kRecon    ? recon_step(step, opt, rng)
                    : stage == Stage::kDecoder ? decoder_step(step, opt, rng)
                                               : style_step(step, opt, rng, styles);
    metrics_.push_back(m);
    if (!std::isfinite(m.loss)) {
      throw TensorError(std::string("train-") + stage_name(stage) + ": loss is NaN at step " +
                        std::to_string(step) +
                        (have_ckpt ? "; last good checkpoint retained at " + ckpt
                                   : "; no checkpoint written yet"));
    }
    nlohmann::json j{{"step", m.step}, {"loss", m.loss}, {"lr", m.lr}};
    for (const auto& [k, v] : m.terms) j[k] = v;
    log << j.dump() << "\n";
    if (cfg_.log_interval > 0 && step % cfg_.log_interval == 0) {
      std::cout << stage_name(stage) << " step " << step << "/" << steps << " loss " << m.loss
                << " lr " << m.lr << std::endl;
    }
    if (cfg_.ckpt_interval > 0 && step > 0 && step % cfg_.ckpt_interval == 0) {
      save_checkpoint(ckpt, stage);
      have_ckpt = true;
    }
  }
  save_checkpoint(ckpt, stage);
}

void Pipeline::train_recon(const std::string& run_dir) { run_stage(Stage::kRecon, run_dir); }

void Pipeline::train_decoder(const std::string& run_dir) {
  const std::string prev = ckpt_path(run_dir, Stage::kRecon);
  if (!std::filesystem::exists(prev))
    throw TensorError("train-decoder: missing " + prev + "; run train-recon first");
  const Stage s = load_checkpoint(prev);
  if (s != Stage::kRecon)
    throw TensorError("train-decoder: expected a recon checkpoint, got " +
                      std::string(stage_name(s)));
  run_stage(Stage::kDecoder, run_dir);
}

void Pipeline::train_style(const std::string& run_dir) {
  const std::string prev = ckpt_path(run_dir, Stage::kDecoder);
  if (!std::filesystem::exists(prev))
    throw TensorError("train-style: missing " + prev + "; run train-decoder first");
  const Stage s = load_checkpoint(prev);
  if (s != Stage::kDecoder)
    throw TensorError("train-style: expected a decoder checkpoint, got " +
                      std::string(stage_name(s)));
  run_stage(Stage::kStyle, run_dir);
}

void Pipeline::save_checkpoint(const std::string& path, Stage stage) const {
  nlohmann::json meta;
  meta["stage"] = stage_name(stage);
  meta["c_feat"] = cfg_.c_feat;
  meta["d_scene"] = cfg_.d_scene;
  meta["d_human"] = cfg_.d_human;
  ckpt::save(path, params_, meta.dump());
}

Stage Pipeline::load_checkpoint(const std::string& path) {
  std::string meta_json;
  ckpt::load_into(params_, path, &meta_json);
  model_.invalidate_caches();
  const auto meta = nlohmann::json::parse(meta_json);
  const std::string s = meta.at("stage").get<std::string>();
  if (s == "recon") return Stage::kRecon;
  if (s == "decoder") return Stage::kDecoder;
  return Stage::kStyle;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

namespace {
ImageF patch_to_image(const RenderedPatch& p) {
  ImageF img(p.w, p.h, p.channels);
  img.data = p.values;
  return img;
}
ImageF alpha_to_image(const std::vector<float>& a, int w, int h) {
  ImageF img(w, h, 1);
  img.data = a;
  return img;
}
}  // namespace

ImageF Pipeline::render_rgb_frame(const Camera& cam, const SkeletonPose& pose, ImageF* alpha,
                                  ImageF* alpha_human) {
  auto p = render_patch(model_, cam, 0, 0, cam.width, cam.height,
                        hash_combine(cfg_.seed, 0xF7A3Eull), pose, RenderMode::kComposite,
                        /*rgb=*/true, cfg_.threads);
  if (alpha) *alpha = alpha_to_image(p.alpha, p.w, p.h);
  if (alpha_human) *alpha_human = alpha_to_image(p.alpha_human, p.w, p.h);
  return patch_to_image(p);
}

Tensor<float> Pipeline::render_feature_frame(const Camera& cam, const SkeletonPose& pose,
                                             ImageF* alpha, ImageF* alpha_human) {
  auto p = render_patch(model_, cam, 0, 0, cam.width, cam.height,
                        hash_combine(cfg_.seed, 0xF7A3Eull), pose, RenderMode::kComposite,
                        /*rgb=*/false, cfg_.threads);
  if (alpha) *alpha = alpha_to_image(p.alpha, p.w, p.h);
  if (alpha_human) *alpha_human = alpha_to_image(p.alpha_human, p.w, p.h);
  const int64_t c = p.channels, h = p.h, w = p.w;
  std::vector<float> buf(static_cast<size_t>(c * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < c; ++ch)
        buf[static_cast<size_t>((ch * h + y) * w + x)] =
            p.values[static_cast<size_t>((y * w + x) * c + ch)];
  return Tensor<float>::from_data({c, h, w}, std::move(buf));
}

ImageF Pipeline::render_decoded_frame(const Camera& cam, const SkeletonPose& pose,
                                      ImageF* alpha) {
  NoGradGuard ng;
  Tensor<float> fc = render_feature_frame(cam, pose, alpha);
  return tensor_to_image(decoder_.forward(fc));
}

ImageF Pipeline::stylize_frame(const Camera& cam, const SkeletonPose& pose,
                               const StyleContext<float>& style, ImageF* alpha) {
  NoGradGuard ng;
  Tensor<float> fc = render_feature_frame(cam, pose, alpha);
  return tensor_to_image(stylize_feature_map(fc, attn_, style, decoder_));
}

ImageF Pipeline::stylize_frame_2d(const ImageF& decoded_rgb, const StyleContext<float>& style) {
  NoGradGuard ng;
  Tensor<float> fc = projection_.project(pyramid_, image_to_tensor(decoded_rgb));
  return tensor_to_image(stylize_feature_map(fc, attn_, style, decoder_));
}

StyleContext<float> Pipeline::make_style_context(const ImageF& style_image) const {
  const ImageF resized = center_crop_resize(style_image, cfg_.style_res, cfg_.style_res);
  return StyleContext<float>(pyramid_, image_to_tensor(resized));
}

double Pipeline::eval_psnr(const std::vector<int>& frame_ids, bool decoded_mode,
                           std::vector<double>* per_frame) {
  double acc = 0;
  for (int f : frame_ids) {
    const Camera& cam = ds_.cameras[static_cast<size_t>(f)];
    const SkeletonPose& pose = ds_.poses.frames[static_cast<size_t>(f)];
    const ImageF img = decoded_mode ? render_decoded_frame(cam, pose)
                                    : render_rgb_frame(cam, pose);
    const double p = psnr(img, ds_.frames[static_cast<size_t>(f)]);
    if (per_frame) per_frame->push_back(p);
    acc += p;
  }
  return frame_ids.empty() ? 0.0 : acc / static_cast<double>(frame_ids.size());
}

std::vector<double> Pipeline::recon_loss_curve(const Config& cfg, const SceneDataset& ds,
                                               int steps) {
  Pipeline p(cfg, ds);
  p.apply_stage_freeze(Stage::kRecon);
  Adam<float> opt(p.params_, cfg.lr_recon);
  Rng rng(hash_combine(cfg.seed, 0x5106 + static_cast<uint64_t>(Stage::kRecon)));
  std::vector<double> losses;
  for (int step = 0; step < steps; ++step) {
    opt.set_lr(cfg.lr_recon * std::exp(-kLn2 * (2.0 * step / std::max(1, cfg.recon_steps))));
    StepMetrics m = p.recon_step(step, opt, rng);
    if (!std::isfinite(m.loss)) throw TensorError("recon_loss_curve: NaN loss");
    losses.push_back(m.loss);
  }
  return losses;
}

}  // namespace sf
