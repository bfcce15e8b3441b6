#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sf/config.hpp"
#include "sf/dataset.hpp"
#include "sf/losses.hpp"
#include "sf/radiance.hpp"
#include "sf/style.hpp"

// The staged training procedure (reconstruction -> decoder -> stylization)
// and the inference entry points the CLI builds on. One Pipeline owns the
// model, the frozen feature pyramid, the stylization modules, and the
// parameter registry.

namespace sf {

enum class Stage { kRecon, kDecoder, kStyle };
const char* stage_name(Stage s);

struct StepMetrics {
  int step = 0;
  double loss = 0;
  double lr = 0;
  std::map<std::string, double> terms;
};

class Pipeline {
 public:
  Pipeline(Config cfg, SceneDataset ds);

  // Stage entry points. Each enforces stage order by loading the previous
  // stage's checkpoint from `run_dir` (recon starts fresh), then writes its
  // own checkpoint and a metrics JSONL into `run_dir`.
  void train_recon(const std::string& run_dir);
  void train_decoder(const std::string& run_dir);
  void train_style(const std::string& run_dir);

  // Loads any stage checkpoint (parameters created lazily must match dims).
  Stage load_checkpoint(const std::string& path);
  void save_checkpoint(const std::string& path, Stage stage) const;

  // Composite RGB render with the stage-1 head.
  ImageF render_rgb_frame(const Camera& cam, const SkeletonPose& pose, ImageF* alpha = nullptr,
                          ImageF* alpha_human = nullptr);
  // Composite feature render [C,H,W] plus alpha maps (detached).
  Tensor<float> render_feature_frame(const Camera& cam, const SkeletonPose& pose,
                                     ImageF* alpha = nullptr, ImageF* alpha_human = nullptr);
  // Feature render decoded to RGB (stage-2 reconstruction path).
  ImageF render_decoded_frame(const Camera& cam, const SkeletonPose& pose,
                              ImageF* alpha = nullptr);
  // Full stylization: volume-rendered features -> AdaAttN -> decoder.
  ImageF stylize_frame(const Camera& cam, const SkeletonPose& pose,
                       const StyleContext<float>& style, ImageF* alpha = nullptr);
  // Per-frame 2-D baseline: pyramid features of an already-decoded RGB
  // frame pushed through the same stylization stack.
  ImageF stylize_frame_2d(const ImageF& decoded_rgb, const StyleContext<float>& style);

  StyleContext<float> make_style_context(const ImageF& style_image) const;

  double eval_psnr(const std::vector<int>& frame_ids, bool decoded_mode,
                   std::vector<double>* per_frame = nullptr);

  // Mean total loss of the first `steps` recon steps, without mutating this
  // pipeline (used by the loss-decrease check).
  static std::vector<double> recon_loss_curve(const Config& cfg, const SceneDataset& ds,
                                              int steps);

  SceneModel<float>& model() { return model_; }
  ParamMap<float>& params() { return params_; }
  const Config& config() const { return cfg_; }
  const SceneDataset& dataset() const { return ds_; }
  const FeaturePyramid<float>& pyramid() const { return pyramid_; }
  const ContentProjection<float>& projection() const { return projection_; }
  const AdaAttnLayer<float>& attn() const { return attn_; }
  const Decoder<float>& decoder() const { return decoder_; }

  const std::vector<StepMetrics>& last_stage_metrics() const { return metrics_; }

  uint64_t frozen_checksum() const;  // density branch + shared layers + warp

 private:
  struct RayBundle {
    std::vector<Ray> rays;
    std::vector<uint64_t> seeds;
    std::vector<float> gt_rgb;   // [R*3]
    std::vector<float> mask;     // [R]
    int frame = 0;
  };

  void apply_stage_freeze(Stage stage);
  StepMetrics recon_step(int step, Adam<float>& opt, Rng& rng);
  StepMetrics decoder_step(int step, Adam<float>& opt, Rng& rng);
  StepMetrics style_step(int step, Adam<float>& opt, Rng& rng,
                         std::vector<StyleContext<float>>& styles);
  void run_stage(Stage stage, const std::string& run_dir);

  // Picks a training patch; half the picks are centered on a human-mask
  // pixel so the human gets steady coverage.
  void pick_patch(Rng& rng, int* frame, int* x0, int* y0) const;
  RayBundle patch_rays(int frame, int x0, int y0, int size, uint64_t stream) const;

  Tensor<float> patch_feature_grid(const RayBundle& rays, int size);
  Tensor<float> gt_patch_tensor(int frame, int x0, int y0, int size) const;

  Config cfg_;
  SceneDataset ds_;
  ParamMap<float> params_;
  SceneModel<float> model_;
  FeaturePyramid<float> pyramid_;
  ContentProjection<float> projection_;
  AdaAttnLayer<float> attn_;
  Decoder<float> decoder_;
  std::vector<int> train_frames_;
  std::vector<StepMetrics> metrics_;
};

}  // namespace sf
