#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sf/losses.hpp"

namespace sf {

// Everything tunable about representation sizes, sampling, and the three
// training stages. JSON round-trips; unknown keys are rejected to catch
// typos.
struct Config {
  uint64_t seed = 1;

  // representation
  int64_t d_scene = 16;   // tri-plane feature dim (scene)
  int64_t d_human = 16;   // tri-plane feature dim (human)
  int64_t c_feat = 64;    // rendered feature channels C (= decoder input M)
  double scene_voxel = 0.01;  // meters
  double human_voxel = 0.01;
  int64_t resolution_cap = 512;
  bool geometry_guided = true;  // false = directly optimized planes (ablation)

  // sampling
  int n_scene = 128;
  int n_human = 128;
  double human_pad = 0.1;
  double blend_sigma = 0.05;

  // stages
  int recon_steps = 3000;
  int decoder_steps = 600;
  int style_steps = 600;
  double lr_recon = 1e-4;
  double lr_decoder = 1e-4;
  double lr_style = 2e-5;
  LossWeights weights;

  // batch geometry
  int patches_per_step = 4;
  int patch_size = 24;
  int probe_count = 1024;
  int edge_lines = 16;
  int edge_samples = 64;

  std::vector<int> heldout_frames = {5, 11};
  int log_interval = 50;
  int ckpt_interval = 500;
  int style_res = 128;
  int threads = 1;

  // test hook: forces a NaN loss at the given step to exercise the
  // last-good-checkpoint guard (-1 = disabled)
  int inject_nan_at_step = -1;
};

Config load_config(const std::string& path);
void save_config(const std::string& path, const Config& cfg);

}  // namespace sf
