#include "sf/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"
#include "sf/tensor.hpp"

namespace sf {

namespace {
template <typename V>
void get_if(const nlohmann::json& j, const char* key, V* out) {
  if (j.contains(key)) *out = j.at(key).get<V>();
}
}  // namespace

Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw TensorError("load_config: cannot open " + path);
  nlohmann::json j;
  is >> j;
  static const std::set<std::string> known = {
      "seed",          "d_scene",        "d_human",          "c_feat",
      "scene_voxel",   "human_voxel",    "resolution_cap",   "geometry_guided",
      "n_scene",       "n_human",        "human_pad",        "blend_sigma",
      "recon_steps",   "decoder_steps",  "style_steps",      "lr_recon",
      "lr_decoder",    "lr_style",       "lambda_a",         "lambda_smpl",
      "lambda_hard",   "lambda_edge",    "patches_per_step", "patch_size",
      "probe_count",   "edge_lines",     "edge_samples",     "heldout_frames",
      "log_interval",  "ckpt_interval",  "style_res",        "threads",
      "inject_nan_at_step"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key()))
      throw TensorError("load_config: unknown key \"" + it.key() + "\" in " + path);
  }
  Config c;
  get_if(j, "seed", &c.seed);
  get_if(j, "d_scene", &c.d_scene);
  get_if(j, "d_human", &c.d_human);
  get_if(j, "c_feat", &c.c_feat);
  get_if(j, "scene_voxel", &c.scene_voxel);
  get_if(j, "human_voxel", &c.human_voxel);
  get_if(j, "resolution_cap", &c.resolution_cap);
  get_if(j, "geometry_guided", &c.geometry_guided);
  get_if(j, "n_scene", &c.n_scene);
  get_if(j, "n_human", &c.n_human);
  get_if(j, "human_pad", &c.human_pad);
  get_if(j, "blend_sigma", &c.blend_sigma);
  get_if(j, "recon_steps", &c.recon_steps);
  get_if(j, "decoder_steps", &c.decoder_steps);
  get_if(j, "style_steps", &c.style_steps);
  get_if(j, "lr_recon", &c.lr_recon);
  get_if(j, "lr_decoder", &c.lr_decoder);
  get_if(j, "lr_style", &c.lr_style);
  get_if(j, "lambda_a", &c.weights.lambda_a);
  get_if(j, "lambda_smpl", &c.weights.lambda_smpl);
  get_if(j, "lambda_hard", &c.weights.lambda_hard);
  get_if(j, "lambda_edge", &c.weights.lambda_edge);
  get_if(j, "patches_per_step", &c.patches_per_step);
  get_if(j, "patch_size", &c.patch_size);
  get_if(j, "probe_count", &c.probe_count);
  get_if(j, "edge_lines", &c.edge_lines);
  get_if(j, "edge_samples", &c.edge_samples);
  get_if(j, "heldout_frames", &c.heldout_frames);
  get_if(j, "log_interval", &c.log_interval);
  get_if(j, "ckpt_interval", &c.ckpt_interval);
  get_if(j, "style_res", &c.style_res);
  get_if(j, "threads", &c.threads);
  get_if(j, "inject_nan_at_step", &c.inject_nan_at_step);
  return c;
}

void save_config(const std::string& path, const Config& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["d_scene"] = c.d_scene;
  j["d_human"] = c.d_human;
  j["c_feat"] = c.c_feat;
  j["scene_voxel"] = c.scene_voxel;
  j["human_voxel"] = c.human_voxel;
  j["resolution_cap"] = c.resolution_cap;
  j["geometry_guided"] = c.geometry_guided;
  j["n_scene"] = c.n_scene;
  j["n_human"] = c.n_human;
  j["human_pad"] = c.human_pad;
  j["blend_sigma"] = c.blend_sigma;
  j["recon_steps"] = c.recon_steps;
  j["decoder_steps"] = c.decoder_steps;
  j["style_steps"] = c.style_steps;
  j["lr_recon"] = c.lr_recon;
  j["lr_decoder"] = c.lr_decoder;
  j["lr_style"] = c.lr_style;
  j["lambda_a"] = c.weights.lambda_a;
  j["lambda_smpl"] = c.weights.lambda_smpl;
  j["lambda_hard"] = c.weights.lambda_hard;
  j["lambda_edge"] = c.weights.lambda_edge;
  j["patches_per_step"] = c.patches_per_step;
  j["patch_size"] = c.patch_size;
  j["probe_count"] = c.probe_count;
  j["edge_lines"] = c.edge_lines;
  j["edge_samples"] = c.edge_samples;
  j["heldout_frames"] = c.heldout_frames;
  j["log_interval"] = c.log_interval;
  j["ckpt_interval"] = c.ckpt_interval;
  j["style_res"] = c.style_res;
  j["threads"] = c.threads;
  j["inject_nan_at_step"] = c.inject_nan_at_step;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw TensorError("save_config: cannot open " + path);
  os << j.dump(1) << "\n";
}

}  // namespace sf
