#pragma once

#include <string>
#include <vector>

#include "sf/articulation.hpp"
#include "sf/geometry.hpp"
#include "sf/image.hpp"
#include "sf/triplane.hpp"

namespace sf {

// A dataset directory on disk: frames/, masks/, flow/, flow_valid/,
// cameras.json, poses.json, styles/, meta.json.
struct SceneDataset {
  std::vector<ImageF> frames;
  std::vector<ImageF> masks;
  std::vector<FlowField> flows;       // n_frames - 1 forward flows
  std::vector<ImageF> flow_valid;     // visibility masks for the flows
  std::vector<Camera> cameras;
  PoseSequence poses;
  std::vector<std::string> style_paths;
  uint64_t seed = 0;
  int width = 0, height = 0;
  double near = 0.1, far = 5.0;
  Bounds3 scene_bounds;

  int n_frames() const { return static_cast<int>(frames.size()); }
};

SceneDataset load_dataset(const std::string& dir);

// Per-pair masked warp RMSE between consecutive (gap-composed) frames.
struct ConsistencyReport {
  struct Pair {
    int frame = 0, gap = 0;
    double rmse = 0;
    int64_t valid_pixels = 0;
  };
  std::vector<Pair> pairs;
  double adjacent_mean = 0;  // gap 1
  double far_mean = 0;       // gap `far_gap`
  double overall_mean = 0;
  int far_gap = 7;
};

// Warps frame t by the composed ground-truth flow over `gap` steps and
// compares against frame t+gap over valid pixels.
double warp_rmse(const std::vector<ImageF>& rendered, const SceneDataset& ds, int t, int gap,
                 int64_t* valid_count = nullptr);

ConsistencyReport eval_consistency(const std::vector<ImageF>& rendered, const SceneDataset& ds,
                                   int far_gap = 7);

void write_consistency_report(const std::string& path, const ConsistencyReport& r);

}  // namespace sf
