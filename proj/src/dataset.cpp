#include "sf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace sf {

SceneDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  SceneDataset ds;
  {
    std::ifstream is(dir + "/meta.json");
    if (!is) throw TensorError("load_dataset: missing meta.json in " + dir);
    nlohmann::json meta;
    is >> meta;
    ds.seed = meta.at("seed").get<uint64_t>();
    ds.width = meta.at("width").get<int>();
    ds.height = meta.at("height").get<int>();
    ds.near = meta.at("near").get<double>();
    ds.far = meta.at("far").get<double>();
    for (int d = 0; d < 3; ++d) {
      ds.scene_bounds.lo[d] = meta.at("scene_lo").at(static_cast<size_t>(d)).get<double>();
      ds.scene_bounds.hi[d] = meta.at("scene_hi").at(static_cast<size_t>(d)).get<double>();
    }
    const int n = meta.at("n_frames").get<int>();
    char name[64];
    for (int i = 0; i < n; ++i) {
      std::snprintf(name, sizeof(name), "/frames/frame_%04d.png", i);
      ds.frames.push_back(read_png(dir + name));
      std::snprintf(name, sizeof(name), "/masks/mask_%04d.png", i);
      ds.masks.push_back(read_png(dir + name));
    }
    for (int i = 0; i + 1 < n; ++i) {
      std::snprintf(name, sizeof(name), "/flow/flow_%04d.bin", i);
      ds.flows.push_back(read_flow(dir + name));
      std::snprintf(name, sizeof(name), "/flow_valid/valid_%04d.png", i);
      ds.flow_valid.push_back(read_png(dir + name));
    }
  }
  ds.cameras = load_cameras(dir + "/cameras.json");
  ds.poses = load_poses(dir + "/poses.json");
  if (fs::exists(dir + "/styles")) {
    std::vector<std::string> styles;
    for (const auto& e : fs::directory_iterator(dir + "/styles")) {
      if (e.path().extension() == ".png") styles.push_back(e.path().string());
    }
    std::sort(styles.begin(), styles.end());
    ds.style_paths = styles;
  }
  for (const auto& f : ds.frames) {
    if (f.w != ds.width || f.h != ds.height)
      throw TensorError("load_dataset: frame size mismatch against meta.json");
  }
  return ds;
}

namespace {

void sample_flow(const FlowField& f, double px, double py, double* dx, double* dy) {
  const int x0 = std::clamp(static_cast<int>(px), 0, f.w >= 2 ? f.w - 2 : 0);
  const int y0 = std::clamp(static_cast<int>(py), 0, f.h >= 2 ? f.h - 2 : 0);
  const double fx = px - x0, fy = py - y0;
  const int x1 = f.w >= 2 ? x0 + 1 : x0, y1 = f.h >= 2 ? y0 + 1 : y0;
  *dx = (1 - fy) * ((1 - fx) * f.dx(x0, y0) + fx * f.dx(x1, y0)) +
        fy * ((1 - fx) * f.dx(x0, y1) + fx * f.dx(x1, y1));
  *dy = (1 - fy) * ((1 - fx) * f.dy(x0, y0) + fx * f.dy(x1, y0)) +
        fy * ((1 - fx) * f.dy(x0, y1) + fx * f.dy(x1, y1));
}

// Composes the ground-truth forward flow from frame t over `gap` steps.
void compose_flow(const SceneDataset& ds, int t, int gap, FlowField* out, ImageF* valid) {
  const int w = ds.width, h = ds.height;
  out->w = w;
  out->h = h;
  out->uv.assign(static_cast<size_t>(2 * w * h), 0.f);
  *valid = ImageF(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double dx = 0, dy = 0;
      bool ok = true;
      for (int s = 0; s < gap && ok; ++s) {
        const FlowField& f = ds.flows[static_cast<size_t>(t + s)];
        const ImageF& v = ds.flow_valid[static_cast<size_t>(t + s)];
        const double px = x + dx, py = y + dy;
        if (px < 0 || px > w - 1 || py < 0 || py > h - 1) {
          ok = false;
          break;
        }
        if (s == 0) {
          if (v.at(x, y, 0) < 0.5f) ok = false;
          dx += f.dx(x, y);
          dy += f.dy(x, y);
        } else {
          if (v.sample(px, py, 0) < 0.999f) ok = false;
          double sdx, sdy;
          sample_flow(f, px, py, &sdx, &sdy);
          dx += sdx;
          dy += sdy;
        }
      }
      if (!ok) continue;
      const double tx = x + dx, ty = y + dy;
      if (tx < 0 || tx > w - 1 || ty < 0 || ty > h - 1) continue;
      out->uv[static_cast<size_t>(2 * (y * w + x))] = static_cast<float>(dx);
      out->uv[static_cast<size_t>(2 * (y * w + x) + 1)] = static_cast<float>(dy);
      valid->at(x, y, 0) = 1.f;
    }
  }
}

}  // namespace

double warp_rmse(const std::vector<ImageF>& rendered, const SceneDataset& ds, int t, int gap,
                 int64_t* valid_count) {
  if (static_cast<int>(rendered.size()) != ds.n_frames())
    throw TensorError("warp_rmse: rendered frame count " + std::to_string(rendered.size()) +
                      " does not match dataset " + std::to_string(ds.n_frames()));
  FlowField flow;
  ImageF valid;
  compose_flow(ds, t, gap, &flow, &valid);
  const ImageF& src = rendered[static_cast<size_t>(t)];
  const ImageF& dst = rendered[static_cast<size_t>(t + gap)];
  double acc = 0;
  int64_t count = 0;
  for (int y = 0; y < ds.height; ++y) {
    for (int x = 0; x < ds.width; ++x) {
      if (valid.at(x, y, 0) < 0.5f) continue;
      const double tx = x + flow.dx(x, y), ty = y + flow.dy(x, y);
      for (int c = 0; c < 3; ++c) {
        const double d = dst.sample(tx, ty, c) - src.at(x, y, c);
        acc += d * d;
      }
      ++count;
    }
  }
  if (valid_count) *valid_count = count;
  if (count == 0) return 0.0;
  return std::sqrt(acc / (3.0 * static_cast<double>(count)));
}

ConsistencyReport eval_consistency(const std::vector<ImageF>& rendered, const SceneDataset& ds,
                                   int far_gap) {
  ConsistencyReport r;
  r.far_gap = far_gap;
  double adj = 0, far = 0, all = 0;
  int n_adj = 0, n_far = 0;
  for (const int gap : {1, far_gap}) {
    for (int t = 0; t + gap < ds.n_frames(); ++t) {
      ConsistencyReport::Pair p;
      p.frame = t;
      p.gap = gap;
      p.rmse = warp_rmse(rendered, ds, t, gap, &p.valid_pixels);
      r.pairs.push_back(p);
      if (gap == 1) {
        adj += p.rmse;
        ++n_adj;
      } else {
        far += p.rmse;
        ++n_far;
      }
    }
  }
  r.adjacent_mean = n_adj ? adj / n_adj : 0;
  r.far_mean = n_far ? far / n_far : 0;
  all = adj + far;
  r.overall_mean = (n_adj + n_far) ? all / (n_adj + n_far) : 0;
  return r;
}

void write_consistency_report(const std::string& path, const ConsistencyReport& r) {
  nlohmann::json j;
  j["adjacent_mean"] = r.adjacent_mean;
  j["far_mean"] = r.far_mean;
  j["overall_mean"] = r.overall_mean;
  j["far_gap"] = r.far_gap;
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : r.pairs) {
    j["pairs"].push_back(
        {{"frame", p.frame}, {"gap", p.gap}, {"rmse", p.rmse}, {"valid_pixels", p.valid_pixels}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw TensorError("write_consistency_report: cannot open " + path);
  os << j.dump(1) << "\n";
}

}  // namespace sf
