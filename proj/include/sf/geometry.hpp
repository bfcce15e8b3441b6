#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace sf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pinhole camera. R, t are world-from-camera: X_world = R * X_cam + t.
// Pixel coordinates are continuous; integer pixel (i, j) is rendered
// through its center (i + 0.5, j + 0.5).
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 0, height = 0;

  void validate() const;
  Vec3 position() const { return t; }
  Vec3 forward() const { return R.col(2); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();  // unit length
  double near = 0, far = 0;
};

// Stratified samples along one ray: depths t_i (strictly increasing),
// positions, and the interval delta_i to the next sample (last one runs to
// `far`).
struct RaySamples {
  std::vector<double> t;
  std::vector<double> delta;
};

Ray generate_ray(const Camera& cam, double u, double v, double near, double far);

// Projects a world point; returns false if the point is behind the camera.
bool project(const Camera& cam, const Vec3& x, double* u, double* v, double* depth = nullptr);

// One uniform draw per equal sub-interval of [near, far]. `offsets` holds n
// values in [0, 1), one per bin (callers supply them so sampling stays
// replayable per pixel).
RaySamples stratified_sample(const Ray& ray, int n, const double* offsets);

// Sinusoidal positional encoding: [x?] ++ [sin(2^l x), cos(2^l x)] per
// coordinate for l in 0..L-1. Output length dim * (include_input + 2L).
void positional_encode(const double* x, int dim, int L, bool include_input, double* out);
inline int positional_encode_dim(int dim, int L, bool include_input) {
  return dim * ((include_input ? 1 : 0) + 2 * L);
}

// Maps x componentwise from [lo, hi] to [-1, 1].
inline Vec3 normalize_to_unit(const Vec3& x, const Vec3& lo, const Vec3& hi) {
  Vec3 r;
  for (int i = 0; i < 3; ++i) r[i] = 2.0 * (x[i] - lo[i]) / (hi[i] - lo[i]) - 1.0;
  return r;
}

// cameras.json: one record per frame.
std::vector<Camera> load_cameras(const std::string& path);
void save_cameras(const std::string& path, const std::vector<Camera>& cams);

}  // namespace sf
