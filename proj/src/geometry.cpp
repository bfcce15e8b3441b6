#include "sf/geometry.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "sf/tensor.hpp"

namespace sf {

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw TensorError("camera: focal lengths must be positive");
  const Mat3 e = R.transpose() * R - Mat3::Identity();
  if (e.cwiseAbs().maxCoeff() > 1e-6)
    throw TensorError("camera: rotation is not orthonormal (|R^T R - I| = " +
                      std::to_string(e.cwiseAbs().maxCoeff()) + ")");
  if (width <= 0 || height <= 0) throw TensorError("camera: image size must be positive");
}

Ray generate_ray(const Camera& cam, double u, double v, double near, double far) {
  if (u < 0 || u > cam.width || v < 0 || v > cam.height)
    throw TensorError("generate_ray: pixel (" + std::to_string(u) + ", " + std::to_string(v) +
                      ") outside image " + std::to_string(cam.width) + "x" +
                      std::to_string(cam.height));
  if (!(near > 0) || !(far > near))
    throw TensorError("generate_ray: need 0 < near < far");
  Vec3 d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  Ray r;
  r.origin = cam.t;
  r.dir = (cam.R * d_cam).normalized();
  r.near = near;
  r.far = far;
  return r;
}

bool project(const Camera& cam, const Vec3& x, double* u, double* v, double* depth) {
  const Vec3 xc = cam.R.transpose() * (x - cam.t);
  if (xc.z() <= 1e-12) return false;
  *u = cam.fx * xc.x() / xc.z() + cam.cx;
  *v = cam.fy * xc.y() / xc.z() + cam.cy;
  if (depth) *depth = xc.z();
  return true;
}

RaySamples stratified_sample(const Ray& ray, int n, const double* offsets) {
  if (n < 1) throw TensorError("stratified_sample: need n >= 1");
  RaySamples s;
  s.t.resize(static_cast<size_t>(n));
  s.delta.resize(static_cast<size_t>(n));
  const double bin = (ray.far - ray.near) / n;
  for (int i = 0; i < n; ++i)
    s.t[static_cast<size_t>(i)] = ray.near + (i + offsets[i]) * bin;
  for (int i = 0; i + 1 < n; ++i)
    s.delta[static_cast<size_t>(i)] = s.t[static_cast<size_t>(i + 1)] - s.t[static_cast<size_t>(i)];
  s.delta[static_cast<size_t>(n - 1)] = ray.far - s.t[static_cast<size_t>(n - 1)];
  return s;
}

void positional_encode(const double* x, int dim, int L, bool include_input, double* out) {
  int k = 0;
  for (int d = 0; d < dim; ++d) {
    if (include_input) out[k++] = x[d];
    double f = 1.0;
    for (int l = 0; l < L; ++l) {
      out[k++] = std::sin(f * x[d]);
      out[k++] = std::cos(f * x[d]);
      f *= 2.0;
    }
  }
}

std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw TensorError("load_cameras: cannot open " + path);
  nlohmann::json j;
  is >> j;
  std::vector<Camera> cams;
  for (const auto& rec : j) {
    Camera c;
    c.fx = rec.at("fx").get<double>();
    c.fy = rec.at("fy").get<double>();
    c.cx = rec.at("cx").get<double>();
    c.cy = rec.at("cy").get<double>();
    c.width = rec.at("width").get<int>();
    c.height = rec.at("height").get<int>();
    const auto& R = rec.at("R");
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) c.R(r, col) = R.at(static_cast<size_t>(3 * r + col)).get<double>();
    const auto& t = rec.at("t");
    for (int i = 0; i < 3; ++i) c.t[i] = t.at(static_cast<size_t>(i)).get<double>();
    c.validate();
    cams.push_back(c);
  }
  return cams;
}

void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cams) {
    nlohmann::json rec;
    rec["fx"] = c.fx;
    rec["fy"] = c.fy;
    rec["cx"] = c.cx;
    rec["cy"] = c.cy;
    rec["width"] = c.width;
    rec["height"] = c.height;
    std::vector<double> R;
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) R.push_back(c.R(r, col));
    rec["R"] = R;
    rec["t"] = {c.t.x(), c.t.y(), c.t.z()};
    j.push_back(rec);
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw TensorError("save_cameras: cannot open " + path);
  os << j.dump(1) << "\n";
}

}  // namespace sf
