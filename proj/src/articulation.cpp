#include "sf/articulation.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace sf {

void Skeleton::bounds(Vec3* lo, Vec3* hi, double pad) const {
  *lo = Vec3::Constant(1e30);
  *hi = Vec3::Constant(-1e30);
  for (const auto& c : parts) {
    for (int d = 0; d < 3; ++d) {
      (*lo)[d] = std::min((*lo)[d], std::min(c.a[d], c.b[d]) - c.radius - pad);
      (*hi)[d] = std::max((*hi)[d], std::max(c.a[d], c.b[d]) + c.radius + pad);
    }
  }
}

SkeletonPose SkeletonPose::identity(int k) {
  SkeletonPose p;
  p.parts.assign(static_cast<size_t>(k), Eigen::Isometry3d::Identity());
  return p;
}

void SkeletonPose::validate() const {
  if (parts.empty()) throw TensorError("pose: needs K >= 1 parts");
  for (const auto& g : parts) {
    const Mat3 e = g.linear().transpose() * g.linear() - Mat3::Identity();
    if (e.cwiseAbs().maxCoeff() > 1e-6)
      throw TensorError("pose: part rotation is not orthonormal");
  }
}

double point_segment_distance(const Vec3& x, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 < 1e-18) return (x - a).norm();
  const double t = std::clamp((x - a).dot(ab) / len2, 0.0, 1.0);
  return (x - (a + t * ab)).norm();
}

std::vector<double> blend_weights(const Vec3& x, const Skeleton& skel, const SkeletonPose& pose,
                                  double sigma) {
  const size_t k = skel.parts.size();
  std::vector<double> w(k);
  // Subtract the smallest squared distance before exponentiating so far
  // points keep well-defined weights.
  std::vector<double> d2(k);
  double best = 1e300;
  for (size_t i = 0; i < k; ++i) {
    const Capsule& c = skel.parts[i];
    const Vec3 a = pose.parts[i] * c.a;
    const Vec3 b = pose.parts[i] * c.b;
    const double d = std::max(0.0, point_segment_distance(x, a, b) - c.radius);
    d2[i] = d * d;
    best = std::min(best, d2[i]);
  }
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double z = 0;
  for (size_t i = 0; i < k; ++i) {
    w[i] = std::exp(-(d2[i] - best) * inv);
    z += w[i];
  }
  for (size_t i = 0; i < k; ++i) w[i] /= z;
  return w;
}

Eigen::Matrix4d skinning_matrix(const std::vector<double>& w, const SkeletonPose& pose) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  for (size_t i = 0; i < w.size(); ++i) m += w[i] * pose.parts[i].matrix();
  return m;
}

Vec3 inverse_lbs(const Vec3& x, const SkeletonPose& pose, const std::vector<double>& w) {
  const Eigen::Matrix4d m = skinning_matrix(w, pose);
  const double det = m.block<3, 3>(0, 0).determinant();
  if (std::abs(det) < 1e-8)
    throw TensorError("inverse_lbs: degenerate blended pose (|det| = " + std::to_string(det) +
                      "), opposing part rotations cancel");
  const Eigen::Vector4d h = m.inverse() * Eigen::Vector4d(x.x(), x.y(), x.z(), 1.0);
  return Vec3(h.x(), h.y(), h.z()) / h.w();
}

bool inside_canonical_body(const Vec3& x, const Skeleton& skel) {
  for (const auto& c : skel.parts) {
    if (point_segment_distance(x, c.a, c.b) - c.radius <= 0.0) return true;
  }
  return false;
}

PoseSequence load_poses(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw TensorError("load_poses: cannot open " + path);
  nlohmann::json j;
  is >> j;
  PoseSequence seq;
  for (const auto& rec : j.at("rest")) {
    Capsule c;
    const auto& a = rec.at("a");
    const auto& b = rec.at("b");
    for (int d = 0; d < 3; ++d) {
      c.a[d] = a.at(static_cast<size_t>(d)).get<double>();
      c.b[d] = b.at(static_cast<size_t>(d)).get<double>();
    }
    c.radius = rec.at("radius").get<double>();
    seq.skeleton.parts.push_back(c);
  }
  for (const auto& frame : j.at("frames")) {
    SkeletonPose pose;
    for (const auto& rec : frame) {
      const auto& q = rec.at("q");  // w, x, y, z
      const auto& t = rec.at("t");
      Eigen::Quaterniond quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                              q.at(3).get<double>());
      Eigen::Isometry3d g = Eigen::Isometry3d::Identity();
      g.linear() = quat.normalized().toRotationMatrix();
      g.translation() = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
      pose.parts.push_back(g);
    }
    if (pose.parts.size() != seq.skeleton.parts.size())
      throw TensorError("load_poses: frame part count does not match rest skeleton");
    pose.validate();
    seq.frames.push_back(std::move(pose));
  }
  return seq;
}

void save_poses(const std::string& path, const PoseSequence& seq) {
  nlohmann::json j;
  j["rest"] = nlohmann::json::array();
  for (const auto& c : seq.skeleton.parts) {
    j["rest"].push_back({{"a", {c.a.x(), c.a.y(), c.a.z()}},
                         {"b", {c.b.x(), c.b.y(), c.b.z()}},
                         {"radius", c.radius}});
  }
  j["frames"] = nlohmann::json::array();
  for (const auto& pose : seq.frames) {
    nlohmann::json frame = nlohmann::json::array();
    for (const auto& g : pose.parts) {
      Eigen::Quaterniond q(g.linear());
      frame.push_back({{"q", {q.w(), q.x(), q.y(), q.z()}},
                       {"t", {g.translation().x(), g.translation().y(), g.translation().z()}}});
    }
    j["frames"].push_back(frame);
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw TensorError("save_poses: cannot open " + path);
  os << j.dump(1) << "\n";
}

}  // namespace sf
