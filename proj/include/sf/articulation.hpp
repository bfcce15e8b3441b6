#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <string>
#include <vector>

#include "sf/geometry.hpp"
#include "sf/nn.hpp"
#include "sf/tensor.hpp"

// Human deformation machinery: a K-capsule skeleton proxy, Gaussian
// blend weights, inverse linear blend skinning between observation and
// canonical space, and the learned warp-correction network.

namespace sf {

struct Capsule {
  Vec3 a = Vec3::Zero(), b = Vec3::Zero();  // axis endpoints, canonical space
  double radius = 0.1;
};

// Rest-pose body proxy in canonical space (limbs spread for part
// separability).
struct Skeleton {
  std::vector<Capsule> parts;

  int part_count() const { return static_cast<int>(parts.size()); }
  // Axis-aligned bounds of the canonical body, padded by `pad` meters.
  void bounds(Vec3* lo, Vec3* hi, double pad = 0.0) const;
};

// K rigid transforms mapping canonical part frames to observation space.
struct SkeletonPose {
  std::vector<Eigen::Isometry3d> parts;

  static SkeletonPose identity(int k);
  void validate() const;
};

double point_segment_distance(const Vec3& x, const Vec3& a, const Vec3& b);

// w_k proportional to exp(-d(x, posed capsule k)^2 / (2 s^2)), normalized.
// d is the distance to the capsule surface (0 inside).
std::vector<double> blend_weights(const Vec3& x, const Skeleton& skel, const SkeletonPose& pose,
                                  double sigma = 0.05);

// Blended skinning matrix sum_k w_k G_k.
Eigen::Matrix4d skinning_matrix(const std::vector<double>& w, const SkeletonPose& pose);

// x_tilde = (sum_k w_k G_k)^{-1} x. Throws on a degenerate blend (opposing
// rotations can cancel).
Vec3 inverse_lbs(const Vec3& x, const SkeletonPose& pose, const std::vector<double>& w);

// True iff x lies inside (or on) the canonical capsule body.
bool inside_canonical_body(const Vec3& x, const Skeleton& skel);

// Pose file: rest skeleton (endpoints + radius per part) and per-frame
// part transforms as {quaternion, translation}.
struct PoseSequence {
  Skeleton skeleton;
  std::vector<SkeletonPose> frames;
};
PoseSequence load_poses(const std::string& path);
void save_poses(const std::string& path, const PoseSequence& seq);

// ---------------------------------------------------------------------------
// Error-correction network E: gamma_v of the observation point -> 3-vector
// offset, soft-bounded by 0.05 * tanh so the correction cannot hijack the
// warp early in training.
// ---------------------------------------------------------------------------

template <typename T>
struct CorrectionNet {
  static constexpr int kFreqs = 6;
  static constexpr double kOffsetScale = 0.05;

  Mlp<T> mlp;
  Vec3 lo = Vec3::Constant(-1), hi = Vec3::Constant(1);  // encoding bounds

  CorrectionNet() = default;
  CorrectionNet(ParamMap<T>& pm, const std::string& prefix, const Vec3& lo_, const Vec3& hi_,
                Rng& rng)
      : mlp(pm, prefix, {positional_encode_dim(3, kFreqs, true), 64, 64, 3}, rng),
        lo(lo_),
        hi(hi_) {}

  int input_dim() const { return positional_encode_dim(3, kFreqs, true); }

  // Encodes observation points (plain coordinates) into the net input.
  Tensor<T> encode(const std::vector<Vec3>& points) const {
    const int dim = input_dim();
    std::vector<T> buf(points.size() * static_cast<size_t>(dim));
    std::vector<double> enc(static_cast<size_t>(dim));
    for (size_t i = 0; i < points.size(); ++i) {
      const Vec3 n = normalize_to_unit(points[i], lo, hi);
      positional_encode(n.data(), 3, kFreqs, true, enc.data());
      for (int d = 0; d < dim; ++d) buf[i * static_cast<size_t>(dim) + static_cast<size_t>(d)] =
          static_cast<T>(enc[static_cast<size_t>(d)]);
    }
    return Tensor<T>::from_data({static_cast<int64_t>(points.size()), dim}, std::move(buf));
  }

  // [n, 3] offsets, differentiable w.r.t. the net parameters.
  Tensor<T> forward(const std::vector<Vec3>& points) const {
    return mul_scalar(tanh(mlp.forward(encode(points))), static_cast<T>(kOffsetScale));
  }
};

// Warps observation points to canonical space: inverse LBS (rigid, constant
// w.r.t. the graph) plus the learned correction. Returns an [n, 3] tensor.
template <typename T>
Tensor<T> to_canonical(const std::vector<Vec3>& points, const Skeleton& skel,
                       const SkeletonPose& pose, const CorrectionNet<T>& eNet,
                       std::vector<Vec3>* rigid_out = nullptr) {
  std::vector<T> rigid(points.size() * 3);
  for (size_t i = 0; i < points.size(); ++i) {
    const auto w = blend_weights(points[i], skel, pose);
    const Vec3 xt = inverse_lbs(points[i], pose, w);
    if (rigid_out) (*rigid_out)[i] = xt;
    for (int d = 0; d < 3; ++d) rigid[i * 3 + static_cast<size_t>(d)] = static_cast<T>(xt[d]);
  }
  Tensor<T> base =
      Tensor<T>::from_data({static_cast<int64_t>(points.size()), 3}, std::move(rigid));
  return base + eNet.forward(points);
}

}  // namespace sf
