#pragma once

#include <string>
#include <vector>

#include "sf/articulation.hpp"
#include "sf/geometry.hpp"
#include "sf/image.hpp"
#include "sf/triplane.hpp"

// Synthetic dataset generation: an analytically ray-traced box room plus a
// capsule human walking a scripted trajectory. Frames, masks, cameras,
// poses, and forward optical flow are exact by construction.

namespace sf {

struct SynthSpec {
  uint64_t seed = 7;
  int n_frames = 16;
  int res = 64;
  double near = 0.2;
  double far = 5.0;
};

// Analytic surface hit: room face 0..5 or capsule part (100 + k).
struct SurfaceHit {
  bool hit = false;
  double t = 0;
  Vec3 point = Vec3::Zero();
  int kind = -1;

  bool is_human() const { return kind >= 100; }
  int part() const { return kind - 100; }
};

class SynthScene {
 public:
  explicit SynthScene(const SynthSpec& spec);

  const SynthSpec& spec() const { return spec_; }
  const Bounds3& room() const { return room_; }
  Bounds3 scene_field_bounds() const;  // room padded so walls are interior
  const Skeleton& skeleton() const { return skeleton_; }
  const std::vector<Camera>& cameras() const { return cameras_; }
  const std::vector<SkeletonPose>& poses() const { return poses_; }

  SurfaceHit trace(const Vec3& origin, const Vec3& dir, const SkeletonPose& pose) const;
  Vec3 albedo(const SurfaceHit& hit, const SkeletonPose& pose) const;

  ImageF render_frame(int frame) const;
  ImageF render_mask(int frame) const;
  // Renders with an arbitrary camera/pose (novel-view/pose references).
  ImageF render_view(const Camera& cam, const SkeletonPose& pose, ImageF* mask = nullptr) const;

  // Forward flow frame t -> t+1 plus its visibility mask.
  void flow(int frame, FlowField* field, ImageF* valid) const;

  // A pose sequence the training set never contains.
  std::vector<SkeletonPose> novel_poses(int n) const;
  // Build one pose of the scripted walk at a continuous phase.
  SkeletonPose walk_pose(double phase) const;

 private:
  SynthSpec spec_;
  Bounds3 room_;
  Skeleton skeleton_;
  std::vector<Camera> cameras_;
  std::vector<SkeletonPose> poses_;
};

// Writes the full dataset directory: frames/, masks/, flow/, flow_valid/,
// cameras.json, poses.json, styles/, meta.json.
void write_synth_dataset(const std::string& dir, const SynthSpec& spec);

// Procedural style images (seeded), used by the stylization stage.
ImageF make_style_image(uint64_t seed, int variant, int res);

}  // namespace sf
