#include "sf/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace sf {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kHumanScale = 0.55;
constexpr double kBodyHeight = 0.64;   // canonical origin above the floor
constexpr double kHumanOrbitR = 0.35;
constexpr double kCameraOrbitR = 0.95;

// Smooth two-frequency color pattern; all textures are gentle so warping a
// frame by the exact flow stays within the interpolation error budget.
Vec3 pattern(const Vec3& base, double amp, double u, double v, double f1, double f2,
             double phase) {
  Vec3 c;
  for (int ch = 0; ch < 3; ++ch) {
    const double p = phase + 0.9 * ch;
    c[ch] = base[ch] + amp * std::sin(f1 * u + p) * std::sin(f2 * v + 0.6 + 0.4 * ch);
    c[ch] = std::clamp(c[ch], 0.03, 0.97);
  }
  return c;
}

struct PartStyle {
  Vec3 base;
  double amp, freq, phase;
};

const PartStyle kPartStyles[5] = {
    {{0.25, 0.38, 0.62}, 0.10, 5.0, 0.0},   // torso
    {{0.72, 0.55, 0.38}, 0.08, 6.0, 1.1},   // left arm
    {{0.72, 0.55, 0.38}, 0.08, 6.0, 2.3},   // right arm
    {{0.48, 0.26, 0.28}, 0.08, 5.5, 0.7},   // left leg
    {{0.48, 0.26, 0.28}, 0.08, 5.5, 1.9},   // right leg
};

double ray_capsule(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, double r) {
  const Vec3 ab = b - a;
  const double len = ab.norm();
  const Vec3 n = ab / len;
  const Vec3 m = o - a;
  const Vec3 dp = d - d.dot(n) * n;
  const Vec3 mp = m - m.dot(n) * n;
  double best = -1;
  const double qa = dp.squaredNorm();
  const double qb = 2.0 * dp.dot(mp);
  const double qc = mp.squaredNorm() - r * r;
  if (qa > 1e-14) {
    const double disc = qb * qb - 4 * qa * qc;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (const double t : {(-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)}) {
        if (t <= 1e-9) continue;
        const double s = (m + t * d).dot(n);
        if (s >= 0 && s <= len) {
          best = best < 0 ? t : std::min(best, t);
          break;  // first positive root inside the cylinder body wins
        }
      }
    }
  }
  for (const Vec3& c : {a, b}) {
    const Vec3 oc = o - c;
    const double sb = 2.0 * d.dot(oc);
    const double sc = oc.squaredNorm() - r * r;
    const double disc = sb * sb - 4 * sc;
    if (disc < 0) continue;
    const double sq = std::sqrt(disc);
    for (const double t : {(-sb - sq) / 2, (-sb + sq) / 2}) {
      if (t <= 1e-9) continue;
      if (best < 0 || t < best) best = t;
      break;
    }
  }
  return best;
}

Camera look_at_camera(const Vec3& pos, const Vec3& target, int res) {
  Camera c;
  c.width = c.height = res;
  c.fx = c.fy = static_cast<double>(res);
  c.cx = c.cy = res / 2.0;
  const Vec3 f = (target - pos).normalized();
  Vec3 down = Vec3(0, -1, 0);
  down = (down - down.dot(f) * f).normalized();
  const Vec3 right = down.cross(f);
  c.R.col(0) = right;
  c.R.col(1) = down;
  c.R.col(2) = f;
  c.t = pos;
  return c;
}

}  // namespace

SynthScene::SynthScene(const SynthSpec& spec) : spec_(spec) {
  room_.lo = Vec3(-1.2, 0.0, -1.2);
  room_.hi = Vec3(1.2, 2.2, 1.2);
  // the farthest room corner from any orbit camera is ~3.3 m away; a tight
  // far plane keeps stratified samples where geometry can be
  spec_.far = std::min(spec_.far, 3.5);

  const double s = kHumanScale;
  auto cap = [s](double ax, double ay, double az, double bx, double by, double bz, double r) {
    Capsule c;
    c.a = s * Vec3(ax, ay, az);
    c.b = s * Vec3(bx, by, bz);
    c.radius = s * r;
    return c;
  };
  skeleton_.parts = {
      cap(0, -0.30, 0, 0, 0.55, 0, 0.17),          // torso
      cap(-0.16, 0.42, 0, -0.62, 0.05, 0, 0.065),  // left arm
      cap(0.16, 0.42, 0, 0.62, 0.05, 0, 0.065),    // right arm
      cap(-0.10, -0.32, 0, -0.30, -1.05, 0, 0.085),  // left leg
      cap(0.10, -0.32, 0, 0.30, -1.05, 0, 0.085),    // right leg
  };

  const double theta0 = 0.9;
  for (int i = 0; i < spec_.n_frames; ++i) {
    const double th = theta0 + 0.038 * i;
    const Vec3 pos(kCameraOrbitR * std::sin(th), 1.05 + 0.05 * std::sin(2 * th),
                   kCameraOrbitR * std::cos(th));
    cameras_.push_back(look_at_camera(pos, Vec3(0, 0.82, 0), spec_.res));
    poses_.push_back(walk_pose(static_cast<double>(i)));
  }
}

SkeletonPose SynthScene::walk_pose(double phase) const {
  const double theta0 = 0.9;
  const double a_h = theta0 + kPi + 0.55 + 0.028 * phase;
  const Vec3 body(kHumanOrbitR * std::sin(a_h), kBodyHeight, kHumanOrbitR * std::cos(a_h));
  const double yaw = a_h + kPi / 2;
  const double swing = 0.30 * std::sin(2 * kPi * phase / 8.0);

  Eigen::Isometry3d m = Eigen::Isometry3d::Identity();
  m.translation() = body;
  m.linear() = Eigen::AngleAxisd(yaw, Vec3::UnitY()).toRotationMatrix();

  SkeletonPose pose;
  const double part_swing[5] = {0.0, swing, -swing, -swing, swing};
  for (int k = 0; k < 5; ++k) {
    Eigen::Isometry3d g = m;
    if (k > 0) {
      const Vec3 pivot = skeleton_.parts[static_cast<size_t>(k)].a;
      Eigen::Isometry3d local = Eigen::Isometry3d::Identity();
      local.translation() = pivot;
      local.linear() = Eigen::AngleAxisd(part_swing[k], Vec3::UnitX()).toRotationMatrix();
      local.translation() -= local.linear() * pivot;
      g = m * local;
    }
    pose.parts.push_back(g);
  }
  return pose;
}

std::vector<SkeletonPose> SynthScene::novel_poses(int n) const {
  // stationary near the room center, exaggerated swing: never seen in the
  // training walk
  std::vector<SkeletonPose> out;
  for (int i = 0; i < n; ++i) {
    const double swing = 0.55 * std::sin(2 * kPi * i / std::max(1, n) + 0.7);
    Eigen::Isometry3d m = Eigen::Isometry3d::Identity();
    m.translation() = Vec3(0.1, kBodyHeight, -0.15);
    m.linear() = Eigen::AngleAxisd(1.9, Vec3::UnitY()).toRotationMatrix();
    SkeletonPose pose;
    const double part_swing[5] = {0.0, swing, -swing, -swing, swing};
    for (int k = 0; k < 5; ++k) {
      Eigen::Isometry3d g = m;
      if (k > 0) {
        const Vec3 pivot = skeleton_.parts[static_cast<size_t>(k)].a;
        Eigen::Isometry3d local = Eigen::Isometry3d::Identity();
        local.translation() = pivot;
        local.linear() = Eigen::AngleAxisd(part_swing[k], Vec3::UnitX()).toRotationMatrix();
        local.translation() -= local.linear() * pivot;
        g = m * local;
      }
      pose.parts.push_back(g);
    }
    out.push_back(pose);
  }
  return out;
}

Bounds3 SynthScene::scene_field_bounds() const {
  Bounds3 b;
  b.lo = room_.lo - Vec3::Constant(0.1);
  b.hi = room_.hi + Vec3::Constant(0.1);
  return b;
}

SurfaceHit SynthScene::trace(const Vec3& o, const Vec3& d, const SkeletonPose& pose) const {
  SurfaceHit best;
  // room faces (camera is inside the box, so the nearest positive-t face
  // plane hit inside the face rect is the wall seen)
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      const double plane = side == 0 ? room_.lo[axis] : room_.hi[axis];
      if (std::abs(d[axis]) < 1e-12) continue;
      const double t = (plane - o[axis]) / d[axis];
      if (t <= 1e-9) continue;
      const Vec3 p = o + t * d;
      bool inside = true;
      for (int a2 = 0; a2 < 3; ++a2) {
        if (a2 == axis) continue;
        if (p[a2] < room_.lo[a2] - 1e-9 || p[a2] > room_.hi[a2] + 1e-9) inside = false;
      }
      if (!inside) continue;
      if (!best.hit || t < best.t) {
        best.hit = true;
        best.t = t;
        best.point = p;
        best.kind = 2 * axis + side;
      }
    }
  }
  for (size_t k = 0; k < skeleton_.parts.size(); ++k) {
    const Capsule& c = skeleton_.parts[k];
    const double t = ray_capsule(o, d, pose.parts[k] * c.a, pose.parts[k] * c.b, c.radius);
    if (t > 0 && (!best.hit || t < best.t)) {
      best.hit = true;
      best.t = t;
      best.point = o + t * d;
      best.kind = 100 + static_cast<int>(k);
    }
  }
  return best;
}

Vec3 SynthScene::albedo(const SurfaceHit& hit, const SkeletonPose& pose) const {
  if (!hit.hit) return Vec3(0, 0, 0);
  const Vec3& p = hit.point;
  switch (hit.kind) {
    case 0:  // x = lo wall
      return pattern({0.58, 0.34, 0.30}, 0.15, p.y(), p.z(), 1.8, 1.6, 0.3);
    case 1:  // x = hi wall
      return pattern({0.30, 0.44, 0.58}, 0.15, p.y(), p.z(), 1.6, 1.9, 1.2);
    case 2:  // floor
      return pattern({0.44, 0.40, 0.34}, 0.16, p.x(), p.z(), 2.0, 1.7, 0.5);
    case 3:  // ceiling
      return pattern({0.74, 0.74, 0.78}, 0.08, p.x(), p.z(), 1.3, 1.4, 0.2);
    case 4:  // z = lo wall
      return pattern({0.36, 0.52, 0.36}, 0.15, p.x(), p.y(), 1.7, 1.5, 0.8);
    case 5:  // z = hi wall
      return pattern({0.55, 0.48, 0.30}, 0.15, p.x(), p.y(), 1.5, 1.8, 1.7);
    default: {
      const int k = hit.part();
      const PartStyle& st = kPartStyles[k];
      // pattern anchored in part-local coordinates so it moves rigidly
      const Vec3 local = pose.parts[static_cast<size_t>(k)].inverse() * p;
      Vec3 c;
      for (int ch = 0; ch < 3; ++ch) {
        c[ch] = st.base[ch] +
                st.amp * std::sin(st.freq * local.y() + st.phase + 0.8 * ch) *
                    std::cos(0.6 * st.freq * local.x() + 0.3 * ch);
        c[ch] = std::clamp(c[ch], 0.03, 0.97);
      }
      return c;
    }
  }
}

ImageF SynthScene::render_view(const Camera& cam, const SkeletonPose& pose, ImageF* mask) const {
  ImageF img(cam.width, cam.height, 3);
  if (mask) *mask = ImageF(cam.width, cam.height, 1);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Ray ray = generate_ray(cam, x + 0.5, y + 0.5, spec_.near, spec_.far);
      const SurfaceHit hit = trace(ray.origin, ray.dir, pose);
      const Vec3 c = albedo(hit, pose);
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = static_cast<float>(c[ch]);
      if (mask) mask->at(x, y, 0) = hit.hit && hit.is_human() ? 1.f : 0.f;
    }
  }
  return img;
}

ImageF SynthScene::render_frame(int frame) const {
  return render_view(cameras_[static_cast<size_t>(frame)], poses_[static_cast<size_t>(frame)]);
}

ImageF SynthScene::render_mask(int frame) const {
  ImageF mask;
  render_view(cameras_[static_cast<size_t>(frame)], poses_[static_cast<size_t>(frame)], &mask);
  return mask;
}

void SynthScene::flow(int frame, FlowField* field, ImageF* valid) const {
  const Camera& cam0 = cameras_[static_cast<size_t>(frame)];
  const Camera& cam1 = cameras_[static_cast<size_t>(frame + 1)];
  const SkeletonPose& p0 = poses_[static_cast<size_t>(frame)];
  const SkeletonPose& p1 = poses_[static_cast<size_t>(frame + 1)];
  field->w = cam0.width;
  field->h = cam0.height;
  field->uv.assign(static_cast<size_t>(2 * cam0.width * cam0.height), 0.f);
  *valid = ImageF(cam0.width, cam0.height, 1);

  // id map of the target frame, for rejecting pixels whose warped bilinear
  // taps would straddle a silhouette
  std::vector<int> kind1(static_cast<size_t>(cam1.width * cam1.height), -1);
  for (int y = 0; y < cam1.height; ++y) {
    for (int x = 0; x < cam1.width; ++x) {
      const Ray r = generate_ray(cam1, x + 0.5, y + 0.5, spec_.near, spec_.far);
      kind1[static_cast<size_t>(y * cam1.width + x)] = trace(r.origin, r.dir, p1).kind;
    }
  }

  for (int y = 0; y < cam0.height; ++y) {
    for (int x = 0; x < cam0.width; ++x) {
      const double u = x + 0.5, v = y + 0.5;
      const Ray r = generate_ray(cam0, u, v, spec_.near, spec_.far);
      const SurfaceHit hit = trace(r.origin, r.dir, p0);
      if (!hit.hit) continue;
      Vec3 target = hit.point;
      if (hit.is_human()) {
        const int k = hit.part();
        target = p1.parts[static_cast<size_t>(k)] *
                 (p0.parts[static_cast<size_t>(k)].inverse() * hit.point);
      }
      double u1, v1;
      if (!project(cam1, target, &u1, &v1)) continue;
      field->uv[static_cast<size_t>(2 * (y * cam0.width + x))] = static_cast<float>(u1 - u);
      field->uv[static_cast<size_t>(2 * (y * cam0.width + x) + 1)] = static_cast<float>(v1 - v);
      if (u1 < 0.5 || u1 > cam1.width - 0.5 || v1 < 0.5 || v1 > cam1.height - 0.5) continue;
      // occlusion test: the target view must see (nearly) the same point
      const Ray r1 = generate_ray(cam1, u1, v1, spec_.near, spec_.far);
      const SurfaceHit hit1 = trace(r1.origin, r1.dir, p1);
      if (!hit1.hit || (hit1.point - target).norm() > 0.015) continue;
      // all four bilinear taps must come from the same surface
      const int ix = static_cast<int>(u1 - 0.5), iy = static_cast<int>(v1 - 0.5);
      bool clean = true;
      for (int dy = 0; dy <= 1 && clean; ++dy) {
        for (int dx = 0; dx <= 1 && clean; ++dx) {
          const int tx = std::min(ix + dx, cam1.width - 1);
          const int ty = std::min(iy + dy, cam1.height - 1);
          if (kind1[static_cast<size_t>(ty * cam1.width + tx)] != hit.kind) clean = false;
        }
      }
      if (!clean) continue;
      valid->at(x, y, 0) = 1.f;
    }
  }
}

ImageF make_style_image(uint64_t seed, int variant, int res) {
  ImageF img(res, res, 3);
  Rng rng(hash_combine(seed, static_cast<uint64_t>(variant) + 11));
  const double a1 = rng.uniform(1.5, 4.0), a2 = rng.uniform(1.5, 4.0);
  const double p1 = rng.uniform(0, 6.28), p2 = rng.uniform(0, 6.28);
  const Vec3 base(rng.uniform(0.2, 0.7), rng.uniform(0.2, 0.7), rng.uniform(0.2, 0.7));
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      const double u = static_cast<double>(x) / res, v = static_cast<double>(y) / res;
      for (int ch = 0; ch < 3; ++ch) {
        double val;
        switch (variant % 4) {
          case 0:
            val = base[ch] + 0.45 * std::sin(a1 * 6.28 * (u + 0.3 * ch) + p1) *
                                 std::cos(a2 * 6.28 * v + p2 + ch);
            break;
          case 1: {
            const double ring = std::sqrt((u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5));
            val = base[ch] + 0.45 * std::sin(14.0 * ring + p1 + 2.0 * ch);
            break;
          }
          case 2: {
            const double sq = (std::fmod(std::floor(u * a1 * 3) + std::floor(v * a2 * 3), 2.0));
            val = 0.25 + 0.5 * sq + 0.15 * std::sin(12 * u + p2 + ch) - 0.12 * ch * sq;
            break;
          }
          default:
            val = base[ch] + 0.4 * std::sin(a1 * 9 * u * v + p1 + ch) +
                  0.2 * std::cos(a2 * 7 * (u - v) + p2);
        }
        img.at(x, y, ch) = static_cast<float>(std::clamp(val, 0.02, 0.98));
      }
    }
  }
  return img;
}

void write_synth_dataset(const std::string& dir, const SynthSpec& spec) {
  if (spec.res % 8 != 0)
    throw TensorError("synth: resolution must be divisible by 8, got " + std::to_string(spec.res));
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const char* sub : {"frames", "masks", "flow", "flow_valid", "styles"})
    fs::create_directories(fs::path(dir) / sub);

  SynthScene scene(spec);
  char name[64];
  for (int i = 0; i < spec.n_frames; ++i) {
    ImageF mask;
    const ImageF img =
        scene.render_view(scene.cameras()[static_cast<size_t>(i)],
                          scene.poses()[static_cast<size_t>(i)], &mask);
    std::snprintf(name, sizeof(name), "/frames/frame_%04d.png", i);
    write_png(dir + name, img);
    std::snprintf(name, sizeof(name), "/masks/mask_%04d.png", i);
    write_png(dir + name, mask);
  }
  for (int i = 0; i + 1 < spec.n_frames; ++i) {
    FlowField f;
    ImageF valid;
    scene.flow(i, &f, &valid);
    std::snprintf(name, sizeof(name), "/flow/flow_%04d.bin", i);
    write_flow(dir + name, f);
    std::snprintf(name, sizeof(name), "/flow_valid/valid_%04d.png", i);
    write_png(dir + name, valid);
  }
  save_cameras(dir + "/cameras.json", scene.cameras());
  PoseSequence seq;
  seq.skeleton = scene.skeleton();
  seq.frames = scene.poses();
  save_poses(dir + "/poses.json", seq);
  for (int v = 0; v < 4; ++v) {
    std::snprintf(name, sizeof(name), "/styles/style_%d.png", v);
    write_png(dir + name, make_style_image(spec.seed, v, 128));
  }

  nlohmann::json meta;
  meta["seed"] = spec.seed;
  meta["n_frames"] = spec.n_frames;
  meta["width"] = spec.res;
  meta["height"] = spec.res;
  meta["near"] = spec.near;
  meta["far"] = spec.far;
  const Bounds3 sb = scene.scene_field_bounds();
  meta["scene_lo"] = {sb.lo.x(), sb.lo.y(), sb.lo.z()};
  meta["scene_hi"] = {sb.hi.x(), sb.hi.y(), sb.hi.z()};
  std::ofstream os(dir + "/meta.json", std::ios::trunc);
  os << meta.dump(1) << "\n";
}

}  // namespace sf
