#pragma once

#include <array>
#include <string>
#include <vector>

#include "sf/geometry.hpp"
#include "sf/nn.hpp"
#include "sf/tensor.hpp"

// Geometry-guided tri-plane representation: rasterized positional encodings
// of voxel centers on three orthogonal planes, convolutional plane encoders,
// and point queries via projection + bilinear interpolation + Hadamard
// product.

namespace sf {

struct Bounds3 {
  Vec3 lo = Vec3::Constant(-1);
  Vec3 hi = Vec3::Constant(1);

  bool contains(const Vec3& x, double eps = 1e-6) const {
    for (int d = 0; d < 3; ++d)
      if (x[d] < lo[d] - eps || x[d] > hi[d] + eps) return false;
    return true;
  }
  Vec3 extent() const { return hi - lo; }
};

// Plane p projects onto coordinate axes (axis0, axis1); the third axis is
// pooled away. Order: xy, xz, yz.
inline constexpr std::array<std::array<int, 2>, 3> kPlaneAxes = {{{0, 1}, {0, 2}, {1, 2}}};

// Average-pooled gamma_v encodings of voxel centers, one raw plane per
// orthogonal projection. Frozen after construction.
template <typename T>
struct GeometryRaster {
  std::array<Tensor<T>, 3> planes;  // [D_in, N_axis0, N_axis1]
  std::array<int64_t, 3> res = {0, 0, 0};  // cells per world axis
  Bounds3 bounds;
  double voxel = 0.01;
  int freqs = 6;
  int64_t feature_dim = 0;  // D_in
};

template <typename T>
GeometryRaster<T> build_geometry_raster(const Bounds3& bounds, double voxel, int freqs = 6,
                                        int64_t resolution_cap = 512) {
  if (voxel <= 0) throw TensorError("geometry_raster: voxel size must be positive");
  GeometryRaster<T> r;
  r.bounds = bounds;
  r.voxel = voxel;
  r.freqs = freqs;
  r.feature_dim = positional_encode_dim(3, freqs, true);
  for (int d = 0; d < 3; ++d) {
    r.res[static_cast<size_t>(d)] =
        static_cast<int64_t>(std::ceil((bounds.hi[d] - bounds.lo[d]) / voxel - 1e-9));
    if (r.res[static_cast<size_t>(d)] < 1) r.res[static_cast<size_t>(d)] = 1;
    if (r.res[static_cast<size_t>(d)] > resolution_cap)
      throw TensorError("geometry_raster: plane resolution " +
                        std::to_string(r.res[static_cast<size_t>(d)]) + " exceeds cap " +
                        std::to_string(resolution_cap) +
                        "; increase the voxel size for these bounds");
  }

  const int64_t din = r.feature_dim;
  std::array<std::vector<double>, 3> acc;
  std::array<std::vector<double>, 3> cnt;
  for (int p = 0; p < 3; ++p) {
    const auto ax = kPlaneAxes[static_cast<size_t>(p)];
    const int64_t cells = r.res[static_cast<size_t>(ax[0])] * r.res[static_cast<size_t>(ax[1])];
    acc[static_cast<size_t>(p)].assign(static_cast<size_t>(cells * din), 0.0);
    cnt[static_cast<size_t>(p)].assign(static_cast<size_t>(cells), 0.0);
  }

  std::vector<double> enc(static_cast<size_t>(din));
  const int64_t nx = r.res[0], ny = r.res[1], nz = r.res[2];
  for (int64_t ix = 0; ix < nx; ++ix) {
    for (int64_t iy = 0; iy < ny; ++iy) {
      for (int64_t iz = 0; iz < nz; ++iz) {
        const Vec3 center(bounds.lo.x() + (ix + 0.5) * voxel, bounds.lo.y() + (iy + 0.5) * voxel,
                          bounds.lo.z() + (iz + 0.5) * voxel);
        const Vec3 n = normalize_to_unit(center, bounds.lo, bounds.hi);
        positional_encode(n.data(), 3, freqs, true, enc.data());
        const std::array<int64_t, 3> idx = {ix, iy, iz};
        for (int p = 0; p < 3; ++p) {
          const auto ax = kPlaneAxes[static_cast<size_t>(p)];
          const int64_t cell = idx[static_cast<size_t>(ax[0])] * r.res[static_cast<size_t>(ax[1])] +
                               idx[static_cast<size_t>(ax[1])];
          double* a = acc[static_cast<size_t>(p)].data() + cell * din;
          for (int64_t k = 0; k < din; ++k) a[k] += enc[static_cast<size_t>(k)];
          cnt[static_cast<size_t>(p)][static_cast<size_t>(cell)] += 1.0;
        }
      }
    }
  }

  for (int p = 0; p < 3; ++p) {
    const auto ax = kPlaneAxes[static_cast<size_t>(p)];
    const int64_t h = r.res[static_cast<size_t>(ax[0])];
    const int64_t w = r.res[static_cast<size_t>(ax[1])];
    // store channel-major [D_in, H, W]
    std::vector<T> data(static_cast<size_t>(din * h * w));
    for (int64_t cell = 0; cell < h * w; ++cell) {
      const double c = cnt[static_cast<size_t>(p)][static_cast<size_t>(cell)];
      for (int64_t k = 0; k < din; ++k) {
        data[static_cast<size_t>(k * h * w + cell)] =
            static_cast<T>(acc[static_cast<size_t>(p)][static_cast<size_t>(cell * din + k)] /
                           (c > 0 ? c : 1.0));
      }
    }
    r.planes[static_cast<size_t>(p)] = Tensor<T>::from_data({din, h, w}, std::move(data));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Plane encoder: a small 2-down/2-up convolutional encoder-decoder with skip
// connections (3x3 kernels, relu). The final layer starts near the
// multiplicative identity so Hadamard-combined features begin around 1.
// ---------------------------------------------------------------------------

template <typename T>
struct PlaneEncoder {
  Conv2dLayer<T> c0, c1, c2, u1, u0;
  int64_t in_dim = 0, out_dim = 0;

  PlaneEncoder() = default;
  PlaneEncoder(ParamMap<T>& pm, const std::string& prefix, int64_t din, int64_t d, Rng& rng)
      : c0(pm, prefix + ".c0", din, d, 3, 1, rng),
        c1(pm, prefix + ".c1", d, 2 * d, 3, 1, rng),
        c2(pm, prefix + ".c2", 2 * d, 2 * d, 3, 1, rng),
        u1(pm, prefix + ".u1", 4 * d, d, 3, 1, rng),
        u0(pm, prefix + ".u0", 2 * d, d, 3, 1, rng, T(0.05)),
        in_dim(din),
        out_dim(d) {
    auto& b = pm.at(prefix + ".u0.b");
    std::fill(b.mutable_values().begin(), b.mutable_values().end(), T(1));
  }

  Tensor<T> forward(const Tensor<T>& raw) const {
    const int64_t h = raw.dim(1), w = raw.dim(2);
    const int64_t hp = (h + 3) / 4 * 4, wp = (w + 3) / 4 * 4;
    Tensor<T> x = raw;
    if (hp != h) x = concat<T>({x, Tensor<T>::zeros({x.dim(0), hp - h, w})}, 1);
    if (wp != w) x = concat<T>({x, Tensor<T>::zeros({x.dim(0), hp, wp - w})}, 2);
    Tensor<T> s0 = relu(c0.forward(x));
    Tensor<T> s1 = relu(c1.forward(avg_pool2d(s0)));
    Tensor<T> s2 = relu(c2.forward(avg_pool2d(s1)));
    Tensor<T> d1 = relu(u1.forward(concat<T>({upsample2x_nearest(s2), s1}, 0)));
    Tensor<T> out = u0.forward(concat<T>({upsample2x_nearest(d1), s0}, 0));
    if (hp != h) {
      std::vector<int64_t> rows(static_cast<size_t>(h));
      std::iota(rows.begin(), rows.end(), 0);
      out = index_select(out, 1, rows);
    }
    if (wp != w) {
      std::vector<int64_t> cols(static_cast<size_t>(w));
      std::iota(cols.begin(), cols.end(), 0);
      out = index_select(out, 2, cols);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// TriPlaneField: encoded feature planes plus the frozen geometry rasters.
// Queries are differentiable w.r.t. the plane features and the query point.
// ---------------------------------------------------------------------------

enum class PlaneAggregation { kHadamard, kSum };
enum class PlaneMode { kGeometryGuided, kDirect };

template <typename T>
class TriPlaneField {
 public:
  TriPlaneField() = default;

  // Geometry-guided: three independent encoders over the raster planes.
  TriPlaneField(ParamMap<T>& pm, const std::string& prefix, GeometryRaster<T> raster,
                int64_t feature_dim, Rng& rng,
                PlaneAggregation agg = PlaneAggregation::kHadamard)
      : raster_(std::move(raster)),
        mode_(PlaneMode::kGeometryGuided),
        agg_(agg),
        d_(feature_dim) {
    static const char* kNames[3] = {"xy", "xz", "yz"};
    for (int p = 0; p < 3; ++p) {
      encoders_[static_cast<size_t>(p)] = PlaneEncoder<T>(
          pm, prefix + ".enc_" + kNames[p], raster_.feature_dim, feature_dim, rng);
    }
  }

  // Ablation mode: directly optimized planes, identical query path.
  static TriPlaneField direct(ParamMap<T>& pm, const std::string& prefix,
                              const Bounds3& bounds, double voxel, int64_t feature_dim, Rng& rng,
                              int64_t resolution_cap = 512,
                              PlaneAggregation agg = PlaneAggregation::kHadamard) {
    TriPlaneField f;
    f.mode_ = PlaneMode::kDirect;
    f.agg_ = agg;
    f.d_ = feature_dim;
    f.raster_ = build_geometry_raster<T>(bounds, voxel, 6, resolution_cap);
    static const char* kNames[3] = {"xy", "xz", "yz"};
    for (int p = 0; p < 3; ++p) {
      const auto ax = kPlaneAxes[static_cast<size_t>(p)];
      const int64_t h = f.raster_.res[static_cast<size_t>(ax[0])];
      const int64_t w = f.raster_.res[static_cast<size_t>(ax[1])];
      Tensor<T> init = Tensor<T>::randn({feature_dim, h, w}, rng, T(0.05));
      T* v = init.data();
      for (int64_t i = 0; i < init.numel(); ++i) v[i] += T(1);
      f.direct_planes_[static_cast<size_t>(p)] =
          pm.add(prefix + ".plane_" + kNames[p], std::move(init));
    }
    return f;
  }

  const Bounds3& bounds() const { return raster_.bounds; }
  double voxel() const { return raster_.voxel; }
  int64_t feature_dim() const { return d_; }
  const GeometryRaster<T>& raster() const { return raster_; }
  PlaneMode mode() const { return mode_; }

  // Encoded planes are cached between optimizer steps; queries must not
  // re-run the encoders.
  void invalidate_cache() {
    for (auto& p : cache_) p = Tensor<T>();
  }

  const Tensor<T>& encoded_plane(int p) {
    if (mode_ == PlaneMode::kDirect) return direct_planes_[static_cast<size_t>(p)];
    if (!cache_[static_cast<size_t>(p)].defined()) {
      cache_[static_cast<size_t>(p)] =
          encoders_[static_cast<size_t>(p)].forward(raster_.planes[static_cast<size_t>(p)]);
    }
    return cache_[static_cast<size_t>(p)];
  }

  // f(x) per point: Hadamard product of the three bilinearly interpolated
  // plane features. `points` is [n, 3] in world coordinates and must lie
  // inside the field bounds (callers clamp or cull beforehand).
  Tensor<T> query(const Tensor<T>& points) {
    detail::require(points.ndim() == 2 && points.dim(1) == 3, "triplane_query",
                    "points must be [n,3], got " + shape_str(points.shape()));
    const T* pv = points.data();
    for (int64_t i = 0; i < points.dim(0); ++i) {
      const Vec3 x(static_cast<double>(pv[3 * i]), static_cast<double>(pv[3 * i + 1]),
                   static_cast<double>(pv[3 * i + 2]));
      if (!raster_.bounds.contains(x, 1e-5))
        throw TensorError("triplane_query: point (" + std::to_string(x.x()) + ", " +
                          std::to_string(x.y()) + ", " + std::to_string(x.z()) +
                          ") outside field bounds");
    }
    // u_d = (x_d - lo_d) / voxel - 0.5 maps world coords onto cell centers.
    std::vector<T> lo{static_cast<T>(raster_.bounds.lo.x()), static_cast<T>(raster_.bounds.lo.y()),
                      static_cast<T>(raster_.bounds.lo.z())};
    Tensor<T> lo_t = Tensor<T>::from_data({1, 3}, std::move(lo));
    Tensor<T> u = mul_scalar(points - lo_t, static_cast<T>(1.0 / raster_.voxel)) - T(0.5);

    Tensor<T> result;
    for (int p = 0; p < 3; ++p) {
      const auto ax = kPlaneAxes[static_cast<size_t>(p)];
      Tensor<T> uv = index_select(u, 1, {ax[0], ax[1]});
      Tensor<T> f = bilinear_sample(encoded_plane(p), uv);
      if (p == 0) {
        result = f;
      } else {
        result = agg_ == PlaneAggregation::kHadamard ? result * f : result + f;
      }
    }
    return result;
  }

  std::array<PlaneEncoder<T>, 3>& encoders() { return encoders_; }

 private:
  GeometryRaster<T> raster_;
  std::array<PlaneEncoder<T>, 3> encoders_;
  std::array<Tensor<T>, 3> direct_planes_;
  std::array<Tensor<T>, 3> cache_;
  PlaneMode mode_ = PlaneMode::kGeometryGuided;
  PlaneAggregation agg_ = PlaneAggregation::kHadamard;
  int64_t d_ = 0;
};

// Debug dump: per-plane PNGs of normalized channel slices plus the raw
// tensor bytes. Implemented in src/triplane_dump.cpp (float only).
void dump_planes(TriPlaneField<float>& field, const std::string& dir);

}  // namespace sf
