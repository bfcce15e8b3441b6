#include <filesystem>
#include <fstream>

#include "sf/image.hpp"
#include "sf/triplane.hpp"

namespace sf {

// Debug dump: one normalized PNG per channel slice plus the raw plane
// tensor ("SFPLANE1" magic, u32 C/H/W, float32 LE data).
void dump_planes(TriPlaneField<float>& field, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  static const char* kNames[3] = {"xy", "xz", "yz"};
  NoGradGuard ng;
  for (int p = 0; p < 3; ++p) {
    const Tensor<float>& plane = field.encoded_plane(p);
    const int64_t c = plane.dim(0), h = plane.dim(1), w = plane.dim(2);
    {
      std::ofstream os(dir + "/plane_" + kNames[p] + ".bin", std::ios::binary | std::ios::trunc);
      os.write("SFPLANE1", 8);
      const uint32_t dims[3] = {static_cast<uint32_t>(c), static_cast<uint32_t>(h),
                                static_cast<uint32_t>(w)};
      os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
      os.write(reinterpret_cast<const char*>(plane.data()),
               static_cast<std::streamsize>(plane.values().size() * sizeof(float)));
    }
    const float* v = plane.data();
    for (int64_t ch = 0; ch < c; ++ch) {
      float lo = v[ch * h * w], hi = lo;
      for (int64_t i = 0; i < h * w; ++i) {
        lo = std::min(lo, v[ch * h * w + i]);
        hi = std::max(hi, v[ch * h * w + i]);
      }
      const float span = hi - lo > 1e-12f ? hi - lo : 1.f;
      ImageF img(static_cast<int>(w), static_cast<int>(h), 1);
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          img.at(static_cast<int>(x), static_cast<int>(y), 0) =
              (v[(ch * h + y) * w + x] - lo) / span;
      char name[64];
      std::snprintf(name, sizeof(name), "/plane_%s_c%02d.png", kNames[p], static_cast<int>(ch));
      write_png(dir + name, img);
    }
  }
}

}  // namespace sf
