#pragma once

#include <string>
#include <vector>

#include "sf/tensor.hpp"

namespace sf {

// Row-major interleaved float image in [0, 1].
struct ImageF {
  int w = 0, h = 0, c = 0;
  std::vector<float> data;

  ImageF() = default;
  ImageF(int w_, int h_, int c_) : w(w_), h(h_), c(c_), data(static_cast<size_t>(w_ * h_ * c_), 0.f) {}

  float& at(int x, int y, int ch) { return data[static_cast<size_t>((y * w + x) * c + ch)]; }
  float at(int x, int y, int ch) const { return data[static_cast<size_t>((y * w + x) * c + ch)]; }

  // Bilinear sample at continuous pixel coords (x, y measured in pixel
  // units, (0,0) = center of the top-left pixel), border-clamped.
  float sample(double x, double y, int ch) const;
};

ImageF read_png(const std::string& path);
void write_png(const std::string& path, const ImageF& img);
ImageF center_crop_resize(const ImageF& img, int out_w, int out_h);

// Converts between interleaved float images and [C,H,W] tensors.
Tensor<float> image_to_tensor(const ImageF& img);
ImageF tensor_to_image(const Tensor<float>& t);

// Ground-truth forward flow: 16-byte header (8-byte magic + u32 width +
// u32 height) followed by little-endian float (dx, dy) pairs, row-major.
struct FlowField {
  int w = 0, h = 0;
  std::vector<float> uv;  // 2 floats per pixel

  float dx(int x, int y) const { return uv[static_cast<size_t>(2 * (y * w + x))]; }
  float dy(int x, int y) const { return uv[static_cast<size_t>(2 * (y * w + x) + 1)]; }
};

void write_flow(const std::string& path, const FlowField& f);
FlowField read_flow(const std::string& path);

double psnr(const ImageF& a, const ImageF& b);

}  // namespace sf
