#include "sf/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace sf {

float ImageF::sample(double x, double y, int ch) const {
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(x), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), h - 2 >= 0 ? h - 2 : 0);
  const double fx = w >= 2 ? x - x0 : 0.0;
  const double fy = h >= 2 ? y - y0 : 0.0;
  const int x1 = w >= 2 ? x0 + 1 : x0;
  const int y1 = h >= 2 ? y0 + 1 : y0;
  const double v = (1 - fy) * ((1 - fx) * at(x0, y0, ch) + fx * at(x1, y0, ch)) +
                   fy * ((1 - fx) * at(x0, y1, ch) + fx * at(x1, y1, ch));
  return static_cast<float>(v);
}

ImageF read_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw TensorError("read_png: cannot read " + path);
  ImageF img;
  img.w = m.cols;
  img.h = m.rows;
  img.c = m.channels() >= 3 ? 3 : 1;
  img.data.resize(static_cast<size_t>(img.w * img.h * img.c));
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      if (m.channels() == 1) {
        img.at(x, y, 0) = m.at<uint8_t>(y, x) / 255.f;
      } else {
        const cv::Vec3b px = m.at<cv::Vec3b>(y, x);  // BGR
        img.at(x, y, 0) = px[2] / 255.f;
        img.at(x, y, 1) = px[1] / 255.f;
        img.at(x, y, 2) = px[0] / 255.f;
      }
    }
  }
  return img;
}

void write_png(const std::string& path, const ImageF& img) {
  cv::Mat m(img.h, img.w, img.c == 1 ? CV_8UC1 : CV_8UC3);
  auto to8 = [](float v) {
    return static_cast<uint8_t>(std::lround(std::min(std::max(v, 0.f), 1.f) * 255.f));
  };
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      if (img.c == 1) {
        m.at<uint8_t>(y, x) = to8(img.at(x, y, 0));
      } else {
        m.at<cv::Vec3b>(y, x) = cv::Vec3b(to8(img.at(x, y, 2)), to8(img.at(x, y, 1)),
                                          to8(img.at(x, y, 0)));
      }
    }
  }
  if (!cv::imwrite(path, m)) throw TensorError("write_png: cannot write " + path);
}

ImageF center_crop_resize(const ImageF& img, int out_w, int out_h) {
  const double want = static_cast<double>(out_w) / out_h;
  int cw = img.w, ch = img.h;
  if (static_cast<double>(cw) / ch > want) {
    cw = static_cast<int>(std::lround(ch * want));
  } else {
    ch = static_cast<int>(std::lround(cw / want));
  }
  const int x0 = (img.w - cw) / 2, y0 = (img.h - ch) / 2;
  ImageF out(out_w, out_h, img.c);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double sx = x0 + (x + 0.5) * cw / out_w - 0.5;
      const double sy = y0 + (y + 0.5) * ch / out_h - 0.5;
      for (int c = 0; c < img.c; ++c) out.at(x, y, c) = img.sample(sx, sy, c);
    }
  }
  return out;
}

Tensor<float> image_to_tensor(const ImageF& img) {
  std::vector<float> buf(static_cast<size_t>(img.c * img.h * img.w));
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        buf[static_cast<size_t>((c * img.h + y) * img.w + x)] = img.at(x, y, c);
  return Tensor<float>::from_data({img.c, img.h, img.w}, std::move(buf));
}

ImageF tensor_to_image(const Tensor<float>& t) {
  ImageF img(static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)));
  const float* p = t.data();
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        img.at(x, y, c) = p[(c * img.h + y) * img.w + x];
  return img;
}

namespace {
constexpr char kFlowMagic[8] = {'S', 'F', 'F', 'L', 'O', 'W', '0', '1'};
}

void write_flow(const std::string& path, const FlowField& f) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TensorError("write_flow: cannot open " + path);
  os.write(kFlowMagic, 8);
  const uint32_t w = static_cast<uint32_t>(f.w), h = static_cast<uint32_t>(f.h);
  os.write(reinterpret_cast<const char*>(&w), 4);
  os.write(reinterpret_cast<const char*>(&h), 4);
  os.write(reinterpret_cast<const char*>(f.uv.data()),
           static_cast<std::streamsize>(f.uv.size() * sizeof(float)));
}

FlowField read_flow(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("read_flow: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kFlowMagic, 8) != 0)
    throw TensorError("read_flow: bad magic in " + path);
  uint32_t w = 0, h = 0;
  is.read(reinterpret_cast<char*>(&w), 4);
  is.read(reinterpret_cast<char*>(&h), 4);
  FlowField f;
  f.w = static_cast<int>(w);
  f.h = static_cast<int>(h);
  f.uv.resize(static_cast<size_t>(2 * w * h));
  is.read(reinterpret_cast<char*>(f.uv.data()),
          static_cast<std::streamsize>(f.uv.size() * sizeof(float)));
  if (!is) throw TensorError("read_flow: truncated file " + path);
  return f;
}

double psnr(const ImageF& a, const ImageF& b) {
  if (a.w != b.w || a.h != b.h || a.c != b.c)
    throw TensorError("psnr: image size mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace sf
