#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dtl {

// Float image in HWC layout, values in [0, 1]. channels is 1 (gray) or 3.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pix;

  float& at(int y, int x, int c) { return pix[(y * width + x) * channels + c]; }
  float at(int y, int x, int c) const {
    return pix[(y * width + x) * channels + c];
  }
  static Image make(int w, int h, int c, float fill = 0.0f) {
    Image img;
    img.width = w;
    img.height = h;
    img.channels = c;
    img.pix.assign(static_cast<std::size_t>(w) * h * c, fill);
    return img;
  }
};

// Reads PGM (P5), PPM (P6) or PNG (8-bit gray/RGB/RGBA, non-interlaced),
// dispatching on the file magic.
Image read_image(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const Image& img);
void write_png(const std::filesystem::path& path, const Image& img);

Image resize_bilinear(const Image& img, int out_h, int out_w);

// ---- numpy interop (heatmap export) ------------------------------------

// Single little-endian float32 array, .npy format v1.0.
void write_npy(const std::filesystem::path& path, const float* data,
               const std::vector<std::size_t>& shape);

// Several named arrays in one store-only .npz archive.
struct NpzEntry {
  std::string name;
  const float* data;
  std::vector<std::size_t> shape;
};
void write_npz(const std::filesystem::path& path,
               const std::vector<NpzEntry>& entries);

}  // namespace dtl
