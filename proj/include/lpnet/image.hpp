#pragma once

// 8-bit RGB images, lossless PPM (P6) I/O, bilinear resize and affine warps.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lpnet/box.hpp"
#include "lpnet/tensor.hpp"

namespace lpnet {

// Thrown for malformed external data (images, manifests); the CLI maps it to
// exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ImageU8 {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;  // height*width*3, row-major

  static ImageU8 filled(int w, int h, uint8_t r, uint8_t g, uint8_t b);
  uint8_t& at(int x, int y, int c) { return rgb[size_t((y * width + x) * 3 + c)]; }
  uint8_t at(int x, int y, int c) const { return rgb[size_t((y * width + x) * 3 + c)]; }
};

void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);

ImageU8 resize_bilinear(const ImageU8& img, int new_w, int new_h);

// zero-pads on the bottom and right so both sides become multiples of m
ImageU8 pad_to_multiple(const ImageU8& img, int m);

// Row-major 2x3 affine matrix mapping source -> destination coordinates.
using Affine = std::array<double, 6>;

Affine affine_identity();
// rotation (degrees, counter-clockwise) followed by x-shear, about a pivot
Affine make_rotation_shear(double rotation_deg, double shear_x, double pivot_x,
                           double pivot_y);
Affine affine_invert(const Affine& m);

// Warps with inverse mapping and bilinear sampling; samples outside the
// source are clamped to the edge.
ImageU8 warp_affine(const ImageU8& img, const Affine& forward);

// Axis-aligned bounding box of the four transformed corners.
Box transform_box_aabb(const Affine& m, const Box& b);

template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img) {
  std::vector<T> data(size_t(3) * img.height * img.width);
  const int64_t plane = int64_t(img.height) * img.width;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        data[size_t(c) * plane + int64_t(y) * img.width + x] =
            T(img.at(x, y, c)) / T(255);
  return Tensor<T>::of({3, img.height, img.width}, std::move(data));
}

}  // namespace lpnet
