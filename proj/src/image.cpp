#include "lpnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace lpnet {

ImageU8 ImageU8::filled(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.rgb.resize(size_t(w) * h * 3);
  for (size_t i = 0; i < img.rgb.size(); i += 3) {
    img.rgb[i] = r;
    img.rgb[i + 1] = g;
    img.rgb[i + 2] = b;
  }
  return img;
}

void write_ppm(const std::string& path, const ImageU8& img) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           std::streamsize(img.rgb.size()));
  os.flush();
  if (!os) throw DataError("write failed for " + path);
}

ImageU8 read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw DataError(path + ": not a binary PPM (P6) file");
  auto next_int = [&]() {
    // skip whitespace and '#' comments
    int c = is.get();
    while (c == '#' || std::isspace(c)) {
      if (c == '#')
        while (c != '\n' && c != EOF) c = is.get();
      c = is.get();
    }
    int v = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      any = true;
      c = is.get();
    }
    if (!any) throw DataError(path + ": malformed PPM header");
    return v;
  };
  ImageU8 img;
  img.width = next_int();
  img.height = next_int();
  int maxval = next_int();
  if (img.width <= 0 || img.height <= 0 || maxval != 255)
    throw DataError(path + ": unsupported PPM header");
  img.rgb.resize(size_t(img.width) * img.height * 3);
  is.read(reinterpret_cast<char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
  if (is.gcount() != std::streamsize(img.rgb.size()))
    throw DataError(path + ": truncated pixel data");
  return img;
}

ImageU8 resize_bilinear(const ImageU8& img, int new_w, int new_h) {
  if (new_w == img.width && new_h == img.height) return img;
  ImageU8 out;
  out.width = new_w;
  out.height = new_h;
  out.rgb.resize(size_t(new_w) * new_h * 3);
  const double sx = double(img.width) / new_w;
  const double sy = double(img.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = int(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, img.height - 1);
    int y1c = std::clamp(y0 + 1, 0, img.height - 1);
    for (int x = 0; x < new_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = int(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, img.width - 1);
      int x1c = std::clamp(x0 + 1, 0, img.width - 1);
      for (int c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * img.at(x0c, y0c, c) + wx * img.at(x1c, y0c, c)) +
                   wy * ((1 - wx) * img.at(x0c, y1c, c) + wx * img.at(x1c, y1c, c));
        out.at(x, y, c) = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

ImageU8 pad_to_multiple(const ImageU8& img, int m) {
  int w = ((img.width + m - 1) / m) * m;
  int h = ((img.height + m - 1) / m) * m;
  if (w == img.width && h == img.height) return img;
  ImageU8 out = ImageU8::filled(w, h, 0, 0, 0);
  for (int y = 0; y < img.height; ++y)
    std::copy_n(img.rgb.data() + size_t(y) * img.width * 3, size_t(img.width) * 3,
                out.rgb.data() + size_t(y) * w * 3);
  return out;
}

Affine affine_identity() { return {1, 0, 0, 0, 1, 0}; }

Affine make_rotation_shear(double rotation_deg, double shear_x, double pivot_x,
                           double pivot_y) {
  const double a = rotation_deg * M_PI / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  // M = R * S with S = [[1, shear],[0,1]], applied about the pivot
  const double m00 = ca, m01 = ca * shear_x - sa;
  const double m10 = sa, m11 = sa * shear_x + ca;
  return {m00, m01, pivot_x - m00 * pivot_x - m01 * pivot_y,
          m10, m11, pivot_y - m10 * pivot_x - m11 * pivot_y};
}

Affine affine_invert(const Affine& m) {
  const double det = m[0] * m[4] - m[1] * m[3];
  if (std::abs(det) < 1e-12) throw std::invalid_argument("affine_invert: singular matrix");
  const double i00 = m[4] / det, i01 = -m[1] / det;
  const double i10 = -m[3] / det, i11 = m[0] / det;
  return {i00, i01, -(i00 * m[2] + i01 * m[5]),
          i10, i11, -(i10 * m[2] + i11 * m[5])};
}

ImageU8 warp_affine(const ImageU8& img, const Affine& forward) {
  const Affine inv = affine_invert(forward);
  ImageU8 out;
  out.width = img.width;
  out.height = img.height;
  out.rgb.resize(img.rgb.size());
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double sx = inv[0] * x + inv[1] * y + inv[2];
      const double sy = inv[3] * x + inv[4] * y + inv[5];
      int x0 = int(std::floor(sx));
      int y0 = int(std::floor(sy));
      double wx = sx - x0, wy = sy - y0;
      int x0c = std::clamp(x0, 0, img.width - 1);
      int x1c = std::clamp(x0 + 1, 0, img.width - 1);
      int y0c = std::clamp(y0, 0, img.height - 1);
      int y1c = std::clamp(y0 + 1, 0, img.height - 1);
      for (int c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * img.at(x0c, y0c, c) + wx * img.at(x1c, y0c, c)) +
                   wy * ((1 - wx) * img.at(x0c, y1c, c) + wx * img.at(x1c, y1c, c));
        out.at(x, y, c) = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

Box transform_box_aabb(const Affine& m, const Box& b) {
  require_valid(b, "transform_box_aabb");
  const double xs[4] = {b.x1, b.x2, b.x1, b.x2};
  const double ys[4] = {b.y1, b.y1, b.y2, b.y2};
  Box out{1e30, 1e30, -1e30, -1e30};
  for (int i = 0; i < 4; ++i) {
    const double tx = m[0] * xs[i] + m[1] * ys[i] + m[2];
    const double ty = m[3] * xs[i] + m[4] * ys[i] + m[5];
    out.x1 = std::min(out.x1, tx);
    out.y1 = std::min(out.y1, ty);
    out.x2 = std::max(out.x2, tx);
    out.y2 = std::max(out.y2, ty);
  }
  return out;
}

}  // namespace lpnet
