#include "lpnet/synth.hpp"

#include <algorithm>
#include <cmath>

#include "lpnet/alphabet.hpp"

namespace lpnet {

namespace {

// Classic 5x7 dot-matrix glyphs, A-Z then 0-9, one byte per row (bit 4 is the
// leftmost column).
constexpr uint8_t kFont[36][7] = {
    {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // A
    {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},  // B
    {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E},  // C
    {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E},  // D
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F},  // E
    {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},  // F
    {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F},  // G
    {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},  // H
    {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E},  // I
    {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},  // J
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // K
    {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},  // L
    {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11},  // M
    {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11},  // N
    {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // O
    {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},  // P
    {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D},  // Q
    {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},  // R
    {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E},  // S
    {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // T
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E},  // U
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},  // V
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A},  // W
    {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},  // X
    {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04},  // Y
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F},  // Z
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},  // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},  // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},  // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},  // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},  // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},  // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},  // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},  // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},  // 9
};

constexpr int kGlyphW = 5, kGlyphH = 7;
// plate dot grid: 1-dot frame + 1-dot margin around the glyph row
constexpr int kDotH = kGlyphH + 4;  // 11

int plate_dot_width(int label_length) {
  return label_length * (kGlyphW + 1) - 1 + 4;  // glyphs + gaps + frame/margin
}

struct Rgb {
  double r, g, b;
};

struct DotGrid {
  int w = 0, h = kDotH;
  std::vector<uint8_t> on;  // 1 = ink
  std::vector<uint8_t> frame;

  uint8_t ink(int x, int y) const { return on[size_t(y) * w + x]; }
  uint8_t edge(int x, int y) const { return frame[size_t(y) * w + x]; }
};

DotGrid plate_dot_grid(const std::vector<int>& label) {
  DotGrid g;
  g.w = plate_dot_width(int(label.size()));
  g.on.assign(size_t(g.w) * kDotH, 0);
  g.frame.assign(size_t(g.w) * kDotH, 0);
  for (int x = 0; x < g.w; ++x) {
    g.frame[size_t(x)] = 1;
    g.frame[size_t(kDotH - 1) * g.w + x] = 1;
  }
  for (int y = 0; y < kDotH; ++y) {
    g.frame[size_t(y) * g.w] = 1;
    g.frame[size_t(y) * g.w + g.w - 1] = 1;
  }
  for (size_t ci = 0; ci < label.size(); ++ci) {
    const uint8_t* rows = kFont[label[ci]];
    const int x0 = 2 + int(ci) * (kGlyphW + 1);
    for (int gy = 0; gy < kGlyphH; ++gy)
      for (int gx = 0; gx < kGlyphW; ++gx)
        if (rows[gy] & (1 << (kGlyphW - 1 - gx)))
          g.on[size_t(2 + gy) * g.w + x0 + gx] = 1;
  }
  return g;
}

uint8_t quantize(double v) {
  return uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

const uint8_t* glyph_rows(char symbol) {
  int idx = Alphabet::index_of(symbol);
  check_arg(idx >= 0, std::string("glyph_rows: symbol '") + symbol + "' not in alphabet");
  return kFont[idx];
}

double plate_aspect(int label_length) {
  return double(plate_dot_width(label_length)) / double(kDotH);
}

std::string random_label(int length, Rng& rng) {
  std::string s;
  s.reserve(size_t(length));
  for (int i = 0; i < length; ++i)
    s.push_back(Alphabet::symbol(rng.uniform_int(int(Alphabet::symbols().size()))));
  return s;
}

ImageU8 render_plate(const std::string& label, int height_px, uint64_t seed) {
  check_arg(!label.empty(), "render_plate: empty label");
  check_arg(height_px >= kDotH, "render_plate: height below dot resolution");
  const std::vector<int> encoded = Alphabet::encode(label);
  const DotGrid grid = plate_dot_grid(encoded);
  const int w_px = int(std::lround(double(height_px) * grid.w / kDotH));

  Rng rng(mix_seed(seed, 0x91a7e));
  // plate background is bright with a slight warm cast; ink and frame dark
  const Rgb bg{0.82 + rng.uniform(-0.08, 0.10), 0.82 + rng.uniform(-0.08, 0.10),
               0.78 + rng.uniform(-0.10, 0.08)};
  const double ink_level = 0.08 + rng.uniform(0.0, 0.10);
  const Rgb ink{ink_level, ink_level, ink_level + rng.uniform(0.0, 0.05)};

  ImageU8 img;
  img.width = w_px;
  img.height = height_px;
  img.rgb.resize(size_t(w_px) * height_px * 3);
  for (int y = 0; y < height_px; ++y) {
    const int dy = std::min(kDotH - 1, y * kDotH / height_px);
    for (int x = 0; x < w_px; ++x) {
      const int dx = std::min(grid.w - 1, x * grid.w / w_px);
      const bool dark = grid.ink(dx, dy) || grid.edge(dx, dy);
      const Rgb& c = dark ? ink : bg;
      img.at(x, y, 0) = quantize(c.r);
      img.at(x, y, 1) = quantize(c.g);
      img.at(x, y, 2) = quantize(c.b);
    }
  }
  return img;
}

namespace {

void paint_background(ImageU8& img, const SceneConfig& cfg, Rng& rng) {
  const int W = img.width, H = img.height;
  if (cfg.background == "noise") {
    const double base = rng.uniform(0.25, 0.6);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double v = base + rng.uniform(-0.12, 0.12);
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = quantize(v + rng.uniform(-0.03, 0.03));
      }
    return;
  }
  // gradient base (also the clutter base layer)
  Rgb c0{rng.uniform(0.1, 0.7), rng.uniform(0.1, 0.7), rng.uniform(0.1, 0.7)};
  Rgb c1{rng.uniform(0.1, 0.7), rng.uniform(0.1, 0.7), rng.uniform(0.1, 0.7)};
  const double ang = rng.uniform(0.0, 6.2831853);
  const double dx = std::cos(ang), dy = std::sin(ang);
  const double span = std::abs(dx) * W + std::abs(dy) * H;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double t = (dx * x + dy * y) / (span > 1 ? span : 1.0);
      t = std::clamp(0.5 + t, 0.0, 1.0);
      img.at(x, y, 0) = quantize(c0.r + (c1.r - c0.r) * t);
      img.at(x, y, 1) = quantize(c0.g + (c1.g - c0.g) * t);
      img.at(x, y, 2) = quantize(c0.b + (c1.b - c0.b) * t);
    }
  if (cfg.background != "clutter") return;
  // random rectangles and lines over the gradient
  const int shapes = 6 + rng.uniform_int(8);
  for (int s = 0; s < shapes; ++s) {
    const double v = rng.uniform(0.05, 0.9);
    const uint8_t q = quantize(v);
    int x0 = rng.uniform_int(W), y0 = rng.uniform_int(H);
    int w = 4 + rng.uniform_int(W / 3), h = 2 + rng.uniform_int(H / 3);
    bool line = rng.uniform() < 0.4;
    if (line) h = 1 + rng.uniform_int(3);
    for (int y = y0; y < std::min(H, y0 + h); ++y)
      for (int x = x0; x < std::min(W, x0 + w); ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = q;
  }
}

void blit(ImageU8& dst, const ImageU8& src, int x0, int y0) {
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) dst.at(x0 + x, y0 + y, c) = src.at(x, y, c);
}

// bare glyph text without a plate frame/background, for distractors
void draw_text(ImageU8& dst, const std::string& text, int x0, int y0, int height_px,
               uint8_t shade) {
  const int w_px = int(std::lround(double(height_px) * kGlyphW / kGlyphH));
  int cx = x0;
  for (char ch : text) {
    const uint8_t* rows = glyph_rows(ch);
    for (int y = 0; y < height_px; ++y) {
      const int gy = std::min(kGlyphH - 1, y * kGlyphH / height_px);
      for (int x = 0; x < w_px; ++x) {
        const int gx = std::min(kGlyphW - 1, x * kGlyphW / w_px);
        if (rows[gy] & (1 << (kGlyphW - 1 - gx))) {
          int px = cx + x, py = y0 + y;
          if (px >= 0 && px < dst.width && py >= 0 && py < dst.height)
            for (int c = 0; c < 3; ++c) dst.at(px, py, c) = shade;
        }
      }
    }
    cx += w_px + std::max(1, w_px / 5);
  }
}

int text_width_px(int chars, int height_px) {
  const int w_px = int(std::lround(double(height_px) * kGlyphW / kGlyphH));
  return chars * (w_px + std::max(1, w_px / 5));
}

void photometric_jitter(ImageU8& img, const SceneConfig& cfg, Rng& rng) {
  const double brightness = rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter);
  const double contrast = 1.0 + rng.uniform(-cfg.contrast_jitter, cfg.contrast_jitter);
  for (auto& v : img.rgb) {
    double f = double(v) / 255.0;
    f = (f - 0.5) * contrast + 0.5 + brightness;
    v = quantize(f);
  }
  const double sigma = rng.uniform(0.0, cfg.blur_sigma_max);
  if (sigma < 0.15) return;
  // separable Gaussian, radius 2*sigma
  const int radius = std::max(1, int(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(size_t(2 * radius + 1));
  double ksum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[size_t(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += kernel[size_t(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;
  ImageU8 tmp = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[size_t(i + radius)] *
                 img.at(std::clamp(x + i, 0, img.width - 1), y, c);
        tmp.at(x, y, c) = quantize(acc / 255.0);
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[size_t(i + radius)] *
                 tmp.at(x, std::clamp(y + i, 0, img.height - 1), c);
        img.at(x, y, c) = quantize(acc / 255.0);
      }
}

bool overlaps_any(const Box& b, const std::vector<Box>& others, double max_iou) {
  for (const auto& o : others) {
    double ix = std::min(b.x2, o.x2) - std::max(b.x1, o.x1);
    double iy = std::min(b.y2, o.y2) - std::max(b.y1, o.y1);
    if (max_iou <= 0.0) {
      if (ix > 0 && iy > 0) return true;
    } else if (iou(b, o) >= max_iou) {
      return true;
    }
  }
  return false;
}

}  // namespace

PlateSample compose_scene(const SceneConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x5ce9e));
  PlateSample sample;
  sample.seed = seed;
  sample.image = ImageU8::filled(cfg.image_w, cfg.image_h, 0, 0, 0);
  paint_background(sample.image, cfg, rng);

  const int plate_count =
      cfg.plates_min + rng.uniform_int(cfg.plates_max - cfg.plates_min + 1);
  for (int p = 0; p < plate_count; ++p) {
    const std::string label = random_label(cfg.label_length, rng);
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const int h = int(std::lround(rng.uniform(cfg.plate_h_min, cfg.plate_h_max)));
      ImageU8 patch = render_plate(label, h, rng.next_u64());
      if (patch.width >= cfg.image_w || patch.height >= cfg.image_h) continue;
      const int x0 = rng.uniform_int(cfg.image_w - patch.width);
      const int y0 = rng.uniform_int(cfg.image_h - patch.height);
      Box box{double(x0), double(y0), double(x0 + patch.width),
              double(y0 + patch.height)};
      if (overlaps_any(box, sample.boxes, 0.0)) continue;
      blit(sample.image, patch, x0, y0);
      sample.boxes.push_back(box);
      sample.labels.push_back(label);
      placed = true;
    }
    if (!placed)
      throw SampleRejected("compose_scene: could not place plate " +
                           std::to_string(p) + " after 100 attempts (scene too crowded)");
  }

  for (int d = 0; d < cfg.distractors; ++d) {
    const int chars = 3 + rng.uniform_int(6);
    const std::string text = random_label(chars, rng);
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const int h = int(std::lround(
          rng.uniform(std::max(8.0, 0.5 * cfg.plate_h_min), cfg.plate_h_max)));
      const int w = text_width_px(chars, h);
      if (w >= cfg.image_w || h >= cfg.image_h) continue;
      const int x0 = rng.uniform_int(cfg.image_w - w);
      const int y0 = rng.uniform_int(cfg.image_h - h);
      Box box{double(x0), double(y0), double(x0 + w), double(y0 + h)};
      if (overlaps_any(box, sample.boxes, 0.3)) continue;
      const uint8_t shade = quantize(rng.uniform() < 0.5 ? rng.uniform(0.0, 0.25)
                                                         : rng.uniform(0.75, 1.0));
      draw_text(sample.image, text, x0, y0, h, shade);
      placed = true;
    }
    if (!placed)
      throw SampleRejected("compose_scene: could not place distractor " +
                           std::to_string(d) + " after 100 attempts");
  }

  photometric_jitter(sample.image, cfg, rng);

  if (cfg.augment) {
    // retry with derived seeds until the warped boxes stay inside
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 100)
        throw SampleRejected("compose_scene: augmentation kept pushing boxes outside");
      try {
        PlateSample warped =
            augment_sample(sample, cfg.augment_rotation_deg, cfg.augment_shear,
                           mix_seed(seed, 0xA06 + uint64_t(attempt)));
        warped.seed = seed;
        return warped;
      } catch (const SampleRejected&) {
      }
    }
  }
  return sample;
}

PlateSample augment_sample(const PlateSample& sample, double rotation_deg_range,
                           double shear_range, uint64_t seed) {
  check_arg(rotation_deg_range >= 0 && rotation_deg_range <= 15.0,
            "augment: |rotation| range must be <= 15 degrees");
  check_arg(shear_range >= 0 && shear_range <= 0.2, "augment: shear range must be <= 0.2");
  Rng rng(mix_seed(seed, 0xaff1e));
  const double rot = rng.uniform(-rotation_deg_range, rotation_deg_range);
  const double shear = rng.uniform(-shear_range, shear_range);
  const Affine m = make_rotation_shear(rot, shear, 0.5 * sample.image.width,
                                       0.5 * sample.image.height);
  PlateSample out;
  out.seed = seed;
  out.group = sample.group;
  out.labels = sample.labels;
  out.image = warp_affine(sample.image, m);
  for (const auto& b : sample.boxes) {
    Box wb = transform_box_aabb(m, b);
    if (wb.x1 < 0 || wb.y1 < 0 || wb.x2 > sample.image.width ||
        wb.y2 > sample.image.height)
      throw SampleRejected("augment: warped box leaves the image");
    out.boxes.push_back(wb);
  }
  return out;
}

}  // namespace lpnet
