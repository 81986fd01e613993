#include "dtl/toy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "dtl/error.hpp"
#include "dtl/image.hpp"
#include "dtl/rng.hpp"

namespace dtl {

namespace {

constexpr const char* kPrimitiveNames[10] = {
    "no_crack",  "crack",       "speckle",    "ring",      "cross",
    "bars",      "blob_large",  "crack_thick", "speckle_dense", "ring_large"};

Image textured_background(Rng& rng, const ToySpec& spec) {
  Image img = Image::make(spec.width, spec.height, 1);
  for (auto& v : img.pix)
    v = spec.bg_base + spec.bg_amp * rng.next_float();
  for (int r = 0; r < 6; ++r) {
    const int x = static_cast<int>(rng.next_below(spec.width));
    const int y = static_cast<int>(rng.next_below(spec.height));
    const int w = 2 + static_cast<int>(rng.next_below(6));
    const int h = 2 + static_cast<int>(rng.next_below(6));
    const float delta = spec.bg_amp * (rng.next_float() - 0.5f);
    for (int yy = y; yy < std::min(y + h, spec.height); ++yy)
      for (int xx = x; xx < std::min(x + w, spec.width); ++xx)
        img.at(yy, xx, 0) += delta;
  }
  return img;
}

void stamp(Image& img, int y, int x, int thickness, float value) {
  for (int dy = 0; dy < thickness; ++dy)
    for (int dx = 0; dx < thickness; ++dx)
      if (y + dy >= 0 && y + dy < img.height && x + dx >= 0 && x + dx < img.width)
        img.at(y + dy, x + dx, 0) = value;
}

void draw_line(Image& img, Rng& rng, float value, int thickness) {
  const int s = img.width;
  double x = 2 + static_cast<double>(rng.next_below(std::max(1, s - 4)));
  double y = 2 + static_cast<double>(rng.next_below(std::max(1, img.height - 4)));
  double ang = rng.next_double() * 2.0 * 3.14159265358979323846;
  const int steps = s + s / 2;
  for (int i = 0; i < steps; ++i) {
    stamp(img, static_cast<int>(y), static_cast<int>(x), thickness, value);
    ang += (rng.next_double() - 0.5) * 0.6;
    x = std::clamp(x + std::cos(ang), 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y + std::sin(ang), 0.0, static_cast<double>(img.height - 1));
  }
}

void draw_blob(Image& img, Rng& rng, float value, int radius) {
  const int cx =
      radius + static_cast<int>(rng.next_below(
                   std::max(1, img.width - 2 * radius)));
  const int cy =
      radius + static_cast<int>(rng.next_below(
                   std::max(1, img.height - 2 * radius)));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius)
        stamp(img, cy + dy, cx + dx, 1, value);
}

void draw_speckle(Image& img, Rng& rng, float value, int count) {
  for (int i = 0; i < count; ++i) {
    const int x = static_cast<int>(rng.next_below(img.width));
    const int y = static_cast<int>(rng.next_below(img.height));
    stamp(img, y, x, 1, value);
  }
}

void draw_ring(Image& img, Rng& rng, float value, int radius) {
  const int cx = radius + 1 +
                 static_cast<int>(rng.next_below(
                     std::max(1, img.width - 2 * radius - 2)));
  const int cy = radius + 1 +
                 static_cast<int>(rng.next_below(
                     std::max(1, img.height - 2 * radius - 2)));
  for (int a = 0; a < 64; ++a) {
    const double t = a * 2.0 * 3.14159265358979323846 / 64.0;
    stamp(img, cy + static_cast<int>(std::lround(radius * std::sin(t))),
          cx + static_cast<int>(std::lround(radius * std::cos(t))), 1, value);
  }
}

void draw_cross(Image& img, Rng& rng, float value, int arm) {
  const int cx = arm + static_cast<int>(rng.next_below(std::max(1, img.width - 2 * arm)));
  const int cy = arm + static_cast<int>(rng.next_below(std::max(1, img.height - 2 * arm)));
  for (int d = -arm; d <= arm; ++d) {
    stamp(img, cy, cx + d, 1, value);
    stamp(img, cy + d, cx, 1, value);
  }
}

void draw_bars(Image& img, Rng& rng, float value, int len) {
  const int x0 = static_cast<int>(rng.next_below(std::max(1, img.width - len)));
  const int y0 = static_cast<int>(rng.next_below(std::max(1, img.height - 7)));
  for (int b = 0; b < 3; ++b)
    for (int d = 0; d < len; ++d) stamp(img, y0 + 3 * b, x0 + d, 1, value);
}

void draw_primitive(int idx, Image& img, Rng& rng, const ToySpec& spec) {
  switch (idx) {
    case 0: draw_blob(img, rng, spec.stroke, spec.blob_radius); break;
    case 1: draw_line(img, rng, spec.stroke, spec.line_thickness); break;
    case 2: draw_speckle(img, rng, spec.stroke, 12); break;
    case 3: draw_ring(img, rng, spec.stroke, spec.blob_radius + 2); break;
    case 4: draw_cross(img, rng, spec.stroke, 4); break;
    case 5: draw_bars(img, rng, spec.stroke, 7); break;
    case 6: draw_blob(img, rng, spec.stroke, spec.blob_radius + 2); break;
    case 7: draw_line(img, rng, spec.stroke, spec.line_thickness + 1); break;
    case 8: draw_speckle(img, rng, spec.stroke, 24); break;
    case 9: draw_ring(img, rng, spec.stroke, spec.blob_radius + 4); break;
    default:
      raise(ErrorCode::argument, "toy supports at most 10 primitive classes");
  }
}

}  // namespace

std::pair<DatasetDescriptor, Manifest> synth_toy_dataset(
    const ToySpec& spec, const std::filesystem::path& out_dir) {
  require(spec.width > 0 && spec.height > 0, ErrorCode::argument,
          "toy image dimensions must be positive");
  require(spec.items_per_class > 0, ErrorCode::argument,
          "items_per_class must be positive");
  require(spec.class_count >= 2 && spec.class_count <= 10, ErrorCode::argument,
          "toy class count must lie in [2, 10]");
  if (spec.task == TaskKind::binary)
    require(spec.class_count == 2, ErrorCode::argument,
            "binary toys have exactly 2 classes");

  DatasetDescriptor desc;
  desc.name = spec.name;
  desc.task_kind = spec.task;
  for (int c = 0; c < spec.class_count; ++c)
    desc.class_names.push_back(kPrimitiveNames[c]);
  desc.item_count =
      static_cast<std::int64_t>(spec.class_count) * spec.items_per_class;
  desc.source = "toy:" + std::to_string(spec.seed);

  Rng rng = make_stream(spec.seed, RngStream::toy_generator);
  std::filesystem::create_directories(out_dir / "images");

  Manifest manifest;
  nlohmann::json debug = nlohmann::json::array();
  const int total = spec.class_count * spec.items_per_class;
  for (int i = 0; i < total; ++i) {
    Image img = textured_background(rng, spec);
    const int primary = i % spec.class_count;
    std::vector<int> drawn;
    if (spec.task == TaskKind::binary) {
      // exactly one structure per image: blob (class 0) or crack (class 1)
      draw_primitive(primary, img, rng, spec);
      drawn.push_back(primary);
    } else {
      for (int c = 0; c < spec.class_count; ++c) {
        const bool draw =
            c == primary || rng.next_double() < spec.extra_label_prob;
        if (draw) {
          draw_primitive(c, img, rng, spec);
          drawn.push_back(c);
        }
      }
    }
    for (auto& v : img.pix) v = std::clamp(v, 0.0f, 1.0f);

    char fname[32];
    std::snprintf(fname, sizeof(fname), "images/%05d.pgm", i);
    write_pgm(out_dir / fname, img);

    ManifestItem item;
    item.path = fname;
    item.labels = drawn;
    manifest.items.push_back(std::move(item));
    debug.push_back({{"index", i}, {"primitives", drawn}});
  }

  write_manifest(out_dir / "manifest.csv", desc, manifest);
  std::ofstream dbg(out_dir / "gen_debug.json");
  require(dbg.good(), ErrorCode::io, "cannot write gen_debug.json");
  dbg << debug.dump(2) << "\n";
  return {desc, manifest};
}

}  // namespace dtl
