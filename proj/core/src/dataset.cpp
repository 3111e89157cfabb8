#include "mistseg/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "mistseg/errors.hpp"
#include "mistseg/image_io.hpp"
#include "mistseg/parallel.hpp"
#include "mistseg/random.hpp"

namespace mistseg::pipeline {

namespace fs = std::filesystem;

namespace {

struct Shape2D {
  enum class Kind { Ellipse, Rectangle, Blob } kind;
  double cx, cy, rx, ry, angle;
  double harmonics[3][2];  // blob radius modulation
};

bool inside(const Shape2D& s, double x, double y) {
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double dx = x - s.cx, dy = y - s.cy;
  const double u = c * dx + sn * dy;
  const double v = -sn * dx + c * dy;
  switch (s.kind) {
    case Shape2D::Kind::Ellipse:
      return (u * u) / (s.rx * s.rx) + (v * v) / (s.ry * s.ry) <= 1.0;
    case Shape2D::Kind::Rectangle:
      return std::fabs(u) <= s.rx && std::fabs(v) <= s.ry;
    case Shape2D::Kind::Blob: {
      const double theta = std::atan2(v, u);
      double r = 1.0;
      for (int k = 0; k < 3; ++k) r += s.harmonics[k][0] * std::cos((k + 2) * theta + s.harmonics[k][1]);
      const double rr = std::sqrt((u * u) / (s.rx * s.rx) + (v * v) / (s.ry * s.ry));
      return rr <= r;
    }
  }
  return false;
}

Shape2D random_shape(Rng& rng, double size) {
  Shape2D s{};
  s.kind = static_cast<Shape2D::Kind>(rng.uniform_int(0, 2));
  s.cx = rng.uniform(0.25, 0.75) * size;
  s.cy = rng.uniform(0.25, 0.75) * size;
  s.rx = rng.uniform(0.10, 0.24) * size;
  s.ry = rng.uniform(0.10, 0.24) * size;
  s.angle = rng.uniform(0.0, std::numbers::pi);
  for (auto& h : s.harmonics) {
    h[0] = rng.uniform(-0.12, 0.12);
    h[1] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  return s;
}

std::vector<bool> erode(const std::vector<bool>& region, std::size_t size, int radius) {
  std::vector<bool> out(region.size(), false);
  const int n = static_cast<int>(size);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      bool keep = region[static_cast<std::size_t>(y * n + x)];
      for (int dy = -radius; keep && dy <= radius; ++dy)
        for (int dx = -radius; keep && dx <= radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= n || xx >= n || !region[static_cast<std::size_t>(yy * n + xx)]) keep = false;
        }
      out[static_cast<std::size_t>(y * n + x)] = keep;
    }
  }
  return out;
}

// Marks roughly `target` pixels of `region` with meandering strokes.
void draw_strokes(const std::vector<bool>& region, std::size_t size, std::size_t target, Label label, ScribbleMask& mask,
                  Rng& rng) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i]) pool.push_back(i);
  if (pool.empty() || target == 0) return;
  target = std::min(target, pool.size());
  std::size_t marked = 0;
  const double n = static_cast<double>(size);
  std::size_t guard = 0;
  while (marked < target && guard++ < 64) {
    const std::size_t start = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(pool.size()) - 1))];
    double x = static_cast<double>(start % size) + 0.5;
    double y = static_cast<double>(start / size) + 0.5;
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const auto max_len = static_cast<std::size_t>(rng.uniform(0.5, 1.5) * n);
    for (std::size_t step = 0; step < max_len && marked < target; ++step) {
      const std::size_t p = static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x);
      if (mask.labels[p] == Label::Unlabeled) {
        mask.labels[p] = label;
        ++marked;
      }
      int tries = 0;
      for (; tries < 8; ++tries) {
        const double h = heading + rng.normal(0.0, 0.35);
        const double nx = x + std::cos(h), ny = y + std::sin(h);
        if (nx >= 0.0 && ny >= 0.0 && nx < n && ny < n &&
            region[static_cast<std::size_t>(ny) * size + static_cast<std::size_t>(nx)]) {
          x = nx, y = ny, heading = h;
          break;
        }
        heading += std::numbers::pi / 2.0;
      }
      if (tries == 8) break;
    }
  }
}

SampleRecord make_sample(std::size_t size, Rng& rng) {
  const std::size_t hw = size * size;
  const double n = static_cast<double>(size);
  std::vector<bool> fg(hw, false);
  std::vector<Shape2D> shapes;
  std::vector<int> owner(hw, -1);
  // Foreground must cover a workable share of the frame.
  for (int attempt = 0; attempt < 100; ++attempt) {
    shapes.clear();
    std::fill(owner.begin(), owner.end(), -1);
    const long count = rng.uniform_int(1, 3);
    for (long k = 0; k < count; ++k) shapes.push_back(random_shape(rng, n));
    std::size_t area = 0;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        for (std::size_t k = shapes.size(); k-- > 0;) {
          if (inside(shapes[k], static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
            owner[y * size + x] = static_cast<int>(k);
            ++area;
            break;
          }
        }
    const double frac = static_cast<double>(area) / static_cast<double>(hw);
    if (frac >= 0.10 && frac <= 0.55) break;
  }
  for (std::size_t i = 0; i < hw; ++i) fg[i] = owner[i] >= 0;

  // Background: two oriented gratings plus pixel noise around a base colour.
  double base[3], amp[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.2, 0.8);
    amp[c] = rng.uniform(0.05, 0.18);
  }
  const double f1 = rng.uniform(2.0, 6.0) * 2.0 * std::numbers::pi / n, a1 = rng.uniform(0.0, std::numbers::pi);
  const double f2 = rng.uniform(4.0, 10.0) * 2.0 * std::numbers::pi / n, a2 = rng.uniform(0.0, std::numbers::pi);
  const double p1 = rng.uniform(0.0, 6.3), p2 = rng.uniform(0.0, 6.3);

  std::vector<std::array<double, 3>> colours(shapes.size());
  for (auto& col : colours) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      double dist = 0.0;
      for (int c = 0; c < 3; ++c) {
        col[static_cast<std::size_t>(c)] = rng.uniform(0.0, 1.0);
        dist += (col[static_cast<std::size_t>(c)] - base[c]) * (col[static_cast<std::size_t>(c)] - base[c]);
      }
      if (std::sqrt(dist) > 0.35) break;
    }
  }
  std::vector<double> disparity(shapes.size());
  for (auto& d : disparity) d = rng.uniform(0.6, 0.95);
  const double ramp0 = rng.uniform(0.1, 0.3), ramp1 = rng.uniform(0.0, 0.2);
  const double ramp_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const bool speckle = rng.uniform() < 0.5;

  SampleRecord s;
  s.rgb = Tensor({3, size, size});
  s.depth = Tensor({1, size, size});
  Tensor gt({1, size, size});
  auto rgb = s.rgb.mutable_data();
  auto depth = s.depth.mutable_data();
  auto gtd = gt.mutable_data();
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t i = y * size + x;
      const double xf = static_cast<double>(x), yf = static_cast<double>(y);
      const int k = owner[i];
      const double g1 = std::sin(f1 * (xf * std::cos(a1) + yf * std::sin(a1)) + p1);
      const double g2 = std::sin(f2 * (xf * std::cos(a2) + yf * std::sin(a2)) + p2);
      for (std::size_t c = 0; c < 3; ++c) {
        double v;
        if (k >= 0) {
          v = colours[static_cast<std::size_t>(k)][c] + 0.04 * g2 + rng.normal(0.0, 0.03);
        } else {
          v = base[c] + amp[c] * (0.6 * g1 + 0.4 * g2) + rng.normal(0.0, 0.03);
        }
        rgb[c * hw + i] = io::dequantize(io::quantize(v));
      }
      const double t = (xf * std::cos(ramp_angle) + yf * std::sin(ramp_angle)) / n;
      double d = k >= 0 ? disparity[static_cast<std::size_t>(k)] : ramp0 + ramp1 * (0.5 + 0.5 * t);
      if (speckle) d += rng.normal(0.0, 0.02);
      depth[i] = io::dequantize(io::quantize(d));
      gtd[i] = fg[i] ? 1.0 : 0.0;
    }
  }
  s.gt = gt;

  s.scribble = ScribbleMask(size, size);
  std::vector<bool> bg(hw);
  for (std::size_t i = 0; i < hw; ++i) bg[i] = !fg[i];
  auto fg_core = erode(fg, size, 2);
  auto bg_core = erode(bg, size, 2);
  if (std::none_of(fg_core.begin(), fg_core.end(), [](bool b) { return b; })) fg_core = fg;
  if (std::none_of(bg_core.begin(), bg_core.end(), [](bool b) { return b; })) bg_core = bg;
  const std::size_t fg_area = static_cast<std::size_t>(std::count(fg.begin(), fg.end(), true));
  const auto fg_target = std::min(static_cast<std::size_t>(rng.uniform(0.03, 0.08) * static_cast<double>(hw)), fg_area / 2);
  const auto bg_target = std::min(static_cast<std::size_t>(rng.uniform(0.03, 0.08) * static_cast<double>(hw)), (hw - fg_area) / 2);
  draw_strokes(fg_core, size, fg_target, Label::Foreground, s.scribble, rng);
  draw_strokes(bg_core, size, bg_target, Label::Background, s.scribble, rng);
  return s;
}

}  // namespace

std::vector<SampleRecord> gen_synthetic(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size == 0 || size % 32 != 0) throw std::invalid_argument("gen_synthetic: size must be a positive multiple of 32");
  Rng master(seed);
  std::vector<Rng> streams;
  streams.reserve(n);
  for (std::size_t i = 0; i < n; ++i) streams.push_back(master.fork(i));
  std::vector<SampleRecord> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = make_sample(size, streams[i]); });
  return out;
}

std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.png", index);
  return buf;
}

std::uint8_t encode_label(Label label) {
  switch (label) {
    case Label::Foreground:
      return 255;
    case Label::Background:
      return 128;
    case Label::Unlabeled:
      break;
  }
  return 0;
}

Label decode_label(std::uint8_t value) {
  if (value == 255) return Label::Foreground;
  if (value == 128) return Label::Background;
  if (value == 0) return Label::Unlabeled;
  throw IoError("scribble value " + std::to_string(value) + " is not one of 0, 128, 255");
}

void save_dataset(const fs::path& root, std::span<const SampleRecord> samples) {
  for (const char* sub : {"rgb", "depth", "scribble", "gt"}) fs::create_directories(root / sub);
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& s = samples[i];
    const auto name = sample_file_name(i);
    io::write_png(root / "rgb" / name, io::from_tensor(s.rgb));
    io::write_png(root / "depth" / name, io::from_tensor(s.depth));
    io::Image8 scribble{s.scribble.width, s.scribble.height, 1, std::vector<std::uint8_t>(s.scribble.size())};
    for (std::size_t p = 0; p < s.scribble.size(); ++p) scribble.pixels[p] = encode_label(s.scribble.labels[p]);
    io::write_png(root / "scribble" / name, scribble);
    if (s.gt) io::write_png(root / "gt" / name, io::from_tensor(*s.gt));
  });
}

namespace {

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Tensor load_gray(const fs::path& path) {
  auto img = io::read_png(path);
  if (img.channels != 1) throw IoError(path.string() + ": expected a grayscale PNG");
  return io::to_tensor(img);
}

}  // namespace

std::vector<SampleRecord> load_dataset(const fs::path& root) {
  const auto files = sorted_pngs(root / "rgb");
  std::vector<SampleRecord> out(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    const auto name = files[i].filename();
    auto& s = out[i];
    auto rgb = io::read_png(files[i]);
    if (rgb.channels != 3) throw IoError(files[i].string() + ": expected an RGB PNG");
    s.rgb = io::to_tensor(rgb);
    s.depth = load_gray(root / "depth" / name);
    if (s.depth.dim(1) != rgb.height || s.depth.dim(2) != rgb.width) throw IoError("depth size differs for " + name.string());
    s.scribble = ScribbleMask(rgb.height, rgb.width);
    if (fs::exists(root / "scribble" / name)) {
      auto sc = io::read_png(root / "scribble" / name);
      if (sc.channels != 1 || sc.width != rgb.width || sc.height != rgb.height) {
        throw IoError("scribble for " + name.string() + " must be a grayscale PNG of the image size");
      }
      for (std::size_t p = 0; p < sc.pixels.size(); ++p) s.scribble.labels[p] = decode_label(sc.pixels[p]);
    }
    if (fs::exists(root / "gt" / name)) {
      Tensor gt = load_gray(root / "gt" / name);
      // Ground truth is binary; anything at or above mid-gray is foreground.
      for (double& v : gt.mutable_data()) v = v >= 0.5 ? 1.0 : 0.0;
      s.gt = gt;
    }
  });
  return out;
}

void save_maps(const fs::path& dir, std::span<const Tensor> maps) {
  fs::create_directories(dir);
  parallel_for(maps.size(), [&](std::size_t i) { io::write_png(dir / sample_file_name(i), io::from_tensor(maps[i])); });
}

std::vector<Tensor> load_maps(const fs::path& dir) {
  const auto files = sorted_pngs(dir);
  std::vector<Tensor> out(files.size());
  parallel_for(files.size(), [&](std::size_t i) { out[i] = load_gray(files[i]); });
  return out;
}

}  // namespace mistseg::pipeline
