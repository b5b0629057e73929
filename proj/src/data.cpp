#include "stseg/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace stseg {

namespace fs = std::filesystem;

namespace {

void write_pnm(const fs::path& path, const Image& img, const char* magic, int channels) {
  if (img.c != channels) throw ShapeError("pnm write: wrong channel count");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << magic << "\n" << img.w << " " << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.px.data()),
           static_cast<std::streamsize>(img.px.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

int read_pnm_token(std::istream& is, const fs::path& path) {
  // skips whitespace and '#' comments
  int ch = is.get();
  while (ch == '#' || std::isspace(ch)) {
    if (ch == '#')
      while (ch != '\n' && ch != EOF) ch = is.get();
    ch = is.get();
  }
  int value = 0;
  bool any = false;
  while (std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    any = true;
    ch = is.get();
  }
  if (!any) throw FormatError("malformed header in " + path.string());
  return value;
}

Image read_pnm(const fs::path& path, const char* magic, int channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char m[2];
  is.read(m, 2);
  if (is.gcount() != 2 || m[0] != magic[0] || m[1] != magic[1])
    throw FormatError("bad magic in " + path.string() + ", expected " + magic);
  const int w = read_pnm_token(is, path);
  const int h = read_pnm_token(is, path);
  const int maxval = read_pnm_token(is, path);
  if (maxval != 255) throw FormatError("unsupported maxval in " + path.string());
  Image img(h, w, channels);
  is.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.px.size())
    throw FormatError("truncated pixel data in " + path.string());
  return img;
}

std::uint32_t pixel_hash(std::uint64_t seed, int x, int y) {
  std::uint64_t z = seed ^ (static_cast<std::uint64_t>(x) * 0x9e3779b97f4a7c15ull) ^
                    (static_cast<std::uint64_t>(y) * 0xbf58476d1ce4e5b9ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return static_cast<std::uint32_t>(z >> 32);
}

struct Geometry {
  int sw = 0, sh = 0;       // shape size
  int xs0 = 0, ys = 0;      // shape top-left at frame 0
  int step = 0;             // px moved right per sampled frame
  int xo = 0, yo = 0;       // occluder top-left
  int ow = 0, oh = 0;       // occluder size
  int cov = 0;              // covered shape columns at frame T
  int marker = 0;           // class-colored leading columns; hidden at frame T
  bool mirror = false;
  std::uint64_t bg_seed = 0, shape_seed = 0, occ_seed = 0;
};

Geometry sample_geometry(const SynthConfig& cfg, std::int64_t pair_id) {
  Rng geo = Rng(cfg.seed).fork(static_cast<std::uint64_t>(pair_id) * 2 + 17);
  const bool anchor = geo.uniform() < cfg.visible_fraction;
  for (int attempt = 0; attempt < 256; ++attempt) {
    Rng rng = geo.fork(static_cast<std::uint64_t>(attempt));
    Geometry g;
    g.sw = static_cast<int>(rng.range(16, 24));
    g.sh = static_cast<int>(rng.range(12, 18));
    const int speed = static_cast<int>(rng.range(cfg.speed_min, cfg.speed_max));
    g.step = speed * cfg.stride;
    const int disp = g.step * (cfg.t - 1);

    const int mw = (g.sw + 1) / 2;
    int cov_lo = static_cast<int>(std::ceil(cfg.occl_min * g.sw));
    int cov_hi = static_cast<int>(std::floor(cfg.occl_max * g.sw));
    if (anchor) cov_lo = cov_hi = 0;
    cov_hi = std::min(cov_hi, g.sw - 2);  // some shape pixels stay visible and labeled
    if (cov_hi > 0) cov_lo = std::max(cov_lo, mw);
    if (cov_lo > cov_hi) continue;
    g.cov = static_cast<int>(rng.range(cov_lo, cov_hi));
    // class marker = exactly the columns hidden at frame T (a visible leading
    // half when nothing is occluded, so anchors and the control set stay
    // identifiable from the last frame alone)
    g.marker = g.cov > 0 ? g.cov : mw;
    // enough motion that a tenth of the shape shows its marker earlier on
    const int visible_marker_at_0 = std::min(g.marker, disp);
    if (g.cov > 0 && 10 * visible_marker_at_0 < g.sw + 9) continue;

    g.oh = g.sh + static_cast<int>(rng.range(4, 8));
    g.ys = static_cast<int>(rng.range(2, cfg.h - g.sh - 2));
    g.yo = g.ys - static_cast<int>(rng.range(2, std::min(3, g.oh - g.sh - 1)));
    if (g.yo < 1 || g.yo + g.oh > cfg.h - 1) continue;

    g.ow = g.cov + static_cast<int>(rng.range(4, 9));
    const int xo_lo = 1 + disp + g.sw - g.cov;  // keeps the whole path in-frame
    const int xo_hi = cfg.w - 1 - g.ow;
    if (xo_lo > xo_hi) continue;
    g.xo = static_cast<int>(rng.range(xo_lo, xo_hi));
    g.xs0 = g.xo + g.cov - g.sw - disp;  // derived from the frame-T position
    if (g.xs0 < 1) continue;

    g.mirror = rng.coin();
    // textures are shared across the dataset: sample identity lives only in
    // geometry and motion, so pairs cannot be told apart except by the marker
    Rng tex = Rng(cfg.seed).fork(0x7e47);
    g.bg_seed = tex.next_u64();
    g.shape_seed = tex.next_u64();
    g.occ_seed = tex.next_u64();
    return g;
  }
  throw ConfigError("synthetic geometry infeasible for config (h=" + std::to_string(cfg.h) +
                    ", w=" + std::to_string(cfg.w) + ", occl=[" + std::to_string(cfg.occl_min) +
                    "," + std::to_string(cfg.occl_max) + "])");
}

void paint_background(Image& img, std::uint64_t seed) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const std::uint32_t hsh = pixel_hash(seed, x, y);
      const std::uint8_t base = static_cast<std::uint8_t>(85 + (hsh % 41));
      img.at(y, x, 0) = base;
      img.at(y, x, 1) = static_cast<std::uint8_t>(std::min(255u, base + (hsh >> 8) % 9u));
      img.at(y, x, 2) = static_cast<std::uint8_t>(std::max(0, int(base) - int((hsh >> 16) % 9u)));
    }
}

// A/B pairs differ only inside the marker: a solid hue patch, warm for class 2,
// cold for class 3, matched mean intensity so luminance alone says nothing.
void paint_shape(Image& img, const Geometry& g, int xs, std::uint8_t cls) {
  for (int dy = 0; dy < g.sh; ++dy)
    for (int dx = 0; dx < g.sw; ++dx) {
      const int x = xs + dx, y = g.ys + dy;
      if (x < 0 || x >= img.w || y < 0 || y >= img.h) continue;
      const std::uint32_t hsh = pixel_hash(g.shape_seed, dx, dy);
      const std::uint8_t noise = static_cast<std::uint8_t>(hsh % 16);
      std::uint8_t r, gg, b;
      if (dx >= g.sw - g.marker) {
        if (cls == 2) {
          r = static_cast<std::uint8_t>(215 + noise);
          gg = static_cast<std::uint8_t>(120 + noise);
          b = static_cast<std::uint8_t>(90 + noise);
        } else {
          r = static_cast<std::uint8_t>(90 + noise);
          gg = static_cast<std::uint8_t>(120 + noise);
          b = static_cast<std::uint8_t>(215 + noise);
        }
      } else {
        const std::uint8_t v = static_cast<std::uint8_t>(175 + noise);
        r = v;
        gg = static_cast<std::uint8_t>(v - 4);
        b = static_cast<std::uint8_t>(v - 8);
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = gg;
      img.at(y, x, 2) = b;
    }
}

void paint_occluder(Image& img, const Geometry& g) {
  for (int dy = 0; dy < g.oh; ++dy)
    for (int dx = 0; dx < g.ow; ++dx) {
      const int x = g.xo + dx, y = g.yo + dy;
      if (x < 0 || x >= img.w || y < 0 || y >= img.h) continue;
      const std::uint32_t hsh = pixel_hash(g.occ_seed, dx, dy);
      img.at(y, x, 0) = static_cast<std::uint8_t>(46 + (hsh % 14));
      img.at(y, x, 1) = static_cast<std::uint8_t>(58 + ((hsh >> 8) % 14));
      img.at(y, x, 2) = static_cast<std::uint8_t>(150 + ((hsh >> 16) % 20));
    }
}

void hflip_image(Image& img) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w / 2; ++x)
      for (int ch = 0; ch < img.c; ++ch)
        std::swap(img.at(y, x, ch), img.at(y, img.w - 1 - x, ch));
}

Tensor<float> frames_to_tensor(const std::vector<Image>& frames) {
  const int t = static_cast<int>(frames.size()), h = frames[0].h, w = frames[0].w;
  std::vector<float> data(static_cast<std::size_t>(t) * 3 * h * w);
  for (int k = 0; k < t; ++k)
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          data[((static_cast<std::size_t>(k) * 3 + ch) * h + y) * w + x] =
              frames[k].at(y, x, ch) / 255.0f;
  return Tensor<float>::from_data({t, 3, h, w}, std::move(data));
}

Image tensor_frame_to_image(const Tensor<float>& frames, int k) {
  const int h = static_cast<int>(frames.dim(2)), w = static_cast<int>(frames.dim(3));
  Image img(h, w, 3);
  auto v = frames.data();
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float f = v[((static_cast<std::size_t>(k) * 3 + ch) * h + y) * w + x];
        const int q = static_cast<int>(std::lround(f * 255.0f));
        img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(q, 0, 255));
      }
  return img;
}

}  // namespace

void write_ppm(const fs::path& path, const Image& img) { write_pnm(path, img, "P6", 3); }
Image read_ppm(const fs::path& path) { return read_pnm(path, "P6", 3); }
void write_pgm(const fs::path& path, const Image& img) { write_pnm(path, img, "P5", 1); }
Image read_pgm(const fs::path& path) { return read_pnm(path, "P5", 1); }

SequenceSample synth_sample(const SynthConfig& cfg, std::int64_t index, SynthSampleInfo* info) {
  if (cfg.t < 1 || cfg.h < 32 || cfg.w < 48)
    throw ConfigError("synthetic config needs t >= 1 and at least 32x48 frames");
  if (cfg.num_classes != 4)
    throw ConfigError("synthetic generator produces exactly 4 classes");
  if (cfg.occl_max >= 1.0) throw ConfigError("occlusion fraction must stay below 1");

  const std::int64_t pair_id = index / 2;
  const std::uint8_t cls = static_cast<std::uint8_t>(2 + (index % 2));
  const Geometry g = sample_geometry(cfg, pair_id);
  if (info) {
    info->shape_w = g.sw;
    info->shape_h = g.sh;
    info->covered_cols = g.cov;
    info->occl_fraction = static_cast<double>(g.cov) / g.sw;
  }

  std::vector<Image> frames;
  frames.reserve(static_cast<std::size_t>(cfg.t));
  for (int k = 0; k < cfg.t; ++k) {
    Image img(cfg.h, cfg.w, 3);
    paint_background(img, g.bg_seed);
    paint_shape(img, g, g.xs0 + g.step * k, cls);
    paint_occluder(img, g);
    frames.push_back(std::move(img));
  }

  // label for the last frame: topmost object wins; occluder outline is void
  LabelMap label(1, cfg.h, cfg.w, 0);
  const int xs_t = g.xs0 + g.step * (cfg.t - 1);
  for (int dy = 0; dy < g.sh; ++dy)
    for (int dx = 0; dx < g.sw; ++dx) {
      const int x = xs_t + dx, y = g.ys + dy;
      if (x >= 0 && x < cfg.w && y >= 0 && y < cfg.h) label.at(0, y, x) = cls;
    }
  for (int dy = 0; dy < g.oh; ++dy)
    for (int dx = 0; dx < g.ow; ++dx) {
      const int x = g.xo + dx, y = g.yo + dy;
      if (x < 0 || x >= cfg.w || y < 0 || y >= cfg.h) continue;
      const bool edge = dy == 0 || dy == g.oh - 1 || dx == 0 || dx == g.ow - 1;
      label.at(0, y, x) = edge ? kVoidLabel : 1;
    }

  if (g.mirror) {
    for (auto& f : frames) hflip_image(f);
    for (int y = 0; y < cfg.h; ++y)
      for (int x = 0; x < cfg.w / 2; ++x)
        std::swap(label.at(0, y, x), label.at(0, y, cfg.w - 1 - x));
  }

  SequenceSample s;
  s.frames = frames_to_tensor(frames);
  s.label = std::move(label);
  return s;
}

std::vector<SequenceSample> synth_generate(const SynthConfig& cfg, std::int64_t count) {
  std::vector<SequenceSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(synth_sample(cfg, i));
  return out;
}

void write_sample(const fs::path& dir, const SequenceSample& sample, int stride,
                  int num_classes) {
  fs::create_directories(dir);
  const int t = static_cast<int>(sample.frames.dim(0));
  for (int k = 0; k < t; ++k)
    write_ppm(dir / ("frame_" + std::to_string(k) + ".ppm"),
              tensor_frame_to_image(sample.frames, k));
  Image lab(static_cast<int>(sample.label.h), static_cast<int>(sample.label.w), 1);
  std::copy(sample.label.v.begin(), sample.label.v.end(), lab.px.begin());
  write_pgm(dir / "label.pgm", lab);
  std::ofstream meta(dir / "meta.txt");
  if (!meta) throw IoError("cannot write meta: " + (dir / "meta.txt").string());
  meta << "T=" << t << "\nstride=" << stride << "\nclasses=" << num_classes << "\n";
}

void synth_write(const fs::path& dir, const SynthConfig& cfg, std::int64_t count) {
  fs::create_directories(dir);
  for (std::int64_t i = 0; i < count; ++i) {
    std::ostringstream name;
    name << "sample" << std::setw(4) << std::setfill('0') << i;
    write_sample(dir / name.str(), synth_sample(cfg, i), cfg.stride, cfg.num_classes);
  }
}

DatasetIndex index_dataset(const fs::path& root, const std::string& split) {
  DatasetIndex idx;
  idx.root = root;
  idx.split = split;
  const fs::path dir = root / split;
  if (!fs::exists(dir)) throw IoError("dataset split directory missing: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) idx.samples.push_back(e.path());
  std::sort(idx.samples.begin(), idx.samples.end());
  return idx;
}

SequenceSample load_sample(const fs::path& dir, int expect_t, int expect_classes) {
  const fs::path meta_path = dir / "meta.txt";
  if (!fs::exists(meta_path)) throw IoError("missing meta file: " + meta_path.string());
  int t = -1, classes = -1;
  {
    std::ifstream is(meta_path);
    std::string line;
    while (std::getline(is, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "T") t = std::stoi(val);
      if (key == "classes") classes = std::stoi(val);
    }
  }
  if (t <= 0 || classes <= 0) throw FormatError("malformed meta file: " + meta_path.string());
  if (t != expect_t)
    throw FormatError("sample " + dir.string() + " has T=" + std::to_string(t) +
                      " but configuration expects T=" + std::to_string(expect_t));
  if (classes != expect_classes)
    throw FormatError("sample " + dir.string() + " has classes=" + std::to_string(classes) +
                      " but configuration expects " + std::to_string(expect_classes));

  int on_disk = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && name.size() > 10 &&
        name.substr(name.size() - 4) == ".ppm")
      ++on_disk;
  }
  if (on_disk != t)
    throw FormatError("sample " + dir.string() + " holds " + std::to_string(on_disk) +
                      " frames but meta says T=" + std::to_string(t));

  std::vector<Image> frames;
  for (int k = 0; k < t; ++k) {
    Image img = read_ppm(dir / ("frame_" + std::to_string(k) + ".ppm"));
    if (!frames.empty() && (img.h != frames[0].h || img.w != frames[0].w))
      throw FormatError("frame dimension mismatch in " + dir.string());
    frames.push_back(std::move(img));
  }
  Image lab = read_pgm(dir / "label.pgm");
  if (lab.h != frames[0].h || lab.w != frames[0].w)
    throw FormatError("label dimensions do not match frames in " + dir.string());
  for (std::uint8_t v : lab.px)
    if (v != kVoidLabel && v >= expect_classes)
      throw FormatError("label value " + std::to_string(int(v)) + " out of range in " +
                        dir.string());

  SequenceSample s;
  s.frames = frames_to_tensor(frames);
  s.label = LabelMap(1, lab.h, lab.w);
  std::copy(lab.px.begin(), lab.px.end(), s.label.v.begin());
  return s;
}

std::vector<SequenceSample> load_dataset(const DatasetIndex& index, int expect_t,
                                         int expect_classes) {
  std::vector<SequenceSample> out;
  out.reserve(index.samples.size());
  for (const auto& dir : index.samples) out.push_back(load_sample(dir, expect_t, expect_classes));
  return out;
}

namespace {

void gaussian_blur_inplace(std::vector<float>& plane, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] =
        static_cast<float>(std::exp(-0.5 * (i * i) / (sigma * sigma)));
    sum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k = static_cast<float>(k / sum);

  std::vector<float> tmp(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += plane[static_cast<std::size_t>(y) * w + xx] *
               kernel[static_cast<std::size_t>(i + radius)];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += tmp[static_cast<std::size_t>(yy) * w + x] *
               kernel[static_cast<std::size_t>(i + radius)];
      }
      plane[static_cast<std::size_t>(y) * w + x] = acc;
    }
}

}  // namespace

SequenceSample augment_sequence(const SequenceSample& sample, const AugmentConfig& cfg,
                                std::uint64_t seed) {
  Rng rng(seed);
  const bool flip = cfg.hflip && rng.coin();
  const float brightness = static_cast<float>(rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter));
  const float contrast = static_cast<float>(rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter));
  const double sigma = cfg.blur_sigma_max > 0 ? rng.uniform(0.0, cfg.blur_sigma_max) : 0.0;

  const std::int64_t t = sample.frames.dim(0), h = sample.frames.dim(2), w = sample.frames.dim(3);
  std::vector<float> data(sample.frames.data().begin(), sample.frames.data().end());

  if (flip) {
    for (std::int64_t p = 0; p < t * 3; ++p) {
      float* plane = data.data() + p * h * w;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w / 2; ++x)
          std::swap(plane[y * w + x], plane[y * w + (w - 1 - x)]);
    }
  }
  if (sigma >= 0.05) {
    for (std::int64_t p = 0; p < t * 3; ++p) {
      std::vector<float> plane(data.begin() + p * h * w, data.begin() + (p + 1) * h * w);
      gaussian_blur_inplace(plane, static_cast<int>(h), static_cast<int>(w), sigma);
      std::copy(plane.begin(), plane.end(), data.begin() + p * h * w);
    }
  }
  if (brightness != 1.0f || contrast != 1.0f) {
    for (auto& v : data)
      v = std::clamp(((v - 0.5f) * contrast + 0.5f) * brightness, 0.0f, 1.0f);
  }

  SequenceSample out;
  out.frames = Tensor<float>::from_data(sample.frames.shape(), std::move(data));
  out.label = sample.label;
  if (flip) {
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w / 2; ++x)
        std::swap(out.label.at(0, y, x), out.label.at(0, y, w - 1 - x));
  }
  return out;
}

}  // namespace stseg
