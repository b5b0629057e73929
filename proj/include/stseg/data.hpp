#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stseg/common.hpp"
#include "stseg/tensor.hpp"

namespace stseg {

// Interleaved 8-bit image; c is 3 (PPM) or 1 (PGM).
struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> px;

  Image() = default;
  Image(int h_, int w_, int c_, std::uint8_t fill = 0)
      : h(h_), w(w_), c(c_), px(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  std::uint8_t& at(int y, int x, int ch) {
    return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  std::uint8_t at(int y, int x, int ch) const {
    return px[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
};

void write_ppm(const std::filesystem::path& path, const Image& img);   // P6, maxval 255
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& img);   // P5, maxval 255
Image read_pgm(const std::filesystem::path& path);

struct SynthConfig {
  int h = 64, w = 128;
  int t = 4;
  int stride = 2;         // virtual-video frames between sampled frames
  int num_classes = 4;    // 0 background, 1 occluder, 2 shape-A, 3 shape-B
  double occl_min = 0.7;  // occluded fraction of the shape at frame T
  double occl_max = 0.95;
  int speed_min = 2;      // px per virtual frame
  int speed_max = 3;
  // fraction of pairs rendered with the marker still visible at frame T;
  // such anchors make the class cue learnable spatially, occluded pairs
  // still require temporal information
  double visible_fraction = 0.0;
  std::uint64_t seed = 0;
};

// T frames plus the label map for the final frame (void = 255).
struct SequenceSample {
  Tensor<float> frames;  // [T,3,H,W], values in [0,1]
  LabelMap label;        // n = 1
};

struct SynthSampleInfo {
  int shape_w = 0, shape_h = 0;     // moving shape extent
  int covered_cols = 0;             // shape columns behind the occluder at frame T
  double occl_fraction = 0;
};

// Pure function of (cfg.seed, index). Samples 2i and 2i+1 form an A/B pair
// sharing geometry, motion, background and occluder.
SequenceSample synth_sample(const SynthConfig& cfg, std::int64_t index,
                            SynthSampleInfo* info = nullptr);
std::vector<SequenceSample> synth_generate(const SynthConfig& cfg, std::int64_t count);

// Layout: dir/sampleNNNN/frame_0.ppm .. frame_{T-1}.ppm, label.pgm, meta.txt
void synth_write(const std::filesystem::path& dir, const SynthConfig& cfg, std::int64_t count);

struct DatasetIndex {
  std::filesystem::path root;
  std::string split;
  std::vector<std::filesystem::path> samples;  // sorted by directory name
};

DatasetIndex index_dataset(const std::filesystem::path& root, const std::string& split);
SequenceSample load_sample(const std::filesystem::path& dir, int expect_t, int expect_classes);
std::vector<SequenceSample> load_dataset(const DatasetIndex& index, int expect_t,
                                         int expect_classes);

void write_sample(const std::filesystem::path& dir, const SequenceSample& sample, int stride,
                  int num_classes);

struct AugmentConfig {
  bool hflip = true;          // p = 0.5
  double jitter = 0.2;        // brightness/contrast factor range +- jitter
  double blur_sigma_max = 0;  // 0 disables gaussian blur
};

// One transform draw applied identically to all T frames; hflip also flips the
// label, photometric ops leave it untouched. Deterministic per seed.
SequenceSample augment_sequence(const SequenceSample& sample, const AugmentConfig& cfg,
                                std::uint64_t seed);

}  // namespace stseg
