#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "stseg/data.hpp"

using namespace stseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("stseg_data_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthConfig test_cfg(std::uint64_t seed = 5) {
  SynthConfig cfg;
  cfg.h = 32;
  cfg.w = 64;
  cfg.seed = seed;
  return cfg;
}

bool frames_equal(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

std::int64_t frame_diff_count(const Tensor<float>& a, const Tensor<float>& b, int k) {
  const std::int64_t plane = 3 * a.dim(2) * a.dim(3);
  const std::int64_t hw = a.dim(2) * a.dim(3);
  std::int64_t diff = 0;
  for (std::int64_t p = 0; p < hw; ++p) {
    bool any = false;
    for (int ch = 0; ch < 3; ++ch)
      if (a.data()[k * plane + ch * hw + p] != b.data()[k * plane + ch * hw + p]) any = true;
    if (any) ++diff;
  }
  return diff;
}

}  // namespace

TEST_CASE("ppm/pgm round-trip is bit-exact; malformed input rejected") {
  auto dir = temp_dir("pnm");
  Image img(2, 2, 3);
  for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = static_cast<std::uint8_t>(i * 23);
  write_ppm(dir / "a.ppm", img);
  Image back = read_ppm(dir / "a.ppm");
  CHECK(back.px == img.px);

  Image lab(2, 3, 1);
  lab.px = {0, 1, 2, 3, 255, 1};
  write_pgm(dir / "l.pgm", lab);
  CHECK(read_pgm(dir / "l.pgm").px == lab.px);

  {
    std::ofstream bad(dir / "bad.ppm", std::ios::binary);
    bad << "P5\n2 2\n255\n";
  }
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), FormatError);

  {
    std::ofstream trunc(dir / "trunc.ppm", std::ios::binary);
    trunc << "P6\n4 4\n255\nxx";
  }
  CHECK_THROWS_AS(read_ppm(dir / "trunc.ppm"), FormatError);

  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), IoError);
}

TEST_CASE("generation is a pure function of (seed, index)") {
  auto cfg = test_cfg();
  auto a = synth_sample(cfg, 7);
  auto b = synth_sample(cfg, 7);
  CHECK(frames_equal(a.frames, b.frames));
  CHECK(a.label.v == b.label.v);

  auto other_seed = test_cfg(6);
  auto c = synth_sample(other_seed, 7);
  CHECK_FALSE(frames_equal(a.frames, c.frames));
}

TEST_CASE("A/B pairs are identical at frame T and differ earlier on >= 10% of the shape") {
  auto cfg = test_cfg(11);
  for (std::int64_t pair = 0; pair < 10; ++pair) {
    SynthSampleInfo ia, ib;
    auto a = synth_sample(cfg, 2 * pair, &ia);
    auto b = synth_sample(cfg, 2 * pair + 1, &ib);
    CHECK(ia.shape_w == ib.shape_w);

    // visible content at frame T is pixel-identical (ambiguity by construction)
    CHECK(frame_diff_count(a.frames, b.frames, cfg.t - 1) == 0);

    // labels agree except for the class id of the visible sliver
    std::int64_t sliver = 0;
    for (std::size_t i = 0; i < a.label.v.size(); ++i) {
      if (a.label.v[i] == 2) {
        CHECK(b.label.v[i] == 3);
        ++sliver;
      } else {
        CHECK(a.label.v[i] == b.label.v[i]);
      }
    }
    CHECK(sliver > 0);

    // at least one earlier frame exposes the class marker
    std::int64_t best = 0;
    for (int k = 0; k + 1 < cfg.t; ++k) best = std::max(best, frame_diff_count(a.frames, b.frames, k));
    const std::int64_t shape_area = static_cast<std::int64_t>(ia.shape_w) * ia.shape_h;
    CHECK(best * 10 >= shape_area);

    CHECK(ia.occl_fraction >= cfg.occl_min - 1e-9);
    CHECK(ia.occl_fraction <= cfg.occl_max + 1e-9);
  }
}

TEST_CASE("zero occlusion control set is identifiable from frame T alone") {
  auto cfg = test_cfg(13);
  cfg.occl_min = 0.0;
  cfg.occl_max = 0.0;
  auto a = synth_sample(cfg, 0);
  auto b = synth_sample(cfg, 1);
  CHECK(frame_diff_count(a.frames, b.frames, cfg.t - 1) > 0);
}

TEST_CASE("labels are legal and the void ring is present") {
  auto cfg = test_cfg(17);
  std::int64_t voids = 0;
  for (int i = 0; i < 6; ++i) {
    auto s = synth_sample(cfg, i);
    for (std::uint8_t v : s.label.v) {
      const bool legal = v == 0 || v == 1 || v == 2 || v == 3 || v == kVoidLabel;
      REQUIRE(legal);
      if (v == kVoidLabel) ++voids;
    }
  }
  CHECK(voids > 0);
}

TEST_CASE("infeasible geometry is rejected") {
  auto cfg = test_cfg(19);
  cfg.occl_min = 0.96;
  cfg.occl_max = 0.97;
  CHECK_THROWS_AS(synth_sample(cfg, 0), ConfigError);

  SynthConfig tiny;
  tiny.h = 8;
  tiny.w = 8;
  CHECK_THROWS_AS(synth_sample(tiny, 0), ConfigError);
}

TEST_CASE("hflip augmentation: involution and label histogram invariance") {
  auto cfg = test_cfg(23);
  auto s = synth_sample(cfg, 3);
  AugmentConfig flip_only;
  flip_only.hflip = true;
  flip_only.jitter = 0;

  // find a seed whose draw flips
  std::uint64_t seed = 0;
  SequenceSample flipped;
  for (;; ++seed) {
    flipped = augment_sequence(s, flip_only, seed);
    if (!frames_equal(flipped.frames, s.frames)) break;
    REQUIRE(seed < 64);
  }
  auto twice = augment_sequence(flipped, flip_only, seed);
  CHECK(frames_equal(twice.frames, s.frames));
  CHECK(twice.label.v == s.label.v);

  std::array<std::int64_t, 256> h1{}, h2{};
  for (std::uint8_t v : s.label.v) h1[v]++;
  for (std::uint8_t v : flipped.label.v) h2[v]++;
  CHECK(h1 == h2);
}

TEST_CASE("zero-magnitude augmentation is the identity") {
  auto cfg = test_cfg(29);
  auto s = synth_sample(cfg, 4);
  AugmentConfig none;
  none.hflip = false;
  none.jitter = 0;
  none.blur_sigma_max = 0;
  auto out = augment_sequence(s, none, 12345);
  CHECK(frames_equal(out.frames, s.frames));
  CHECK(out.label.v == s.label.v);
}

TEST_CASE("augmentation applies one draw identically at every timestep") {
  auto cfg = test_cfg(31);
  auto s = synth_sample(cfg, 5);
  AugmentConfig aug;
  aug.hflip = true;
  aug.jitter = 0.2;
  aug.blur_sigma_max = 1.0;
  const std::uint64_t seed = 77;
  auto full = augment_sequence(s, aug, seed);

  // single-frame sample built from frame 0 sees the same transform
  const std::int64_t plane = 3 * cfg.h * cfg.w;
  SequenceSample first;
  first.frames = Tensor<float>::from_data(
      {1, 3, cfg.h, cfg.w},
      std::vector<float>(s.frames.data().begin(), s.frames.data().begin() + plane));
  first.label = s.label;
  auto aug_first = augment_sequence(first, aug, seed);
  for (std::int64_t i = 0; i < plane; ++i)
    CHECK(aug_first.frames.data()[i] == full.frames.data()[i]);
}

TEST_CASE("dataset write -> load round-trip is bit-exact") {
  auto cfg = test_cfg(37);
  auto dir = temp_dir("roundtrip");
  synth_write(dir / "train", cfg, 4);
  auto index = index_dataset(dir, "train");
  REQUIRE(index.samples.size() == 4);
  auto loaded = load_dataset(index, cfg.t, cfg.num_classes);
  for (int i = 0; i < 4; ++i) {
    auto ref = synth_sample(cfg, i);
    CHECK(frames_equal(loaded[static_cast<std::size_t>(i)].frames, ref.frames));
    CHECK(loaded[static_cast<std::size_t>(i)].label.v == ref.label.v);
  }
}

TEST_CASE("loader errors: missing files and sequence-length mismatch") {
  auto cfg = test_cfg(41);
  auto dir = temp_dir("loader");
  synth_write(dir / "train", cfg, 2);
  const fs::path s0 = dir / "train" / "sample0000";

  CHECK_THROWS_AS(load_sample(s0, cfg.t + 1, cfg.num_classes), FormatError);

  fs::remove(s0 / "frame_3.ppm");
  CHECK_THROWS_AS(load_sample(s0, cfg.t, cfg.num_classes), FormatError);

  const fs::path s1 = dir / "train" / "sample0001";
  fs::remove(s1 / "label.pgm");
  CHECK_THROWS_AS(load_sample(s1, cfg.t, cfg.num_classes), IoError);

  CHECK_THROWS_AS(index_dataset(dir, "val"), IoError);
}
