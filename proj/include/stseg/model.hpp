#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stseg/config.hpp"
#include "stseg/temporal.hpp"

namespace stseg {

enum class Placement { frame_by_frame, bottleneck, skip, encoder };

inline std::string to_string(Placement p) {
  switch (p) {
    case Placement::frame_by_frame: return "frame_by_frame";
    case Placement::bottleneck: return "bottleneck";
    case Placement::skip: return "skip";
    case Placement::encoder: return "encoder";
  }
  return "?";
}

inline Placement placement_from_string(const std::string& s) {
  if (s == "frame_by_frame") return Placement::frame_by_frame;
  if (s == "bottleneck") return Placement::bottleneck;
  if (s == "skip") return Placement::skip;
  if (s == "encoder") return Placement::encoder;
  throw ConfigError("unknown placement '" + s + "'");
}

struct ModelConfig {
  Placement placement = Placement::frame_by_frame;
  TemporalKind temporal_kind = TemporalKind::pointwise_tn;  // ignored for frame_by_frame
  int t = 4;
  int depth = 6;
  std::vector<int> channels = {32, 64, 128, 256, 512, 512};
  int num_classes = 19;
  int input_channels = 3;
  double leaky_slope = 0.01;

  void validate() const {
    if (static_cast<int>(channels.size()) != depth)
      throw ConfigError("channels list has " + std::to_string(channels.size()) +
                        " entries but depth is " + std::to_string(depth));
    if (t < 1) throw ConfigError("T must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
    for (int c : channels)
      if (c < 1) throw ConfigError("channels must be positive");
  }

  int temporal_unit_count() const {
    switch (placement) {
      case Placement::frame_by_frame: return 0;
      case Placement::bottleneck: return 1;
      case Placement::skip:
      case Placement::encoder: return depth + 1;
    }
    return 0;
  }

  std::string to_kv() const {
    std::ostringstream os;
    os << "placement=" << to_string(placement) << "\n";
    os << "temporal_kind=" << stseg::to_string(temporal_kind) << "\n";
    os << "T=" << t << "\n";
    os << "depth=" << depth << "\n";
    os << "channels=";
    for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
    os << "\n";
    os << "num_classes=" << num_classes << "\n";
    os << "input_channels=" << input_channels << "\n";
    os << "leaky_slope=" << leaky_slope << "\n";
    return os.str();
  }
};

inline const std::set<std::string>& model_config_keys() {
  static const std::set<std::string> keys = {"placement",   "temporal_kind",  "T",
                                             "depth",       "channels",       "num_classes",
                                             "input_channels", "leaky_slope"};
  return keys;
}

inline ModelConfig model_config_from(const Config& c) {
  ModelConfig m;
  m.placement = placement_from_string(c.get_str("placement", to_string(m.placement)));
  m.temporal_kind =
      temporal_kind_from_string(c.get_str("temporal_kind", to_string(m.temporal_kind)));
  m.t = static_cast<int>(c.get_int("T", m.t));
  m.depth = static_cast<int>(c.get_int("depth", m.depth));
  m.channels = c.get_int_list("channels", m.channels);
  m.num_classes = static_cast<int>(c.get_int("num_classes", m.num_classes));
  m.input_channels = static_cast<int>(c.get_int("input_channels", m.input_channels));
  m.leaky_slope = c.get_f64("leaky_slope", m.leaky_slope);
  m.validate();
  return m;
}

// Named intermediate activations, recorded on request.
template <class S>
using Trace = std::vector<std::pair<std::string, Tensor<S>>>;

// U-Net with optional temporal units. Unit layout:
//   frame_by_frame: none
//   bottleneck:     units[0] on the pooled output of the last encoder block
//   skip/encoder:   units[l] on encoder level l features (l < depth),
//                   units[depth] on the pooled output of the last block
template <class S>
struct SegModel {
  ModelConfig cfg;
  std::vector<ConvBlock<S>> enc;
  ConvBlock<S> bottleneck;
  std::vector<DecoderBlock<S>> dec;  // dec[i] consumes skip level depth-1-i
  Conv2dLayer<S> classifier;
  std::vector<TemporalUnit<S>> units;
  ParamRegistry<S> registry;

  bool has_level_units() const {
    return cfg.placement == Placement::skip || cfg.placement == Placement::encoder;
  }
  int bottleneck_unit_index() const {
    return cfg.placement == Placement::bottleneck ? 0 : cfg.depth;
  }
};

template <class S>
SegModel<S> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SegModel<S> m;
  m.cfg = cfg;
  const S slope = static_cast<S>(cfg.leaky_slope);

  int in_c = cfg.input_channels;
  for (int l = 0; l < cfg.depth; ++l) {
    m.enc.push_back(
        ConvBlock<S>::make(in_c, cfg.channels[l], slope, m.registry, "enc" + std::to_string(l + 1)));
    in_c = cfg.channels[l];
  }
  const int deepest = cfg.channels[cfg.depth - 1];
  m.bottleneck = ConvBlock<S>::make(deepest, deepest, slope, m.registry, "bottleneck");

  int cur = deepest;
  for (int i = 0; i < cfg.depth; ++i) {
    const int level = cfg.depth - 1 - i;  // skip level consumed
    m.dec.push_back(DecoderBlock<S>::make(cur, cfg.channels[level], m.registry,
                                          "dec" + std::to_string(level + 1)));
    cur = cfg.channels[level];
  }
  m.classifier = Conv2dLayer<S>::make(cfg.channels[0], cfg.num_classes, 1, 1, {1, 1},
                                      {0, 0, 0, 0}, {1, 1}, true, m.registry, "classifier");

  if (cfg.placement == Placement::bottleneck) {
    m.units.push_back(TemporalUnit<S>::make(
        TemporalUnitConfig::make(cfg.temporal_kind, cfg.t, deepest), m.registry,
        "temporal.bottleneck"));
  } else if (cfg.placement == Placement::skip || cfg.placement == Placement::encoder) {
    for (int l = 0; l < cfg.depth; ++l)
      m.units.push_back(TemporalUnit<S>::make(
          TemporalUnitConfig::make(cfg.temporal_kind, cfg.t, cfg.channels[l]), m.registry,
          "temporal.l" + std::to_string(l + 1)));
    m.units.push_back(TemporalUnit<S>::make(
        TemporalUnitConfig::make(cfg.temporal_kind, cfg.t, deepest), m.registry,
        "temporal.bottleneck"));
  }

  init_params(m.registry, seed, cfg.leaky_slope);
  return m;
}

template <class S>
void check_spatial(const ModelConfig& cfg, const Tensor<S>& x) {
  const std::int64_t div = std::int64_t(1) << cfg.depth;
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
    throw ShapeError("input spatial dims " + shape_str(x.shape()) + " must be divisible by 2^" +
                     std::to_string(cfg.depth));
  if (x.dim(1) != cfg.input_channels)
    throw ShapeError("input has " + std::to_string(x.dim(1)) + " channels, model expects " +
                     std::to_string(cfg.input_channels));
}

// Plain U-Net pass over a batch of independent frames.
template <class S>
Tensor<S> forward_single(SegModel<S>& m, const Tensor<S>& image, bool training,
                         Trace<S>* trace = nullptr) {
  if (image.rank() != 4) throw ShapeError("forward_single: need [N,C,H,W]");
  check_spatial(m.cfg, image);
  std::vector<Tensor<S>> skips;
  Tensor<S> cur = image;
  for (int l = 0; l < m.cfg.depth; ++l) {
    Tensor<S> f = m.enc[l].features(cur, training);
    if (trace) trace->emplace_back("enc" + std::to_string(l + 1) + ".features", f);
    skips.push_back(f);
    cur = maxpool2d(f);
  }
  Tensor<S> d = m.bottleneck.features(cur, training);
  if (trace) trace->emplace_back("bottleneck.features", d);
  for (int i = 0; i < m.cfg.depth; ++i) {
    const int level = m.cfg.depth - 1 - i;
    d = m.dec[i].forward(d, skips[level], training);
  }
  return m.classifier.forward(d);
}

// Temporal pass over one sequence of frames; logits for the final frame.
template <class S>
Tensor<S> forward_sequence(SegModel<S>& m, const Tensor<S>& frames, bool training,
                           Trace<S>* trace = nullptr) {
  if (m.cfg.placement == Placement::frame_by_frame)
    throw ConfigError("forward_sequence is undefined for frame_by_frame models");
  if (frames.rank() != 4) throw ShapeError("forward_sequence: need [T,C,H,W]");
  if (frames.dim(0) != m.cfg.t)
    throw ConfigError("model expects T=" + std::to_string(m.cfg.t) + " frames, got " +
                      std::to_string(frames.dim(0)));
  check_spatial(m.cfg, frames);

  const std::int64_t t = m.cfg.t;
  std::vector<Tensor<S>> skips_t;  // per level, step-T features [1,C,H,W]
  Tensor<S> seq = frames;          // time folded into the batch axis for spatial blocks
  for (int l = 0; l < m.cfg.depth; ++l) {
    Tensor<S> f = m.enc[l].features(seq, training);
    if (trace) trace->emplace_back("enc" + std::to_string(l + 1) + ".features", f);
    Tensor<S> mixed = m.has_level_units() ? m.units[l].forward(f) : f;
    if (trace && m.has_level_units())
      trace->emplace_back("enc" + std::to_string(l + 1) + ".mixed", mixed);
    skips_t.push_back(narrow(mixed, 0, t - 1, 1));
    seq = maxpool2d(m.cfg.placement == Placement::encoder ? mixed : f);
  }
  Tensor<S> mixed_bn = m.units[m.bottleneck_unit_index()].forward(seq);
  Tensor<S> d = m.bottleneck.features(narrow(mixed_bn, 0, t - 1, 1), training);
  if (trace) trace->emplace_back("bottleneck.features", d);
  for (int i = 0; i < m.cfg.depth; ++i) {
    const int level = m.cfg.depth - 1 - i;
    d = m.dec[i].forward(d, skips_t[level], training);
  }
  Tensor<S> logits = m.classifier.forward(d);
  return reshape(logits, {logits.dim(1), logits.dim(2), logits.dim(3)});
}

struct ParamReportRow {
  std::string name;
  std::int64_t count = 0;
};

struct TemporalReportRow {
  std::string name;
  std::int64_t learnable = 0;         // registry view (weights + biases)
  std::int64_t implemented_weights = 0;
  std::int64_t implemented_biases = 0;
  std::int64_t paper_nominal = 0;
};

struct ParamReport {
  std::vector<ParamReportRow> spatial;
  std::vector<TemporalReportRow> temporal;
  std::int64_t spatial_total = 0, temporal_total = 0, total = 0;

  std::string to_table() const {
    std::ostringstream os;
    auto pad = [](const std::string& s, std::size_t w) {
      return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
    };
    os << pad("component", 24) << "learnable\n";
    for (const auto& r : spatial) os << pad(r.name, 24) << r.count << "\n";
    os << pad("spatial total", 24) << spatial_total << "\n";
    if (!temporal.empty()) {
      os << pad("component", 24) << pad("learnable", 12) << pad("weights", 12)
         << pad("biases", 10) << "nominal\n";
      for (const auto& r : temporal)
        os << pad(r.name, 24) << pad(std::to_string(r.learnable), 12)
           << pad(std::to_string(r.implemented_weights), 12)
           << pad(std::to_string(r.implemented_biases), 10) << r.paper_nominal << "\n";
      os << pad("temporal total", 24) << temporal_total << "\n";
    }
    os << pad("total", 24) << total << "\n";
    return os.str();
  }
};

template <class S>
ParamReport model_param_report(const SegModel<S>& m) {
  ParamReport rep;
  auto add_spatial = [&](const std::string& prefix) {
    ParamReportRow row{prefix, m.registry.param_count_prefix(prefix + ".")};
    rep.spatial.push_back(row);
    rep.spatial_total += row.count;
  };
  for (int l = 0; l < m.cfg.depth; ++l) add_spatial("enc" + std::to_string(l + 1));
  add_spatial("bottleneck");
  for (int i = 0; i < m.cfg.depth; ++i)
    add_spatial("dec" + std::to_string(m.cfg.depth - i));
  add_spatial("classifier");

  for (std::size_t u = 0; u < m.units.size(); ++u) {
    const auto& unit = m.units[u];
    std::string name = (m.cfg.placement == Placement::bottleneck ||
                        static_cast<int>(u) == m.cfg.depth)
                           ? "temporal.bottleneck"
                           : "temporal.l" + std::to_string(u + 1);
    TemporalReportRow row;
    row.name = name;
    row.learnable = m.registry.param_count_prefix(name + ".");
    auto pc = unit.param_count();
    row.implemented_weights = pc.implemented_weights;
    row.implemented_biases = pc.implemented_biases;
    row.paper_nominal = pc.paper_nominal;
    rep.temporal.push_back(row);
    rep.temporal_total += row.learnable;
  }
  rep.total = rep.spatial_total + rep.temporal_total;
  return rep;
}

}  // namespace stseg
