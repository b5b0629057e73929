#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stseg/data.hpp"
#include "stseg/model.hpp"

namespace stseg {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-4;
  double clip_norm = 5.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int epochs = 10;
  int grad_accum = 1;  // sequences per optimizer step
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // optimizer steps; 0 = final checkpoint only
  bool augment = false;
  AugmentConfig aug;
  std::string out_dir;             // empty: no logs/checkpoints written
  bool repeat_last_frame = false;  // negative control: feed frame T at all steps

  void validate() const {
    if (lr <= 0) throw ConfigError("lr must be > 0");
    if (clip_norm <= 0) throw ConfigError("clip_norm must be > 0");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (grad_accum < 1) throw ConfigError("grad_accum must be >= 1");
  }
};

template <class S>
struct AdamState {
  std::vector<std::vector<S>> m, v;
  std::int64_t step = 0;

  void init_like(const std::vector<Tensor<S>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(static_cast<std::size_t>(p.numel()), S(0));
      v.emplace_back(static_cast<std::size_t>(p.numel()), S(0));
    }
    step = 0;
  }
};

// Bias-corrected Adam with classic L2 coupling: decay is folded into the
// gradient before the moment updates. Gradients are zeroed afterwards.
template <class S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& st, const TrainConfig& cfg,
               const std::vector<std::string>* names = nullptr) {
  if (st.m.size() != params.size()) throw ConfigError("adam state does not match parameters");
  const std::int64_t t = st.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto g = params[i].grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + cfg.weight_decay * static_cast<double>(w[j]);
      if (!std::isfinite(gj))
        throw NumericError("non-finite gradient in parameter '" +
                           (names ? (*names)[i] : std::to_string(i)) + "'");
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      w[j] = static_cast<S>(static_cast<double>(w[j]) -
                            cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
    params[i].zero_grad();
  }
  st.step = t;
}

struct TrainLogEntry {
  std::int64_t step = 0;
  double loss = 0, gnorm = 0, clip = 1;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::int64_t steps = 0;
};

struct EvalReport {
  int num_classes = 0;
  std::vector<std::int64_t> confusion;  // row = ground truth, col = prediction
  std::vector<double> iou;              // only meaningful where iou_valid
  std::vector<bool> iou_valid;
  double miou = 0, pixel_acc = 0;
  std::int64_t void_pixels = 0;
  std::map<std::string, std::string> meta;

  std::int64_t& cm(int gt, int pred) { return confusion[gt * num_classes + pred]; }
  std::int64_t cm(int gt, int pred) const { return confusion[gt * num_classes + pred]; }

  static EvalReport from_confusion(std::vector<std::int64_t> confusion, int num_classes,
                                   std::int64_t void_pixels);
  std::string to_table() const;
  std::string to_kv() const;
};

TrainResult train_model(SegModel<float>& model, const std::vector<SequenceSample>& data,
                        const TrainConfig& cfg);

EvalReport evaluate_model(SegModel<float>& model, const std::vector<SequenceSample>& data,
                          bool repeat_last_frame = false);

// Pixel accuracy over the (non-void) training pixels; eval mode.
double training_pixel_accuracy(SegModel<float>& model, const std::vector<SequenceSample>& data,
                               bool repeat_last_frame = false);

// One label map per video frame; the window for frame t is
// (t-(T-1)s, ..., t-s, t) with missing history filled by the earliest frame.
std::vector<LabelMap> sliding_window_predict(SegModel<float>& model,
                                             const std::vector<Tensor<float>>& video, int t,
                                             int stride);

struct ResumeInfo {
  std::int64_t epoch = 0, pos = 0;
  bool has_optimizer = false;
};

void save_train_checkpoint(const std::string& path, const SegModel<float>& model,
                           const AdamState<float>* opt, std::int64_t epoch, std::int64_t pos);

ResumeInfo load_train_checkpoint(const std::string& path, SegModel<float>& model,
                                 AdamState<float>* opt);

}  // namespace stseg
