#include "stseg/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "stseg/io.hpp"

namespace stseg {

namespace fs = std::filesystem;

namespace {

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).fork(0x0e0cull + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::uint64_t augment_seed(std::uint64_t seed, std::int64_t epoch, std::size_t idx) {
  Rng rng = Rng(seed).fork(0xa06ull + static_cast<std::uint64_t>(epoch));
  return rng.fork(static_cast<std::uint64_t>(idx)).next_u64();
}

Tensor<float> repeat_last(const Tensor<float>& frames) {
  const std::int64_t t = frames.dim(0), rest = frames.numel() / t;
  std::vector<float> data(static_cast<std::size_t>(frames.numel()));
  auto v = frames.data();
  const float* last = v.data() + (t - 1) * rest;
  for (std::int64_t k = 0; k < t; ++k) std::copy_n(last, rest, data.data() + k * rest);
  return Tensor<float>::from_data(frames.shape(), std::move(data));
}

Tensor<float> model_logits(SegModel<float>& model, const SequenceSample& sample, bool training,
                           bool repeat_last_frame) {
  Tensor<float> frames =
      repeat_last_frame ? repeat_last(sample.frames) : sample.frames;
  if (model.cfg.placement == Placement::frame_by_frame) {
    const std::int64_t t = frames.dim(0);
    Tensor<float> last = narrow(frames, 0, t - 1, 1);
    return forward_single(model, last, training);
  }
  Tensor<float> logits = forward_sequence(model, frames, training);
  return reshape(logits, {1, logits.dim(0), logits.dim(1), logits.dim(2)});
}

void argmax_into(const Tensor<float>& logits4, std::vector<std::uint8_t>& out) {
  const std::int64_t c = logits4.dim(1), h = logits4.dim(2), w = logits4.dim(3);
  auto v = logits4.data();
  out.resize(static_cast<std::size_t>(h * w));
  for (std::int64_t p = 0; p < h * w; ++p) {
    int best = 0;
    float bv = v[p];
    for (std::int64_t ci = 1; ci < c; ++ci) {
      const float cv = v[ci * h * w + p];
      if (cv > bv) {
        bv = cv;
        best = static_cast<int>(ci);
      }
    }
    out[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(best);
  }
}

void atomic_write_checkpoint(const std::string& path,
                             const std::vector<std::pair<std::string, Tensor<float>>>& entries) {
  const std::string tmp = path + ".tmp";
  save_checkpoint(tmp, entries);
  fs::rename(tmp, path);
}

}  // namespace

EvalReport EvalReport::from_confusion(std::vector<std::int64_t> confusion, int num_classes,
                                      std::int64_t void_pixels) {
  EvalReport r;
  r.num_classes = num_classes;
  r.confusion = std::move(confusion);
  r.void_pixels = void_pixels;
  r.iou.assign(static_cast<std::size_t>(num_classes), 0.0);
  r.iou_valid.assign(static_cast<std::size_t>(num_classes), false);
  std::int64_t total = 0, correct = 0;
  double iou_sum = 0;
  int iou_n = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = r.cm(c, c), fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o != c) {
        fp += r.cm(o, c);
        fn += r.cm(c, o);
      }
      total += r.cm(c, o);
    }
    correct += tp;
    const std::int64_t denom = tp + fp + fn;
    if (denom > 0) {
      r.iou[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
      r.iou_valid[static_cast<std::size_t>(c)] = true;
      iou_sum += r.iou[static_cast<std::size_t>(c)];
      ++iou_n;
    }
  }
  r.miou = iou_n ? iou_sum / iou_n : 0.0;
  r.pixel_acc = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return r;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "class   IoU\n";
  for (int c = 0; c < num_classes; ++c) {
    os << std::setw(5) << c << "   ";
    if (iou_valid[static_cast<std::size_t>(c)])
      os << iou[static_cast<std::size_t>(c)];
    else
      os << "absent";
    os << "\n";
  }
  os << "mIoU        " << miou << "\n";
  os << "pixel acc   " << pixel_acc << "\n";
  os << "void pixels " << void_pixels << "\n";
  return os.str();
}

std::string EvalReport::to_kv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "num_classes=" << num_classes << "\n";
  os << "miou=" << miou << "\n";
  os << "pixel_acc=" << pixel_acc << "\n";
  os << "void_pixels=" << void_pixels << "\n";
  for (int c = 0; c < num_classes; ++c) {
    os << "iou_" << c << "=";
    if (iou_valid[static_cast<std::size_t>(c)])
      os << iou[static_cast<std::size_t>(c)];
    else
      os << "nan";
    os << "\n";
  }
  for (int g = 0; g < num_classes; ++g)
    for (int p = 0; p < num_classes; ++p)
      os << "confusion_" << g << "_" << p << "=" << cm(g, p) << "\n";
  for (const auto& [k, v] : meta) os << k << "=" << v << "\n";
  return os.str();
}

TrainResult train_model(SegModel<float>& model, const std::vector<SequenceSample>& data,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");

  auto params = model.registry.learnable();
  auto names = model.registry.learnable_names();
  AdamState<float> opt;

  std::int64_t start_epoch = 0, start_pos = 0;
  const std::string ckpt_path =
      cfg.out_dir.empty() ? "" : (fs::path(cfg.out_dir) / "ckpt.stck").string();
  if (!ckpt_path.empty() && fs::exists(ckpt_path)) {
    ResumeInfo info = load_train_checkpoint(ckpt_path, model, &opt);
    if (!info.has_optimizer) opt.init_like(params);
    start_epoch = info.epoch;
    start_pos = info.pos;
  } else {
    opt.init_like(params);
  }

  std::ofstream log_file;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    log_file.open(fs::path(cfg.out_dir) / "log.txt", std::ios::app);
    if (!log_file) throw IoError("cannot open training log in " + cfg.out_dir);
  }

  TrainResult res;
  res.steps = opt.step;
  std::int64_t accum = 0;

  for (std::int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(cfg.seed, epoch, data.size());
    for (std::size_t pos = (epoch == start_epoch ? static_cast<std::size_t>(start_pos) : 0);
         pos < order.size(); ++pos) {
      const std::size_t idx = order[pos];
      const SequenceSample* sample = &data[idx];
      SequenceSample augmented;
      if (cfg.augment) {
        augmented = augment_sequence(data[idx], cfg.aug, augment_seed(cfg.seed, epoch, idx));
        sample = &augmented;
      }

      Tensor<float> logits = model_logits(model, *sample, true, cfg.repeat_last_frame);
      Tensor<float> loss = softmax_cross_entropy_ignore(logits, sample->label);
      const double loss_v = static_cast<double>(loss.item());
      if (!std::isfinite(loss_v))
        throw NumericError("non-finite loss at step " + std::to_string(opt.step + 1) +
                           "; last-known-good checkpoint retained");
      backward(loss);
      ++accum;
      if (accum < cfg.grad_accum) continue;
      accum = 0;

      const double gnorm = global_grad_norm(params);
      const float factor = global_grad_norm_clip(params, static_cast<float>(cfg.clip_norm));
      adam_step(params, opt, cfg, &names);

      TrainLogEntry e;
      e.step = opt.step;
      e.loss = loss_v;
      e.gnorm = gnorm;
      e.clip = factor;
      res.log.push_back(e);
      if (log_file) {
        log_file << "step=" << e.step << " loss=" << std::setprecision(10) << e.loss
                 << " gnorm=" << e.gnorm << " clip=" << e.clip << "\n";
      }

      if (!ckpt_path.empty() && cfg.checkpoint_every > 0 &&
          opt.step % cfg.checkpoint_every == 0) {
        save_train_checkpoint(ckpt_path, model, &opt, epoch,
                              static_cast<std::int64_t>(pos) + 1);
      }
    }
  }
  res.steps = opt.step;
  if (!ckpt_path.empty())
    save_train_checkpoint(ckpt_path, model, &opt, cfg.epochs, 0);
  return res;
}

EvalReport evaluate_model(SegModel<float>& model, const std::vector<SequenceSample>& data,
                          bool repeat_last_frame) {
  NoGradGuard ng;
  const int c = model.cfg.num_classes;
  std::vector<std::int64_t> confusion(static_cast<std::size_t>(c) * c, 0);
  std::int64_t void_pixels = 0;
  std::vector<std::uint8_t> pred;
  for (const auto& sample : data) {
    Tensor<float> logits = model_logits(model, sample, false, repeat_last_frame);
    argmax_into(logits, pred);
    const auto& lab = sample.label;
    for (std::int64_t p = 0; p < lab.h * lab.w; ++p) {
      const std::uint8_t g = lab.v[static_cast<std::size_t>(p)];
      if (g == kVoidLabel) {
        ++void_pixels;
        continue;
      }
      confusion[static_cast<std::size_t>(g) * c + pred[static_cast<std::size_t>(p)]]++;
    }
  }
  return EvalReport::from_confusion(std::move(confusion), c, void_pixels);
}

double training_pixel_accuracy(SegModel<float>& model, const std::vector<SequenceSample>& data,
                               bool repeat_last_frame) {
  return evaluate_model(model, data, repeat_last_frame).pixel_acc;
}

std::vector<LabelMap> sliding_window_predict(SegModel<float>& model,
                                             const std::vector<Tensor<float>>& video, int t,
                                             int stride) {
  if (video.empty()) return {};
  NoGradGuard ng;
  const std::int64_t h = video[0].dim(1), w = video[0].dim(2);
  std::vector<LabelMap> out;
  out.reserve(video.size());
  std::vector<std::uint8_t> pred;
  for (std::int64_t frame = 0; frame < static_cast<std::int64_t>(video.size()); ++frame) {
    Tensor<float> logits;
    if (model.cfg.placement == Placement::frame_by_frame) {
      logits = forward_single(model, reshape(video[static_cast<std::size_t>(frame)], {1, 3, h, w}),
                              false);
    } else {
      std::vector<float> window(static_cast<std::size_t>(t) * 3 * h * w);
      for (int k = 0; k < t; ++k) {
        std::int64_t src = frame - static_cast<std::int64_t>(t - 1 - k) * stride;
        if (src < 0) src = 0;  // repeat the earliest frame to fill the window
        auto v = video[static_cast<std::size_t>(src)].data();
        std::copy(v.begin(), v.end(), window.begin() + static_cast<std::size_t>(k) * 3 * h * w);
      }
      Tensor<float> frames = Tensor<float>::from_data({t, 3, h, w}, std::move(window));
      Tensor<float> l3 = forward_sequence(model, frames, false);
      logits = reshape(l3, {1, l3.dim(0), l3.dim(1), l3.dim(2)});
    }
    argmax_into(logits, pred);
    LabelMap lm(1, h, w);
    std::copy(pred.begin(), pred.end(), lm.v.begin());
    out.push_back(std::move(lm));
  }
  return out;
}

void save_train_checkpoint(const std::string& path, const SegModel<float>& model,
                           const AdamState<float>* opt, std::int64_t epoch, std::int64_t pos) {
  std::vector<std::pair<std::string, Tensor<float>>> entries;
  for (const auto& e : model.registry.entries) entries.emplace_back(e.name, e.tensor);
  if (opt) {
    std::size_t pi = 0;
    for (const auto& e : model.registry.entries) {
      if (!e.learnable) continue;
      entries.emplace_back("opt.m." + e.name,
                           Tensor<float>::from_data(e.tensor.shape(), opt->m[pi]));
      entries.emplace_back("opt.v." + e.name,
                           Tensor<float>::from_data(e.tensor.shape(), opt->v[pi]));
      ++pi;
    }
    entries.emplace_back("opt.step", Tensor<float>::scalar(static_cast<float>(opt->step)));
  }
  entries.emplace_back("trainer.epoch", Tensor<float>::scalar(static_cast<float>(epoch)));
  entries.emplace_back("trainer.pos", Tensor<float>::scalar(static_cast<float>(pos)));
  atomic_write_checkpoint(path, entries);
}

ResumeInfo load_train_checkpoint(const std::string& path, SegModel<float>& model,
                                 AdamState<float>* opt) {
  auto entries = load_checkpoint<float>(path);
  std::map<std::string, Tensor<float>> by_name;
  for (auto& [name, t] : entries) by_name.emplace(name, t);

  for (auto& e : model.registry.entries) {
    auto it = by_name.find(e.name);
    if (it == by_name.end())
      throw FormatError("checkpoint " + path + " is missing tensor '" + e.name + "'");
    if (it->second.shape() != e.tensor.shape())
      throw FormatError("checkpoint tensor '" + e.name + "' has shape " +
                        shape_str(it->second.shape()) + ", model expects " +
                        shape_str(e.tensor.shape()));
    auto src = it->second.data();
    auto dst = e.tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
    e.tensor.zero_grad();
  }

  // anything the model cannot account for means the config does not match
  {
    std::set<std::string> allowed;
    for (const auto& e : model.registry.entries) {
      allowed.insert(e.name);
      if (e.learnable) {
        allowed.insert("opt.m." + e.name);
        allowed.insert("opt.v." + e.name);
      }
    }
    allowed.insert("opt.step");
    allowed.insert("trainer.epoch");
    allowed.insert("trainer.pos");
    for (const auto& [name, t] : by_name) {
      (void)t;
      if (!allowed.count(name))
        throw FormatError("checkpoint " + path + " contains tensor '" + name +
                          "' unknown to this model configuration");
    }
  }

  ResumeInfo info;
  if (opt && by_name.count("opt.step")) {
    opt->m.clear();
    opt->v.clear();
    for (const auto& e : model.registry.entries) {
      if (!e.learnable) continue;
      auto mit = by_name.find("opt.m." + e.name);
      auto vit = by_name.find("opt.v." + e.name);
      if (mit == by_name.end() || vit == by_name.end())
        throw FormatError("checkpoint " + path + " has incomplete optimizer state for '" +
                          e.name + "'");
      auto ms = mit->second.data();
      auto vs = vit->second.data();
      opt->m.emplace_back(ms.begin(), ms.end());
      opt->v.emplace_back(vs.begin(), vs.end());
    }
    opt->step = static_cast<std::int64_t>(by_name.at("opt.step").item());
    info.has_optimizer = true;
  }
  if (by_name.count("trainer.epoch"))
    info.epoch = static_cast<std::int64_t>(by_name.at("trainer.epoch").item());
  if (by_name.count("trainer.pos"))
    info.pos = static_cast<std::int64_t>(by_name.at("trainer.pos").item());
  return info;
}

}  // namespace stseg
