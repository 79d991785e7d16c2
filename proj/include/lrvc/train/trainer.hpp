#pragma once

// Rate-distortion training: rollouts in training-mode quantization, the
// weighted multi-frame RD loss, staged optimization (I alone, P alone with a
// frozen I model at growing frame counts, joint I+P, MS-SSIM fine-tune) and a
// divergence detector.

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include "lrvc/core/optim.hpp"
#include "lrvc/eval/metrics.hpp"
#include "lrvc/model/codec.hpp"

namespace lrvc {

/// Non-finite value in a loss term.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged; the model has been restored to the last good state.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& msg, std::string checkpoint)
      : std::runtime_error(msg), last_good_checkpoint(std::move(checkpoint)) {}
  std::string last_good_checkpoint;
};

enum class Distortion { kMSE, kMSSSIM };
enum class Stage { kIFrame, kPFrame, kJoint, kMsssim };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kIFrame: return "i_only";
    case Stage::kPFrame: return "p_only";
    case Stage::kJoint: return "joint";
    case Stage::kMsssim: return "msssim";
  }
  return "?";
}

struct TrainConfig {
  int lambda_index = 0;
  std::vector<int> frames_schedule = {2, 3, 4, 5, 6, 7};
  // w_0 for the I-frame, then the periodic pattern for t >= 1.
  double w0 = 1.0;
  std::vector<double> weight_pattern = {0.5, 1.2, 0.5, 0.9};
  double lr = 1e-4;
  int lr_decay_every = 0;  // steps per decay within a stage; 0 disables
  double lr_decay = 0.5;
  // Step decay at the fine-tuning stages: joint and MS-SSIM run at lr times this.
  double finetune_lr_scale = 0.1;
  double clip_norm = 1.0;
  Distortion distortion = Distortion::kMSE;
  bool joint_iframe = true;
  uint64_t seed = 0;
  int steps_i = 1000;
  int steps_per_p_stage = 1000;
  int steps_joint = 1000;
  int steps_msssim = 0;
  int crop = 256;

  double lambda() const { return kLambdas.at(lambda_index); }
  double stage_lr(Stage s) const {
    return s == Stage::kJoint || s == Stage::kMsssim ? lr * finetune_lr_scale : lr;
  }
  double weight(int t) const {
    return t == 0 ? w0 : weight_pattern[static_cast<size_t>(t - 1) % weight_pattern.size()];
  }

  void validate() const {
    if (lambda_index < 0 || lambda_index > 3) throw std::invalid_argument("train: lambda_index must be 0..3");
    if (weight_pattern.empty()) throw std::invalid_argument("train: empty weight pattern");
    for (int f : frames_schedule)
      if (f < 2) throw std::invalid_argument("train: P stages need at least 2 frames");
    if (crop % 64) throw std::invalid_argument("train: crop must be a multiple of 64");
    if (!(finetune_lr_scale > 0)) throw std::invalid_argument("train: finetune_lr_scale must be positive");
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    auto list = [&](auto& v) {
      std::string s;
      for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
      return s;
    };
    os << "lambda_index=" << lambda_index << "\nframes_schedule=" << list(frames_schedule) << "\nw0=" << w0
       << "\nweight_pattern=" << list(weight_pattern) << "\nlr=" << lr << "\nlr_decay_every=" << lr_decay_every
       << "\nlr_decay=" << lr_decay << "\nfinetune_lr_scale=" << finetune_lr_scale << "\nclip_norm=" << clip_norm
       << "\ndistortion=" << (distortion == Distortion::kMSE ? "mse" : "msssim") << "\njoint_iframe=" << joint_iframe
       << "\nseed=" << seed << "\nsteps_i=" << steps_i << "\nsteps_per_p_stage=" << steps_per_p_stage
       << "\nsteps_joint=" << steps_joint << "\nsteps_msssim=" << steps_msssim << "\ncrop=" << crop << "\n";
    return os.str();
  }

  /// Applies one key; returns false for unknown keys.
  bool set(const std::string& k, const std::string& v) {
    auto list = [&](auto& out) {
      out.clear();
      std::stringstream ss(v);
      for (std::string tok; std::getline(ss, tok, ',');)
        out.push_back(static_cast<typename std::decay_t<decltype(out)>::value_type>(std::stod(tok)));
    };
    if (k == "lambda_index") lambda_index = std::stoi(v);
    else if (k == "frames_schedule") list(frames_schedule);
    else if (k == "w0") w0 = std::stod(v);
    else if (k == "weight_pattern") list(weight_pattern);
    else if (k == "lr") lr = std::stod(v);
    else if (k == "lr_decay_every") lr_decay_every = std::stoi(v);
    else if (k == "lr_decay") lr_decay = std::stod(v);
    else if (k == "finetune_lr_scale") finetune_lr_scale = std::stod(v);
    else if (k == "clip_norm") clip_norm = std::stod(v);
    else if (k == "distortion") distortion = v == "msssim" ? Distortion::kMSSSIM : Distortion::kMSE;
    else if (k == "joint_iframe") joint_iframe = std::stoi(v) != 0;
    else if (k == "seed") seed = std::stoull(v);
    else if (k == "steps_i") steps_i = std::stoi(v);
    else if (k == "steps_per_p_stage") steps_per_p_stage = std::stoi(v);
    else if (k == "steps_joint") steps_joint = std::stoi(v);
    else if (k == "steps_msssim") steps_msssim = std::stoi(v);
    else if (k == "crop") crop = std::stoi(v);
    else return false;
    return true;
  }
};

/// One frame's contribution to the loss.
template <typename T>
struct FrameTerm {
  Var<T> distortion;  // MSE or 1 - MS-SSIM
  Var<T> rate;        // estimated bits per pixel
  double weight = 1;
};

/// L = sum_t w_t (lambda D_t + R_t) / sum_t w_t. Non-finite terms throw.
template <typename T>
Var<T> rd_loss(const std::vector<FrameTerm<T>>& terms, double lambda) {
  if (terms.empty()) throw std::invalid_argument("rd_loss: no frames");
  double wsum = 0;
  Var<T> acc;
  for (size_t t = 0; t < terms.size(); ++t) {
    const auto& f = terms[t];
    const double d = f.distortion.value()[0], r = f.rate.value()[0];
    if (!std::isfinite(d) || !std::isfinite(r))
      throw NumericalError("rd_loss: non-finite term at frame " + std::to_string(t) + " (D=" + std::to_string(d) +
                           ", R=" + std::to_string(r) + ")");
    Var<T> term = mul_scalar(add(mul_scalar(f.distortion, static_cast<T>(lambda)), f.rate), static_cast<T>(f.weight));
    acc = acc.defined() ? add(acc, term) : term;
    wsum += f.weight;
  }
  return mul_scalar(acc, static_cast<T>(1.0 / wsum));
}

struct RolloutOptions {
  int frames = 2;
  bool include_iframe = true;  // add the I-frame's term to the loss
  bool iframe_grad = true;     // record the I-frame graph
  Distortion distortion = Distortion::kMSE;
};

template <typename T>
struct Rollout {
  std::vector<FrameTerm<T>> terms;
  std::vector<Var<T>> recon;
  std::vector<double> bpp, psnr;
};

template <typename T>
Var<T> frame_distortion(const Var<T>& x_hat, const Var<T>& x, Distortion d) {
  if (d == Distortion::kMSE) return mse(x_hat, x);
  return add_scalar(mul_scalar(ms_ssim(x_hat, x), T(-1)), T(1));
}

/// Runs I then P frames through the codec in the given quantization mode.
/// The state rolls forward exactly as at inference.
template <typename T>
Rollout<T> rollout(const VideoCodec<T>& codec, const std::vector<Tensor<T>>& clip, const QuantOptions& q,
                   const RolloutOptions& o, const TrainConfig& tc) {
  if (static_cast<int>(clip.size()) < o.frames)
    throw std::invalid_argument("rollout: clip has " + std::to_string(clip.size()) + " frames, need " +
                                std::to_string(o.frames));
  const int h = clip[0].height(), w = clip[0].width();
  const double pixels = double(h) * w;
  Rollout<T> r;
  DecodeState<T> st;
  auto add_term = [&](int t, const Var<T>& x_hat, const std::vector<const CodedLatent<T>*>& latents) {
    Var<T> bits;
    for (const auto* l : latents) bits = bits.defined() ? add(bits, l->bits) : l->bits;
    FrameTerm<T> f{frame_distortion(x_hat, Var<T>(clip[t]), o.distortion),
                   mul_scalar(bits, static_cast<T>(1.0 / pixels)), tc.weight(t)};
    r.bpp.push_back(f.rate.value()[0]);
    r.psnr.push_back(psnr(x_hat.value(), clip[t]));
    r.recon.push_back(x_hat);
    return f;
  };
  {
    std::optional<NoGradGuard> ng;
    if (!o.iframe_grad) ng.emplace();
    IFrameResult<T> ir = codec.iframe().forward(Var<T>(clip[0]), q);
    FrameTerm<T> f = add_term(0, ir.x_hat, {&ir.z, &ir.y});
    if (o.include_iframe) r.terms.push_back(f);
    VideoCodec<T>::start_gop(st, ir);
  }
  for (int t = 1; t < o.frames; ++t) {
    PFrameResult<T> pr = codec.pframe().run(Var<T>(clip[t]), st, q, h, w);
    r.terms.push_back(add_term(t, pr.x_hat, {&pr.z_mv, &pr.mv, &pr.z, &pr.y}));
  }
  return r;
}

/// Flags a run whose loss stays above factor x the running median for
/// `patience` consecutive steps. Non-finite losses count as above.
class DivergenceDetector {
 public:
  explicit DivergenceDetector(double factor = 10.0, int patience = 100, size_t window = 1000)
      : factor_(factor), patience_(patience), window_(window) {}

  /// Returns true once divergence is detected.
  bool update(double loss) {
    bool high = !std::isfinite(loss);
    if (!high && history_.size() >= 10) high = loss > factor_ * median();
    streak_ = high ? streak_ + 1 : 0;
    if (std::isfinite(loss) && !high) {
      history_.push_back(loss);
      if (history_.size() > window_) history_.pop_front();
    }
    return streak_ >= patience_;
  }

  double median() const {
    if (history_.empty()) return 0;
    std::vector<double> v(history_.begin(), history_.end());
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  }
  int streak() const { return streak_; }

 private:
  double factor_;
  int patience_;
  size_t window_;
  int streak_ = 0;
  std::deque<double> history_;
};

struct StepRecord {
  long step = 0;
  std::string stage;
  int frames = 0;
  double loss = 0, bpp = 0, psnr = 0;

  std::string to_line() const {
    std::ostringstream os;
    os.precision(9);
    os << "step=" << step << " stage=" << stage << " frames=" << frames << " loss=" << loss << " bpp=" << bpp
       << " psnr=" << psnr;
    return os.str();
  }
};

/// Provides training clips (at least `frames` frames of equal size).
template <typename T>
using ClipSource = std::function<std::vector<Tensor<T>>(int frames, std::mt19937_64& rng)>;

/// Random crops of `crop` x `crop` from a set of clips, same window across
/// frames.
template <typename T>
ClipSource<T> random_crop_source(std::vector<std::vector<Tensor<T>>> clips, int crop) {
  return [clips = std::move(clips), crop](int frames, std::mt19937_64& rng) {
    std::uniform_int_distribution<size_t> pick(0, clips.size() - 1);
    const auto& c = clips[pick(rng)];
    if (static_cast<int>(c.size()) < frames) throw std::invalid_argument("clip source: clip too short");
    std::uniform_int_distribution<size_t> start_d(0, c.size() - frames);
    const size_t s = start_d(rng);
    const int h = c[0].height(), w = c[0].width();
    if (h < crop || w < crop) throw std::invalid_argument("clip source: clip smaller than crop");
    std::uniform_int_distribution<int> yd(0, h - crop), xd(0, w - crop);
    const int y0 = yd(rng), x0 = xd(rng);
    std::vector<Tensor<T>> out;
    for (int t = 0; t < frames; ++t) {
      Tensor<T> f(3, crop, crop);
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < crop; ++y)
          for (int x = 0; x < crop; ++x) f.at(ch, y, x) = c[s + t].at(ch, y0 + y, x0 + x);
      out.push_back(std::move(f));
    }
    return out;
  };
}

template <typename T>
class Trainer {
 public:
  Trainer(VideoCodec<T>& codec, TrainConfig cfg, std::ostream* log = nullptr)
      : codec_(codec), cfg_(std::move(cfg)), log_(log), rng_(cfg_.seed) {
    cfg_.validate();
  }

  const TrainConfig& config() const { return cfg_; }
  std::mt19937_64& rng() { return rng_; }
  long steps_taken() const { return step_; }

  /// Marks the parameters trained in a stage and builds its optimizer.
  void begin_stage(Stage s) {
    stage_ = s;
    stage_step_ = 0;
    std::vector<Var<T>> vars;
    for (auto& p : codec_.store().params()) {
      const bool on = trains(s, p.group);
      p.var.set_requires_grad(on);
      p.var.zero_grad();
      if (on) vars.push_back(p.var);
    }
    typename Adam<T>::Options o;
    o.lr = cfg_.stage_lr(s);
    opt_ = std::make_unique<Adam<T>>(std::move(vars), o);
    detector_ = DivergenceDetector();
    snapshot_ = codec_.clone();
  }

  static bool trains(Stage s, const std::string& group) {
    switch (s) {
      case Stage::kIFrame: return group.rfind("i.", 0) == 0;
      case Stage::kPFrame: return group.rfind("p.", 0) == 0;
      default: return true;
    }
  }

  RolloutOptions rollout_options(Stage s, int frames) const {
    RolloutOptions o;
    o.frames = s == Stage::kIFrame ? 1 : frames;
    // The P-only stage optimizes P frames against a frozen I model, so the
    // constant I-frame term is left out of its loss.
    o.include_iframe = s != Stage::kPFrame;
    o.iframe_grad = s != Stage::kPFrame;
    o.distortion = s == Stage::kMsssim ? Distortion::kMSSSIM : cfg_.distortion;
    return o;
  }

  QuantOptions train_quant() {
    QuantOptions q;
    q.mode = Quant::kNoise;
    q.rng = &rng_;
    q.tau = codec_.config().skip_tau;
    q.b_min = codec_.config().b_min;
    return q;
  }

  /// One optimization step on `clip`.
  StepRecord step(const std::vector<Tensor<T>>& clip, int frames) {
    if (!opt_) throw std::logic_error("trainer: begin_stage first");
    if (cfg_.lr_decay_every > 0)
      opt_->set_lr(cfg_.stage_lr(stage_) * std::pow(cfg_.lr_decay, double(stage_step_ / cfg_.lr_decay_every)));
    auto ro = rollout(codec_, clip, train_quant(), rollout_options(stage_, frames), cfg_);
    Var<T> loss = rd_loss(ro.terms, cfg_.lambda());
    opt_->zero_grad();
    backward(loss);
    opt_->clip_grad_norm(cfg_.clip_norm);
    opt_->step();
    StepRecord rec;
    rec.step = step_++;
    ++stage_step_;
    rec.stage = stage_name(stage_);
    rec.frames = frames;
    rec.loss = loss.value()[0];
    for (double b : ro.bpp) rec.bpp += b / ro.bpp.size();
    rec.psnr = mean_psnr(ro.psnr);
    if (log_) *log_ << rec.to_line() << "\n" << std::flush;
    if (detector_.update(rec.loss)) {
      codec_.copy_params_from(*snapshot_);
      throw DivergenceError("training diverged at step " + std::to_string(rec.step) + " in stage " + rec.stage,
                            last_checkpoint_);
    }
    return rec;
  }

  /// Runs `steps` steps of a stage, drawing clips from `source`.
  std::vector<StepRecord> run_stage(Stage s, int frames, int steps, const ClipSource<T>& source) {
    begin_stage(s);
    std::vector<StepRecord> recs;
    for (int i = 0; i < steps; ++i) recs.push_back(step(source(frames, rng_), frames));
    return recs;
  }

  /// Full plan: I alone, P alone per frame count, joint, optional MS-SSIM
  /// fine-tune. Writes a checkpoint after each stage into `dir` when given.
  std::vector<StepRecord> train(const ClipSource<T>& source, const std::string& dir = "") {
    std::vector<StepRecord> all;
    auto finish = [&](const std::string& tag) {
      if (dir.empty()) return;
      std::filesystem::create_directories(dir);
      last_checkpoint_ = dir + "/" + tag + ".ckpt";
      codec_.save(last_checkpoint_, false, cfg_.to_text() + "stage=" + tag + "\n");
    };
    auto run = [&](Stage s, int frames, int steps, const std::string& tag) {
      if (steps <= 0) return;
      auto r = run_stage(s, frames, steps, source);
      all.insert(all.end(), r.begin(), r.end());
      finish(tag);
    };
    run(Stage::kIFrame, 1, cfg_.steps_i, "i_only");
    for (int f : cfg_.frames_schedule) run(Stage::kPFrame, f, cfg_.steps_per_p_stage, "p_only_" + std::to_string(f));
    const int max_frames = *std::max_element(cfg_.frames_schedule.begin(), cfg_.frames_schedule.end());
    if (cfg_.joint_iframe) run(Stage::kJoint, max_frames, cfg_.steps_joint, "joint");
    run(Stage::kMsssim, max_frames, cfg_.steps_msssim, "msssim");
    return all;
  }

  void set_last_checkpoint(std::string p) { last_checkpoint_ = std::move(p); }

 private:
  VideoCodec<T>& codec_;
  TrainConfig cfg_;
  std::ostream* log_;
  std::mt19937_64 rng_;
  Stage stage_ = Stage::kIFrame;
  std::unique_ptr<Adam<T>> opt_;
  DivergenceDetector detector_;
  std::optional<VideoCodec<T>> snapshot_;
  std::string last_checkpoint_;
  long step_ = 0, stage_step_ = 0;
};

/// Average evaluation loss of a clip in training-mode quantization with a
/// fixed noise seed (comparable across models).
template <typename T>
double eval_loss(const VideoCodec<T>& codec, const std::vector<Tensor<T>>& clip, const TrainConfig& tc, int frames,
                 bool include_iframe, uint64_t seed = 1234, Rollout<T>* out = nullptr) {
  NoGradGuard ng;
  std::mt19937_64 rng(seed);
  QuantOptions q;
  q.mode = Quant::kNoise;
  q.rng = &rng;
  q.tau = codec.config().skip_tau;
  q.b_min = codec.config().b_min;
  RolloutOptions o;
  o.frames = frames;
  o.include_iframe = include_iframe;
  o.distortion = tc.distortion;
  auto r = rollout(codec, clip, q, o, tc);
  const double l = rd_loss(r.terms, tc.lambda()).value()[0];
  if (out) *out = std::move(r);
  return l;
}

}  // namespace lrvc
