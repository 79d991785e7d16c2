#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace lrvc {

/// Which side of the codec a layer belongs to. Decoder-side layers are the
/// ones a receiver must run; encoder-side layers only ever run while encoding.
enum class Side { kEncoder, kDecoder };

inline const char* side_name(Side s) { return s == Side::kEncoder ? "encoder" : "decoder"; }

/// Collects per-layer MACs, executed layer names and activation resolutions
/// while installed with ScopedInstrument.
class Instrument {
 public:
  struct Activation {
    int channels, height, width;
    std::string stage;
  };

  void on_layer(std::string_view name, Side side, int64_t macs) {
    macs_[side == Side::kEncoder ? 0 : 1] += macs;
    executed_.emplace(name);
  }
  void on_activation(int c, int h, int w, const std::string& stage) {
    if (h * static_cast<int64_t>(w) > max_pixels_) max_pixels_ = int64_t(h) * w;
    activations_.push_back({c, h, w, stage});
  }

  int64_t macs(Side s) const { return macs_[s == Side::kEncoder ? 0 : 1]; }
  int64_t total_macs() const { return macs_[0] + macs_[1]; }
  const std::set<std::string>& executed() const { return executed_; }
  const std::vector<Activation>& activations() const { return activations_; }

  /// Largest activation area (h * w) among activations not produced inside
  /// the named stage.
  int64_t max_pixels_excluding(std::string_view stage) const {
    int64_t best = 0;
    for (const auto& a : activations_)
      if (a.stage != stage) best = std::max<int64_t>(best, int64_t(a.height) * a.width);
    return best;
  }

 private:
  int64_t macs_[2] = {0, 0};
  int64_t max_pixels_ = 0;
  std::set<std::string> executed_;
  std::vector<Activation> activations_;
};

namespace detail {
inline thread_local Instrument* g_instrument = nullptr;
inline thread_local std::vector<std::string> g_stage_stack;
inline thread_local bool g_dry_run = false;
inline const std::string kNoStage;
}  // namespace detail

inline Instrument* current_instrument() { return detail::g_instrument; }

inline const std::string& current_stage() {
  return detail::g_stage_stack.empty() ? detail::kNoStage : detail::g_stage_stack.back();
}

/// When true, MAC-heavy kernels (convolutions) skip their arithmetic and
/// produce zeros. Used for analytic MACs accounting at large resolutions.
inline bool dry_run() { return detail::g_dry_run; }

class ScopedInstrument {
 public:
  explicit ScopedInstrument(Instrument& ins) : prev_(detail::g_instrument) { detail::g_instrument = &ins; }
  ~ScopedInstrument() { detail::g_instrument = prev_; }
  ScopedInstrument(const ScopedInstrument&) = delete;
  ScopedInstrument& operator=(const ScopedInstrument&) = delete;

 private:
  Instrument* prev_;
};

class ScopedStage {
 public:
  explicit ScopedStage(std::string name) { detail::g_stage_stack.push_back(std::move(name)); }
  ~ScopedStage() { detail::g_stage_stack.pop_back(); }
  ScopedStage(const ScopedStage&) = delete;
  ScopedStage& operator=(const ScopedStage&) = delete;
};

class ScopedDryRun {
 public:
  ScopedDryRun() : prev_(detail::g_dry_run) { detail::g_dry_run = true; }
  ~ScopedDryRun() { detail::g_dry_run = prev_; }
  ScopedDryRun(const ScopedDryRun&) = delete;
  ScopedDryRun& operator=(const ScopedDryRun&) = delete;

 private:
  bool prev_;
};

inline void note_activation(int c, int h, int w) {
  if (auto* ins = detail::g_instrument) ins->on_activation(c, h, w, current_stage());
}

// Stage label for the one decoder stage allowed to run above 4x downsampling.
inline constexpr std::string_view kFinalReconstructionStage = "final_reconstruction";

/// Wall-clock accumulation per named phase.
class PhaseClock {
 public:
  void add(const std::string& phase, double ms) { ms_[phase] += ms; }
  const std::map<std::string, double>& totals() const { return ms_; }
  void clear() { ms_.clear(); }

 private:
  std::map<std::string, double> ms_;
};

namespace detail {
inline thread_local PhaseClock* g_phase_clock = nullptr;
inline thread_local std::vector<double>* g_phase_children = nullptr;
}  // namespace detail

class ScopedPhaseClock {
 public:
  explicit ScopedPhaseClock(PhaseClock& c) : prev_(detail::g_phase_clock) { detail::g_phase_clock = &c; }
  ~ScopedPhaseClock() { detail::g_phase_clock = prev_; }
  ScopedPhaseClock(const ScopedPhaseClock&) = delete;
  ScopedPhaseClock& operator=(const ScopedPhaseClock&) = delete;

 private:
  PhaseClock* prev_;
};

/// Times the enclosing scope into the installed PhaseClock, if any. Time spent
/// in nested phases is charged to them only, so phase totals never overlap.
class ScopedPhase {
 public:
  explicit ScopedPhase(const char* name) : name_(name) {
    if (!detail::g_phase_clock) return;
    parent_children_ = detail::g_phase_children;
    detail::g_phase_children = &children_;
    start_ = std::chrono::steady_clock::now();
  }
  ~ScopedPhase() {
    auto* c = detail::g_phase_clock;
    if (!c) return;
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    double nested = 0;
    for (double v : children_) nested += v;
    c->add(name_, ms - nested);
    detail::g_phase_children = parent_children_;
    if (parent_children_) parent_children_->push_back(ms);
  }
  ScopedPhase(const ScopedPhase&) = delete;
  ScopedPhase& operator=(const ScopedPhase&) = delete;

 private:
  const char* name_;
  std::chrono::steady_clock::time_point start_;
  std::vector<double> children_;
  std::vector<double>* parent_children_ = nullptr;
};

}  // namespace lrvc
