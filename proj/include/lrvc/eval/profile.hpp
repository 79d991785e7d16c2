#pragma once

// Latency-phase profiling of encode + decode.

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "lrvc/eval/metrics.hpp"
#include "lrvc/model/codec.hpp"

namespace lrvc {

inline const std::vector<std::string> kLatencyPhases = {"flow_estimate", "motion_enc", "motion_dec_align",
                                                        "ctx_fusion",    "ctx_enc",    "ctx_dec",
                                                        "entropy_enc",   "entropy_dec", "i_enc",
                                                        "i_dec"};

struct LatencyReport {
  std::string device = "cpu";
  int height = 0, width = 0;
  int frames = 0;
  int runs = 0, warmup = 0;
  double total_ms = 0;                   // median end-to-end time per run
  std::map<std::string, double> phases;  // median per phase
  std::map<std::string, std::string> environment;

  double phase_sum() const {
    double s = 0;
    for (const auto& [k, v] : phases) s += v;
    return s;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "device=" << device << "\nheight=" << height << "\nwidth=" << width << "\nframes=" << frames
       << "\nruns=" << runs << "\nwarmup=" << warmup << "\ntotal_ms=" << format_double(total_ms) << "\n";
    for (const auto& [k, v] : phases) os << "phase." << k << "=" << format_double(v) << "\n";
    for (const auto& [k, v] : environment) os << "env." << k << "=" << v << "\n";
    return os.str();
  }

  static LatencyReport from_text(const std::string& text) {
    LatencyReport r;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
      if (k == "device") r.device = v;
      else if (k == "height") r.height = std::stoi(v);
      else if (k == "width") r.width = std::stoi(v);
      else if (k == "frames") r.frames = std::stoi(v);
      else if (k == "runs") r.runs = std::stoi(v);
      else if (k == "warmup") r.warmup = std::stoi(v);
      else if (k == "total_ms") r.total_ms = std::stod(v);
      else if (k.rfind("phase.", 0) == 0) r.phases[k.substr(6)] = std::stod(v);
      else if (k.rfind("env.", 0) == 0) r.environment[k.substr(4)] = v;
      else throw std::runtime_error("latency report: unknown key " + k);
    }
    return r;
  }

  bool operator==(const LatencyReport&) const = default;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Encodes and decodes `frames` (padded, first one intra) `warmup + runs`
/// times and reports per-phase medians over the timed runs.
template <typename T>
LatencyReport profile_latency(const VideoCodec<T>& codec, const std::vector<Tensor<T>>& frames,
                              const std::string& device, int runs = 10, int warmup = 3,
                              CoderBackend& backend = reference_backend()) {
  if (runs < 10) throw std::invalid_argument("profile: need at least 10 timed runs");
  if (warmup < 3) throw std::invalid_argument("profile: need at least 3 warm-up runs");
  if (frames.empty()) throw std::invalid_argument("profile: no frames");
  const int h = frames[0].height(), w = frames[0].width();
  const int period = static_cast<int>(frames.size());
  std::map<std::string, std::vector<double>> per_phase;
  std::vector<double> totals;
  for (int r = 0; r < warmup + runs; ++r) {
    PhaseClock clk;
    const auto t0 = std::chrono::steady_clock::now();
    {
      ScopedPhaseClock sc(clk);
      DecodeState<T> enc, dec;
      for (int t = 0; t < period; ++t) {
        const FrameType ft = frame_type_at(t, period);
        FramePayload f = codec.encode_frame(frames[t], ft, enc, backend);
        codec.decode_frame(f, dec, h, w, backend);
      }
    }
    const double total = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (r < warmup) continue;
    totals.push_back(total);
    for (const auto& p : kLatencyPhases) {
      auto it = clk.totals().find(p);
      per_phase[p].push_back(it == clk.totals().end() ? 0.0 : it->second);
    }
  }
  LatencyReport rep;
  rep.device = device;
  rep.height = h;
  rep.width = w;
  rep.frames = period;
  rep.runs = runs;
  rep.warmup = warmup;
  rep.total_ms = median_of(totals);
  for (auto& [k, v] : per_phase) rep.phases[k] = median_of(v);
  rep.environment["hardware_threads"] = std::to_string(std::thread::hardware_concurrency());
  rep.environment["exclusive"] = "1";
  rep.environment["scalar"] = sizeof(T) == 4 ? "float32" : "float64";
#if defined(__VERSION__)
  rep.environment["compiler"] = std::string(__VERSION__);
#endif
  return rep;
}

}  // namespace lrvc
