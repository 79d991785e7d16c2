#pragma once

// Model hyper-parameters. The canonical key=value text of a config is what
// the stream header digest is computed over.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "lrvc/entropy/container.hpp"

namespace lrvc {

inline constexpr std::array<double, 4> kLambdas = {85, 170, 380, 840};

struct ModelConfig {
  // I-frame codec
  int i_enc_channels = 128;
  int i_enc_blocks = 1;
  int i_dec_channels = 96;
  int i_dec_blocks = 1;
  // Latents
  int latent_channels = 128;
  int hyper_channels = 64;
  int mv_channels = 64;
  int mv_hyper_channels = 32;
  // Reused features / contexts at 4x, 8x, 16x
  int ctx4_channels = 64;
  int ctx8_channels = 64;
  int ctx16_channels = 128;
  // Motion estimation and coding (encoder side)
  int flow_levels = 4;
  int flow_channels = 32;
  int motion_feature_channels = 32;
  int unet_channels = 32;
  int prior_channels = 32;
  int motion_enc_channels = 96;
  // Motion decoding and alignment
  int motion_dec_channels = 64;
  int deform_groups = 8;
  // Contextual codec
  int p_enc_channels = 128;
  int p_enc_blocks = 2;
  int p_dec_blocks = 1;
  int temporal_prior_channels = 64;
  int temporal_prior_blocks = 1;
  int entropy_channels = 64;
  // Ablation switches (1 = on)
  int use_temporal_prior = 1;
  int use_deformable = 1;
  // Entropy model
  double skip_tau = 0.99;
  double b_min = 0.01;
  int lambda_index = 0;

  double lambda() const { return kLambdas.at(lambda_index); }

  /// Small widths for fast desk-scale training; same structure.
  static ModelConfig reduced() {
    ModelConfig c;
    c.i_enc_channels = 32;
    c.i_dec_channels = 24;
    c.latent_channels = 32;
    c.hyper_channels = 16;
    c.mv_channels = 16;
    c.mv_hyper_channels = 8;
    c.ctx4_channels = 16;
    c.ctx8_channels = 16;
    c.ctx16_channels = 32;
    c.flow_channels = 16;
    c.motion_feature_channels = 8;
    c.unet_channels = 16;
    c.prior_channels = 8;
    c.motion_enc_channels = 24;
    c.motion_dec_channels = 16;
    c.p_enc_channels = 32;
    c.p_enc_blocks = 1;
    c.temporal_prior_channels = 16;
    c.entropy_channels = 24;
    return c;
  }

  template <typename F>
  void visit(F&& f) {
    f("i_enc_channels", i_enc_channels);
    f("i_enc_blocks", i_enc_blocks);
    f("i_dec_channels", i_dec_channels);
    f("i_dec_blocks", i_dec_blocks);
    f("latent_channels", latent_channels);
    f("hyper_channels", hyper_channels);
    f("mv_channels", mv_channels);
    f("mv_hyper_channels", mv_hyper_channels);
    f("ctx4_channels", ctx4_channels);
    f("ctx8_channels", ctx8_channels);
    f("ctx16_channels", ctx16_channels);
    f("flow_levels", flow_levels);
    f("flow_channels", flow_channels);
    f("motion_feature_channels", motion_feature_channels);
    f("unet_channels", unet_channels);
    f("prior_channels", prior_channels);
    f("motion_enc_channels", motion_enc_channels);
    f("motion_dec_channels", motion_dec_channels);
    f("deform_groups", deform_groups);
    f("p_enc_channels", p_enc_channels);
    f("p_enc_blocks", p_enc_blocks);
    f("p_dec_blocks", p_dec_blocks);
    f("temporal_prior_channels", temporal_prior_channels);
    f("temporal_prior_blocks", temporal_prior_blocks);
    f("entropy_channels", entropy_channels);
    f("use_temporal_prior", use_temporal_prior);
    f("use_deformable", use_deformable);
    f("skip_tau", skip_tau);
    f("b_min", b_min);
    f("lambda_index", lambda_index);
  }
  template <typename F>
  void visit(F&& f) const {
    ModelConfig copy = *this;
    copy.visit([&](const char* k, auto& v) { f(k, std::as_const(v)); });
  }

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const {
    visit([](const char* k, const auto& v) {
      const std::string key = k;
      if (key == "lambda_index" || key == "use_temporal_prior" || key == "use_deformable") return;
      if (!(v > 0))
        throw std::invalid_argument(std::string("config: ") + k + " must be positive");
    });
    if (lambda_index < 0 || lambda_index > 3) throw std::invalid_argument("config: lambda_index must be in 0..3");
    if (!(skip_tau > 0.5 && skip_tau <= 1.0)) throw std::invalid_argument("config: skip_tau must be in (0.5, 1]");
    if (ctx4_channels % deform_groups || ctx8_channels % deform_groups || ctx16_channels % deform_groups)
      throw std::invalid_argument("config: context channels must be divisible by deform_groups");
    if ((use_temporal_prior != 0 && use_temporal_prior != 1) || (use_deformable != 0 && use_deformable != 1))
      throw std::invalid_argument("config: ablation switches must be 0 or 1");
    if (flow_levels < 1 || flow_levels > 6) throw std::invalid_argument("config: flow_levels must be in 1..6");
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    visit([&](const char* k, const auto& v) { os << k << '=' << v << '\n'; });
    return os.str();
  }

  /// Applies key=value lines; unknown keys are an error, '#' starts a comment.
  void apply_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
      const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
      if (!set(key, val)) throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }

  bool set(const std::string& key, const std::string& val) {
    bool found = false;
    visit([&](const char* k, auto& v) {
      if (key != k) return;
      found = true;
      std::istringstream vs(val);
      vs >> v;
      if (!vs || !vs.eof()) throw std::invalid_argument("config: bad value '" + val + "' for " + key);
    });
    return found;
  }

  static ModelConfig from_text(const std::string& text, ModelConfig base) {
    base.apply_text(text);
    base.validate();
    return base;
  }
  static ModelConfig from_text(const std::string& text);

  /// FNV-1a 64 over the canonical text, little-endian.
  ConfigDigest digest() const {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : to_text()) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    ConfigDigest d{};
    for (int i = 0; i < 8; ++i) d[i] = static_cast<uint8_t>(h >> (8 * i));
    return d;
  }

  bool operator==(const ModelConfig&) const = default;
};

inline ModelConfig ModelConfig::from_text(const std::string& text) { return from_text(text, ModelConfig()); }

/// Reads a key=value file into a map (used for sequence descriptors and CLI
/// config files). A line "include=<path>" is resolved relative to the file.
inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key == "include") {
      const auto slash = path.find_last_of('/');
      const std::string inc = (val.empty() || val[0] == '/' || slash == std::string::npos)
                                  ? val
                                  : path.substr(0, slash + 1) + val;
      for (auto& [k, v] : read_kv_file(inc)) kv[k] = v;
      continue;
    }
    kv[key] = val;
  }
  return kv;
}

}  // namespace lrvc
