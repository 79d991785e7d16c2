#pragma once

// The complete codec: I and P models sharing one parameter store, frame and
// sequence level encode/decode against the bitstream container, checkpoints,
// and analytic MACs accounting.

#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>

#include "lrvc/model/iframe.hpp"
#include "lrvc/model/pframe.hpp"

namespace lrvc {

template <typename T>
struct FrameStats {
  FrameType type = FrameType::kIntra;
  size_t bytes = 0;          // coded payload bytes of this frame (chunks only)
  double est_bits = 0;       // sum of -log2 p over coded positions
  std::vector<size_t> chunk_bytes;
  std::vector<double> chunk_est_bits;
  double enc_ms = 0;
};

template <typename T>
struct EncodedGop {
  std::vector<FramePayload> frames;
  std::vector<Tensor<T>> recon;
  std::vector<FrameStats<T>> stats;
};

template <typename T>
class VideoCodec {
 public:
  explicit VideoCodec(const ModelConfig& cfg, uint64_t seed = 0)
      : cfg_(cfg), store_(std::make_unique<ParamStore<T>>(seed)) {
    cfg_.validate();
    icodec_ = IFrameCodec<T>(*store_, cfg_);
    pcodec_ = PFrameCodec<T>(*store_, cfg_);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return *store_; }
  const ParamStore<T>& store() const { return *store_; }
  const IFrameCodec<T>& iframe() const { return icodec_; }
  const PFrameCodec<T>& pframe() const { return pcodec_; }
  bool decoder_only() const { return decoder_only_; }

  QuantOptions inference_quant() const {
    QuantOptions q;
    q.mode = Quant::kRound;
    q.tau = cfg_.skip_tau;
    q.b_min = cfg_.b_min;
    return q;
  }

  /// Resets the state around a decoded intra frame.
  static void start_gop(DecodeState<T>& st, const IFrameResult<T>& r) {
    st.dec.reused = r.features;
    st.dec.y_hist.clear();
    st.dec.mv_hist.clear();
    st.dec.y_hist.push_front(r.y.y_hat);
    st.dec.gop_pos = 1;
    ++st.dec.frame_index;
    st.enc.recon.clear();
    st.enc.flows.clear();
    if (r.x_hat.defined()) st.enc.recon.push_front(r.x_hat);
  }

  /// Encodes one frame and advances the state. `x` is padded (3, H, W).
  FramePayload encode_frame(const Tensor<T>& x, FrameType type, DecodeState<T>& st, CoderBackend& backend,
                            Tensor<T>* recon = nullptr, FrameStats<T>* stats = nullptr) const {
    if (decoder_only_) throw std::logic_error("encode: model was loaded from a decoder-only checkpoint");
    NoGradGuard ng;
    const auto t0 = std::chrono::steady_clock::now();
    const QuantOptions q = inference_quant();
    const int h = x.height(), w = x.width();
    FramePayload f;
    f.type = type;
    std::vector<const CodedLatent<T>*> latents;
    Var<T> x_hat;
    IFrameResult<T> ir;
    PFrameResult<T> pr;
    if (type == FrameType::kIntra) {
      {
        ScopedPhase phase("i_enc");
        ir = icodec_.forward(Var<T>(x), q);
      }
      latents = {&ir.z, &ir.y};
      x_hat = ir.x_hat;
      start_gop(st, ir);
    } else {
      pr = pcodec_.run(Var<T>(x), st, q, h, w);
      latents = {&pr.z_mv, &pr.mv, &pr.z, &pr.y};
      x_hat = pr.x_hat;
    }
    if (stats) *stats = FrameStats<T>{};
    for (const auto* l : latents) {
      f.chunks.push_back(range_encode(l->code, l->params, cfg_.b_min, backend));
      if (stats) {
        stats->chunk_bytes.push_back(f.chunks.back().size());
        stats->chunk_est_bits.push_back(estimate_bits(l->code, l->params, cfg_.b_min));
        stats->bytes += f.chunks.back().size();
        stats->est_bits += stats->chunk_est_bits.back();
      }
    }
    if (recon) *recon = x_hat.value();
    if (stats) {
      stats->type = type;
      stats->enc_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    return f;
  }

  /// Decodes one frame payload and advances the decoder slice of the state.
  Tensor<T> decode_frame(const FramePayload& f, DecodeState<T>& st, int h, int w, CoderBackend& backend) const {
    NoGradGuard ng;
    const QuantOptions q = inference_quant();
    if (f.chunks.size() != expected_chunks(f.type)) throw FormatError("decode: wrong chunk count");
    if (f.type == FrameType::kIntra) {
      IFrameResult<T> r;
      {
        ScopedPhase phase("i_dec");
        r = icodec_.decode(f.chunks[0], f.chunks[1], h, w, backend, q);
      }
      Tensor<T> x = r.x_hat.value();
      r.x_hat = Var<T>();  // decoder keeps no reconstructions
      start_gop(st, r);
      return x;
    }
    std::array<ChunkSource, 4> src;
    for (int i = 0; i < 4; ++i) src[i] = {f.chunks[i], &backend};
    PFrameResult<T> r = pcodec_.run(Var<T>(), st, q, h, w, &src);
    return r.x_hat.value();
  }

  /// Encodes frames[begin, end) where frames[begin] is an intra frame.
  EncodedGop<T> encode_gop(const std::vector<Tensor<T>>& frames, size_t begin, size_t end, CoderBackend& backend,
                           int intra_period) const {
    EncodedGop<T> g;
    DecodeState<T> st;
    for (size_t t = begin; t < end; ++t) {
      const FrameType type = frame_type_at(static_cast<int>(t - begin), intra_period);
      Tensor<T> rec;
      FrameStats<T> s;
      g.frames.push_back(encode_frame(frames[t], type, st, backend, &rec, &s));
      g.recon.push_back(std::move(rec));
      g.stats.push_back(std::move(s));
    }
    return g;
  }

  /// Hook that may replace the encoding of one GOP (online encoder update).
  using GopEncoder = std::function<EncodedGop<T>(VideoCodec&, size_t begin, size_t end)>;

  /// Frame t is intra iff t mod intra_period == 0.
  BitstreamContainer encode_sequence(const std::vector<Tensor<T>>& frames, int width, int height, int intra_period,
                                     CoderBackend& backend, std::vector<Tensor<T>>* recon = nullptr,
                                     std::vector<FrameStats<T>>* stats = nullptr, const GopEncoder& gop_hook = {}) {
    if (frames.empty()) throw std::invalid_argument("encode: no frames");
    if (intra_period < 1 || intra_period > 255) throw std::invalid_argument("encode: intra_period must be in 1..255");
    BitstreamContainer s;
    s.header.width = static_cast<uint16_t>(width);
    s.header.height = static_cast<uint16_t>(height);
    s.header.intra_period = static_cast<uint8_t>(intra_period);
    s.header.frame_count = static_cast<uint16_t>(frames.size());
    s.header.lambda_index = static_cast<uint8_t>(cfg_.lambda_index);
    s.header.config_digest = cfg_.digest();
    for (size_t b = 0; b < frames.size(); b += intra_period) {
      const size_t e = std::min(frames.size(), b + intra_period);
      EncodedGop<T> g = gop_hook ? gop_hook(*this, b, e) : encode_gop(frames, b, e, backend, intra_period);
      for (auto& f : g.frames) s.frames.push_back(std::move(f));
      if (recon)
        for (auto& r : g.recon) recon->push_back(std::move(r));
      if (stats)
        for (auto& x : g.stats) stats->push_back(std::move(x));
    }
    return s;
  }

  /// Decodes every frame (padded size). Errors name the frame index.
  std::vector<Tensor<T>> decode_sequence(const BitstreamContainer& s, CoderBackend& backend) const {
    const int h = padded(s.header.height), w = padded(s.header.width);
    std::vector<Tensor<T>> out;
    DecodeState<T> st;
    for (size_t t = 0; t < s.frames.size(); ++t) {
      const FrameType expect = frame_type_at(static_cast<int>(t), s.header.intra_period);
      if (s.frames[t].type != expect) throw FormatError("frame " + std::to_string(t) + ": unexpected frame type");
      try {
        out.push_back(decode_frame(s.frames[t], st, h, w, backend));
      } catch (const FormatError& e) {
        throw FormatError("frame " + std::to_string(t) + ": " + e.what());
      }
    }
    return out;
  }

  static int padded(int v) { return (v + 63) / 64 * 64; }

  // -------------------------------------------------------------------------
  // Checkpoints: "LRVCCKPT" | u32 version | u32 flags (bit0 decoder-only) |
  // u32 len + config text | u32 len + metadata text | u32 count |
  // { u16 len + name | u8 side | u8 rank | rank x u32 dims | f32 data }*

  static constexpr uint32_t kCheckpointVersion = 1;

  void save(const std::string& path, bool decoder_only = false, const std::string& metadata = "") const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    auto u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto str32 = [&](const std::string& s) {
      u32(static_cast<uint32_t>(s.size()));
      out.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    out.write("LRVCCKPT", 8);
    u32(kCheckpointVersion);
    u32(decoder_only ? 1u : 0u);
    str32(cfg_.to_text());
    str32(metadata);
    uint32_t n = 0;
    for (const auto& p : store_->params())
      if (!decoder_only || p.side == Side::kDecoder) ++n;
    u32(n);
    for (const auto& p : store_->params()) {
      if (decoder_only && p.side != Side::kDecoder) continue;
      const uint16_t nl = static_cast<uint16_t>(p.name.size());
      out.write(reinterpret_cast<const char*>(&nl), 2);
      out.write(p.name.data(), nl);
      const uint8_t side = p.side == Side::kEncoder ? 0 : 1, rank = static_cast<uint8_t>(p.var.shape().size());
      out.put(static_cast<char>(side));
      out.put(static_cast<char>(rank));
      for (int d : p.var.shape()) u32(static_cast<uint32_t>(d));
      for (T v : p.var.value().vec()) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path);
  }

  struct CheckpointInfo {
    ModelConfig config;
    bool decoder_only = false;
    std::string metadata;
  };

  static CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    return read_header(in, path);
  }

  /// Loads a checkpoint. A decoder-only checkpoint yields a model that can
  /// decode but refuses to encode.
  static VideoCodec load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    CheckpointInfo info = read_header(in, path);
    VideoCodec c(info.config);
    c.decoder_only_ = info.decoder_only;
    c.metadata_ = info.metadata;
    uint32_t n = read_u32(in, path);
    std::map<std::string, Parameter<T>*> by_name;
    for (auto& p : c.store_->params()) by_name[p.name] = &p;
    size_t loaded = 0;
    for (uint32_t i = 0; i < n; ++i) {
      uint16_t nl = 0;
      in.read(reinterpret_cast<char*>(&nl), 2);
      std::string name(nl, '\0');
      in.read(name.data(), nl);
      const int side = in.get(), rank = in.get();
      std::vector<int> shape(rank);
      for (auto& d : shape) d = static_cast<int>(read_u32(in, path));
      if (!in) throw FormatError("checkpoint " + path + ": truncated at parameter " + std::to_string(i));
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("checkpoint " + path + ": unknown parameter " + name);
      auto& p = *it->second;
      if (p.var.shape() != shape || (side == 0) != (p.side == Side::kEncoder))
        throw FormatError("checkpoint " + path + ": parameter " + name + " shape/side mismatch");
      auto& v = p.var.mutable_value();
      for (size_t j = 0; j < v.size(); ++j) {
        float f = 0;
        in.read(reinterpret_cast<char*>(&f), 4);
        v[j] = static_cast<T>(f);
      }
      if (!in) throw FormatError("checkpoint " + path + ": truncated data of " + name);
      ++loaded;
    }
    const size_t expected = info.decoder_only ? count_side(c, Side::kDecoder) : c.store_->params().size();
    if (loaded != expected)
      throw FormatError("checkpoint " + path + ": " + std::to_string(loaded) + " parameters, expected " +
                        std::to_string(expected));
    return c;
  }

  const std::string& metadata() const { return metadata_; }

  /// Copies all parameter values from another codec with the same config.
  void copy_params_from(const VideoCodec& o) {
    auto& a = store_->params();
    const auto& b = o.store_->params();
    if (a.size() != b.size()) throw std::logic_error("copy_params_from: structure mismatch");
    for (size_t i = 0; i < a.size(); ++i) a[i].var.mutable_value() = b[i].var.value();
  }

  VideoCodec clone() const {
    VideoCodec c(cfg_);
    c.copy_params_from(*this);
    c.decoder_only_ = decoder_only_;
    return c;
  }

 private:
  static uint32_t read_u32(std::istream& in, const std::string& path) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw FormatError("checkpoint " + path + ": truncated");
    return v;
  }

  static CheckpointInfo read_header(std::istream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "LRVCCKPT", 8) != 0) throw FormatError(path + " is not an LRVC checkpoint");
    const uint32_t version = read_u32(in, path);
    if (version != kCheckpointVersion)
      throw FormatError("checkpoint " + path + ": unsupported version " + std::to_string(version));
    CheckpointInfo info;
    info.decoder_only = (read_u32(in, path) & 1u) != 0;
    auto str = [&]() {
      const uint32_t n = read_u32(in, path);
      std::string s(n, '\0');
      in.read(s.data(), n);
      if (!in) throw FormatError("checkpoint " + path + ": truncated");
      return s;
    };
    info.config = ModelConfig::from_text(str());
    info.metadata = str();
    return info;
  }

  static size_t count_side(const VideoCodec& c, Side s) {
    size_t n = 0;
    for (const auto& p : c.store_->params()) n += p.side == s;
    return n;
  }

  ModelConfig cfg_;
  std::unique_ptr<ParamStore<T>> store_;
  IFrameCodec<T> icodec_;
  PFrameCodec<T> pcodec_;
  bool decoder_only_ = false;
  std::string metadata_;
};

/// Analytic MACs of coding one inter frame at (h, w): `encoder` counts every
/// layer the encoder runs (its own plus the decoder-side ones it mirrors),
/// `decoder` only the decoder-side layers. Convolutions run in dry-run mode,
/// so the count is exact layer arithmetic rather than a timing proxy.
struct MacsReport {
  int64_t encoder = 0;
  int64_t decoder = 0;
  int64_t temporal_prior = 0;
  std::set<std::string> decoder_layers_in_encode;
  std::set<std::string> layers_in_decode;

  double ratio() const { return encoder ? double(decoder) / double(encoder) : 0.0; }
};

template <typename T>
MacsReport count_macs(const VideoCodec<T>& codec, int h, int w) {
  NoGradGuard ng;
  ScopedDryRun dry;
  const auto q = codec.inference_quant();
  DecodeState<T> st;
  {
    auto ir = codec.iframe().forward(Var<T>(Tensor<T>(3, h, w, T(0.5))), q);
    VideoCodec<T>::start_gop(st, ir);
  }
  DecodeState<T> st_dec = st;
  MacsReport r;
  Instrument enc;
  PFrameResult<T> pr;
  {
    ScopedInstrument si(enc);
    pr = codec.pframe().run(Var<T>(Tensor<T>(3, h, w, T(0.5))), st, q, h, w);
  }
  r.encoder = enc.total_macs();
  r.decoder = enc.macs(Side::kDecoder);
  for (const auto& p : codec.store().params())
    if (p.side == Side::kDecoder) {
      const auto layer = p.name.substr(0, p.name.rfind('.'));
      if (enc.executed().count(layer)) r.decoder_layers_in_encode.insert(layer);
    }
  // Decode path from the encoder's own chunks.
  std::vector<std::vector<uint8_t>> chunks;
  for (const auto* l : {&pr.z_mv, &pr.mv, &pr.z, &pr.y}) chunks.push_back(range_encode(l->code, l->params, codec.config().b_min));
  std::array<ChunkSource, 4> src;
  for (int i = 0; i < 4; ++i) src[i] = {chunks[i], &reference_backend()};
  Instrument dec;
  {
    ScopedInstrument si(dec);
    codec.pframe().run(Var<T>(), st_dec, q, h, w, &src);
  }
  r.layers_in_decode = dec.executed();
  {
    Instrument tp;
    ScopedInstrument si(tp);
    codec.pframe().temporal_prior(st_dec.dec, h, w);
    r.temporal_prior = tp.total_macs();
  }
  return r;
}

}  // namespace lrvc
