// lrvc: encode, decode, train, eval, bdrate, profile, inspect, plot.
//
// Exit codes: 0 success, 1 other failure, 2 usage, 3 format or digest error,
// 4 numerical divergence.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "lrvc/eval/metrics.hpp"
#include "lrvc/eval/profile.hpp"
#include "lrvc/io/frame_io.hpp"
#include "lrvc/io/synthetic.hpp"
#include "lrvc/train/oeu.hpp"

namespace fs = std::filesystem;
using namespace lrvc;
using Codec = VideoCodec<float>;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  uint64_t seed = 0;
  std::string device = "cpu";
  std::string checkpoint;
  std::string config;
};

/// Model and training keys from --config (key=value, include= allowed). A
/// "preset=reduced" line starts from the reduced network widths.
struct ConfigFile {
  ModelConfig model;
  TrainConfig train;
};

ConfigFile load_config(const std::string& path, bool allow_train_keys) {
  ConfigFile c;
  if (path.empty()) return c;
  auto kv = read_kv_file(path);
  if (auto it = kv.find("preset"); it != kv.end()) {
    if (it->second == "reduced") c.model = ModelConfig::reduced();
    else if (it->second != "default") throw UsageError(path + ": unknown preset '" + it->second + "'");
    kv.erase(it);
  }
  for (const auto& [k, v] : kv) {
    if (c.model.set(k, v)) continue;
    if (allow_train_keys && c.train.set(k, v)) continue;
    throw UsageError(path + ": unknown key '" + k + "'");
  }
  c.model.validate();
  return c;
}

void check_device(const Globals& g) {
  if (g.device != "cpu") throw UsageError("device '" + g.device + "' is not available (only cpu)");
}

/// The checkpoint when given, else a seeded random model from --config.
Codec model_for(const Globals& g, std::optional<int> lambda_flag) {
  if (!g.checkpoint.empty()) {
    Codec c = Codec::load(g.checkpoint);
    if (lambda_flag && *lambda_flag != c.config().lambda_index)
      throw UsageError("--lambda-index " + std::to_string(*lambda_flag) + " does not match the checkpoint's " +
                       std::to_string(c.config().lambda_index));
    return c;
  }
  ModelConfig cfg = load_config(g.config, false).model;
  if (lambda_flag) cfg.lambda_index = *lambda_flag;
  cfg.validate();
  return Codec(cfg, g.seed);
}

// ---------------------------------------------------------------------------
// Input sequences

struct InputOptions {
  std::string input;
  int width = 0, height = 0;
  std::string matrix = "bt709";
  std::string geometry = "pad64";
};

bool is_png(const fs::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), ::tolower);
  return e == ".png";
}

/// Frames in [0,1] at their original size. Accepts a raw .yuv (with --width
/// and --height), a sequence descriptor, a directory of PNG frames, or
/// "synthetic:WxH" for a generated test clip.
std::vector<Frame> read_input(const InputOptions& o, int max_frames) {
  std::vector<Frame> out;
  if (o.input.rfind("synthetic:", 0) == 0) {
    SyntheticClip sc;
    if (std::sscanf(o.input.c_str() + 10, "%dx%d", &sc.width, &sc.height) != 2)
      throw UsageError("synthetic input must look like synthetic:WxH");
    sc.frames = max_frames;
    sc.noise = 0.02;
    int t = 0;
    for (auto& x : make_clip<float>(sc)) {
      Frame f;
      f.planes = std::move(x);
      f.temporal_index = t++;
      out.push_back(std::move(f));
    }
  } else if (fs::is_directory(o.input)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(o.input))
      if (is_png(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError(o.input + ": no PNG frames");
    for (size_t t = 0; t < files.size() && static_cast<int>(t) < max_frames; ++t) {
      Frame f;
      f.planes = read_png(files[t].string());
      f.temporal_index = static_cast<int>(t);
      out.push_back(std::move(f));
    }
  } else {
    SequenceConfig sc;
    std::string path = o.input;
    const bool raw = fs::path(o.input).extension() == ".yuv";
    if (raw) {
      sc.width = o.width;
      sc.height = o.height;
      sc.matrix = parse_matrix(o.matrix);
      sc.geometry = parse_geometry(o.geometry);
      sc.frame_count = 0;
      if (o.width <= 0 || o.height <= 0) throw UsageError("raw YUV input needs --width and --height");
      sc.frame_count = static_cast<int>(fs::file_size(path) / yuv420_frame_bytes(o.width, o.height));
      if (sc.frame_count < 1) throw FormatError(path + ": shorter than one frame");
    } else {
      sc = SequenceConfig::from_descriptor(o.input);
      path = sc.path;
    }
    sc.frame_count = std::min(sc.frame_count, max_frames);
    sc.validate();
    out = read_yuv420(path, sc);
  }
  for (auto& f : out) {
    f.orig_h = f.planes.height();
    f.orig_w = f.planes.width();
  }
  return out;
}

GeometryMode geometry_for(const InputOptions& o) {
  if (!o.input.empty() && !fs::is_directory(o.input) && o.input.rfind("synthetic:", 0) != 0 &&
      fs::path(o.input).extension() != ".yuv")
    return SequenceConfig::from_descriptor(o.input).geometry;
  return parse_geometry(o.geometry);
}

void add_input_options(CLI::App* c, InputOptions& o) {
  c->add_option("-i,--input", o.input, "Raw .yuv, sequence descriptor, PNG directory or synthetic:WxH")->required();
  c->add_option("--width", o.width, "Width of a raw .yuv input");
  c->add_option("--height", o.height, "Height of a raw .yuv input");
  c->add_option("--matrix", o.matrix, "Color matrix of a raw .yuv input (bt709, bt601)")->capture_default_str();
  c->add_option("--geometry", o.geometry, "pad64 or center_crop")->capture_default_str();
}

/// Frames brought to 64-multiples; returns the coded original size.
std::vector<Tensor<float>> prepare(const std::vector<Frame>& in, GeometryMode g, int* h0, int* w0) {
  std::vector<Tensor<float>> out;
  for (const auto& f : in) {
    Frame n = normalize_geometry(f, g);
    if (g == GeometryMode::kCenterCrop) {
      *h0 = n.planes.height();
      *w0 = n.planes.width();
    } else {
      *h0 = f.planes.height();
      *w0 = f.planes.width();
    }
    out.push_back(std::move(n.planes));
  }
  return out;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::vector<uint8_t>& b) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw std::runtime_error("cannot write " + path);
}

std::string frame_name(size_t t) {
  std::ostringstream os;
  os << "frame_" << std::setw(4) << std::setfill('0') << t << ".png";
  return os.str();
}

std::unique_ptr<CoderBackend> backend_for(const std::string& spec) {
  std::string note;
  auto b = make_backend(spec, &note);
  if (!note.empty()) std::cerr << "note: " << note << "\n";
  return b;
}

// ---------------------------------------------------------------------------
// encode

struct EncodeOptions {
  InputOptions in;
  std::string output = "out.lrvc";
  std::string report;
  std::string recon_dir;
  std::optional<int> lambda_index;
  int intra_period = 32;
  int frames = 96;
  std::string oeu = "off";
  int oeu_steps = 5;
  int oeu_frames = 8;
  double oeu_lr = 1e-5;
  std::string backend = "reference";
};

int run_encode(const Globals& g, const EncodeOptions& o) {
  check_device(g);
  Codec codec = model_for(g, o.lambda_index);
  if (codec.decoder_only()) throw UsageError("encode needs a full checkpoint, got a decoder-only one");
  if (o.frames < 1) throw UsageError("--frames must be >= 1");
  auto frames_in = read_input(o.in, o.frames);
  int h0 = 0, w0 = 0;
  auto frames = prepare(frames_in, geometry_for(o.in), &h0, &w0);
  auto backend = backend_for(o.backend);

  OEUConfig oc;
  oc.mode = parse_oeu_mode(o.oeu);
  oc.steps = o.oeu_steps;
  oc.frames = o.oeu_frames;
  oc.lr = o.oeu_lr;
  oc.lambda_index = codec.config().lambda_index;
  oc.seed = g.seed;
  std::vector<OEUGopResult> oeu_results;
  typename Codec::GopEncoder hook;
  if (oc.mode != OEUMode::kOff) hook = oeu_gop_encoder(frames, oc, *backend, o.intra_period, &oeu_results);

  std::vector<Tensor<float>> recon;
  std::vector<FrameStats<float>> stats;
  auto stream = codec.encode_sequence(frames, w0, h0, o.intra_period, *backend, &recon, &stats, hook);
  const auto bytes = serialize(stream);
  write_file(o.output, bytes);

  const double area = double(h0) * w0;
  std::ostringstream rep;
  rep << std::setprecision(9);
  std::vector<double> psnrs;
  for (size_t t = 0; t < stats.size(); ++t) {
    const Tensor<float> r = crop_top_left(recon[t], h0, w0), x = crop_top_left(frames[t], h0, w0);
    const double p = psnr(r, x);
    psnrs.push_back(p);
    rep << "frame=" << t << " type=" << (stats[t].type == FrameType::kIntra ? "I" : "P")
        << " bytes=" << stats[t].bytes << " bpp=" << stats[t].bytes * 8.0 / area << " psnr=" << p
        << " enc_ms=" << stats[t].enc_ms << "\n";
    if (!o.recon_dir.empty()) {
      fs::create_directories(o.recon_dir);
      write_png((fs::path(o.recon_dir) / frame_name(t)).string(), r);
    }
  }
  for (const auto& r : oeu_results)
    rep << "oeu_gop=" << r.begin << " adapted=" << r.adapted << " rd_plain=" << r.rd_plain << " rd_oeu=" << r.rd_oeu
        << " update_ms=" << r.update.wall_ms << "\n";
  rep << "frames=" << stats.size() << " width=" << w0 << " height=" << h0 << " total_bytes=" << bytes.size()
      << " bpp=" << bytes.size() * 8.0 / (double(stats.size()) * area) << " psnr=" << mean_psnr(psnrs) << "\n";
  if (o.report.empty()) {
    std::cout << rep.str();
  } else {
    std::ofstream(o.report) << rep.str();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeOptions {
  std::string input;
  std::string output_dir;
  std::string yuv;
  std::string matrix = "bt709";
  std::string backend = "reference";
};

int run_decode(const Globals& g, const DecodeOptions& o) {
  check_device(g);
  if (g.checkpoint.empty()) throw UsageError("decode needs --checkpoint");
  Codec codec = Codec::load(g.checkpoint);
  const auto digest = codec.config().digest();
  auto stream = parse(read_file(o.input), &digest);
  auto backend = backend_for(o.backend);
  auto frames = codec.decode_sequence(stream, *backend);
  const int h0 = stream.header.height, w0 = stream.header.width;
  if (!o.output_dir.empty()) fs::create_directories(o.output_dir);
  std::vector<YuvFrame> yuv;
  for (size_t t = 0; t < frames.size(); ++t) {
    const Tensor<float> r = crop_top_left(frames[t], h0, w0);
    if (!o.output_dir.empty()) write_png((fs::path(o.output_dir) / frame_name(t)).string(), r);
    if (!o.yuv.empty()) yuv.push_back(rgb_to_yuv420(r, parse_matrix(o.matrix)));
  }
  if (!o.yuv.empty()) write_yuv420_raw(o.yuv, yuv);
  std::cout << "decoded " << frames.size() << " frames " << w0 << "x" << h0 << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data = "synthetic";
  std::string output_dir = "train_out";
  std::string log;
  bool reduced = false;
  std::optional<int> steps;
  std::optional<int> lambda_index;
  std::optional<int> crop;
  std::optional<double> lr;
};

/// Training clips: "synthetic", or a directory whose subdirectories are PNG
/// clips and whose *.txt files are sequence descriptors.
std::vector<std::vector<Tensor<float>>> training_clips(const std::string& data, int crop) {
  std::vector<std::vector<Tensor<float>>> clips;
  auto add = [&](const std::vector<Frame>& fr) {
    std::vector<Tensor<float>> c;
    for (const auto& f : fr) c.push_back(pad_to_multiple(f.planes, 64));
    if (!c.empty()) clips.push_back(std::move(c));
  };
  if (data == "synthetic") {
    for (uint64_t s = 1; s <= 4; ++s) {
      SyntheticClip sc;
      sc.height = sc.width = crop;
      sc.frames = 8;
      sc.seed = s;
      sc.dx = static_cast<int>(s % 3);
      sc.dy = static_cast<int>(s % 2) + 1;
      sc.noise = 0.02;
      clips.push_back(make_clip<float>(sc));
    }
    return clips;
  }
  if (!fs::is_directory(data)) throw UsageError("--data must be 'synthetic' or a directory");
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(data)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& p : entries) {
    InputOptions io;
    io.input = p.string();
    if (fs::is_directory(p)) add(read_input(io, 1 << 20));
    else if (p.extension() == ".txt") add(read_input(io, 1 << 20));
  }
  if (clips.empty()) throw UsageError(data + ": no clips found");
  return clips;
}

int run_train(const Globals& g, const TrainOptions& o) {
  check_device(g);
  ConfigFile cf = load_config(g.config, true);
  if (o.reduced) {
    ModelConfig r = ModelConfig::reduced();
    r.lambda_index = cf.model.lambda_index;
    cf.model = r;
  }
  TrainConfig& tc = cf.train;
  tc.seed = g.seed;
  if (o.lambda_index) tc.lambda_index = *o.lambda_index;
  if (o.crop) tc.crop = *o.crop;
  if (o.lr) tc.lr = *o.lr;
  if (o.steps) tc.steps_i = tc.steps_per_p_stage = tc.steps_joint = *o.steps, tc.steps_msssim = 0;
  cf.model.lambda_index = tc.lambda_index;
  tc.validate();
  std::optional<Codec> codec;
  if (!g.checkpoint.empty()) {
    codec.emplace(Codec::load(g.checkpoint));
    if (codec->decoder_only()) throw UsageError("cannot train from a decoder-only checkpoint");
  } else {
    codec.emplace(cf.model, g.seed);
  }
  fs::create_directories(o.output_dir);
  if (o.steps && *o.steps == 0) {
    const std::string path = (fs::path(o.output_dir) / "init.ckpt").string();
    codec->save(path, false, tc.to_text() + "stage=init\n");
    std::cout << "wrote " << path << "\n";
    return 0;
  }
  std::ofstream logf;
  if (!o.log.empty()) logf.open(o.log);
  Trainer<float> tr(*codec, tc, o.log.empty() ? &std::cout : &logf);
  tr.train(random_crop_source(training_clips(o.data, tc.crop), tc.crop), o.output_dir);
  const std::string final_path = (fs::path(o.output_dir) / "final.ckpt").string();
  codec->save(final_path, false, tc.to_text() + "stage=final\n");
  std::cout << "wrote " << final_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::vector<std::string> inputs;
  std::vector<std::string> checkpoints;
  std::string output_dir = "curves";
  int frames = 96;
  int intra_period = 32;
  std::string backend = "reference";
};

RDPoint evaluate(const Codec& base, const std::vector<Tensor<float>>& frames, int h0, int w0, int intra_period,
                 CoderBackend& backend, const std::string& label) {
  Codec codec = base.clone();
  auto t0 = std::chrono::steady_clock::now();
  auto stream = codec.encode_sequence(frames, w0, h0, intra_period, backend);
  const double enc_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const auto bytes = serialize(stream);
  t0 = std::chrono::steady_clock::now();
  auto dec = codec.decode_sequence(parse(bytes), backend);
  const double dec_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  std::vector<double> ps;
  double ms = 0;
  for (size_t t = 0; t < dec.size(); ++t) {
    const auto r = crop_top_left(dec[t], h0, w0), x = crop_top_left(frames[t], h0, w0);
    ps.push_back(psnr(r, x));
    ms += ms_ssim_value(r, x) / double(dec.size());
  }
  RDPoint p;
  p.label = label;
  p.lambda_index = codec.config().lambda_index;
  p.bpp = bytes.size() * 8.0 / (double(frames.size()) * h0 * w0);
  p.psnr = mean_psnr(ps);
  p.ms_ssim = ms;
  p.enc_ms = enc_ms / double(frames.size());
  p.dec_ms = dec_ms / double(frames.size());
  return p;
}

int run_eval(const Globals& g, const EvalOptions& o) {
  check_device(g);
  if (o.checkpoints.size() != 4) throw UsageError("eval needs exactly 4 checkpoints (one per lambda)");
  std::vector<Codec> codecs;
  std::set<int> lambdas;
  for (const auto& c : o.checkpoints) {
    codecs.push_back(Codec::load(c));
    if (codecs.back().decoder_only()) throw UsageError(c + " is decoder-only");
    lambdas.insert(codecs.back().config().lambda_index);
  }
  if (lambdas.size() != 4) throw UsageError("eval: the 4 checkpoints must cover distinct lambda indexes");
  auto backend = backend_for(o.backend);
  fs::create_directories(o.output_dir);
  for (const auto& in : o.inputs) {
    InputOptions io;
    io.input = in;
    int h0 = 0, w0 = 0;
    auto frames = prepare(read_input(io, o.frames), geometry_for(io), &h0, &w0);
    std::string label = fs::path(in).stem().string();
    if (label.empty() || in.rfind("synthetic:", 0) == 0) label = "synthetic";
    std::vector<RDPoint> pts;
    for (const auto& c : codecs) pts.push_back(evaluate(c, frames, h0, w0, o.intra_period, *backend, label));
    std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.lambda_index < b.lambda_index; });
    const std::string path = (fs::path(o.output_dir) / (label + ".csv")).string();
    write_curve_file(path, pts);
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bdrate, profile, inspect, plot

int run_bdrate(const std::string& anchor, const std::string& test, const std::string& quality) {
  Quality q;
  if (quality == "psnr") q = Quality::kPSNR;
  else if (quality == "ms-ssim" || quality == "msssim") q = Quality::kMSSSIM;
  else throw UsageError("--quality must be psnr or ms-ssim");
  const double v =
      bd_rate(RDCurve::from_points(read_curve_file(anchor), q), RDCurve::from_points(read_curve_file(test), q));
  std::cout << std::fixed << std::setprecision(4) << "bd_rate=" << v << "%\n";
  return 0;
}

struct ProfileOptions {
  InputOptions in;
  int frames = 3;
  int runs = 10;
  int warmup = 3;
  std::string output;
  std::string backend = "reference";
};

int run_profile(const Globals& g, const ProfileOptions& o) {
  check_device(g);
  Codec codec = model_for(g, std::nullopt);
  if (codec.decoder_only()) throw UsageError("profile needs a full checkpoint");
  int h0 = 0, w0 = 0;
  auto frames = prepare(read_input(o.in, o.frames), geometry_for(o.in), &h0, &w0);
  auto backend = backend_for(o.backend);
  auto rep = profile_latency(codec, frames, g.device, o.runs, o.warmup, *backend);
  if (o.output.empty()) {
    std::cout << rep.to_text();
  } else {
    std::ofstream(o.output) << rep.to_text();
    std::cout << "wrote " << o.output << "\n";
  }
  return 0;
}

struct InspectOptions {
  std::string path;
  std::string strip_decoder;
  std::string macs;
};

int run_inspect(const Globals& g, const InspectOptions& o) {
  if (!o.macs.empty()) {
    int h = 0, w = 0;
    if (std::sscanf(o.macs.c_str(), "%dx%d", &w, &h) != 2 || h % 64 || w % 64 || h <= 0 || w <= 0)
      throw UsageError("--macs expects WxH with 64-multiples");
    Codec codec = g.checkpoint.empty() ? model_for(g, std::nullopt) : Codec::load(g.checkpoint);
    auto r = count_macs(codec, h, w);
    std::cout << "macs_encoder=" << r.encoder << "\nmacs_decoder=" << r.decoder << "\nmacs_ratio=" << r.ratio()
              << "\nmacs_temporal_prior=" << r.temporal_prior << "\n";
  }
  if (o.path.empty()) {
    if (o.macs.empty()) throw UsageError("inspect needs a file or --macs");
    return 0;
  }
  const auto bytes = read_file(o.path);
  const bool checkpoint = bytes.size() >= 8 && std::equal(bytes.begin(), bytes.begin() + 8, "LRVCCKPT");
  if (!checkpoint && bytes.size() >= 4 && std::equal(kStreamMagic.begin(), kStreamMagic.end(), bytes.begin())) {
    auto s = parse(bytes);
    const auto& h = s.header;
    std::cout << "bitstream version=" << int(h.version) << " width=" << h.width << " height=" << h.height
              << " intra_period=" << int(h.intra_period) << " frames=" << h.frame_count
              << " lambda_index=" << int(h.lambda_index) << " digest=" << digest_hex(h.config_digest) << "\n";
    for (size_t t = 0; t < s.frames.size(); ++t) {
      std::cout << "frame=" << t << " type=" << (s.frames[t].type == FrameType::kIntra ? "I" : "P") << " chunks=";
      for (size_t c = 0; c < s.frames[t].chunks.size(); ++c) std::cout << (c ? "," : "") << s.frames[t].chunks[c].size();
      std::cout << "\n";
    }
    return 0;
  }
  auto info = Codec::read_checkpoint_info(o.path);
  Codec codec = Codec::load(o.path);
  size_t enc = 0, dec = 0;
  for (const auto& p : codec.store().params()) (p.side == Side::kEncoder ? enc : dec) += p.var.value().size();
  std::cout << "checkpoint decoder_only=" << info.decoder_only << " digest=" << digest_hex(info.config.digest())
            << " encoder_params=" << (info.decoder_only ? 0 : enc) << " decoder_params=" << dec << "\n"
            << "[config]\n" << info.config.to_text() << "[metadata]\n" << info.metadata;
  if (!o.strip_decoder.empty()) {
    codec.save(o.strip_decoder, true, info.metadata);
    std::cout << "wrote decoder-only checkpoint " << o.strip_decoder << "\n";
  }
  return 0;
}

/// Minimal SVG line chart of one metric pair per curve file.
std::string svg_chart(const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>& series,
                      const std::string& xlabel, const std::string& ylabel) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& [n, pts] : series)
    for (auto [x, y] : pts) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  const double W = 640, H = 480, m = 60;
  auto px = [&](double x) { return m + (x - x0) / (x1 - x0) * (W - 2 * m); };
  auto py = [&](double y) { return H - m - (y - y0) / (y1 - y0) * (H - 2 * m); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << m << "\" y1=\"" << H - m << "\" x2=\"" << W - m << "\" y2=\"" << H - m
     << "\" stroke=\"black\"/>\n<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << H - m
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << xlabel << " [" << x0 << ", "
     << x1 << "]</text>\n<text x=\"15\" y=\"" << H / 2 << "\" transform=\"rotate(-90 15 " << H / 2
     << ")\" text-anchor=\"middle\">" << ylabel << " [" << y0 << ", " << y1 << "]</text>\n";
  for (size_t i = 0; i < series.size(); ++i) {
    const auto& [name, pts] = series[i];
    const char* c = colors[i % 6];
    os << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"";
    for (auto [x, y] : pts) os << px(x) << "," << py(y) << " ";
    os << "\"/>\n";
    for (auto [x, y] : pts) os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    os << "<text x=\"" << W - m - 120 << "\" y=\"" << m + 16 * i << "\" fill=\"" << c << "\">" << name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

int run_plot(const std::vector<std::string>& curves, const std::string& rd_out, const std::string& speed_out,
             const std::string& quality) {
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> rd, speed;
  for (const auto& f : curves) {
    auto pts = read_curve_file(f);
    std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.bpp < b.bpp; });
    const std::string name = pts.empty() ? f : pts.front().label;
    std::vector<std::pair<double, double>> a, b;
    for (const auto& p : pts) {
      a.emplace_back(p.bpp, quality == "psnr" ? p.psnr : p.ms_ssim);
      b.emplace_back(p.dec_ms, p.bpp);
    }
    rd.emplace_back(name, a);
    speed.emplace_back(name, b);
  }
  std::ofstream(rd_out) << svg_chart(rd, "bpp", quality == "psnr" ? "PSNR (dB)" : "MS-SSIM");
  std::cout << "wrote " << rd_out << "\n";
  if (!speed_out.empty()) {
    std::ofstream(speed_out) << svg_chart(speed, "decode ms/frame", "bpp");
    std::cout << "wrote " << speed_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned low-resolution video codec"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for random models and training")->capture_default_str();
  app.add_option("--device", g.device, "Compute device label")->capture_default_str();
  app.add_option("--checkpoint", g.checkpoint, "Model checkpoint (default: seeded random model)");
  app.add_option("--config", g.config, "key=value config file (model keys; train keys for train)");

  EncodeOptions eo;
  auto* enc = app.add_subcommand("encode", "Encode a sequence to a bitstream");
  add_input_options(enc, eo.in);
  enc->add_option("-o,--output", eo.output, "Bitstream path")->capture_default_str();
  enc->add_option("--report", eo.report, "Side report path (default: stdout)");
  enc->add_option("--recon-dir", eo.recon_dir, "Write encoder-side reconstructions as PNG");
  enc->add_option("--lambda-index", eo.lambda_index, "Lambda index 0..3 (must match the checkpoint)");
  enc->add_option("--intra-period", eo.intra_period, "Frames per GOP")->capture_default_str();
  enc->add_option("--frames", eo.frames, "Maximum frames to code")->capture_default_str();
  enc->add_option("--oeu", eo.oeu, "Online encoder update: off, downsample, crop-all, crop-firstT")
      ->capture_default_str();
  enc->add_option("--oeu-steps", eo.oeu_steps, "OEU steps per GOP")->capture_default_str();
  enc->add_option("--oeu-frames", eo.oeu_frames, "OEU frames T for crop-firstT")->capture_default_str();
  enc->add_option("--oeu-lr", eo.oeu_lr, "OEU learning rate")->capture_default_str();
  enc->add_option("--backend", eo.backend, "reference or subprocess:<coder>")->capture_default_str();

  DecodeOptions dopt;
  auto* dec = app.add_subcommand("decode", "Decode a bitstream (needs only the stream and a checkpoint)");
  dec->add_option("-i,--input", dopt.input, "Bitstream path")->required();
  dec->add_option("-o,--output-dir", dopt.output_dir, "Directory for PNG frames");
  dec->add_option("--yuv", dopt.yuv, "Also write raw YUV420");
  dec->add_option("--matrix", dopt.matrix, "Color matrix for --yuv")->capture_default_str();
  dec->add_option("--backend", dopt.backend, "reference or subprocess:<coder>")->capture_default_str();

  TrainOptions to;
  auto* tr = app.add_subcommand("train", "Staged training");
  tr->add_option("--data", to.data, "'synthetic' or a directory of clips")->capture_default_str();
  tr->add_option("-o,--output-dir", to.output_dir, "Checkpoint directory")->capture_default_str();
  tr->add_option("--log", to.log, "Progress log (default: stdout)");
  tr->add_flag("--reduced", to.reduced, "Use the reduced network widths");
  tr->add_option("--steps", to.steps, "Steps per stage (0 writes the initial checkpoint only)");
  tr->add_option("--lambda-index", to.lambda_index, "Lambda index 0..3");
  tr->add_option("--crop", to.crop, "Crop size");
  tr->add_option("--lr", to.lr, "Learning rate");

  EvalOptions ev;
  auto* eva = app.add_subcommand("eval", "RD curves of four lambda checkpoints");
  eva->add_option("-i,--input", ev.inputs, "Sequences (descriptor, PNG directory or synthetic:WxH)")->required();
  eva->add_option("--checkpoints", ev.checkpoints, "Four checkpoints")->required()->expected(4);
  eva->add_option("-o,--output-dir", ev.output_dir, "Curve directory")->capture_default_str();
  eva->add_option("--frames", ev.frames, "Frames per sequence")->capture_default_str();
  eva->add_option("--intra-period", ev.intra_period, "Frames per GOP")->capture_default_str();
  eva->add_option("--backend", ev.backend, "reference or subprocess:<coder>")->capture_default_str();

  std::string anchor, test, quality = "psnr";
  auto* bd = app.add_subcommand("bdrate", "BD-rate of a test curve against an anchor");
  bd->add_option("--anchor", anchor, "Anchor curve file")->required();
  bd->add_option("--test", test, "Test curve file")->required();
  bd->add_option("--quality", quality, "psnr or ms-ssim")->capture_default_str();

  ProfileOptions po;
  auto* pr = app.add_subcommand("profile", "Per-phase latency");
  add_input_options(pr, po.in);
  pr->add_option("--frames", po.frames, "Frames per run (first is intra)")->capture_default_str();
  pr->add_option("--runs", po.runs, "Timed runs (>= 10)")->capture_default_str();
  pr->add_option("--warmup", po.warmup, "Warm-up runs (>= 3)")->capture_default_str();
  pr->add_option("-o,--output", po.output, "Report path (default: stdout)");
  pr->add_option("--backend", po.backend, "reference or subprocess:<coder>")->capture_default_str();

  InspectOptions io;
  auto* in = app.add_subcommand("inspect", "Describe a bitstream or checkpoint");
  in->add_option("path", io.path, "Bitstream or checkpoint");
  in->add_option("--strip-decoder", io.strip_decoder, "Write a decoder-only copy of the checkpoint");
  in->add_option("--macs", io.macs, "Print MACs at WxH for the model");

  std::vector<std::string> curves;
  std::string rd_out = "rd.svg", speed_out, plot_quality = "psnr";
  auto* pl = app.add_subcommand("plot", "Render RD and rate-speed figures from curve files");
  pl->add_option("curves", curves, "Curve files")->required();
  pl->add_option("--rd", rd_out, "RD figure path")->capture_default_str();
  pl->add_option("--speed", speed_out, "Rate-speed figure path");
  pl->add_option("--quality", plot_quality, "psnr or ms-ssim")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (*enc) return run_encode(g, eo);
    if (*dec) return run_decode(g, dopt);
    if (*tr) return run_train(g, to);
    if (*eva) return run_eval(g, ev);
    if (*bd) return run_bdrate(anchor, test, quality);
    if (*pr) return run_profile(g, po);
    if (*in) return run_inspect(g, io);
    if (*pl) return run_plot(curves, rd_out, speed_out, plot_quality);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "; last good checkpoint: "
              << (e.last_good_checkpoint.empty() ? "(none)" : e.last_good_checkpoint) << "\n";
    return 4;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
