// Acceptance run: one PASS/FAIL line per primary criterion. Exits non-zero
// if any criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <tuple>
#include <utility>

#include "gradient_probes.hpp"
#include "lrvc/entropy/container.hpp"
#include "lrvc/eval/metrics.hpp"
#include "lrvc/io/synthetic.hpp"
#include "lrvc/train/oeu.hpp"

using namespace lrvc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<Tensor<float>> synthetic(int size, int frames, uint64_t seed, double dx, double dy, double noise) {
  SyntheticClip c;
  c.height = c.width = size;
  c.frames = frames;
  c.seed = seed;
  c.dx = dx;
  c.dy = dy;
  c.noise = noise;
  return make_clip(c);
}

Outcome lossless_pipeline() {
  const auto t0 = std::chrono::steady_clock::now();
  VideoCodec<float> c(ModelConfig{}, 21);
  const auto x = synthetic(256, 9, 3, 2, 1, 0.01);
  std::vector<Tensor<float>> enc;
  const auto bytes = serialize(c.encode_sequence(x, 256, 256, 32, reference_backend(), &enc));
  const auto dec = c.decode_sequence(parse(bytes), reference_backend());
  int equal = 0;
  for (size_t t = 0; t < dec.size() && t < enc.size(); ++t) equal += dec[t].vec() == enc[t].vec();
  const double s = seconds_since(t0);
  return {equal == 9 && dec.size() == 9 && s < 120,
          fmt("%d/9 frames bit-identical, %zu bytes, %.1f s (limit 120 s)", equal, bytes.size(), s)};
}

Outcome rate_tightness() {
  VideoCodec<float> c(ModelConfig::reduced(), 22);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<Tensor<float>> x;
  for (int t = 0; t < 20; ++t) {
    Tensor<float> f(3, 128, 128);
    for (auto& v : f.vec()) v = u(rng);
    x.push_back(std::move(f));
  }
  std::vector<FrameStats<float>> stats;
  c.encode_sequence(x, 128, 128, 4, reference_backend(), nullptr, &stats);
  int chunks = 0, bad = 0;
  double worst = 0;
  for (const auto& st : stats)
    for (size_t k = 0; k < st.chunk_bytes.size(); ++k) {
      const double ideal = st.chunk_est_bits[k] / 8;
      const double gap = std::abs(double(st.chunk_bytes[k]) - ideal);
      const double limit = 0.01 * ideal + 32;
      worst = std::max(worst, gap / limit);
      bad += gap > limit;
      ++chunks;
    }
  return {bad == 0 && chunks > 0, fmt("%d chunks over 20 frames, %d over the bound, worst gap %.3f of the bound",
                                      chunks, bad, worst)};
}

Outcome resolution_ceiling() {
  bool ok = true;
  std::string detail;
  for (const auto& [name, cfg] : {std::pair{"reduced", ModelConfig::reduced()}, std::pair{"default", ModelConfig{}}}) {
    VideoCodec<float> c(cfg, 24);
    const int size = 256;
    const auto x = synthetic(size, 2, 4, 3, 1, 0.0);
    auto& be = reference_backend();
    DecodeState<float> enc, dec;
    const auto f0 = c.encode_frame(x[0], FrameType::kIntra, enc, be);
    const auto f1 = c.encode_frame(x[1], FrameType::kInter, enc, be);
    c.decode_frame(f0, dec, size, size, be);
    Instrument ins;
    {
      ScopedInstrument si(ins);
      c.decode_frame(f1, dec, size, size, be);
    }
    const int64_t ceiling = int64_t(size / 4) * (size / 4);
    const int64_t above = ins.max_pixels_excluding(kFinalReconstructionStage);
    ok = ok && !ins.activations().empty() && above <= ceiling;
    detail += fmt("%s: max %lld px outside the final stage (ceiling %lld); ", name, (long long)above,
                  (long long)ceiling);
  }
  return {ok, detail};
}

Outcome macs_imbalance() {
  VideoCodec<float> c(ModelConfig{}, 25);
  const auto r = count_macs(c, 1088, 1920);
  return {r.decoder > 0 && r.ratio() <= 0.25,
          fmt("1920x1088: encoder %.3f GMACs, decoder %.3f GMACs, dec/enc %.3f (limit 0.25)", r.encoder / 1e9,
              r.decoder / 1e9, r.ratio())};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (const auto& [name, r] : probes::all()) {
    ok = ok && r.ok && r.checked > 0;
    detail += fmt("%s %s (%zu entries, worst rel %.1e); ", name.c_str(), r.ok ? "ok" : "FAILED", r.checked,
                  r.worst_rel);
  }
  const double s = seconds_since(t0);
  return {ok && s < 300, detail + fmt("%.1f s (limit 300 s)", s)};
}

// Overfit one 7-frame clip with the reduced config. Runs the same schedule
// with and without the temporal prior.
struct OverfitRun {
  double loss_step50 = 0, loss_tail = 0;  // 2-frame P stage
  double p_only = 0, joint = 0;           // 7-frame eval loss, I frame included, 8 seeds
  double p_bpp = 0;                       // mean P-frame bpp after the joint stage
};

// Eval loss and mean P-frame bpp of a 7-frame rollout, averaged over 8 noise seeds.
std::pair<double, double> eval_avg(const VideoCodec<float>& c, const std::vector<Tensor<float>>& clip, const TrainConfig& tc) {
  double loss = 0, bpp = 0;
  for (uint64_t seed = 1000; seed < 1008; ++seed) {
    Rollout<float> ro;
    loss += eval_loss(c, clip, tc, 7, true, seed, &ro) / 8;
    for (int t = 1; t < 7; ++t) bpp += ro.bpp[t] / 48;
  }
  return {loss, bpp};
}

OverfitRun overfit(bool temporal_prior) {
  auto cfg = ModelConfig::reduced();
  cfg.use_temporal_prior = temporal_prior;
  VideoCodec<float> c(cfg, 1);
  const auto clip = synthetic(64, 7, 1, 2, 1, 0.0);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.lambda_index = 2;
  tc.crop = 64;
  Trainer<float> tr(c, tc);
  const ClipSource<float> src = [&](int, std::mt19937_64&) { return clip; };
  OverfitRun r;
  tr.run_stage(Stage::kIFrame, 1, 300, src);
  const auto p2 = tr.run_stage(Stage::kPFrame, 2, 600, src);
  r.loss_step50 = p2.at(50).loss;
  for (size_t i = p2.size() - 50; i < p2.size(); ++i) r.loss_tail += p2[i].loss / 50;
  tr.run_stage(Stage::kPFrame, 7, 600, src);
  r.p_only = eval_avg(c, clip, tc).first;
  tr.run_stage(Stage::kJoint, 7, 200, src);
  std::tie(r.joint, r.p_bpp) = eval_avg(c, clip, tc);
  return r;
}

Outcome overfit_training() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto full = overfit(true);
  const auto no_tp = overfit(false);
  const double s = seconds_since(t0);
  const double drop = 1 - full.loss_tail / full.loss_step50;
  const bool a = drop >= 0.5, b = full.joint <= full.p_only, c = no_tp.p_bpp >= full.p_bpp, d = s < 3600;
  return {a && b && c && d,
          fmt("2-frame loss %.4f at step 50 -> %.4f (-%.1f%%, need 50%%) [%s]; joint %.5f vs P-only %.5f [%s]; "
              "P bpp without temporal prior %.5f vs full %.5f [%s]; %.0f s (limit 3600 s)",
              full.loss_step50, full.loss_tail, 100 * drop, a ? "ok" : "fail", full.joint, full.p_only,
              b ? "ok" : "fail", no_tp.p_bpp, full.p_bpp, c ? "ok" : "fail", s)};
}

Outcome online_encoder_update() {
  auto cfg = ModelConfig::reduced();
  cfg.lambda_index = 2;
  VideoCodec<float> codec(cfg, 1);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.lambda_index = 2;
  tc.crop = 64;
  Trainer<float> tr(codec, tc);
  const auto src = random_crop_source<float>({synthetic(128, 8, 1, 1, 1, 0.01), synthetic(128, 8, 2, 2, 1, 0.01)}, 64);
  tr.run_stage(Stage::kIFrame, 1, 300, src);
  tr.run_stage(Stage::kPFrame, 2, 300, src);
  tr.run_stage(Stage::kPFrame, 4, 150, src);
  const VideoCodec<float> untouched = codec.clone();

  const auto held = synthetic(128, 12, 9, 1, 2, 0.01);
  OEUConfig oc;  // crop_firstT, T = 8, N = 5
  oc.lambda_index = 2;
  std::vector<OEUGopResult> res;
  std::vector<Tensor<float>> rec;
  std::vector<FrameStats<float>> stats;
  const auto stream = codec.encode_sequence(held, 128, 128, 12, reference_backend(), &rec, &stats,
                                            oeu_gop_encoder(held, oc, reference_backend(), 12, &res));
  const auto& g = res.at(0);
  double emitted = 0;
  for (size_t k = 0; k < held.size(); ++k) {
    double se = 0;
    for (size_t i = 0; i < held[k].size(); ++i) se += std::pow(double(rec[k][i]) - held[k][i], 2);
    emitted += kLambdas[2] * se / held[k].size() + stats[k].bytes * 8.0 / (128 * 128);
  }
  emitted /= held.size();
  const auto dec = untouched.decode_sequence(parse(serialize(stream)), reference_backend());
  int equal = 0;
  for (size_t t = 0; t < dec.size(); ++t) equal += dec[t].vec() == rec[t].vec();
  const bool le = emitted <= g.rd_plain, exact = equal == int(held.size());
  return {le && exact,
          fmt("T=%d N=%d: RD plain %.5f, adapted %.5f, emitted %.5f (%+.2f%%, strict improvement: %s); "
              "update loss %.5f -> %.5f; %d/%zu frames decode bit-exactly on the unmodified decoder",
              g.update.frames_touched, oc.steps, g.rd_plain, g.rd_oeu, emitted, 100 * (emitted / g.rd_plain - 1),
              emitted < g.rd_plain ? "yes" : "no", g.update.initial_loss, g.update.final_loss, equal, held.size())};
}

// Mirrors tests/fixtures/make_msssim_fixture.py.
Tensor<double> fixture_image(int c, int h, int w, int variant, bool distorted) {
  const double ab[3][2] = {{0.05, 0.02}, {0.15, 0.0}, {0.01, 0.08}};
  Tensor<double> t(c, h, w);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double v = 0.5 + 0.3 * std::sin(0.07 * (ch + 1) * j + 0.11 * i) + 0.1 * std::cos(0.05 * i * j / w);
        if (distorted)
          v += ab[variant][0] * std::sin(0.9 * i + 1.3 * j + ch) + ab[variant][1] * std::cos(0.013 * (i + 2 * j));
        t.at(ch, i, j) = v;
      }
  return t;
}

Outcome metrics() {
  RDCurve anchor;
  const double bpp[4] = {0.03, 0.07, 0.15, 0.33}, ps[4] = {28.2, 30.9, 33.4, 35.8};
  for (int i = 0; i < 4; ++i) anchor.points.emplace_back(bpp[i], ps[i]);
  auto scaled = [&](double k) {
    RDCurve c = anchor;
    for (auto& p : c.points) p.first *= k;
    return c;
  };
  const double id = bd_rate(anchor, anchor), up = bd_rate(anchor, scaled(1.1)), down = bd_rate(anchor, scaled(0.5));
  const double p = psnr(Tensor<double>(3, 16, 16, 0.5), Tensor<double>(3, 16, 16, 0.6));

  std::ifstream in(std::string(LRVC_FIXTURE_DIR) + "/msssim_reference.txt");
  double worst = in ? 0 : 1;
  int cases = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    int c, h, w, v;
    double expect;
    is >> c >> h >> w >> v >> expect;
    worst = std::max(worst, std::abs(ms_ssim_value(fixture_image(c, h, w, v, false), fixture_image(c, h, w, v, true)) -
                                     expect));
    ++cases;
  }
  const bool ok = std::abs(id) < 5e-4 && std::abs(up - 10) <= 0.01 && std::abs(down + 50) <= 0.01 &&
                  std::abs(p - 20) < 1e-9 && cases > 0 && worst <= 1e-4;
  return {ok, fmt("bd_rate identity %.4f, x1.1 %+.4f, x0.5 %+.4f; PSNR of a 0.1 offset %.10f dB; "
                  "MS-SSIM worst deviation %.1e over %d fixture cases",
                  id, up, down, p, worst, cases)};
}

BitstreamContainer golden_container() {
  BitstreamContainer s;
  s.header.width = 1920;
  s.header.height = 1080;
  s.header.intra_period = 32;
  s.header.frame_count = 2;
  s.header.lambda_index = 1;
  s.header.config_digest = {1, 2, 3, 4, 5, 6, 7, 8};
  s.frames.push_back({FrameType::kIntra, {{1, 2, 3}, {}}});
  s.frames.push_back({FrameType::kInter, {{0xaa}, {0xbb, 0xcc}, {}, {0xff, 0xff, 0xff, 0xff, 0xff}}});
  return s;
}

Outcome container() {
  std::ifstream in(std::string(LRVC_FIXTURE_DIR) + "/container_golden.lrvc", std::ios::binary);
  const std::vector<uint8_t> golden(std::istreambuf_iterator<char>(in), {});
  const bool bytes = !golden.empty() && serialize(golden_container()) == golden;
  bool identity = false, digest = false;
  try {
    identity = parse(golden) == golden_container() && serialize(parse(golden)) == golden;
  } catch (const FormatError&) {
  }
  auto corrupted = golden;
  if (corrupted.size() > 13) corrupted[13] ^= 0x80;
  const auto expect = golden_container().header.config_digest;
  try {
    parse(corrupted, &expect);
  } catch (const FormatError&) {
    digest = true;
  }
  int truncations = 0, rejected = 0;
  for (size_t n = 0; n < golden.size(); ++n, ++truncations) try {
      parse(std::vector<uint8_t>(golden.begin(), golden.begin() + n));
    } catch (const FormatError&) {
      ++rejected;
    }
  return {bytes && identity && digest && truncations > 0 && rejected == truncations,
          fmt("golden %zu bytes %s; parse/serialize identity %s; corrupted digest %s; %d/%d truncations rejected",
              golden.size(), bytes ? "match" : "differ", identity ? "holds" : "broken",
              digest ? "rejected" : "accepted", rejected, truncations)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"lossless_pipeline", lossless_pipeline},
      {"rate_estimate_tightness", rate_tightness},
      {"resolution_ceiling", resolution_ceiling},
      {"macs_imbalance", macs_imbalance},
      {"gradient_suite", gradient_suite},
      {"overfit_training", overfit_training},
      {"online_encoder_update", online_encoder_update},
      {"metrics", metrics},
      {"container", container},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
