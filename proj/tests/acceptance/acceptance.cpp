// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if
// every line passes.

#include "oracles.hpp"
#include "ste_oracle.hpp"
#include "toy_loss_oracle.hpp"

#include "streamcodec/bitstream.hpp"
#include "streamcodec/codebook.hpp"
#include "streamcodec/mdct.hpp"
#include "streamcodec/nn/layers.hpp"
#include "streamcodec/pipeline/session.hpp"
#include "streamcodec/pipeline/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace streamcodec;
using namespace streamcodec::pipeline;
using testing::numeric_gradient;
using testing::random_matrix;
using testing::relative_error;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Line {
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Line> lines;

void report(const std::string& name, bool pass, const std::string& detail) {
  lines.push_back({name, pass, detail});
  std::cout << (pass ? "PASS" : "FAIL") << "  " << name << "  " << detail << std::endl;
}

void note(const std::string& text) { std::cerr << "  .. " << text << std::endl; }

// ---------------------------------------------------------------------------

void mdct_reconstruction() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> normal(0.0, 0.3);
  double worst = 0.0;
  int signals = 0;
  for (int ws : {40, 80}) {
    const mdct::MdctConfig<double> cfg(ws);
    for (int s = 0; s < 10; ++s, ++signals) {
      std::vector<double> x(16000);
      for (auto& v : x) v = normal(rng);
      mdct::AnalysisState<double> analysis(ws);
      mdct::OlaState<double> ola(ws);
      std::vector<double> y;
      VectorXd chunk(ws);
      for (std::size_t at = 0; at < x.size() + ws; at += ws) {
        for (int i = 0; i < ws; ++i) chunk[i] = at + i < x.size() ? x[at + i] : 0.0;
        const VectorXd out = mdct::synthesis_push<double>(ola, mdct::analysis_push<double>(analysis, chunk, cfg), cfg);
        y.insert(y.end(), out.data(), out.data() + out.size());
      }
      // Output trails input by one frame shift; the first and last frame are edges.
      for (std::size_t n = ws; n + ws < x.size(); ++n) worst = std::max(worst, std::abs(y[n + ws] - x[n]));
    }
  }
  const double t = seconds_since(t0);
  report("mdct perfect reconstruction", worst < 1e-10 && t < 5.0,
         fmt("%d signals, max error %.2e, %.3f s", signals, worst, t));
}

void quantizer_round_trip() {
  std::uint64_t failures = 0;
  const auto low = rsvq::QuantizerConfig::low_profile();
  const auto high = rsvq::QuantizerConfig::high_profile();
  auto radices = [](const rsvq::QuantizerConfig& c) {
    return std::vector<int>(c.sq_stages[0].levels.begin(), c.sq_stages[0].levels.end());
  };
  const auto rl = radices(low);
  const std::uint64_t cap_low = low.stage_capacity(0);
  for (std::uint64_t t = 0; t < cap_low; ++t)
    if (rsvq::sq_tokenize(rsvq::sq_detokenize(t, rl), rl) != t) ++failures;

  std::mt19937_64 rng(102);
  const auto rh = radices(high);
  const std::uint64_t cap_high = high.stage_capacity(0);
  std::uniform_int_distribution<std::uint64_t> token(0, cap_high - 1);
  for (int i = 0; i < 100000; ++i) {
    const std::uint64_t t = token(rng);
    const auto d = rsvq::sq_detokenize(t, rh);
    for (std::size_t b = 0; b < d.size(); ++b)
      if (d[b] < 0 || d[b] >= rh[b]) ++failures;
    if (rsvq::sq_tokenize(d, rh) != t) ++failures;
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  int latents = 0;
  for (const auto& cfg : {low, high}) {
    const auto q = rsvq::Quantizer<double>::random(cfg, rng);
    for (int i = 0; i < 10000; ++i, ++latents) {
      VectorXd z(cfg.latent_dim);
      for (auto& v : z) v = normal(rng);
      const auto r = q.quantize(z);
      if (q.dequantize(r.tokens, cfg.num_stages()) != r.z_hat) ++failures;
    }
  }
  report("quantizer round trip", failures == 0,
         fmt("%llu + 100000 token checks (capacities %llu / %llu), %d latents, %llu failures",
             static_cast<unsigned long long>(cap_low), static_cast<unsigned long long>(cap_low),
             static_cast<unsigned long long>(cap_high), latents, static_cast<unsigned long long>(failures)));
}

void bitrate_table() {
  struct Row {
    int sr;
    const char* profile;
    double nominal, tolerance, effective;
  };
  const Row rows[] = {{16000, "low", 1500.0, 1e-9, 1500.0},
                      {16000, "high", 2002.7, 0.1, 2050.0},
                      {48000, "low", 4500.0, 1e-9, 4500.0},
                      {48000, "high", 6008.2, 0.1, 6150.0}};
  bool ok = true;
  std::ostringstream detail;
  for (const auto& r : rows) {
    const auto cfg = ModelConfig::for_profile(r.profile, r.sr);
    bitstream::StreamHeader h;
    h.sample_rate = static_cast<std::uint32_t>(r.sr);
    h.frame_shift = static_cast<std::uint32_t>(cfg.frame_shift());
    h.resample = static_cast<std::uint32_t>(cfg.net.resample);
    h.quantizer = cfg.quantizer;
    const double nominal = bitstream::theoretical_bitrate(h);
    const double effective = bitstream::frame_width(cfg.quantizer) * h.frame_rate();
    ok = ok && std::abs(nominal - r.nominal) <= r.tolerance && std::abs(effective - r.effective) < 1e-9;
    detail << fmt("%d/%s %.1f (%.0f fixed)  ", r.sr / 1000, r.profile, nominal, effective);
  }
  report("bitrate table", ok, detail.str());
}

void latency(const CodecModel& trained) {
  const auto a = measure_latency(trained);
  const CodecModel wide(ModelConfig::for_profile("low", 48000), 7);
  const auto b = measure_latency(wide);
  const std::string ms_a = fmt("%.2f", a.ms), ms_b = fmt("%.2f", b.ms);
  report("latency", a.samples == 320 && b.samples == 320 && ms_a == "20.00" && ms_b == "6.67",
         fmt("%llu samples = %s ms at 16 kHz, %llu samples = %s ms at 48 kHz",
             static_cast<unsigned long long>(a.samples), ms_a.c_str(), static_cast<unsigned long long>(b.samples),
             ms_b.c_str()));
}

void causality(const CodecModel& model) {
  std::mt19937_64 rng(104);
  std::normal_distribution<double> delta(0.0, 0.5);
  const auto& net = model.config().net;
  const int R = net.resample;
  const int U = 12;
  int enc_fail = 0, dec_fail = 0, pipe_fail = 0;

  const MatrixXd frames = random_matrix(net.mdct_bins, U * R, rng, 0.3);
  const MatrixXd z0 = model.encoder().forward(frames);
  std::uniform_int_distribution<int> frame_pos(0, U * R - 1);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = frame_pos(rng);
    MatrixXd x = frames;
    for (int t = p; t < U * R; ++t)
      for (int i = 0; i < x.rows(); ++i) x(i, t) += delta(rng);
    const MatrixXd z = model.encoder().forward(x);
    // Latent u sees frames up to (u + 1) R - 1.
    for (int u = 0; (u + 1) * R - 1 < p; ++u)
      if (z.col(u) != z0.col(u)) {
        ++enc_fail;
        break;
      }
  }

  const MatrixXd latents = random_matrix(net.latent_dim, U, rng);
  const MatrixXd y0 = model.decoder().forward(latents);
  std::uniform_int_distribution<int> latent_pos(0, U - 1);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = latent_pos(rng);
    MatrixXd l = latents;
    for (int u = p; u < U; ++u)
      for (int i = 0; i < l.rows(); ++i) l(i, u) += delta(rng);
    const MatrixXd y = model.decoder().forward(l);
    if (p > 0 && y.leftCols(p * R) != y0.leftCols(p * R)) ++dec_fail;
  }

  const std::size_t G = static_cast<std::size_t>(model.config().group_samples());
  std::vector<double> audio(10 * G);
  std::normal_distribution<double> normal(0.0, 0.2);
  for (auto& v : audio) v = normal(rng);
  CodecSession base(model);
  const auto out0 = base.push(audio);
  std::uniform_int_distribution<std::size_t> sample_pos(0, audio.size() - 1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t p = sample_pos(rng);
    auto x = audio;
    for (std::size_t i = p; i < x.size(); ++i) x[i] += delta(rng);
    CodecSession s(model);
    const auto out = s.push(x);
    // Everything emitted before the group holding sample p was complete.
    const std::size_t safe = p / G * G;
    if (!std::equal(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(safe), out0.begin())) ++pipe_fail;
  }
  report("causality", enc_fail + dec_fail + pipe_fail == 0,
         fmt("100 trials each, failures: encoder %d, decoder %d, pipeline %d", enc_fail, dec_fail, pipe_fail));
}

void streaming_equivalence(const CodecModel& model, const Audio& audio) {
  std::mt19937_64 rng(105);
  auto partition = [&] {
    std::vector<std::size_t> sizes;
    std::uniform_int_distribution<std::size_t> len(1, 2000);
    for (std::size_t at = 0; at < audio.samples.size();) {
      const std::size_t s = std::min(len(rng), audio.samples.size() - at);
      sizes.push_back(s);
      at += s;
    }
    return sizes;
  };
  const auto whole = encode_audio(model, audio);
  const auto whole_wav = encode_wav(decode_stream(model, whole), SampleFormat::Float32);
  int byte_fail = 0, wav_fail = 0;
  for (int trial = 0; trial < 20; ++trial) {
    EncodeSession es(model);
    bitstream::StreamWriter w(es.header());
    std::size_t at = 0;
    for (std::size_t s : partition()) {
      for (const auto& f : es.push(std::span(audio.samples).subspan(at, s))) w.push(f);
      at += s;
    }
    for (const auto& f : es.flush()) w.push(f);
    const auto bytes = w.bytes();
    if (bytes != whole) ++byte_fail;

    // Decode the chunked stream frame by frame.
    bitstream::StreamReader reader(bytes);
    DecodeSession ds(model);
    Audio out;
    out.sample_rate = audio.sample_rate;
    while (!reader.done()) {
      const auto y = ds.push(reader.next());
      out.samples.insert(out.samples.end(), y.begin(), y.end());
    }
    if (encode_wav(out, SampleFormat::Float32) != whole_wav) ++wav_fail;
  }
  report("streaming equivalence", byte_fail == 0 && wav_fail == 0,
         fmt("20 partitions of %.1f s, bitstream mismatches %d, decoded wav mismatches %d",
             static_cast<double>(audio.samples.size()) / audio.sample_rate, byte_fail, wav_fail));
}

// ---------------------------------------------------------------------------

template <typename Layer>
double layer_gradient_error(Layer& layer, nn::ParameterList params, MatrixXd x, std::mt19937_64& rng) {
  const MatrixXd y0 = layer.forward_train(x);
  const MatrixXd G = random_matrix(y0.rows(), y0.cols(), rng);
  for (auto* p : params) p->zero_grad();
  layer.forward_train(x);
  const MatrixXd dx = layer.backward(G);
  auto loss = [&] { return (G.array() * layer.forward_train(x).array()).sum(); };
  double worst = relative_error(dx, numeric_gradient(x, loss));
  for (auto* p : params) {
    const MatrixXd analytic = p->grad;
    worst = std::max(worst, relative_error(analytic, numeric_gradient(p->value, loss)));
  }
  return worst;
}

double ste_gradient_error(int& points) {
  std::mt19937_64 rng(106);
  rsvq::QuantizerConfig cfg;
  cfg.latent_dim = 4;
  cfg.sq_stages = {rsvq::SqSchedule{{4, 5}}};
  cfg.ivq_stages = {rsvq::IvqSchedule{3, 6}, rsvq::IvqSchedule{2, 5}};
  double worst = 0.0;
  points = 0;
  for (int attempt = 0; attempt < 1000 && points < 100; ++attempt) {
    auto q = rsvq::Quantizer<double>::random(cfg, rng);
    for (auto& p : q.ivq()) p.codebook = random_matrix(p.codebook.rows(), p.codebook.cols(), rng, 0.5);
    MatrixXd Z = random_matrix(4, 3, rng);
    const auto f = rsvq::rsvq_forward_training(Z, q);
    if (testing::boundary_margin(q, f) < 1e-3) continue;
    ++points;
    const auto fr = testing::freeze(q, f);
    const MatrixXd G = random_matrix(4, 3, rng);
    std::vector<MatrixXd> H;
    for (const auto& p : q.ivq()) H.push_back(random_matrix(p.code_dim(), 3, rng));
    auto loss = [&] {
      const auto o = testing::surrogate(Z, q, fr);
      double L = (G.array() * o.z_hat.array()).sum();
      for (std::size_t j = 0; j < H.size(); ++j) L += (H[j].array() * o.ivq_projected[j].array()).sum();
      return L;
    };
    auto grads = rsvq::QuantizerGrads<double>::zeros_like(q);
    const MatrixXd dZ = rsvq::rsvq_backward(q, f, G, H, grads);
    worst = std::max(worst, relative_error(dZ, numeric_gradient(Z, loss)));
    for (std::size_t i = 0; i < q.sq().size(); ++i) {
      worst = std::max(worst, relative_error(grads.sq[i].down, numeric_gradient(q.sq()[i].down, loss)));
      worst = std::max(worst, relative_error(grads.sq[i].up, numeric_gradient(q.sq()[i].up, loss)));
    }
    for (std::size_t j = 0; j < q.ivq().size(); ++j) {
      worst = std::max(worst, relative_error(grads.ivq[j].down, numeric_gradient(q.ivq()[j].down, loss)));
      worst = std::max(worst, relative_error(grads.ivq[j].up, numeric_gradient(q.ivq()[j].up, loss)));
    }
  }
  return worst;
}

void gradient_checks() {
  std::mt19937_64 rng(107);
  std::vector<std::pair<std::string, double>> errors;
  {
    nn::Linear l("linear", 2, 2);
    l.init(rng);
    errors.emplace_back("linear", layer_gradient_error(l, l.parameters(), random_matrix(2, 8, rng), rng));
  }
  {
    double worst = 0.0;
    for (const nn::ConvSpec spec : {nn::ConvSpec{2, 2, 3, 1, 1}, nn::ConvSpec{2, 2, 4, 4, 1}, nn::ConvSpec{2, 2, 3, 2, 2}}) {
      nn::CausalConv1d c("conv", spec);
      c.init(rng);
      worst = std::max(worst, layer_gradient_error(c, c.parameters(), random_matrix(2, 8, rng), rng));
    }
    errors.emplace_back("causal conv", worst);
  }
  {
    nn::TransposedCausalConv1d t("upsample", 2, 2, 2, 2);
    t.init(rng);
    errors.emplace_back("transposed conv", layer_gradient_error(t, t.parameters(), random_matrix(2, 8, rng), rng));
  }
  {
    nn::DepthwiseCausalConv1d d("dwconv", 2, 4);
    d.init(rng);
    errors.emplace_back("depthwise conv", layer_gradient_error(d, d.parameters(), random_matrix(2, 8, rng), rng));
  }
  {
    nn::LayerNorm ln("norm", 3, 1e-6);
    ln.gamma.value = random_matrix(3, 1, rng);
    ln.beta.value = random_matrix(3, 1, rng);
    errors.emplace_back("layer norm", layer_gradient_error(ln, ln.parameters(), random_matrix(3, 8, rng), rng));
  }
  {
    nn::Gelu g;
    errors.emplace_back("gelu", layer_gradient_error(g, {}, random_matrix(2, 8, rng), rng));
  }
  {
    nn::Grn g("grn", 2, 1e-6);
    g.gamma.value = random_matrix(2, 1, rng);
    g.beta.value = random_matrix(2, 1, rng);
    errors.emplace_back("grn", layer_gradient_error(g, g.parameters(), random_matrix(2, 8, rng), rng));
  }
  {
    nn::Mcnx2Block b("block", {3, 3, 2, 1e-6});
    b.init(rng);
    b.grn().gamma.value = random_matrix(6, 1, rng);
    b.grn().beta.value = random_matrix(6, 1, rng);
    errors.emplace_back("mcnx2 block", layer_gradient_error(b, b.parameters(), random_matrix(3, 8, rng), rng));
  }
  {
    int points = 0;
    const double e = ste_gradient_error(points);
    errors.emplace_back(fmt("straight-through (%d points)", points), points == 100 ? e : 1.0);
  }
  {
    const MatrixXd proj = random_matrix(3, 6, rng);
    MatrixXd cb = random_matrix(3, 5, rng);
    MatrixXd v = proj;
    const auto s = codebook::balancing_surrogate(proj, cb, 1.0);
    auto loss = [&] { return codebook::balancing_surrogate(v, cb, 1.0).value; };
    errors.emplace_back("balancing", std::max(relative_error(s.d_projected, numeric_gradient(v, loss)),
                                              relative_error(s.d_codebook, numeric_gradient(cb, loss))));
  }
  {
    MatrixXd pre = random_matrix(3, 1, rng), sel = random_matrix(3, 1, rng);
    const auto g = codebook::commitment_loss_grad(pre.col(0), sel.col(0), 0.25);
    const MatrixXd sel0 = sel, pre0 = pre;
    // The stop-gradient splits the loss into one term per argument.
    auto lp = [&] { return 0.25 * (pre - sel0).squaredNorm(); };
    auto ls = [&] { return (pre0 - sel).squaredNorm(); };
    errors.emplace_back("commitment", std::max(relative_error(MatrixXd(g.d_pre), numeric_gradient(pre, lp)),
                                               relative_error(MatrixXd(g.d_selected), numeric_gradient(sel, ls))));
  }
  for (bool health : {true, false}) {
    TrainConfig tc;
    tc.codebook_health = health;
    auto [m2, f2] = testing::micro_instance(health ? 11 : 12);
    errors.emplace_back(health ? "toy loss, 2 channels" : "toy loss, 2 channels, plain vq",
                        testing::overall_relative_error(testing::check_toy_gradients(m2, f2, tc)));
    auto [m3, f3] = testing::micro_instance(health ? 13 : 14, 3);
    double worst = 0.0;
    for (const auto& g : testing::check_toy_gradients(m3, f3, tc)) worst = std::max(worst, g.relative_error());
    errors.emplace_back(health ? "toy loss per tensor, 3 channels" : "toy loss per tensor, 3 channels, plain vq",
                        worst);
  }
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errors) {
    note(fmt("gradient %-44s rel err %.2e", name.c_str(), e));
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  }
  report("gradient checks", worst < 1e-4,
         fmt("%zu groups, worst relative error %.2e (%s)", errors.size(), worst, worst_name.c_str()));
}

// ---------------------------------------------------------------------------

struct TrainedRun {
  CodecModel model;
  double probe_start = 0.0;
  double probe_sanity = 0.0;
  std::uint64_t fingerprint_sanity = 0;
  std::vector<StepRecord> sanity_records;
  double seconds = 0.0;
};

TrainConfig toy_train_config(long steps, bool health) {
  TrainConfig tc;
  tc.steps = steps;
  tc.seed = 7;
  tc.codebook_health = health;
  return tc;
}

/// Trains the low-profile toy model from seed 7, recording the probe loss and
/// the weights after `sanity_steps`.
TrainedRun train(const SyntheticCorpus& corpus, long steps, long sanity_steps, bool health) {
  const auto t0 = Clock::now();
  TrainedRun r{CodecModel(ModelConfig::for_profile("low"), 7)};
  Trainer t(r.model, corpus, toy_train_config(steps, health));
  r.probe_start = t.probe_mse();
  while (t.steps_done() < steps) {
    const auto rec = t.step();
    if (t.steps_done() <= sanity_steps) r.sanity_records.push_back(rec);
    if (t.steps_done() == sanity_steps) {
      r.probe_sanity = t.probe_mse();
      r.fingerprint_sanity = r.model.fingerprint();
    }
    if (t.steps_done() % 500 == 0)
      note(fmt("%s step %ld  mse %.5f  total %.5f  %.0f s", health ? "(a)" : "(b)", t.steps_done(), rec.mse,
               rec.total, seconds_since(t0)));
  }
  r.seconds = seconds_since(t0);
  return r;
}

std::string stage_list(const codebook::UtilizationReport& u, auto field) {
  std::string s;
  for (const auto& st : u.stages) s += (s.empty() ? "" : "/") + fmt("%.3f", field(st));
  return s;
}

void ablation(const TrainedRun& a, const TrainedRun& b, const SyntheticCorpus& test, double seconds) {
  const auto ua = evaluate_utilization(a.model, test);
  const auto ub = evaluate_utilization(b.model, test);
  note("(a) " + ua.to_record());
  note("(b) " + ub.to_record());
  const std::size_t n_sq = a.model.config().quantizer.sq_stages.size();
  bool per_stage = true, cur_floor = true;
  for (std::size_t s = n_sq; s < ua.stages.size(); ++s) {
    per_stage = per_stage && ua.stages[s].cur >= ub.stages[s].cur;
    cur_floor = cur_floor && ua.stages[s].cur >= 0.95;
  }
  const bool pass = per_stage && cur_floor && ua.bitrate_efficiency >= 0.9 &&
                    ua.bitrate_efficiency > ub.bitrate_efficiency && seconds < 1800.0;
  auto cur = [](const codebook::StageMetrics& m) { return m.cur; };
  report("codebook health ablation", pass,
         fmt("CUR (a) %s vs (b) %s, BE (a) %.3f vs (b) %.3f, %zu frames, %.0f s", stage_list(ua, cur).c_str(),
             stage_list(ub, cur).c_str(), ua.bitrate_efficiency, ub.bitrate_efficiency, ua.window, seconds));
}

void coarse_to_refined(const CodecModel& model, const SyntheticCorpus& test) {
  const int stages = model.config().quantizer.num_stages();
  const int n_sq = static_cast<int>(model.config().quantizer.sq_stages.size());
  std::vector<double> l;
  std::string detail;
  for (int s = n_sq; s <= stages; ++s) {
    l.push_back(mean_partial_lsd(model, test, s));
    detail += (detail.empty() ? "" : " -> ") + fmt("%.4f", l.back());
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < l.size(); ++i) decreasing = decreasing && l[i] < l[i - 1];
  report("coarse to refined lsd", decreasing, "mean LSD " + detail + fmt(" (log10 magnitude) over %d clips", test.size()));
}

void training_sanity(const TrainedRun& a, const SyntheticCorpus& corpus, long sanity_steps) {
  // An independent run with the same seed must retrace the first steps exactly.
  CodecModel m(ModelConfig::for_profile("low"), 7);
  Trainer t(m, corpus, toy_train_config(sanity_steps, true));
  bool same = t.probe_mse() == a.probe_start;
  for (long i = 0; i < sanity_steps; ++i) {
    const auto rec = t.step();
    const auto& ref = a.sanity_records[static_cast<std::size_t>(i)];
    same = same && rec.mse == ref.mse && rec.total == ref.total && rec.reinitialized == ref.reinitialized;
  }
  same = same && m.fingerprint() == a.fingerprint_sanity && t.probe_mse() == a.probe_sanity;
  const double ratio = a.probe_sanity / a.probe_start;
  report("training sanity", ratio <= 0.5 && same,
         fmt("mdct mse %.5f -> %.5f after %ld steps (ratio %.3f), rerun %s", a.probe_start, a.probe_sanity,
             sanity_steps, ratio, same ? "bit-identical" : "differs"));
}

void real_time(const CodecModel& model, const SyntheticCorpus& test) {
  Audio audio;
  audio.sample_rate = model.config().sample_rate;
  for (int i = 0; audio.samples.size() < static_cast<std::size_t>(10 * audio.sample_rate); ++i) {
    const auto& c = test.clip(i % test.size());
    audio.samples.insert(audio.samples.end(), c.begin(), c.end());
  }
  audio.samples.resize(static_cast<std::size_t>(10 * audio.sample_rate));
  const auto p = measure_rtf(model, audio, 3);
  report("real-time factor", p.rtf_encode < 1.0 && p.rtf_decode < 1.0,
         fmt("encode %.4f, decode %.4f on %.0f s of audio (mdct alone %.4f)", p.rtf_encode, p.rtf_decode,
             p.audio_seconds, p.rtf_passthrough));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the streaming codec"};
  long steps = 2000, sanity_steps = 200;
  int test_clips = 200;
  bool skip_training = false;
  app.add_option("--steps", steps, "Training steps for the ablation runs");
  app.add_option("--sanity-steps", sanity_steps, "Steps for the training sanity check");
  app.add_option("--test-clips", test_clips, "Held-out clips used for utilisation and LSD");
  app.add_flag("--skip-training", skip_training, "Only run the checks that need no trained model");
  CLI11_PARSE(app, argc, argv);

  try {
    mdct_reconstruction();
    quantizer_round_trip();
    bitrate_table();

    const SyntheticCorpus corpus{CorpusConfig{}};
    const SyntheticCorpus test = heldout_corpus(corpus.config(), test_clips);
    Audio clip;
    clip.sample_rate = corpus.config().sample_rate;
    for (int i = 0; i < 2; ++i) clip.samples.insert(clip.samples.end(), test.clip(i).begin(), test.clip(i).end());

    const CodecModel untrained(ModelConfig::for_profile("low"), 7);
    causality(untrained);
    streaming_equivalence(untrained, clip);
    gradient_checks();

    if (skip_training) {
      latency(untrained);
      real_time(untrained, test);
    } else {
      const auto t0 = Clock::now();
      const TrainedRun a = train(corpus, steps, sanity_steps, true);
      const TrainedRun b = train(corpus, steps, sanity_steps, false);
      const double seconds = seconds_since(t0);
      ablation(a, b, test, seconds);
      coarse_to_refined(a.model, test);
      training_sanity(a, corpus, sanity_steps);
      latency(a.model);
      real_time(a.model, test);
    }
  } catch (const std::exception& e) {
    report("acceptance run", false, std::string("aborted: ") + e.what());
  }

  int failed = 0;
  for (const auto& l : lines) failed += l.pass ? 0 : 1;
  std::cout << (failed == 0 ? "all criteria passed" : fmt("%d criteria failed", failed)) << std::endl;
  return failed == 0 ? 0 : 1;
}
