// streamcodec command-line tool.
//
// Exit codes: 0 success, 1 usage or configuration, 2 I/O, 3 corrupt stream,
// 4 numeric failure.

#include "streamcodec/bitstream.hpp"
#include "streamcodec/codebook.hpp"
#include "streamcodec/mdct.hpp"
#include "streamcodec/metrics.hpp"
#include "streamcodec/pipeline/session.hpp"
#include "streamcodec/pipeline/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>

using namespace streamcodec;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kCorrupt = 3, kNumeric = 4 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Token:
      return kUsage;
    case ErrorKind::Io:
      return kIo;
    case ErrorKind::Stream:
    case ErrorKind::Corruption:
      return kCorrupt;
    case ErrorKind::Numeric:
    case ErrorKind::Metric:
    case ErrorKind::Training:
      return kNumeric;
  }
  return kNumeric;
}

struct ModelOptions {
  std::string checkpoint;
  std::string profile = "low";
  int sample_rate = 16000;
  std::uint64_t seed = 7;
};

void add_model_options(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--checkpoint", m.checkpoint, "Model checkpoint (untrained model from --seed if absent)");
  cmd->add_option("--profile", m.profile, "Quantizer profile")->check(CLI::IsMember({"low", "high"}));
  cmd->add_option("--sample-rate", m.sample_rate, "Sample rate in Hz")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", m.seed, "Initialisation seed");
}

pipeline::CodecModel load_model(const ModelOptions& m) {
  if (!m.checkpoint.empty()) return pipeline::CodecModel::load(m.checkpoint);
  std::cerr << "note: no --checkpoint given, using an untrained model (seed " << m.seed << ")\n";
  return pipeline::CodecModel(pipeline::ModelConfig::for_profile(m.profile, m.sample_rate), m.seed);
}

void print(const json& j, const std::string& format) {
  if (format == "json") {
    std::cout << j.dump() << "\n";
    return;
  }
  for (const auto& [key, value] : j.items()) {
    if (value.is_number_float()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f", value.get<double>());
      std::cout << key << ": " << buf << "\n";
    } else {
      std::cout << key << ": " << value.dump() << "\n";
    }
  }
}

json perf_json(const pipeline::PerfReport& r) {
  json j;
  j["frames"] = r.frames;
  j["audio_seconds"] = r.audio_seconds;
  if (r.rtf_encode > 0) j["rtf_encode"] = r.rtf_encode;
  if (r.rtf_decode > 0) j["rtf_decode"] = r.rtf_decode;
  j["latency_samples"] = r.latency_samples;
  j["latency_ms"] = r.latency_ms;
  return j;
}

std::string bps(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// selftest

struct Check {
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Check> selftest() {
  std::vector<Check> out;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 0.3);

  {
    double worst = 0.0;
    for (int ws : {40, 80}) {
      std::vector<double> x(16000);
      for (auto& v : x) v = normal(rng);
      const mdct::MdctConfig<double> cfg(ws);
      const auto y = mdct::synthesize(mdct::analyze<double>(x, cfg), cfg);
      for (std::size_t n = ws; n + 2 * ws < x.size(); ++n) worst = std::max(worst, std::abs(y[n + ws] - x[n]));
    }
    out.push_back({"mdct perfect reconstruction", worst < 1e-10, "max error " + std::to_string(worst)});
  }
  {
    const auto cfg = rsvq::QuantizerConfig::low_profile();
    const std::vector<int> radices(cfg.sq_stages[0].levels.begin(), cfg.sq_stages[0].levels.end());
    bool ok = true;
    for (std::uint64_t t = 0; t < cfg.stage_capacity(0); ++t)
      ok = ok && rsvq::sq_tokenize(rsvq::sq_detokenize(t, radices), radices) == t;
    out.push_back({"sq token bijection (low profile)", ok, std::to_string(cfg.stage_capacity(0)) + " codes"});
  }
  {
    bitstream::StreamHeader h;
    h.sample_rate = 16000;
    h.frame_shift = 40;
    h.resample = 8;
    h.quantizer = rsvq::QuantizerConfig::low_profile();
    const double low = bitstream::theoretical_bitrate(h);
    h.quantizer = rsvq::QuantizerConfig::high_profile();
    const double high = bitstream::theoretical_bitrate(h);
    out.push_back({"bitrate table", std::abs(low - 1500.0) < 1e-9 && std::abs(high - 2002.7) < 0.1,
                   bps(low) + " / " + bps(high) + " bps"});
  }

  auto cfg = pipeline::ModelConfig::for_profile("low");
  cfg.net.channels = 16;
  cfg.net.num_blocks = 2;
  const pipeline::CodecModel model(cfg, 3);
  pipeline::Audio audio;
  for (int i = 0; i < 6400; ++i) audio.samples.push_back(normal(rng));
  {
    const auto whole = pipeline::encode_audio(model, audio);
    bool ok = true;
    for (std::size_t chunk : {1, 37, 320, 999}) ok = ok && pipeline::encode_audio(model, audio, chunk) == whole;
    out.push_back({"streaming equals whole-input encode", ok, "4 chunkings"});
  }
  {
    pipeline::CodecSession base(model);
    const auto y0 = base.push(audio.samples);
    bool ok = true;
    std::uniform_int_distribution<std::size_t> pos(0, audio.samples.size() - 1);
    for (int trial = 0; trial < 10; ++trial) {
      auto x = audio.samples;
      const std::size_t p = pos(rng);
      for (std::size_t i = p; i < x.size(); ++i) x[i] += 1.0;
      pipeline::CodecSession s(model);
      const auto y = s.push(x);
      for (std::size_t n = 0; n < p / 320 * 320; ++n) ok = ok && y[n] == y0[n];
    }
    out.push_back({"pipeline causality", ok, "10 trials"});
  }
  {
    const auto lat = pipeline::measure_latency(model);
    out.push_back({"latency", lat.samples == 320, std::to_string(lat.samples) + " samples"});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming low-bitrate MDCT codec with residual scalar-vector quantization"};
  app.require_subcommand(1);
  std::string report = "text";
  auto report_option = [&report](CLI::App* cmd) {
    cmd->add_option("--report", report, "Report format")->check(CLI::IsMember({"text", "json"}));
  };

  // encode
  auto* enc = app.add_subcommand("encode", "Encode a mono WAV file to a bitstream");
  ModelOptions enc_model;
  std::string enc_in, enc_out;
  std::size_t chunk_samples = 0;
  enc->add_option("input", enc_in, "Input WAV")->required();
  enc->add_option("output", enc_out, "Output bitstream")->required();
  enc->add_option("--chunk-samples", chunk_samples, "Feed the encoder in chunks of this many samples");
  add_model_options(enc, enc_model);
  report_option(enc);

  // decode
  auto* dec = app.add_subcommand("decode", "Decode a bitstream to a WAV file");
  ModelOptions dec_model;
  std::string dec_in, dec_out, dec_format = "float32";
  int stages = -1;
  dec->add_option("input", dec_in, "Input bitstream")->required();
  dec->add_option("output", dec_out, "Output WAV")->required();
  dec->add_option("--format", dec_format, "Output sample format")->check(CLI::IsMember({"pcm16", "float32"}));
  dec->add_option("--stages", stages, "Decode using only the first N quantizer stages");
  add_model_options(dec, dec_model);
  report_option(dec);

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Train the toy model on the synthetic corpus");
  ModelOptions train_model;
  pipeline::TrainConfig tcfg;
  std::string train_out, train_log, precision = "f64";
  bool plain_vq = false;
  int clips = pipeline::CorpusConfig{}.clips;
  train->add_option("--out", train_out, "Checkpoint to write")->required();
  train->add_option("--log", train_log, "Metrics log (one JSON record per epoch)");
  train->add_option("--steps", tcfg.steps, "Training steps");
  train->add_option("--clips", clips, "Corpus size in 2 s clips");
  train->add_option("--precision", precision, "Checkpoint precision")->check(CLI::IsMember({"f64", "f32"}));
  train->add_flag("--plain-vq", plain_vq, "Disable codebook clustering and balancing");
  add_model_options(train, train_model);
  report_option(train);

  // analyze
  auto* ana = app.add_subcommand("analyze", "Print stream header, bitrates and codebook usage");
  std::string ana_in, reference, decoded, spectrogram_wav, spectrogram_csv;
  ana->add_option("input", ana_in, "Bitstream")->required();
  ana->add_option("--reference", reference, "Reference WAV for LSD");
  ana->add_option("--decoded", decoded, "Decoded WAV for LSD (codec delay removed from the header)");
  ana->add_option("--spectrogram", spectrogram_wav, "WAV whose log spectrogram is exported");
  ana->add_option("--spectrogram-csv", spectrogram_csv, "CSV path for the spectrogram export");
  report_option(ana);

  auto* self = app.add_subcommand("selftest", "Run the built-in invariant checks");
  report_option(self);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*enc) {
      const auto model = load_model(enc_model);
      print(perf_json(pipeline::encode_file(enc_in, enc_out, model, chunk_samples)), report);
    } else if (*dec) {
      const auto model = load_model(dec_model);
      const auto fmt = dec_format == "pcm16" ? pipeline::SampleFormat::Pcm16 : pipeline::SampleFormat::Float32;
      if (stages >= 0) {
        const auto bytes = bitstream::read_file(dec_in);
        pipeline::write_wav(dec_out, pipeline::decode_stream(model, bytes, stages), fmt);
        print(json{{"stages", stages}}, report);
      } else {
        print(perf_json(pipeline::decode_file(dec_in, dec_out, model, fmt)), report);
      }
    } else if (*train) {
      auto mcfg = pipeline::ModelConfig::for_profile(train_model.profile, train_model.sample_rate);
      pipeline::CodecModel model(mcfg, train_model.seed);
      if (!train_model.checkpoint.empty()) model = pipeline::CodecModel::load(train_model.checkpoint);
      pipeline::CorpusConfig ccfg;
      ccfg.sample_rate = model.config().sample_rate;
      ccfg.clips = clips;
      ccfg.seed = train_model.seed;
      const pipeline::SyntheticCorpus corpus(ccfg);
      tcfg.seed = train_model.seed;
      tcfg.codebook_health = !plain_vq;
      pipeline::Trainer trainer(model, corpus, tcfg);
      std::ofstream log;
      if (!train_log.empty()) {
        log.open(train_log);
        if (!log) throw IoError("cannot open metrics log " + train_log);
      }
      const double mse0 = trainer.probe_mse();
      trainer.run([&](const pipeline::EpochRecord& e) {
        if (log) log << e.to_record() << "\n" << std::flush;
        if (report == "text") std::cerr << "epoch " << e.epoch << " step " << e.step << " mse " << e.mse << "\n";
      });
      model.save(train_out, precision == "f32" ? pipeline::Precision::Float32 : pipeline::Precision::Float64);
      json j;
      j["steps"] = trainer.steps_done();
      j["probe_mse_start"] = mse0;
      j["probe_mse_end"] = trainer.probe_mse();
      j["fingerprint"] = model.fingerprint();
      print(j, report);
    } else if (*ana) {
      const auto bytes = bitstream::read_file(ana_in);
      const auto stream = bitstream::parse(bytes);
      const auto& h = stream.header;
      json j;
      j["sample_rate"] = h.sample_rate;
      j["frame_shift"] = h.frame_shift;
      j["resample"] = h.resample;
      j["delay_samples"] = h.delay_samples;
      j["frames"] = stream.frames.size();
      j["quantizer"] = json::parse(h.quantizer.to_json());
      j["bitrate"] = bps(bitstream::theoretical_bitrate(h)) + " bps (theoretical), " +
                     bps(stream.effective_bitrate()) + " bps (effective)";
      if (!stream.frames.empty()) {
        std::vector<std::vector<std::uint64_t>> tokens(static_cast<std::size_t>(h.quantizer.num_stages()));
        std::vector<std::uint64_t> caps;
        for (int s = 0; s < h.quantizer.num_stages(); ++s) caps.push_back(h.quantizer.stage_capacity(s));
        for (const auto& f : stream.frames) {
          std::size_t s = 0;
          for (auto t : f.sq_tokens) tokens[s++].push_back(t);
          for (auto t : f.ivq_tokens) tokens[s++].push_back(t);
        }
        j["utilization"] = json::parse(codebook::utilization(tokens, caps).to_record());
      }
      if (!reference.empty() || !decoded.empty()) {
        if (reference.empty() || decoded.empty()) throw ConfigError("--reference and --decoded go together");
        const auto ref = pipeline::read_wav(reference);
        const auto est = pipeline::read_wav(decoded);
        if (ref.sample_rate != est.sample_rate) throw ConfigError("reference and decoded sample rates differ");
        const std::size_t delay = h.delay_samples;
        if (est.samples.size() <= delay) throw MetricError("decoded audio is shorter than the codec delay");
        const std::size_t n = std::min(ref.samples.size(), est.samples.size() - delay);
        j["lsd"] = metrics::lsd(std::span(ref.samples).first(n), std::span(est.samples).subspan(delay, n),
                                metrics::LsdConfig::for_sample_rate(ref.sample_rate));
      }
      if (!spectrogram_wav.empty()) {
        if (spectrogram_csv.empty()) throw ConfigError("--spectrogram needs --spectrogram-csv");
        const auto a = pipeline::read_wav(spectrogram_wav);
        metrics::spectrogram_export(a.samples, metrics::LsdConfig::for_sample_rate(a.sample_rate), spectrogram_csv);
        j["spectrogram_csv"] = spectrogram_csv;
      }
      print(j, report);
    } else if (*self) {
      bool all = true;
      json j = json::array();
      for (const auto& c : selftest()) {
        all = all && c.pass;
        if (report == "json")
          j.push_back({{"check", c.name}, {"pass", c.pass}, {"detail", c.detail}});
        else
          std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
      }
      if (report == "json") std::cout << j.dump() << "\n";
      return all ? kOk : kNumeric;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kOk;
}
