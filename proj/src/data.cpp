#include "dcem/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dcem/audio_io.hpp"
#include "dcem/errors.hpp"

namespace dcem {

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  return splitmix(splitmix(splitmix(seed ^ splitmix(a)) ^ b) ^ c);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double power(const std::vector<double>& x) {
  long double acc = 0.0L;
  for (double v : x) acc += static_cast<long double>(v) * v;
  return x.empty() ? 0.0 : static_cast<double>(acc / x.size());
}

std::string utterance_name(int spk, int utt) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "spk%02d_utt%02d", spk, utt);
  return buf;
}

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::MultiNoisy: return "MULTI_NOISY";
    case Scenario::MultiClean: return "MULTI_CLEAN";
    case Scenario::SingleNoisy: return "SINGLE_NOISY";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "MULTI_NOISY") return Scenario::MultiNoisy;
  if (s == "MULTI_CLEAN") return Scenario::MultiClean;
  if (s == "SINGLE_NOISY") return Scenario::SingleNoisy;
  throw DataError("unknown scenario '" + s + "'");
}

std::vector<SyntheticSpeaker> make_speakers(int count, uint64_t seed) {
  if (count < 1) throw DomainError("make_speakers: count must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, 0x5be4));
  const int males = (count + 1) / 2;
  const int females = count / 2;
  std::vector<SyntheticSpeaker> out;
  for (int i = 0; i < count; ++i) {
    SyntheticSpeaker s;
    s.id = i;
    const bool male = i % 2 == 0;
    const int rank = i / 2;
    const int n = male ? males : females;
    // Pitch centres evenly spread per gender, lightly jittered.
    const double lo = male ? 90.0 : 165.0, hi = male ? 150.0 : 250.0;
    const double centre = lo + (hi - lo) * (rank + 0.5) / n + uniform(rng, -1.5, 1.5);
    s.gender = male ? "m" : "f";
    s.f0_low = centre * 0.92;
    s.f0_high = centre * 1.08;
    s.tilt_db_per_octave = uniform(rng, -12.0, -6.0);
    const double scale = male ? 1.0 : 1.15;
    s.formant_hz = {uniform(rng, 300.0, 800.0) * scale, uniform(rng, 900.0, 2200.0) * scale,
                    uniform(rng, 2300.0, 3200.0) * scale};
    s.formant_bw = {uniform(rng, 60.0, 110.0), uniform(rng, 80.0, 140.0),
                    uniform(rng, 100.0, 180.0)};
    out.push_back(s);
  }
  return out;
}

Waveform synth_utterance(const SyntheticSpeaker& spk, double duration, uint64_t seed) {
  if (!(duration >= 1.0 && duration <= 10.0))
    throw DomainError("synth_utterance: duration must be in [1, 10] s");
  std::mt19937_64 rng(derive_seed(seed, static_cast<uint64_t>(spk.id), 0x77));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto n = static_cast<std::size_t>(std::llround(duration * kSampleRate));
  const double fs = kSampleRate;
  std::vector<double> x(n, 0.0);

  std::size_t pos = static_cast<std::size_t>(uniform(rng, 0.0, 0.05) * fs);
  double phase = 0.0;
  while (pos < n) {
    const auto len = static_cast<std::size_t>(uniform(rng, 0.12, 0.30) * fs);
    const auto gap = static_cast<std::size_t>(uniform(rng, 0.03, 0.10) * fs);
    const double f_start = uniform(rng, spk.f0_low, spk.f0_high);
    const double f_end = uniform(rng, spk.f0_low, spk.f0_high);
    const double vib_rate = uniform(rng, 4.0, 6.0);
    const double level = uniform(rng, 0.6, 1.0);
    std::array<double, 3> formants{};
    for (std::size_t j = 0; j < 3; ++j) formants[j] = spk.formant_hz[j] * uniform(rng, 0.85, 1.15);
    const std::size_t end = std::min(n, pos + len);
    const double ramp = 0.02 * fs;
    for (std::size_t i = pos; i < end; ++i) {
      const double u = static_cast<double>(i - pos) / static_cast<double>(len);
      const double f0 = (f_start + (f_end - f_start) * u) *
                        (1.0 + 0.01 * std::sin(2.0 * M_PI * vib_rate * (i - pos) / fs));
      phase += 2.0 * M_PI * f0 / fs;
      if (phase > 2.0 * M_PI) phase -= 2.0 * M_PI;
      const double rise = std::min(1.0, static_cast<double>(i - pos) / ramp);
      const double fall = std::min(1.0, static_cast<double>(end - i) / ramp);
      const double env = level * 0.5 * (1.0 - std::cos(M_PI * std::min(rise, fall)));
      double acc = 0.0;
      for (int k = 1; k * f0 < 7000.0; ++k) {
        const double f = k * f0;
        double gain = 0.03;
        for (std::size_t j = 0; j < 3; ++j) {
          const double d = (f - formants[j]) / spk.formant_bw[j];
          gain += 1.0 / (1.0 + d * d);
        }
        const double tilt = std::pow(static_cast<double>(k), spk.tilt_db_per_octave / 6.0206);
        acc += gain * tilt * std::sin(k * phase);
      }
      x[i] += env * (acc + 0.01 * gauss(rng));
    }
    pos = end + gap;
  }
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : x) v *= 0.9 / peak;
  return Waveform{std::move(x), kSampleRate};
}

Waveform make_noise(std::size_t length, uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x401e));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> white(length);
  for (double& v : white) v = gauss(rng);
  const double lo = uniform(rng, 50.0, 300.0);
  const double hi = uniform(rng, 3000.0, 8000.0);
  const double tilt = uniform(rng, -1.0, 0.5);

  auto spec = torch::fft::rfft(torch::from_blob(white.data(), {static_cast<int64_t>(length)},
                                                torch::kDouble));
  const int64_t bins = spec.size(0);
  auto freqs = torch::arange(bins, torch::kDouble) * (static_cast<double>(kSampleRate) / length);
  auto shape = torch::where((freqs >= lo) & (freqs <= hi),
                            torch::pow(freqs.clamp_min(1.0) / 1000.0, tilt),
                            torch::zeros_like(freqs));
  auto shaped = torch::fft::irfft(spec * shape, static_cast<int64_t>(length));
  Waveform w = from_tensor(shaped);
  const double p = power(w.samples);
  if (p > 0.0)
    for (double& v : w.samples) v /= std::sqrt(p);
  return w;
}

MixtureSample make_mixture(const Waveform& target, const Waveform* interferer,
                           const Waveform* noise, double sir_db, double snr_db) {
  std::size_t n = target.size();
  if (interferer) n = std::min(n, interferer->size());
  if (noise) n = std::min(n, noise->size());
  MixtureSample m;
  m.target.samples.assign(target.samples.begin(), target.samples.begin() + n);
  const double pt = power(m.target.samples);
  if (!(pt > 0.0)) throw DomainError("make_mixture: silent target");
  m.mixture = m.target;

  auto add_scaled = [&](const Waveform& src, double ratio_db) {
    Waveform c;
    c.samples.assign(src.samples.begin(), src.samples.begin() + n);
    const double pc = power(c.samples);
    if (!(pc > 0.0)) throw DomainError("make_mixture: silent component");
    const double g = std::sqrt(pt / (pc * std::pow(10.0, ratio_db / 10.0)));
    for (double& v : c.samples) v *= g;
    return c;
  };
  if (interferer) {
    m.interferers.push_back(add_scaled(*interferer, sir_db));
    m.sir_db = sir_db;
  }
  if (noise) {
    m.noise = add_scaled(*noise, snr_db);
    m.snr_db = snr_db;
  }
  // y = x0 + i + n, accumulated in a fixed order.
  for (std::size_t i = 0; i < n; ++i) {
    double y = m.target.samples[i];
    if (!m.interferers.empty()) y += m.interferers[0].samples[i];
    if (m.noise) y += m.noise->samples[i];
    m.mixture.samples[i] = y;
  }
  m.scenario = interferer ? (noise ? Scenario::MultiNoisy : Scenario::MultiClean)
                          : Scenario::SingleNoisy;
  return m;
}

void DataConfig::validate() const {
  if (num_speakers < 1) throw ConfigError("data: num_speakers must be >= 1");
  if (utterances_per_speaker < 3)
    throw ConfigError("data: need >= 3 utterances per speaker");
  if (!(min_duration >= 1.0 && max_duration <= 10.0 && min_duration <= max_duration))
    throw ConfigError("data: durations must satisfy 1 <= min <= max <= 10");
  if (!(train_fraction > 0.0 && dev_fraction > 0.0 && train_fraction + dev_fraction < 1.0))
    throw ConfigError("data: split fractions must leave room for a test split");
  if (sir_min_db > sir_max_db || snr_min_db > snr_max_db)
    throw ConfigError("data: SIR/SNR ranges are inverted");
  for (const auto& s : train_scenarios) (void)scenario_from_string(s);
  for (const auto& s : eval_scenarios) (void)scenario_from_string(s);
}

std::vector<ManifestRecord> Manifest::select(const std::string& split,
                                             std::optional<Scenario> scenario) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.split == split && (!scenario || r.scenario == *scenario)) out.push_back(r);
  return out;
}

std::filesystem::path build_corpus(const DataConfig& cfg, uint64_t seed,
                                   const std::filesystem::path& out_dir) {
  cfg.validate();
  bool needs_interferer = false;
  for (const auto& s : cfg.train_scenarios)
    needs_interferer |= has_interferer(scenario_from_string(s));
  for (const auto& s : cfg.eval_scenarios)
    needs_interferer |= has_interferer(scenario_from_string(s));
  if (needs_interferer && cfg.num_speakers < 2)
    throw DomainError("build_corpus: multi-speaker scenarios need >= 2 speakers");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create corpus directory " + out_dir.string());

  const auto speakers = make_speakers(cfg.num_speakers, seed);
  const int per = cfg.utterances_per_speaker;
  const int n_train = std::max(1, static_cast<int>(std::lround(per * cfg.train_fraction)));
  const int n_dev = std::max(2, static_cast<int>(std::lround(per * cfg.dev_fraction)));
  // Eval enrollment is a different utterance of the same speaker from the same split.
  if (per - n_train - n_dev < 2)
    throw ConfigError("data: dev and test need >= 2 utterances per speaker; raise utterances_per_speaker");
  auto split_of = [&](int u) {
    return u < n_train ? std::string("train") : u < n_train + n_dev ? "dev" : "test";
  };

  // utterances[spk][utt]
  std::vector<std::vector<Waveform>> utts(static_cast<std::size_t>(cfg.num_speakers));
  for (int s = 0; s < cfg.num_speakers; ++s) {
    for (int u = 0; u < per; ++u) {
      std::mt19937_64 rng(derive_seed(seed, 0xd0, static_cast<uint64_t>(s), static_cast<uint64_t>(u)));
      const double dur = uniform(rng, cfg.min_duration, cfg.max_duration);
      auto w = synth_utterance(speakers[static_cast<std::size_t>(s)], dur,
                               derive_seed(seed, 0xa7, static_cast<uint64_t>(s), static_cast<uint64_t>(u)));
      write_wav(out_dir / "utts" / (utterance_name(s, u) + ".wav"), w);
      utts[static_cast<std::size_t>(s)].push_back(std::move(w));
    }
  }

  std::vector<ManifestRecord> records;
  for (const std::string split : {"train", "dev", "test"}) {
    const auto& names = split == "train" ? cfg.train_scenarios : cfg.eval_scenarios;
    std::vector<int> split_utts;
    for (int u = 0; u < per; ++u)
      if (split_of(u) == split) split_utts.push_back(u);
    for (const auto& scen_name : names) {
      const Scenario scen = scenario_from_string(scen_name);
      for (int s = 0; s < cfg.num_speakers; ++s) {
        for (int u : split_utts) {
          std::mt19937_64 rng(derive_seed(seed, 0x5a + static_cast<uint64_t>(scen),
                                          static_cast<uint64_t>(s), static_cast<uint64_t>(u)));
          const Waveform& target = utts[static_cast<std::size_t>(s)][static_cast<std::size_t>(u)];
          const Waveform* interferer = nullptr;
          int other = -1;
          if (has_interferer(scen)) {
            other = std::uniform_int_distribution<int>(0, cfg.num_speakers - 2)(rng);
            if (other >= s) ++other;
            const int ou = split_utts[std::uniform_int_distribution<std::size_t>(
                0, split_utts.size() - 1)(rng)];
            interferer = &utts[static_cast<std::size_t>(other)][static_cast<std::size_t>(ou)];
          }
          const double sir = uniform(rng, cfg.sir_min_db, cfg.sir_max_db);
          const double snr = uniform(rng, cfg.snr_min_db, cfg.snr_max_db);
          std::optional<Waveform> noise;
          if (has_noise(scen)) noise = make_noise(target.size(), rng());
          auto m = make_mixture(target, interferer, noise ? &*noise : nullptr, sir, snr);

          ManifestRecord r;
          r.sample_id = split + "_" + scen_name + "_" + utterance_name(s, u);
          r.split = split;
          r.scenario = scen;
          r.speaker_id = s;
          r.interferer_speaker_id = other;
          r.sir_db = m.sir_db;
          r.snr_db = m.snr_db;
          r.mixture_path = "samples/" + split + "/" + r.sample_id + "_mix.wav";
          r.target_path = "samples/" + split + "/" + r.sample_id + "_target.wav";
          int enroll = u;
          if (split != "train") {
            // Another utterance of the same speaker from the same split.
            const auto k = std::uniform_int_distribution<std::size_t>(0, split_utts.size() - 2)(rng);
            std::vector<int> others;
            for (int v : split_utts)
              if (v != u) others.push_back(v);
            enroll = others[k];
          }
          r.enrollment_path = "utts/" + utterance_name(s, enroll) + ".wav";
          write_wav(out_dir / r.mixture_path, m.mixture);
          write_wav(out_dir / r.target_path, m.target);
          records.push_back(std::move(r));
        }
      }
    }
  }

  nlohmann::json spk = nlohmann::json::array();
  for (const auto& s : speakers)
    spk.push_back({{"id", s.id}, {"gender", s.gender}, {"f0_low", s.f0_low},
                   {"f0_high", s.f0_high}, {"tilt_db_per_octave", s.tilt_db_per_octave},
                   {"formant_hz", s.formant_hz}, {"formant_bw", s.formant_bw}});
  std::ofstream(out_dir / "speakers.json") << spk.dump(2) << "\n";
  const auto manifest = out_dir / "manifest.jsonl";
  write_manifest(manifest, records);
  return manifest;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& r : records) {
    nlohmann::json j{{"sample_id", r.sample_id},
                     {"split", r.split},
                     {"scenario", to_string(r.scenario)},
                     {"mixture", r.mixture_path},
                     {"target", r.target_path},
                     {"enrollment", r.enrollment_path},
                     {"speaker_id", r.speaker_id},
                     {"interferer_speaker_id", r.interferer_speaker_id},
                     {"sir_db", r.sir_db ? nlohmann::json(*r.sir_db) : nlohmann::json()},
                     {"snr_db", r.snr_db ? nlohmann::json(*r.snr_db) : nlohmann::json()}};
    out << j.dump() << "\n";
  }
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.split = j.at("split").get<std::string>();
      r.scenario = scenario_from_string(j.at("scenario").get<std::string>());
      r.mixture_path = j.at("mixture").get<std::string>();
      r.target_path = j.at("target").get<std::string>();
      r.enrollment_path = j.at("enrollment").get<std::string>();
      r.speaker_id = j.at("speaker_id").get<int>();
      r.interferer_speaker_id = j.value("interferer_speaker_id", -1);
      if (j.contains("sir_db") && !j["sir_db"].is_null()) r.sir_db = j["sir_db"].get<double>();
      if (j.contains("snr_db") && !j["snr_db"].is_null()) r.snr_db = j["snr_db"].get<double>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest " + path.string() + " line " + std::to_string(lineno) + ": " +
                      e.what());
    }
  }
  return m;
}

std::vector<ManifestRecord> records_from_librimix_csv(const std::filesystem::path& csv,
                                                      const std::string& split,
                                                      Scenario scenario) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open " + csv.string());
  auto split_row = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV " + csv.string());
  const auto header = split_row(line);
  auto col = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int id_c = col("mixture_ID"), mix_c = col("mixture_path"), src_c = col("source_1_path"),
            enr_c = col("enrollment_path"), spk_c = col("speaker_id");
  if (id_c < 0 || mix_c < 0 || src_c < 0)
    throw DataError("CSV lacks mixture_ID/mixture_path/source_1_path columns");
  std::vector<ManifestRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_row(line);
    if (cells.size() < header.size()) throw DataError("short CSV row in " + csv.string());
    ManifestRecord r;
    r.sample_id = cells[static_cast<std::size_t>(id_c)];
    r.split = split;
    r.scenario = scenario;
    r.mixture_path = cells[static_cast<std::size_t>(mix_c)];
    r.target_path = cells[static_cast<std::size_t>(src_c)];
    r.enrollment_path = enr_c >= 0 ? cells[static_cast<std::size_t>(enr_c)] : r.target_path;
    r.speaker_id = spk_c >= 0 ? std::stoi(cells[static_cast<std::size_t>(spk_c)]) : -1;
    out.push_back(std::move(r));
  }
  return out;
}

MixtureSample load_sample(const Manifest& manifest, const ManifestRecord& rec) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : manifest.root / path;
  };
  MixtureSample m;
  m.sample_id = rec.sample_id;
  m.split = rec.split;
  m.scenario = rec.scenario;
  m.mixture = read_wav(resolve(rec.mixture_path));
  m.target = read_wav(resolve(rec.target_path));
  m.enrollment = read_wav(resolve(rec.enrollment_path));
  m.speaker_id = rec.speaker_id;
  m.interferer_speaker_id = rec.interferer_speaker_id;
  m.sir_db = rec.sir_db;
  m.snr_db = rec.snr_db;
  if (m.mixture.size() != m.target.size())
    throw DataError("sample " + rec.sample_id + ": mixture/target lengths differ");
  return m;
}

std::vector<MixtureSample> load_samples(const Manifest& manifest,
                                        const std::vector<ManifestRecord>& recs) {
  std::vector<MixtureSample> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(load_sample(manifest, r));
  return out;
}

}  // namespace dcem
