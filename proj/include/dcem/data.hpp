#pragma once

// Synthetic target/mixture/enrollment corpus: harmonic source-filter
// "speakers", band-limited tilted noise, exact-sum mixtures and a
// line-delimited JSON manifest.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dcem/transform.hpp"

namespace dcem {

enum class Scenario { MultiNoisy, MultiClean, SingleNoisy };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);
inline bool has_interferer(Scenario s) { return s != Scenario::SingleNoisy; }
inline bool has_noise(Scenario s) { return s != Scenario::MultiClean; }

struct SyntheticSpeaker {
  int id = 0;
  double f0_low = 100.0;  // Hz
  double f0_high = 140.0;
  double tilt_db_per_octave = -9.0;  // harmonic amplitude profile
  std::array<double, 3> formant_hz{500.0, 1500.0, 2500.0};
  std::array<double, 3> formant_bw{80.0, 120.0, 160.0};
  std::string gender = "m";
};

/// `count` speakers, alternating gender, with distinct pitch ranges.
std::vector<SyntheticSpeaker> make_speakers(int count, uint64_t seed);

/// Harmonic source-filter utterance, duration in [1, 10] s, peak 0.9.
Waveform synth_utterance(const SyntheticSpeaker& spk, double duration, uint64_t seed);

/// Band-filtered Gaussian noise with a random spectral tilt, unit RMS.
Waveform make_noise(std::size_t length, uint64_t seed);

struct MixtureSample {
  std::string sample_id;
  std::string split;
  Scenario scenario = Scenario::MultiNoisy;
  Waveform mixture;
  Waveform target;
  std::vector<Waveform> interferers;  // 0 or 1
  std::optional<Waveform> noise;
  Waveform enrollment;
  int speaker_id = -1;
  int interferer_speaker_id = -1;
  std::optional<double> sir_db;
  std::optional<double> snr_db;
};

/// Crops components to a common length, scales the interferer to `sir_db` and
/// the noise to `snr_db` (both relative to the target) and sums them.
/// The scenario is inferred from which components are present.
MixtureSample make_mixture(const Waveform& target, const Waveform* interferer,
                           const Waveform* noise, double sir_db, double snr_db);

struct DataConfig {
  int num_speakers = 20;
  int utterances_per_speaker = 50;
  double min_duration = 1.0;  // s
  double max_duration = 2.0;
  double train_fraction = 0.8;
  double dev_fraction = 0.1;
  double sir_min_db = -5.0, sir_max_db = 5.0;
  double snr_min_db = 0.0, snr_max_db = 15.0;
  std::vector<std::string> train_scenarios{"MULTI_NOISY"};
  std::vector<std::string> eval_scenarios{"MULTI_NOISY", "MULTI_CLEAN", "SINGLE_NOISY"};

  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct ManifestRecord {
  std::string sample_id;
  std::string split;
  Scenario scenario = Scenario::MultiNoisy;
  std::string mixture_path;  // relative to the manifest directory
  std::string target_path;
  std::string enrollment_path;
  int speaker_id = -1;
  int interferer_speaker_id = -1;
  std::optional<double> sir_db;
  std::optional<double> snr_db;

  bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
  std::filesystem::path root;  // directory paths are relative to
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> select(const std::string& split,
                                     std::optional<Scenario> scenario = std::nullopt) const;
};

/// Generates the corpus under `out_dir` and returns the manifest path.
std::filesystem::path build_corpus(const DataConfig& cfg, uint64_t seed,
                                   const std::filesystem::path& out_dir);

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestRecord>& records);
Manifest read_manifest(const std::filesystem::path& path);

/// Reads a LibriMix-style metadata CSV (mixture_ID, mixture_path,
/// source_1_path, ... [, enrollment_path]) into manifest records. Source 1 is
/// the target; without an enrollment column the target doubles as enrollment.
std::vector<ManifestRecord> records_from_librimix_csv(const std::filesystem::path& csv,
                                                      const std::string& split,
                                                      Scenario scenario);

MixtureSample load_sample(const Manifest& manifest, const ManifestRecord& rec);
std::vector<MixtureSample> load_samples(const Manifest& manifest,
                                        const std::vector<ManifestRecord>& recs);

}  // namespace dcem
