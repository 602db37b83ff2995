#pragma once

// Intrusive metrics (SI-SDR, SI-SAR), metric reports and the RTF benchmark.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcem/data.hpp"
#include "dcem/transform.hpp"

namespace dcem {

inline constexpr double kRatioCapDb = 50.0;

struct RatioOptions {
  bool zero_mean = true;
  double cap_db = kRatioCapDb;
};

/// 10 log10(|a r|^2 / |a r - e|^2), a = <e, r> / |r|^2, clamped to +-cap.
/// Silent reference -> DomainError; silent estimate -> -cap.
double si_sdr(std::span<const double> est, std::span<const double> ref,
              const RatioOptions& opt = {});
inline double si_sdr(const Waveform& est, const Waveform& ref, const RatioOptions& opt = {}) {
  return si_sdr(std::span<const double>(est.samples), std::span<const double>(ref.samples), opt);
}

struct SarResult {
  double db = 0.0;
  bool degenerate = false;  // interference collinear with ref; projected onto ref only
};

/// Projects est onto span{ref, mixture - ref}; artifacts are the residual.
SarResult si_sar(std::span<const double> est, std::span<const double> ref,
                 std::span<const double> mixture, const RatioOptions& opt = {});
inline SarResult si_sar(const Waveform& est, const Waveform& ref, const Waveform& mixture,
                        const RatioOptions& opt = {}) {
  return si_sar(std::span<const double>(est.samples), std::span<const double>(ref.samples),
                std::span<const double>(mixture.samples), opt);
}

/// Differentiable batched SI-SDR in dB: est, ref [B, L] -> [B], clamped to +-cap.
torch::Tensor si_sdr_torch(const torch::Tensor& est, const torch::Tensor& ref,
                           double cap_db = kRatioCapDb, bool zero_mean = true);

struct MetricRecord {
  std::string sample_id;
  std::string scenario;
  std::string method;
  double si_sdr_db = 0.0;
  double si_sar_db = 0.0;
  double rtf = 0.0;
  int64_t eval_count = 0;
  bool sar_degenerate = false;
};

struct MetricAggregate {
  std::string method;
  std::string scenario;
  std::size_t count = 0;
  double mean_si_sdr = 0.0, median_si_sdr = 0.0;
  double mean_si_sar = 0.0, median_si_sar = 0.0;
  double mean_rtf = 0.0;
  double mean_eval_count = 0.0;
  std::size_t below_minus10 = 0;  // samples with SI-SDR < -10 dB
};

class MetricReport {
 public:
  void add(MetricRecord r) { records_.push_back(std::move(r)); }
  const std::vector<MetricRecord>& records() const { return records_; }

  /// One aggregate per (method, scenario), recomputed from the records.
  std::vector<MetricAggregate> aggregates() const;
  /// Counts of SI-SDR per method in bins [edges[i], edges[i+1]).
  std::map<std::string, std::vector<std::size_t>> histogram(const std::vector<double>& edges) const;
  static std::vector<double> default_histogram_edges();  // -30..40 dB, 5 dB wide

  void write_jsonl(const std::filesystem::path& path) const;
  static MetricReport read_jsonl(const std::filesystem::path& path);
  std::string summary_table() const;
  void write_histogram_csv(const std::filesystem::path& path) const;

 private:
  std::vector<MetricRecord> records_;
};

struct BenchResult {
  double rtf = 0.0;
  int64_t eval_count = 0;  // denoiser calls per sample
  double audio_seconds = 0.0;
  double wall_seconds = 0.0;
};

/// Times `pipeline` over `samples` (at least 10) after `warmup` untimed runs.
/// `eval_counter` reports the cumulative denoiser call count.
BenchResult bench(const std::function<Waveform(const MixtureSample&)>& pipeline,
                  const std::vector<MixtureSample>& samples,
                  const std::function<int64_t()>& eval_counter, int warmup = 1);

}  // namespace dcem
