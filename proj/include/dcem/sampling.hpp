#pragma once

// Conditional-expectation samplers: full DCEM inference, the seed ensemble,
// and regeneration from a discriminative estimate (last N grid steps only).

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcem/model.hpp"
#include "dcem/schedule.hpp"
#include "dcem/transform.hpp"

namespace dcem {

struct SamplerConfig {
  int steps = 10;          // denoiser evaluations in full inference
  int ensemble_size = 10;  // K
  int regen_steps = 2;     // N
  uint64_t seed = 0;
  std::string ensemble_norm = "rms";  // "rms" or "mean"

  void validate() const;
  bool operator==(const SamplerConfig&) const = default;
};

/// Schedule and transform shared by every sampler call.
struct DiffusionSetup {
  ScheduleParams schedule;
  TransformConfig transform;
};

/// Optional per-step record of the x0 predictions ([2, F, T] each).
struct InferenceTrace {
  std::vector<double> timesteps;
  std::vector<torch::Tensor> predictions;
};

/// Full reverse process on the make_grid(cfg.steps) grid; exactly cfg.steps
/// denoiser calls. Deterministic in cfg.seed. Output has y's length.
Waveform dcem_infer(Denoiser& denoiser, const Waveform& mixture, const torch::Tensor& s,
                    const SamplerConfig& cfg, const DiffusionSetup& setup,
                    InferenceTrace* trace = nullptr);

/// Runs dcem_infer with seeds cfg.seed + 0 .. cfg.seed + K - 1 and averages.
/// With ensemble_norm == "rms" the average is rescaled to the mean member RMS.
Waveform ensemble_infer(Denoiser& denoiser, const Waveform& mixture,
                        const torch::Tensor& s, const SamplerConfig& cfg,
                        const DiffusionSetup& setup);

/// Combines member waveforms the way ensemble_infer does.
Waveform combine_members(const std::vector<Waveform>& members, const std::string& norm);

/// Regeneration: seeds x0_hat with stft(preprocessed) and visits only the last
/// cfg.regen_steps grid points; exactly regen_steps denoiser calls.
Waveform regenerate(Denoiser& denoiser, const Waveform& preprocessed,
                    const Waveform& mixture, const torch::Tensor& s,
                    const SamplerConfig& cfg, const DiffusionSetup& setup,
                    InferenceTrace* trace = nullptr);

/// Test/acceptance stub: always returns a fixed spectrogram (the true x0).
class OracleDenoiser : public Denoiser {
 public:
  explicit OracleDenoiser(torch::Tensor target_planes) : target_(std::move(target_planes)) {}
  torch::Tensor denoise(const torch::Tensor& x_t, double, const torch::Tensor&) override {
    if (x_t.sizes() != target_.sizes()) throw std::logic_error("oracle: shape mismatch");
    return target_.clone();
  }

 private:
  torch::Tensor target_;
};

}  // namespace dcem
