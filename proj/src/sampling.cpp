#include "dcem/sampling.hpp"

#include <cmath>
#include <string>

#include <ATen/CPUGeneratorImpl.h>

#include "dcem/errors.hpp"

namespace dcem {

namespace {

void check_step(const torch::Tensor& t, std::size_t step, const char* what) {
  if (!torch::isfinite(t).all().item<bool>())
    throw NumericError(std::string("sampler: non-finite ") + what + " at step " +
                       std::to_string(step));
}

// One recomposition + prediction: x = mu(x0_hat, Y, t) + sigma(t) z.
torch::Tensor reverse_step(Denoiser& denoiser, const torch::Tensor& x0_hat,
                           const torch::Tensor& mix_planes, double t,
                           const torch::Tensor& s, const ScheduleParams& p,
                           at::Generator& gen, std::size_t step) {
  auto z = torch::randn(mix_planes.sizes(), gen, torch::TensorOptions().dtype(torch::kDouble));
  auto x = sample_forward(x0_hat, mix_planes, t, z, p);
  check_step(x, step, "state");
  torch::Tensor pred;
  try {
    pred = denoiser.denoise(x, t, s);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " (step " + std::to_string(step) + ")");
  }
  check_step(pred, step, "prediction");
  return pred;
}

double rms(const Waveform& w) {
  long double acc = 0.0L;
  for (double v : w.samples) acc += static_cast<long double>(v) * v;
  return w.samples.empty() ? 0.0 : static_cast<double>(std::sqrt(acc / w.samples.size()));
}

}  // namespace

void SamplerConfig::validate() const {
  if (steps < 2) throw DomainError("sampler: steps must be >= 2");
  if (ensemble_size < 1) throw DomainError("sampler: ensemble_size must be >= 1");
  if (regen_steps < 2 || regen_steps > steps)
    throw DomainError("sampler: need 2 <= regen_steps <= steps");
  if (ensemble_norm != "rms" && ensemble_norm != "mean")
    throw DomainError("sampler: ensemble_norm must be 'rms' or 'mean'");
}

Waveform dcem_infer(Denoiser& denoiser, const Waveform& mixture, const torch::Tensor& s,
                    const SamplerConfig& cfg, const DiffusionSetup& setup,
                    InferenceTrace* trace) {
  cfg.validate();
  const auto grid = make_grid(cfg.steps);
  auto mix_planes = stft(mixture, setup.transform).planes;
  auto gen = at::detail::createCPUGenerator(cfg.seed);

  // x_T ~ N(Y, sigma(1)^2), then the first prediction at t = 1.
  auto z = torch::randn(mix_planes.sizes(), gen, torch::TensorOptions().dtype(torch::kDouble));
  auto x = mix_planes + std_dev(grid[0], setup.schedule) * z;
  check_step(x, 0, "state");
  auto x0_hat = denoiser.denoise(x, grid[0], s);
  check_step(x0_hat, 0, "prediction");
  if (trace) {
    trace->timesteps.push_back(grid[0]);
    trace->predictions.push_back(x0_hat);
  }
  for (std::size_t i = 1; i < grid.size(); ++i) {
    x0_hat = reverse_step(denoiser, x0_hat, mix_planes, grid[i], s, setup.schedule, gen, i);
    if (trace) {
      trace->timesteps.push_back(grid[i]);
      trace->predictions.push_back(x0_hat);
    }
  }
  return istft(ComplexSpectrogram{x0_hat}, setup.transform, mixture.size());
}

Waveform combine_members(const std::vector<Waveform>& members, const std::string& norm) {
  if (members.empty()) throw DomainError("ensemble: no members");
  if (members.size() == 1) return members.front();
  const std::size_t n = members.front().size();
  Waveform out;
  out.samples.assign(n, 0.0);
  double mean_rms = 0.0;
  for (const auto& m : members) {
    if (m.size() != n) throw ContractError("ensemble: member lengths differ");
    for (std::size_t i = 0; i < n; ++i) out.samples[i] += m.samples[i];
    mean_rms += rms(m);
  }
  const double k = static_cast<double>(members.size());
  for (double& v : out.samples) v /= k;
  mean_rms /= k;
  if (norm == "rms") {
    const double r = rms(out);
    if (r > 0.0)
      for (double& v : out.samples) v *= mean_rms / r;
  }
  return out;
}

Waveform ensemble_infer(Denoiser& denoiser, const Waveform& mixture,
                        const torch::Tensor& s, const SamplerConfig& cfg,
                        const DiffusionSetup& setup) {
  cfg.validate();
  std::vector<Waveform> members;
  members.reserve(static_cast<std::size_t>(cfg.ensemble_size));
  for (int k = 0; k < cfg.ensemble_size; ++k) {
    SamplerConfig member = cfg;
    member.seed = cfg.seed + static_cast<uint64_t>(k);
    try {
      members.push_back(dcem_infer(denoiser, mixture, s, member, setup));
    } catch (const std::exception& e) {
      throw NumericError("ensemble member " + std::to_string(k) + " failed: " + e.what());
    }
  }
  return combine_members(members, cfg.ensemble_norm);
}

Waveform regenerate(Denoiser& denoiser, const Waveform& preprocessed,
                    const Waveform& mixture, const torch::Tensor& s,
                    const SamplerConfig& cfg, const DiffusionSetup& setup,
                    InferenceTrace* trace) {
  cfg.validate();
  if (preprocessed.size() != mixture.size())
    throw DomainError("regenerate: preprocessed and mixture lengths differ (" +
                      std::to_string(preprocessed.size()) + " vs " +
                      std::to_string(mixture.size()) + ")");
  const auto grid = make_grid(cfg.steps);
  const auto tail = grid.tail(static_cast<std::size_t>(cfg.regen_steps));
  auto mix_planes = stft(mixture, setup.transform).planes;
  auto x0_hat = stft(preprocessed, setup.transform).planes;
  auto gen = at::detail::createCPUGenerator(cfg.seed);
  for (std::size_t i = 0; i < tail.size(); ++i) {
    x0_hat = reverse_step(denoiser, x0_hat, mix_planes, tail[i], s, setup.schedule, gen, i);
    if (trace) {
      trace->timesteps.push_back(tail[i]);
      trace->predictions.push_back(x0_hat);
    }
  }
  return istft(ComplexSpectrogram{x0_hat}, setup.transform, mixture.size());
}

}  // namespace dcem
