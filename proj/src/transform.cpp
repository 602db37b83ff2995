#include "dcem/transform.hpp"

#include <cmath>
#include <string>

#include "dcem/errors.hpp"

namespace dcem {

namespace {

// Floor on |z|^2 before raising it to a negative power; below it the planes
// are zero to working precision anyway.
constexpr double kTinyPower = 1e-30;

torch::Tensor scale_planes(const torch::Tensor& planes, double exponent,
                           double gain) {
  if (planes.dim() < 3 || planes.size(-3) != 2)
    throw ContractError("spectrogram planes must be [..., 2, F, T]");
  auto re = planes.select(-3, 0);
  auto im = planes.select(-3, 1);
  auto power = (re * re + im * im).clamp_min(kTinyPower);
  auto factor = gain * power.pow(exponent);
  return torch::stack({re * factor, im * factor}, -3);
}

}  // namespace

void TransformConfig::validate() const {
  if (fft_size < 4 || fft_size % 2 != 0)
    throw DomainError("transform: fft_size must be an even number >= 4");
  if (hop <= 0 || hop >= fft_size)
    throw DomainError("transform: need 0 < hop < fft_size");
  if (window != "hann" && window != "sqrt_hann")
    throw DomainError("transform: unknown window '" + window + "'");
  if (!(compress_exponent > 0.0 && compress_exponent <= 1.0))
    throw DomainError("transform: compress_exponent must be in (0, 1]");
  if (!(compress_scale > 0.0))
    throw DomainError("transform: compress_scale must be > 0");
  // Overlap-add of squared windows must stay away from zero for inversion.
  auto w = make_window(*this, torch::kDouble);
  auto wsq = w * w;
  std::vector<double> ola(static_cast<std::size_t>(hop), 0.0);
  auto acc = wsq.accessor<double, 1>();
  for (int i = 0; i < fft_size; ++i) ola[static_cast<std::size_t>(i % hop)] += acc[i];
  for (double v : ola)
    if (v < 1e-8)
      throw DomainError("transform: window/hop pair is not invertible");
}

torch::Tensor make_window(const TransformConfig& cfg, torch::ScalarType dtype) {
  auto w = torch::hann_window(cfg.fft_size, /*periodic=*/true,
                              torch::TensorOptions().dtype(dtype));
  if (cfg.window == "sqrt_hann") w = torch::sqrt(w);
  return w;
}

torch::Tensor compress(const torch::Tensor& planes, const TransformConfig& cfg) {
  const double a = cfg.compress_exponent;
  return scale_planes(planes, 0.5 * (a - 1.0), cfg.compress_scale);
}

torch::Tensor decompress(const torch::Tensor& planes, const TransformConfig& cfg) {
  const double inv = 1.0 / cfg.compress_exponent;
  return scale_planes(planes, 0.5 * (inv - 1.0),
                      1.0 / std::pow(cfg.compress_scale, inv));
}

torch::Tensor plane_magnitude(const torch::Tensor& planes) {
  auto re = planes.select(-3, 0);
  auto im = planes.select(-3, 1);
  return torch::sqrt(re * re + im * im);
}

torch::Tensor stft_planes(const torch::Tensor& wave, const TransformConfig& cfg) {
  if (wave.dim() < 1) throw ContractError("stft: waveform tensor needs a time axis");
  const int64_t length = wave.size(-1);
  if (length < cfg.fft_size)
    throw DomainError("stft: waveform shorter than fft_size (" +
                      std::to_string(length) + " < " +
                      std::to_string(cfg.fft_size) + ")");
  auto lead = wave.sizes().vec();
  lead.pop_back();
  auto flat = wave.reshape({-1, length});
  auto spec = torch::stft(flat, cfg.fft_size, cfg.hop, cfg.fft_size,
                          make_window(cfg, wave.scalar_type()),
                          /*center=*/true, "reflect", /*normalized=*/false,
                          /*onesided=*/true, /*return_complex=*/true);
  auto planes = torch::view_as_real(spec).permute({0, 3, 1, 2});
  auto out_shape = lead;
  out_shape.insert(out_shape.end(), {2, planes.size(2), planes.size(3)});
  return compress(planes, cfg).reshape(out_shape);
}

torch::Tensor istft_planes(const torch::Tensor& planes, const TransformConfig& cfg,
                           int64_t length) {
  if (planes.dim() < 3 || planes.size(-3) != 2 || planes.size(-2) != cfg.bins())
    throw ContractError("istft: planes must be [..., 2, " +
                        std::to_string(cfg.bins()) + ", T]");
  auto lead = planes.sizes().vec();
  lead.resize(lead.size() - 3);
  auto lin = decompress(planes, cfg).reshape({-1, 2, planes.size(-2), planes.size(-1)});
  auto spec = torch::complex(lin.select(1, 0).contiguous(), lin.select(1, 1).contiguous());
  auto wave = torch::istft(spec, cfg.fft_size, cfg.hop, cfg.fft_size,
                           make_window(cfg, planes.scalar_type()),
                           /*center=*/true, /*normalized=*/false,
                           /*onesided=*/true, length, /*return_complex=*/false);
  lead.push_back(length);
  return wave.reshape(lead);
}

ComplexSpectrogram stft(const Waveform& w, const TransformConfig& cfg) {
  for (double v : w.samples)
    if (!std::isfinite(v)) throw NumericError("stft: non-finite waveform sample");
  return {stft_planes(to_tensor(w), cfg)};
}

Waveform istft(const ComplexSpectrogram& s, const TransformConfig& cfg,
               std::size_t length) {
  if (s.planes.dim() != 3)
    throw ContractError("istft: expected a single [2, F, T] spectrogram");
  return from_tensor(
      istft_planes(s.planes.to(torch::kDouble), cfg, static_cast<int64_t>(length)));
}

torch::Tensor to_tensor(const Waveform& w) {
  return torch::from_blob(const_cast<double*>(w.samples.data()),
                          {static_cast<int64_t>(w.samples.size())},
                          torch::kDouble)
      .clone();
}

Waveform from_tensor(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous().reshape({-1});
  const double* p = c.data_ptr<double>();
  return Waveform{std::vector<double>(p, p + c.numel()), kSampleRate};
}

}  // namespace dcem
