#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dcem {

inline constexpr int kSampleRate = 16000;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  bool operator==(const Waveform&) const = default;
};

/// STFT settings plus the magnitude compression c * |X|^a applied on top.
struct TransformConfig {
  int fft_size = 510;
  int hop = 128;
  std::string window = "hann";  // periodic Hann
  double compress_exponent = 0.5;
  double compress_scale = 0.33;

  int bins() const { return fft_size / 2 + 1; }
  /// Frame count for a waveform of `length` samples (reflect center padding).
  int64_t frames(int64_t length) const { return length / hop + 1; }

  void validate() const;
  bool operator==(const TransformConfig&) const = default;
};

/// Compressed complex spectrogram; `planes` is [2, bins, frames] holding the
/// real and imaginary parts. Treated as immutable once built.
struct ComplexSpectrogram {
  torch::Tensor planes;

  int64_t bins() const { return planes.size(-2); }
  int64_t frames() const { return planes.size(-1); }
};

torch::Tensor make_window(const TransformConfig& cfg, torch::ScalarType dtype);

/// c * |z|^a * exp(i angle z) on [..., 2, F, T] planes.
torch::Tensor compress(const torch::Tensor& planes, const TransformConfig& cfg);
/// Inverse of compress: (|z| / c)^{1/a} * exp(i angle z).
torch::Tensor decompress(const torch::Tensor& planes, const TransformConfig& cfg);

/// Batched, differentiable forward transform. `wave` is [..., L]; returns
/// compressed planes [..., 2, F, T] in the input dtype.
torch::Tensor stft_planes(const torch::Tensor& wave, const TransformConfig& cfg);
/// Batched, differentiable inverse; output [..., length].
torch::Tensor istft_planes(const torch::Tensor& planes, const TransformConfig& cfg,
                           int64_t length);

/// Compressed magnitude |compress(X)| of [..., 2, F, T] planes -> [..., F, T].
torch::Tensor plane_magnitude(const torch::Tensor& planes);

ComplexSpectrogram stft(const Waveform& w, const TransformConfig& cfg);
Waveform istft(const ComplexSpectrogram& s, const TransformConfig& cfg,
               std::size_t length);

torch::Tensor to_tensor(const Waveform& w);  // float64, 1-D
Waveform from_tensor(const torch::Tensor& t);

}  // namespace dcem
