#pragma once

// Denoiser f(x_t, t, s) -> x0_hat: a reduced NCSN++-style U-Net over the real
// and imaginary planes of the compressed spectrogram, conditioned on the
// timestep (Fourier features) and on a speaker embedding (FiLM in every
// residual block, plus concatenation ahead of the bottleneck attention).

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcem/transform.hpp"

namespace dcem {

struct ModelConfig {
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2, 2, 2};  // one entry per resolution
  int embedding_dim = 64;
  int freq_bins = 256;
  int time_features = 16;  // Fourier frequencies for t
  std::string speaker_encoder = "conv";  // "conv" or "lookup"
  int encoder_channels = 128;
  int num_speakers = 0;  // lookup table size

  int levels() const { return static_cast<int>(channel_mult.size()); }
  /// Frame counts are padded to a multiple of this inside the U-Net.
  int64_t time_multiple() const { return int64_t{1} << (levels() - 1); }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Small configuration used for finite-difference gradient checks.
ModelConfig tiny_model_config();

struct SpeakerEmbedding {
  torch::Tensor vector;  // [D], unit L2 norm
  std::optional<int> speaker_id;
};

/// Per-channel affine modulation from one linear projection of s, split into
/// scale and shift halves. Bias starts at scale = 1, shift = 0.
class FilmImpl : public torch::nn::Module {
 public:
  FilmImpl(int embedding_dim, int channels);
  torch::Tensor forward(const torch::Tensor& hidden, const torch::Tensor& s);

  torch::nn::Linear proj{nullptr};
  int channels;
};
TORCH_MODULE(Film);

/// Broadcasts s over all time-frequency positions and appends it as D extra
/// channels: [B, C, H, W] x [B, D] -> [B, C + D, H, W].
torch::Tensor concat_condition(const torch::Tensor& hidden, const torch::Tensor& s);

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_channels, int out_channels, int temb_dim, int embedding_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb,
                        const torch::Tensor& s);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear temb_proj{nullptr};
  Film film{nullptr};
};
TORCH_MODULE(ResBlock);

class AttentionBlockImpl : public torch::nn::Module {
 public:
  explicit AttentionBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d qkv{nullptr}, out{nullptr};
};
TORCH_MODULE(AttentionBlock);

class TimeEmbeddingImpl : public torch::nn::Module {
 public:
  TimeEmbeddingImpl(int features, int out_dim);
  /// t: [B] -> [B, out_dim]
  torch::Tensor forward(const torch::Tensor& t);

  torch::Tensor frequencies;  // buffer
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TimeEmbedding);

/// Maps compressed enrollment magnitudes [B, F, T] to unit-norm embeddings
/// [B, D] (two convolutions, mean and std pooling over time). In lookup mode
/// the speaker ids index a learned table instead.
class SpeakerEncoderImpl : public torch::nn::Module {
 public:
  explicit SpeakerEncoderImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& magnitude,
                        const std::optional<torch::Tensor>& speaker_ids = std::nullopt);

  bool lookup;
  torch::nn::Conv1d conv1{nullptr}, conv2{nullptr};
  torch::nn::Linear head{nullptr};
  torch::nn::Embedding table{nullptr};
};
TORCH_MODULE(SpeakerEncoder);

class DcemNetImpl : public torch::nn::Module {
 public:
  explicit DcemNetImpl(ModelConfig cfg);

  /// x_t: [B, 2, F, T], t: [B], s: [B, D]  ->  [B, 2, F, T]
  torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t,
                        const torch::Tensor& s);

  /// Enrollment planes [B, 2, F, T] -> embeddings [B, D].
  torch::Tensor embed(const torch::Tensor& enrollment_planes,
                      const std::optional<torch::Tensor>& speaker_ids = std::nullopt);

  /// Zeroes the output convolution (forward then returns all zeros).
  void zero_output_layer();

  const ModelConfig& config() const { return cfg_; }
  int64_t parameter_count();

  TimeEmbedding time_embed{nullptr};
  SpeakerEncoder encoder{nullptr};
  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr}, mid_proj{nullptr};
  std::vector<ResBlock> down_blocks, up_blocks;
  std::vector<torch::nn::Conv2d> downsample, upsample;
  ResBlock mid1{nullptr}, mid2{nullptr};
  AttentionBlock attention{nullptr};
  torch::nn::GroupNorm norm_out{nullptr};

  // Post-attention activations from the last forward call (for inspection).
  torch::Tensor last_attention_output;

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(DcemNet);

/// Deep copy of a network (same config, cloned parameters).
DcemNet clone_net(DcemNet& net);

/// Denoiser interface used by the samplers. Single (unbatched) spectrograms
/// [2, F, T] in float64; s is [D].
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual torch::Tensor denoise(const torch::Tensor& x_t, double t,
                                const torch::Tensor& s) = 0;
};

/// Runs a frozen DcemNet in float32 without autograd.
class NetDenoiser : public Denoiser {
 public:
  explicit NetDenoiser(DcemNet net) : net_(std::move(net)) { net_->eval(); }
  torch::Tensor denoise(const torch::Tensor& x_t, double t,
                        const torch::Tensor& s) override;
  DcemNet& net() { return net_; }

 private:
  DcemNet net_;
};

/// Counts calls and forwards them to another denoiser.
class CountingDenoiser : public Denoiser {
 public:
  explicit CountingDenoiser(std::shared_ptr<Denoiser> inner) : inner_(std::move(inner)) {}
  torch::Tensor denoise(const torch::Tensor& x_t, double t,
                        const torch::Tensor& s) override {
    ++count_;
    return inner_->denoise(x_t, t, s);
  }
  int64_t count() const { return count_.load(); }
  void reset() { count_ = 0; }

 private:
  std::shared_ptr<Denoiser> inner_;
  std::atomic<int64_t> count_{0};
};

/// Embeds an enrollment waveform (>= 0.5 s) with the network's encoder.
SpeakerEmbedding embed_speaker(DcemNet& net, const Waveform& enrollment,
                               const TransformConfig& tcfg,
                               std::optional<int> speaker_id = std::nullopt);

inline constexpr const char* kCheckpointFormat = "dcem-checkpoint-v1";

struct Checkpoint {
  ModelConfig config;
  int stage = 1;
  int epoch = 0;
  DcemNet live{nullptr};
  DcemNet ema{nullptr};
  std::string meta;  // free-form JSON text
};

void save_checkpoint(const std::filesystem::path& path, DcemNet& live, DcemNet& ema,
                     int stage, int epoch, const std::string& meta = "{}");
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameters of `src` into `dst` (identical architectures).
void copy_parameters(torch::nn::Module& dst, const torch::nn::Module& src);

}  // namespace dcem
