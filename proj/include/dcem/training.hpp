#pragma once

// Stage-1 training, mimetic continual learning (stage 2), EMA, checkpoint
// selection on dev samples, and the small mask-based discriminative baseline
// whose outputs feed regeneration.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dcem/data.hpp"
#include "dcem/model.hpp"
#include "dcem/sampling.hpp"
#include "dcem/schedule.hpp"
#include "dcem/transform.hpp"

namespace dcem {

struct TrainConfig {
  double stage1_lr = 1e-4;
  double stage2_lr = 5e-5;
  int stage1_epochs = 40;
  int stage2_epochs = 12;
  double ema_decay = 0.999;
  int batch_size = 4;
  int crop_length = 8064;      // samples (63 hops)
  double sisdr_weight = 0.01;  // alpha in the composite distance
  bool two_step_gradient = true;  // backprop through both TWO_STEP predictions
  int select_samples = 20;     // dev samples for checkpoint selection
  int steps_per_epoch = 0;     // 0: one pass over the training set
  int encoder_pretrain_steps = 1000;  // speaker classification steps before stage 1
  double encoder_lr = 1e-3;
  bool freeze_encoder = true;  // keep the speaker encoder fixed during both stages
  double grad_clip = 1.0;      // max global gradient norm, 0 disables
  std::string lr_schedule = "constant";  // "constant" or "cosine" (decays to 5% per stage)
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

enum class McLBranch { FirstStepMimic, TwoStepMimic, Standard };
std::string to_string(McLBranch b);

/// p in [0, 100]: p <= epoch -> first-step mimic, p <= 2 epoch -> two-step
/// mimic, otherwise the standard stage-1 path.
McLBranch select_branch(double p, int epoch);
McLBranch draw_branch(std::mt19937_64& rng, int epoch);

/// A batch of cropped training examples (float32).
struct TrainBatch {
  torch::Tensor target;       // [B, 2, F, T] compressed planes
  torch::Tensor mixture;      // [B, 2, F, T]
  torch::Tensor target_wave;  // [B, L]
  torch::Tensor enrollment;   // [B, 2, F, Te]
  torch::Tensor speaker_ids;  // [B] int64
};

/// Crops `samples[indices[i]]` at `offsets[i]` to `crop` samples (zero padded
/// when shorter). The enrollment is the cropped target itself.
TrainBatch make_batch(const std::vector<MixtureSample>& samples,
                      const std::vector<std::size_t>& indices,
                      const std::vector<std::size_t>& offsets, int crop,
                      const TransformConfig& tcfg);

/// f(x_t, t, s) used by the losses; t is [B].
using Predictor = std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& t,
                                              const torch::Tensor& s)>;

Predictor net_predictor(DcemNet& net);

/// Per-item squared L2 distance, averaged over elements: [B, ...] -> [B].
torch::Tensor l2_distance(const torch::Tensor& pred, const torch::Tensor& target);

/// Stage-1 loss for fixed draws: mean_b lambda(t_b) * L2(f(x_t), x0).
torch::Tensor stage1_loss(const Predictor& f, const TrainBatch& batch, const torch::Tensor& s,
                          const torch::Tensor& t, const torch::Tensor& noise,
                          const ScheduleParams& p);

struct CompositeDistance {
  torch::Tensor value;       // [B]
  std::vector<bool> silent;  // SI-SDR term dropped for silent targets
};

/// L2(pred, target) + alpha * (-SI-SDR(istft(pred), target_wave)), SI-SDR capped at +-50 dB.
CompositeDistance composite_distance(const torch::Tensor& pred, const torch::Tensor& target,
                                     const torch::Tensor& target_wave, double alpha,
                                     const TransformConfig& tcfg);

/// Random draws for one stage-2 batch.
struct Stage2Draws {
  std::vector<McLBranch> branches;
  torch::Tensor t;           // [B]
  torch::Tensor start_noise;  // noise for x_t ~ N(y, sigma^2) in the mimic branches
  torch::Tensor noise;        // z used by recomposition / the standard path
};

struct Stage2Loss {
  torch::Tensor loss;  // scalar, mean over items
  std::array<int, 3> branch_counts{};
  double lambda_mean = 0.0;
};

Stage2Loss stage2_loss(const Predictor& f, const TrainBatch& batch, const torch::Tensor& s,
                       const Stage2Draws& draws, const ScheduleParams& p,
                       const TransformConfig& tcfg, double alpha, bool two_step_gradient);

/// shadow <- decay * shadow + (1 - decay) * live, per tensor.
void ema_update(std::vector<torch::Tensor>& shadow, const std::vector<torch::Tensor>& live,
                double decay);
void ema_update(torch::nn::Module& shadow, const torch::nn::Module& live, double decay);

struct EncoderPretrainResult {
  double first_loss = 0.0;  // mean over the first 10% of steps
  double last_loss = 0.0;   // mean over the last 10% of steps
  double accuracy = 0.0;    // training accuracy over the last 10% of steps
};

/// Trains a conv speaker encoder as a cosine-softmax speaker classifier on
/// two-crop segments of the clean targets. No-op for the lookup encoder.
EncoderPretrainResult pretrain_speaker_encoder(SpeakerEncoder& encoder,
                                               const std::vector<MixtureSample>& train,
                                               const TrainConfig& tc, const TransformConfig& tcfg);

struct TrainSetup {
  ScheduleParams schedule;
  TransformConfig transform;
  TrainConfig train;
  SamplerConfig sampler;
  std::filesystem::path out_dir;  // receives ckpt/ and train_log.jsonl
  std::ostream* progress = nullptr;
};

struct StageResult {
  std::filesystem::path best_checkpoint;
  int best_epoch = 0;
  double best_score = 0.0;
  std::vector<double> epoch_losses;
};

/// Stage 1 on `train`, preceded by encoder pretraining when configured. Every
/// epoch the EMA weights are scored on `dev_subset` and written to
/// ckpt/epoch_{n}.bin; the best goes to ckpt/best.bin.
StageResult train_stage1(DcemNet& live, DcemNet& ema, const std::vector<MixtureSample>& train,
                         const std::vector<MixtureSample>& dev_subset, const TrainSetup& setup);

/// Stage 2 (epochs 1..stage2_epochs), starting from the given weights.
StageResult train_stage2(DcemNet& live, DcemNet& ema, const std::vector<MixtureSample>& train,
                         const std::vector<MixtureSample>& dev_subset, const TrainSetup& setup);

struct SelectionCandidate {
  int epoch = 0;
  std::shared_ptr<Denoiser> denoiser;
  std::function<torch::Tensor(const MixtureSample&)> embed;
};

struct SelectionResult {
  std::size_t index = 0;
  std::vector<double> scores;  // mean SI-SDR per candidate
};

/// Mean SI-SDR of dcem_infer over `dev`.
double score_candidate(const SelectionCandidate& c, const std::vector<MixtureSample>& dev,
                       const SamplerConfig& cfg, const DiffusionSetup& setup);

/// Highest mean SI-SDR wins; ties go to the later epoch.
SelectionResult select_best(const std::vector<SelectionCandidate>& candidates,
                            const std::vector<MixtureSample>& dev, const SamplerConfig& cfg,
                            const DiffusionSetup& setup);

/// `n` samples drawn without replacement with a fixed seed.
std::vector<MixtureSample> pick_subset(const std::vector<MixtureSample>& pool, std::size_t n,
                                       uint64_t seed);

// --- discriminative baseline -------------------------------------------------------

struct BaselineConfig {
  int channels = 24;
  int layers = 5;
  int embedding_dim = 32;
  int encoder_channels = 64;
  double lr = 1e-3;
  int epochs = 15;
  int batch_size = 4;

  void validate() const;
  bool operator==(const BaselineConfig&) const = default;
};

/// Mixture magnitude + speaker embedding -> mask in [0, 1] applied to the
/// mixture's compressed spectrogram (mixture phase kept).
class BaselineNetImpl : public torch::nn::Module {
 public:
  BaselineNetImpl(BaselineConfig cfg, int freq_bins);
  /// mixture planes [B, 2, F, T], embedding [B, D] -> mask [B, 1, F, T]
  torch::Tensor mask(const torch::Tensor& mixture, const torch::Tensor& s);
  /// masked planes [B, 2, F, T]
  torch::Tensor forward(const torch::Tensor& mixture, const torch::Tensor& enrollment);

  const BaselineConfig& config() const { return cfg_; }
  int freq_bins() const { return freq_bins_; }

  SpeakerEncoder encoder{nullptr};
  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
  std::vector<torch::nn::Conv2d> convs;
  std::vector<torch::nn::GroupNorm> norms;
  std::vector<Film> films;

 private:
  BaselineConfig cfg_;
  int freq_bins_;
};
TORCH_MODULE(BaselineNet);

BaselineNet train_discriminative_baseline(const std::vector<MixtureSample>& train,
                                          const BaselineConfig& cfg, const TrainConfig& tcfg_train,
                                          const TransformConfig& tcfg, uint64_t seed,
                                          std::ostream* progress = nullptr);

Waveform baseline_extract(BaselineNet& net, const Waveform& mixture, const Waveform& enrollment,
                          const TransformConfig& tcfg);

void save_baseline(const std::filesystem::path& path, BaselineNet& net);
BaselineNet load_baseline(const std::filesystem::path& path);

}  // namespace dcem
