#include "dcem/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <ATen/CPUGeneratorImpl.h>
#include <nlohmann/json.hpp>

#include "dcem/config.hpp"
#include "dcem/errors.hpp"
#include "dcem/metrics.hpp"

namespace dcem {

namespace F = torch::nn::functional;

void TrainConfig::validate() const {
  if (!(stage1_lr > 0.0) || !(stage2_lr > 0.0))
    throw ConfigError("train: learning rates must be > 0");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema_decay must be in (0, 1)");
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (stage2_epochs > 50) throw ConfigError("train: stage2_epochs above 50 leaves no standard branch");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (crop_length < 1024) throw ConfigError("train: crop_length must be >= 1024 samples");
  if (sisdr_weight < 0.0) throw ConfigError("train: sisdr_weight must be >= 0");
  if (select_samples < 1) throw ConfigError("train: select_samples must be >= 1");
  if (steps_per_epoch < 0) throw ConfigError("train: steps_per_epoch must be >= 0");
  if (encoder_pretrain_steps < 0) throw ConfigError("train: encoder_pretrain_steps must be >= 0");
  if (!(encoder_lr > 0.0)) throw ConfigError("train: encoder_lr must be > 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
  if (lr_schedule != "constant" && lr_schedule != "cosine")
    throw ConfigError("train: lr_schedule must be 'constant' or 'cosine'");
}

std::string to_string(McLBranch b) {
  switch (b) {
    case McLBranch::FirstStepMimic: return "FIRST_STEP_MIMIC";
    case McLBranch::TwoStepMimic: return "TWO_STEP_MIMIC";
    case McLBranch::Standard: return "STANDARD";
  }
  return "?";
}

McLBranch select_branch(double p, int epoch) {
  if (p <= epoch) return McLBranch::FirstStepMimic;
  if (p <= 2.0 * epoch) return McLBranch::TwoStepMimic;
  return McLBranch::Standard;
}

McLBranch draw_branch(std::mt19937_64& rng, int epoch) {
  // p ~ U(0, 100]; p = 0 has probability zero and would force a mimic branch at epoch 0.
  const double p = 100.0 - std::uniform_real_distribution<double>(0.0, 100.0)(rng);
  return select_branch(p, epoch);
}

TrainBatch make_batch(const std::vector<MixtureSample>& samples,
                      const std::vector<std::size_t>& indices,
                      const std::vector<std::size_t>& offsets, int crop,
                      const TransformConfig& tcfg) {
  if (indices.size() != offsets.size() || indices.empty())
    throw ContractError("make_batch: indices/offsets mismatch");
  const auto b = static_cast<int64_t>(indices.size());
  auto target = torch::zeros({b, crop}, torch::kDouble);
  auto mixture = torch::zeros({b, crop}, torch::kDouble);
  std::vector<int64_t> ids;
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = samples.at(indices[static_cast<std::size_t>(i)]);
    const std::size_t off = offsets[static_cast<std::size_t>(i)];
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(crop),
                                                s.target.size() > off ? s.target.size() - off : 0);
    auto ta = target.accessor<double, 2>();
    auto ma = mixture.accessor<double, 2>();
    for (std::size_t k = 0; k < n; ++k) {
      ta[i][static_cast<int64_t>(k)] = s.target.samples[off + k];
      ma[i][static_cast<int64_t>(k)] = s.mixture.samples[off + k];
    }
    ids.push_back(std::max(0, s.speaker_id));
  }
  TrainBatch out;
  out.target_wave = target.to(torch::kFloat);
  out.target = stft_planes(out.target_wave, tcfg);
  out.mixture = stft_planes(mixture.to(torch::kFloat), tcfg);
  out.enrollment = out.target;
  out.speaker_ids = torch::tensor(ids, torch::kLong);
  return out;
}

Predictor net_predictor(DcemNet& net) {
  return [net](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& s) mutable {
    return net->forward(x, t, s);
  };
}

torch::Tensor l2_distance(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw ContractError("l2_distance: shape mismatch");
  return (pred - target).pow(2).flatten(1).mean(1);
}

torch::Tensor stage1_loss(const Predictor& f, const TrainBatch& batch, const torch::Tensor& s,
                          const torch::Tensor& t, const torch::Tensor& noise,
                          const ScheduleParams& p) {
  auto tb = t.reshape({-1, 1, 1, 1});
  auto x_t = sample_forward(batch.target, batch.mixture, tb, noise, p);
  auto pred = f(x_t, t, s);
  return (loss_weight(t) * l2_distance(pred, batch.target)).mean();
}

CompositeDistance composite_distance(const torch::Tensor& pred, const torch::Tensor& target,
                                     const torch::Tensor& target_wave, double alpha,
                                     const TransformConfig& tcfg) {
  CompositeDistance out;
  auto l2 = l2_distance(pred, target);
  if (alpha == 0.0) {
    out.value = l2;
    out.silent.assign(static_cast<std::size_t>(l2.size(0)), false);
    return out;
  }
  auto wave = istft_planes(pred, tcfg, target_wave.size(-1));
  auto energy = target_wave.pow(2).sum(-1);
  auto audible = energy > 1e-10;
  auto sdr = torch::where(audible, si_sdr_torch(wave, target_wave), torch::zeros_like(energy));
  out.value = l2 - alpha * sdr;
  auto acc = audible.to(torch::kBool).contiguous();
  for (int64_t i = 0; i < acc.size(0); ++i) out.silent.push_back(!acc[i].item<bool>());
  return out;
}

Stage2Loss stage2_loss(const Predictor& f, const TrainBatch& batch, const torch::Tensor& s,
                       const Stage2Draws& draws, const ScheduleParams& p,
                       const TransformConfig& tcfg, double alpha, bool two_step_gradient) {
  const auto b = batch.target.size(0);
  if (static_cast<int64_t>(draws.branches.size()) != b)
    throw ContractError("stage2_loss: one branch per item required");
  Stage2Loss out;
  std::vector<torch::Tensor> parts;
  double lambda_sum = 0.0;
  for (McLBranch br : {McLBranch::FirstStepMimic, McLBranch::TwoStepMimic, McLBranch::Standard}) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < b; ++i)
      if (draws.branches[static_cast<std::size_t>(i)] == br) idx.push_back(i);
    out.branch_counts[static_cast<std::size_t>(br)] = static_cast<int>(idx.size());
    if (idx.empty()) continue;
    auto sel = torch::tensor(idx, torch::kLong);
    auto x0 = batch.target.index_select(0, sel);
    auto y = batch.mixture.index_select(0, sel);
    auto wave = batch.target_wave.index_select(0, sel);
    auto t = draws.t.index_select(0, sel);
    auto tb = t.reshape({-1, 1, 1, 1});
    auto ss = s.index_select(0, sel);
    auto z = draws.noise.index_select(0, sel);
    if (br == McLBranch::Standard) {
      auto x_t = sample_forward(x0, y, tb, z, p);
      auto w = loss_weight(t);
      parts.push_back(w * l2_distance(f(x_t, t, ss), x0));
      lambda_sum += w.sum().item<double>();
      continue;
    }
    // Mimic branches start from x_t ~ N(y, sigma(t)^2) and use lambda = 1.
    auto x_t = y + std_dev(tb, p) * draws.start_noise.index_select(0, sel);
    auto pred = f(x_t, t, ss);
    if (br == McLBranch::TwoStepMimic) {
      auto first = two_step_gradient ? pred : pred.detach();
      auto x_re = sample_forward(first, y, tb, z, p);
      pred = f(x_re, t, ss);
    }
    parts.push_back(composite_distance(pred, x0, wave, alpha, tcfg).value);
    lambda_sum += static_cast<double>(idx.size());
  }
  out.loss = torch::cat(parts).sum() / static_cast<double>(b);
  out.lambda_mean = lambda_sum / static_cast<double>(b);
  return out;
}

void ema_update(std::vector<torch::Tensor>& shadow, const std::vector<torch::Tensor>& live,
                double decay) {
  if (shadow.size() != live.size()) throw ContractError("ema_update: parameter lists differ");
  torch::NoGradGuard g;
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    if (shadow[i].sizes() != live[i].sizes())
      throw ContractError("ema_update: shape mismatch at parameter " + std::to_string(i));
    shadow[i].mul_(decay).add_(live[i], 1.0 - decay);
  }
}

void ema_update(torch::nn::Module& shadow, const torch::nn::Module& live, double decay) {
  auto s = shadow.parameters();
  ema_update(s, live.parameters(), decay);
}

// --- selection -----------------------------------------------------------------------

double score_candidate(const SelectionCandidate& c, const std::vector<MixtureSample>& dev,
                       const SamplerConfig& cfg, const DiffusionSetup& setup) {
  if (dev.empty()) throw DomainError("score_candidate: no dev samples");
  double total = 0.0;
  for (const auto& sample : dev) {
    auto out = dcem_infer(*c.denoiser, sample.mixture, c.embed(sample), cfg, setup);
    total += si_sdr(out, sample.target);
  }
  return total / static_cast<double>(dev.size());
}

SelectionResult select_best(const std::vector<SelectionCandidate>& candidates,
                            const std::vector<MixtureSample>& dev, const SamplerConfig& cfg,
                            const DiffusionSetup& setup) {
  if (candidates.empty()) throw DomainError("select_best: no checkpoints");
  SelectionResult r;
  if (candidates.size() == 1) {
    r.scores.push_back(std::numeric_limits<double>::quiet_NaN());
    return r;
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    r.scores.push_back(score_candidate(candidates[i], dev, cfg, setup));
    const bool better = r.scores[i] > r.scores[r.index] ||
                        (r.scores[i] == r.scores[r.index] &&
                         candidates[i].epoch >= candidates[r.index].epoch);
    if (i == 0 || better) r.index = i;
  }
  return r;
}

std::vector<MixtureSample> pick_subset(const std::vector<MixtureSample>& pool, std::size_t n,
                                       uint64_t seed) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(n, idx.size()));
  std::vector<MixtureSample> out;
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

// --- training loop -------------------------------------------------------------------

namespace {

struct Crops {
  std::vector<std::size_t> indices, offsets;
};

class EpochSampler {
 public:
  EpochSampler(const std::vector<MixtureSample>& data, int batch, int crop, uint64_t seed)
      : data_(data), batch_(batch), crop_(crop), rng_(seed) {}

  std::size_t steps(int configured) const {
    if (configured > 0) return static_cast<std::size_t>(configured);
    return (data_.size() + static_cast<std::size_t>(batch_) - 1) / static_cast<std::size_t>(batch_);
  }

  void shuffle() {
    order_.resize(data_.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  Crops next() {
    Crops c;
    for (int i = 0; i < batch_; ++i) {
      if (cursor_ >= order_.size()) shuffle();
      const std::size_t idx = order_[cursor_++];
      const std::size_t len = data_[idx].target.size();
      const std::size_t span = len > static_cast<std::size_t>(crop_) ? len - crop_ : 0;
      c.indices.push_back(idx);
      c.offsets.push_back(std::uniform_int_distribution<std::size_t>(0, span)(rng_));
    }
    return c;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  const std::vector<MixtureSample>& data_;
  int batch_, crop_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

void set_encoder_trainable(DcemNet& net, bool trainable) {
  for (auto& p : net->encoder->parameters()) p.requires_grad_(trainable);
}

StageResult run_stage(int stage, DcemNet& live, DcemNet& ema,
                      const std::vector<MixtureSample>& train,
                      const std::vector<MixtureSample>& dev_subset, const TrainSetup& setup) {
  const auto& tc = setup.train;
  tc.validate();
  if (train.empty()) throw DomainError("training set is empty");
  const int epochs = stage == 1 ? tc.stage1_epochs : tc.stage2_epochs;
  const double lr = stage == 1 ? tc.stage1_lr : tc.stage2_lr;
  const auto ckpt_dir = setup.out_dir / "ckpt";
  std::filesystem::create_directories(ckpt_dir);
  std::ofstream log(setup.out_dir / "train_log.jsonl", std::ios::app);

  const uint64_t seed = tc.seed * 1000003ull + static_cast<uint64_t>(stage);
  auto gen = at::detail::createCPUGenerator(seed);
  EpochSampler sampler(train, tc.batch_size, tc.crop_length, seed);
  sampler.shuffle();
  set_encoder_trainable(live, !tc.freeze_encoder);
  std::vector<torch::Tensor> trainable;
  for (auto& p : live->parameters())
    if (p.requires_grad()) trainable.push_back(p);
  torch::optim::Adam opt(trainable, torch::optim::AdamOptions(lr));
  const DiffusionSetup diffusion{setup.schedule, setup.transform};
  auto predictor = net_predictor(live);

  const std::size_t steps = sampler.steps(tc.steps_per_epoch);
  const double total_steps = static_cast<double>(steps) * std::max(epochs, 1);
  auto set_lr = [&](double done) {
    double v = lr;
    if (tc.lr_schedule == "cosine")
      v = lr * (0.05 + 0.475 * (1.0 + std::cos(M_PI * done / total_steps)));
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(v);
    return v;
  };

  StageResult result;
  result.best_score = -std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    live->train();
    double loss_sum = 0.0;
    std::array<long, 3> epoch_branches{};
    for (std::size_t step = 0; step < steps; ++step) {
      auto crops = sampler.next();
      auto batch = make_batch(train, crops.indices, crops.offsets, tc.crop_length, setup.transform);
      const auto b = batch.target.size(0);
      auto s = live->embed(batch.enrollment, batch.speaker_ids);
      auto t = torch::rand({b}, gen);
      auto noise = torch::randn(batch.target.sizes(), gen);
      torch::Tensor loss;
      nlohmann::json rec{{"stage", stage}, {"epoch", epoch}, {"step", step}};
      if (stage == 1) {
        loss = stage1_loss(predictor, batch, s, t, noise, setup.schedule);
        rec["branch"] = "STANDARD";
        rec["lambda_mean"] = loss_weight(t).mean().item<double>();
      } else {
        Stage2Draws draws;
        for (int64_t i = 0; i < b; ++i) draws.branches.push_back(draw_branch(sampler.rng(), epoch));
        draws.t = t;
        draws.start_noise = torch::randn(batch.target.sizes(), gen);
        draws.noise = noise;
        auto l2 = stage2_loss(predictor, batch, s, draws, setup.schedule, setup.transform,
                              tc.sisdr_weight, tc.two_step_gradient);
        loss = l2.loss;
        rec["branch_counts"] = {{"FIRST_STEP_MIMIC", l2.branch_counts[0]},
                                {"TWO_STEP_MIMIC", l2.branch_counts[1]},
                                {"STANDARD", l2.branch_counts[2]}};
        for (std::size_t k = 0; k < 3; ++k) epoch_branches[k] += l2.branch_counts[k];
        rec["lambda_mean"] = l2.lambda_mean;
      }
      const double value = loss.item<double>();
      if (!std::isfinite(value))
        throw NumericError("stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) + ": loss is not finite");
      rec["lr"] = set_lr(static_cast<double>((epoch - 1) * steps + step));
      opt.zero_grad();
      loss.backward();
      if (tc.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(trainable, tc.grad_clip);
      opt.step();
      ema_update(*ema, *live, tc.ema_decay);
      loss_sum += value;
      rec["loss"] = value;
      log << rec.dump() << "\n";
    }
    const double mean_loss = loss_sum / static_cast<double>(steps);
    result.epoch_losses.push_back(mean_loss);

    SelectionCandidate cand;
    cand.epoch = epoch;
    cand.denoiser = std::make_shared<NetDenoiser>(ema);
    cand.embed = [&](const MixtureSample& m) {
      return embed_speaker(ema, m.enrollment, setup.transform, m.speaker_id).vector;
    };
    const double score =
        dev_subset.empty() ? 0.0 : score_candidate(cand, dev_subset, setup.sampler, diffusion);
    const auto path = ckpt_dir / ("epoch_" + std::to_string(epoch) + ".bin");
    const std::string meta = nlohmann::json{{"dev_si_sdr", score}, {"loss", mean_loss}}.dump();
    save_checkpoint(path, live, ema, stage, epoch, meta);
    if (score >= result.best_score) {
      result.best_score = score;
      result.best_epoch = epoch;
      result.best_checkpoint = ckpt_dir / "best.bin";
      std::filesystem::copy_file(path, result.best_checkpoint,
                                 std::filesystem::copy_options::overwrite_existing);
    }
    nlohmann::json summary{{"stage", stage}, {"epoch", epoch}, {"summary", true},
                           {"loss", mean_loss}, {"dev_si_sdr", score}};
    if (stage == 2)
      summary["branch_counts"] = {{"FIRST_STEP_MIMIC", epoch_branches[0]},
                                  {"TWO_STEP_MIMIC", epoch_branches[1]},
                                  {"STANDARD", epoch_branches[2]}};
    log << summary.dump() << "\n";
    log.flush();
    if (setup.progress)
      *setup.progress << "stage " << stage << " epoch " << epoch << "/" << epochs
                      << " loss " << mean_loss << " dev SI-SDR " << score << " dB" << std::endl;
  }
  if (epochs == 0) {
    result.best_checkpoint = ckpt_dir / "best.bin";
    save_checkpoint(result.best_checkpoint, live, ema, stage, 0);
  }
  set_encoder_trainable(live, true);
  return result;
}

}  // namespace

EncoderPretrainResult pretrain_speaker_encoder(SpeakerEncoder& encoder,
                                               const std::vector<MixtureSample>& train,
                                               const TrainConfig& tc, const TransformConfig& tcfg) {
  tc.validate();
  EncoderPretrainResult result;
  if (encoder->lookup || tc.encoder_pretrain_steps == 0) return result;
  if (train.empty()) throw DomainError("encoder pretraining: training set is empty");
  int classes = 0;
  for (const auto& s : train) classes = std::max(classes, s.speaker_id + 1);
  if (classes < 2) throw DomainError("encoder pretraining needs at least two speakers");

  const uint64_t seed = tc.seed * 1000003ull + 7;
  torch::manual_seed(seed);
  const int dim = static_cast<int>(encoder->head->options.out_features());
  auto centers = torch::randn({classes, dim});
  centers.set_requires_grad(true);
  std::vector<torch::Tensor> params = encoder->parameters();
  params.push_back(centers);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(tc.encoder_lr));
  // Two crop lengths of clean speech, roughly the length of an enrollment.
  constexpr int kBatch = 16;
  constexpr double kScale = 10.0;
  EpochSampler sampler(train, kBatch, 2 * tc.crop_length, seed);
  sampler.shuffle();

  const int steps = tc.encoder_pretrain_steps;
  const int window = std::max(1, steps / 10);
  double head_sum = 0.0, tail_sum = 0.0;
  long tail_correct = 0, tail_total = 0;
  encoder->train();
  for (int step = 0; step < steps; ++step) {
    auto crops = sampler.next();
    auto batch = make_batch(train, crops.indices, crops.offsets, 2 * tc.crop_length, tcfg);
    auto e = encoder(plane_magnitude(batch.target));
    auto logits = kScale * torch::matmul(e, F::normalize(centers, F::NormalizeFuncOptions().dim(-1)).t());
    auto loss = F::cross_entropy(logits, batch.speaker_ids);
    const double v = loss.item<double>();
    if (!std::isfinite(v))
      throw NumericError("encoder pretraining step " + std::to_string(step) + ": loss is not finite");
    opt.zero_grad();
    loss.backward();
    opt.step();
    if (step < window) head_sum += v;
    if (step >= steps - window) {
      tail_sum += v;
      tail_correct += logits.argmax(-1).eq(batch.speaker_ids).sum().item<long>();
      tail_total += kBatch;
    }
  }
  encoder->eval();
  result.first_loss = head_sum / std::min(window, steps);
  result.last_loss = tail_sum / std::min(window, steps);
  result.accuracy = static_cast<double>(tail_correct) / static_cast<double>(tail_total);
  return result;
}

StageResult train_stage1(DcemNet& live, DcemNet& ema, const std::vector<MixtureSample>& train,
                         const std::vector<MixtureSample>& dev_subset, const TrainSetup& setup) {
  const auto& tc = setup.train;
  if (tc.encoder_pretrain_steps > 0 && !live->encoder->lookup) {
    auto r = pretrain_speaker_encoder(live->encoder, train, tc, setup.transform);
    {
      torch::NoGradGuard g;
      auto src = live->encoder->parameters();
      auto dst = ema->encoder->parameters();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i].copy_(src[i]);
    }
    std::filesystem::create_directories(setup.out_dir);
    std::ofstream log(setup.out_dir / "train_log.jsonl", std::ios::app);
    log << nlohmann::json{{"stage", 1}, {"encoder_pretrain", true},
                          {"steps", tc.encoder_pretrain_steps}, {"first_loss", r.first_loss},
                          {"last_loss", r.last_loss}, {"accuracy", r.accuracy}}
               .dump()
        << "\n";
    if (setup.progress)
      *setup.progress << "speaker encoder: " << tc.encoder_pretrain_steps << " steps, loss "
                      << r.first_loss << " -> " << r.last_loss << ", accuracy " << r.accuracy
                      << std::endl;
  }
  return run_stage(1, live, ema, train, dev_subset, setup);
}

StageResult train_stage2(DcemNet& live, DcemNet& ema, const std::vector<MixtureSample>& train,
                         const std::vector<MixtureSample>& dev_subset, const TrainSetup& setup) {
  return run_stage(2, live, ema, train, dev_subset, setup);
}

// --- discriminative baseline ------------------------------------------------------------

void BaselineConfig::validate() const {
  if (channels < 2 || layers < 1 || embedding_dim < 1 || encoder_channels < 1)
    throw ConfigError("baseline: sizes must be positive");
  if (!(lr > 0.0)) throw ConfigError("baseline: lr must be > 0");
  if (epochs < 0 || batch_size < 1) throw ConfigError("baseline: bad epochs/batch_size");
}

BaselineNetImpl::BaselineNetImpl(BaselineConfig cfg, int freq_bins)
    : cfg_(std::move(cfg)), freq_bins_(freq_bins) {
  cfg_.validate();
  ModelConfig enc;
  enc.embedding_dim = cfg_.embedding_dim;
  enc.encoder_channels = cfg_.encoder_channels;
  enc.freq_bins = freq_bins;
  encoder = register_module("encoder", SpeakerEncoder(enc));
  const int c = cfg_.channels;
  conv_in = register_module(
      "conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, c, 3).padding(1)));
  for (int l = 0; l < cfg_.layers; ++l) {
    const int64_t d = int64_t{1} << (l % 4);  // frequency dilation 1, 2, 4, 8
    convs.push_back(register_module(
        "conv" + std::to_string(l),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3).padding({d, 1}).dilation({d, 1}))));
    norms.push_back(register_module("norm" + std::to_string(l),
                                    torch::nn::GroupNorm(torch::nn::GroupNormOptions(c % 4 ? 1 : 4, c))));
    films.push_back(register_module("film" + std::to_string(l), Film(cfg_.embedding_dim, c)));
  }
  conv_out = register_module(
      "conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 1, 3).padding(1)));
}

torch::Tensor BaselineNetImpl::mask(const torch::Tensor& mixture, const torch::Tensor& s) {
  auto h = conv_in(plane_magnitude(mixture).unsqueeze(1));
  for (std::size_t l = 0; l < convs.size(); ++l)
    h = h + films[l](F::silu(norms[l](convs[l](h))), s);
  return torch::sigmoid(conv_out(h));
}

torch::Tensor BaselineNetImpl::forward(const torch::Tensor& mixture,
                                       const torch::Tensor& enrollment) {
  auto s = encoder(plane_magnitude(enrollment));
  return mixture * mask(mixture, s);
}

BaselineNet train_discriminative_baseline(const std::vector<MixtureSample>& train,
                                          const BaselineConfig& cfg, const TrainConfig& tc,
                                          const TransformConfig& tcfg, uint64_t seed,
                                          std::ostream* progress) {
  if (train.empty()) throw DomainError("baseline: empty training set");
  torch::manual_seed(seed);
  BaselineNet net(cfg, tcfg.bins());
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.lr));
  EpochSampler sampler(train, cfg.batch_size, tc.crop_length, seed ^ 0xba5e);
  sampler.shuffle();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    const std::size_t steps = sampler.steps(tc.steps_per_epoch);
    for (std::size_t step = 0; step < steps; ++step) {
      auto crops = sampler.next();
      auto batch = make_batch(train, crops.indices, crops.offsets, tc.crop_length, tcfg);
      auto est = istft_planes(net->forward(batch.mixture, batch.enrollment), tcfg,
                              batch.target_wave.size(-1));
      auto loss = -si_sdr_torch(est, batch.target_wave).mean();
      const double v = loss.item<double>();
      if (!std::isfinite(v))
        throw NumericError("baseline epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + ": loss is not finite");
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += v;
    }
    if (progress)
      *progress << "baseline epoch " << epoch << "/" << cfg.epochs << " -SI-SDR "
                << loss_sum / static_cast<double>(steps) << std::endl;
  }
  net->eval();
  return net;
}

Waveform baseline_extract(BaselineNet& net, const Waveform& mixture, const Waveform& enrollment,
                          const TransformConfig& tcfg) {
  torch::NoGradGuard g;
  auto mix = stft_planes(to_tensor(mixture).to(torch::kFloat), tcfg).unsqueeze(0);
  auto enr = stft_planes(to_tensor(enrollment).to(torch::kFloat), tcfg).unsqueeze(0);
  auto out = istft_planes(net->forward(mix, enr), tcfg, static_cast<int64_t>(mixture.size()));
  return from_tensor(out.squeeze(0));
}

void save_baseline(const std::filesystem::path& path, BaselineNet& net) {
  c10::impl::GenericDict root(c10::StringType::get(), c10::AnyType::get());
  nlohmann::json cfg = net->config();
  root.insert("format", std::string("dcem-baseline-v1"));
  root.insert("config", cfg.dump());
  root.insert("freq_bins", static_cast<int64_t>(net->freq_bins()));
  c10::Dict<std::string, torch::Tensor> params;
  for (const auto& p : net->named_parameters(true)) params.insert(p.key(), p.value().detach().clone());
  root.insert("params", params);
  auto bytes = torch::pickle_save(c10::IValue(root));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

BaselineNet load_baseline(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open baseline " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  c10::IValue v;
  try {
    v = torch::pickle_load(bytes);
  } catch (const c10::Error&) {
    throw DataError("corrupt baseline file " + path.string());
  }
  auto root = v.toGenericDict();
  if (!root.contains("format") || root.at("format").toStringRef() != "dcem-baseline-v1")
    throw DataError("unsupported baseline format in " + path.string());
  auto cfg = nlohmann::json::parse(root.at("config").toStringRef()).get<BaselineConfig>();
  BaselineNet net(cfg, static_cast<int>(root.at("freq_bins").toInt()));
  torch::NoGradGuard g;
  auto params = root.at("params").toGenericDict();
  for (auto& p : net->named_parameters(true)) {
    if (!params.contains(p.key())) throw DataError("baseline: missing parameter " + p.key());
    p.value().copy_(params.at(p.key()).toTensor());
  }
  net->eval();
  return net;
}

}  // namespace dcem
