#include "dcem/model.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dcem/config.hpp"
#include "dcem/errors.hpp"

namespace dcem {

namespace F = torch::nn::functional;

namespace {

int group_count(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0 && channels / g >= 2) return g;
  return 1;
}

torch::nn::GroupNorm group_norm(int channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(channels), channels));
}

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1x1(int in, int out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

void require_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>())
    throw NumericError(std::string(what) + ": non-finite values");
}

}  // namespace

void ModelConfig::validate() const {
  if (base_channels < 2) throw ConfigError("model: base_channels must be >= 2");
  if (channel_mult.empty()) throw ConfigError("model: channel_mult must be non-empty");
  for (int m : channel_mult)
    if (m < 1) throw ConfigError("model: channel_mult entries must be >= 1");
  if (embedding_dim < 1) throw ConfigError("model: embedding_dim must be >= 1");
  if (freq_bins % time_multiple() != 0)
    throw ConfigError("model: freq_bins must be divisible by 2^(levels-1)");
  if (time_features < 1) throw ConfigError("model: time_features must be >= 1");
  if (speaker_encoder != "conv" && speaker_encoder != "lookup")
    throw ConfigError("model: speaker_encoder must be 'conv' or 'lookup'");
  if (speaker_encoder == "lookup" && num_speakers < 1)
    throw ConfigError("model: lookup encoder needs num_speakers >= 1");
  if (encoder_channels < 1) throw ConfigError("model: encoder_channels must be >= 1");
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.base_channels = 4;
  c.channel_mult = {1, 2};
  c.embedding_dim = 4;
  c.freq_bins = 16;
  c.time_features = 2;
  c.encoder_channels = 4;
  return c;
}

// --- FiLM ------------------------------------------------------------------

FilmImpl::FilmImpl(int embedding_dim, int channels_) : channels(channels_) {
  proj = register_module("proj", torch::nn::Linear(embedding_dim, 2 * channels));
  torch::NoGradGuard g;
  proj->bias.zero_();
  proj->bias.slice(0, 0, channels).fill_(1.0);
}

torch::Tensor FilmImpl::forward(const torch::Tensor& hidden, const torch::Tensor& s) {
  if (hidden.dim() != 4 || hidden.size(1) != channels)
    throw ContractError("film: hidden must be [B, " + std::to_string(channels) + ", H, W]");
  if (s.dim() != 2 || s.size(1) != proj->options.in_features())
    throw ContractError("film: embedding dimension mismatch");
  auto ss = proj(s);
  auto scale = ss.slice(1, 0, channels).unsqueeze(-1).unsqueeze(-1);
  auto shift = ss.slice(1, channels, 2 * channels).unsqueeze(-1).unsqueeze(-1);
  return hidden * scale + shift;
}

torch::Tensor concat_condition(const torch::Tensor& hidden, const torch::Tensor& s) {
  if (hidden.dim() != 4 || s.dim() != 2 || s.size(0) != hidden.size(0))
    throw ContractError("concat_condition: expected [B, C, H, W] and [B, D]");
  auto tiled = s.to(hidden.dtype())
                   .unsqueeze(-1)
                   .unsqueeze(-1)
                   .expand({s.size(0), s.size(1), hidden.size(2), hidden.size(3)});
  return torch::cat({hidden, tiled}, 1);
}

// --- residual block ----------------------------------------------------------

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int temb_dim,
                           int embedding_dim) {
  norm1 = register_module("norm1", group_norm(in_channels));
  conv1 = register_module("conv1", conv3x3(in_channels, out_channels));
  temb_proj = register_module("temb_proj", torch::nn::Linear(temb_dim, out_channels));
  film = register_module("film", Film(embedding_dim, out_channels));
  norm2 = register_module("norm2", group_norm(out_channels));
  conv2 = register_module("conv2", conv3x3(out_channels, out_channels));
  if (in_channels != out_channels)
    skip = register_module("skip", conv1x1(in_channels, out_channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb,
                                    const torch::Tensor& s) {
  auto h = conv1(F::silu(norm1(x)));
  h = h + temb_proj(F::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = film(h, s);
  h = conv2(F::silu(norm2(h)));
  return (skip ? skip(x) : x) + h;
}

// --- attention ----------------------------------------------------------------

AttentionBlockImpl::AttentionBlockImpl(int channels) {
  norm = register_module("norm", group_norm(channels));
  qkv = register_module("qkv", conv1x1(channels, 3 * channels));
  out = register_module("out", conv1x1(channels, channels));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto parts = qkv(norm(x)).reshape({b, 3, c, h * w});
  auto q = parts.select(1, 0), k = parts.select(1, 1), v = parts.select(1, 2);
  auto weights = torch::softmax(
      torch::bmm(q.transpose(1, 2), k) / std::sqrt(static_cast<double>(c)), -1);
  auto mixed = torch::bmm(v, weights.transpose(1, 2)).reshape({b, c, h, w});
  return x + out(mixed);
}

// --- time embedding -----------------------------------------------------------

TimeEmbeddingImpl::TimeEmbeddingImpl(int features, int out_dim) {
  // Log-spaced angular frequencies covering t in [0, 1].
  frequencies = register_buffer(
      "frequencies",
      2.0 * M_PI * torch::logspace(std::log10(0.5), std::log10(200.0), features,
                                   10.0, torch::kFloat));
  fc1 = register_module("fc1", torch::nn::Linear(2 * features, out_dim));
  fc2 = register_module("fc2", torch::nn::Linear(out_dim, out_dim));
}

torch::Tensor TimeEmbeddingImpl::forward(const torch::Tensor& t) {
  auto arg = t.to(frequencies.dtype()).unsqueeze(-1) * frequencies;
  auto feats = torch::cat({torch::sin(arg), torch::cos(arg)}, -1);
  return fc2(F::silu(fc1(feats)));
}

// --- speaker encoder ------------------------------------------------------------

SpeakerEncoderImpl::SpeakerEncoderImpl(const ModelConfig& cfg)
    : lookup(cfg.speaker_encoder == "lookup") {
  if (lookup) {
    table = register_module("table",
                            torch::nn::Embedding(cfg.num_speakers, cfg.embedding_dim));
    return;
  }
  const int c = cfg.encoder_channels;
  conv1 = register_module(
      "conv1", torch::nn::Conv1d(torch::nn::Conv1dOptions(cfg.freq_bins, c, 3).padding(1)));
  conv2 = register_module(
      "conv2", torch::nn::Conv1d(torch::nn::Conv1dOptions(c, c, 3).padding(2).dilation(2)));
  head = register_module("head", torch::nn::Linear(2 * c, cfg.embedding_dim));
}

torch::Tensor SpeakerEncoderImpl::forward(const torch::Tensor& magnitude,
                                          const std::optional<torch::Tensor>& speaker_ids) {
  torch::Tensor e;
  if (lookup) {
    if (!speaker_ids) throw ContractError("lookup speaker encoder needs speaker ids");
    e = table(*speaker_ids);
  } else {
    // Level normalisation makes the embedding independent of enrollment loudness.
    auto level = magnitude.mean({-2, -1}, true).clamp_min(1e-5);
    auto h = F::silu(conv1(magnitude / level));
    h = F::silu(conv2(h));
    e = head(torch::cat({h.mean(-1), h.std(-1, false)}, -1));
  }
  return F::normalize(e, F::NormalizeFuncOptions().dim(-1).eps(1e-12));
}

// --- U-Net ----------------------------------------------------------------------

DcemNetImpl::DcemNetImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int base = cfg_.base_channels;
  const int temb_dim = 4 * base;
  const int d = cfg_.embedding_dim;
  std::vector<int> ch;
  for (int m : cfg_.channel_mult) ch.push_back(base * m);

  time_embed = register_module("time_embed", TimeEmbedding(cfg_.time_features, temb_dim));
  encoder = register_module("encoder", SpeakerEncoder(cfg_));
  conv_in = register_module("conv_in", conv3x3(2, base));

  int cur = base;
  for (int i = 0; i < cfg_.levels(); ++i) {
    down_blocks.push_back(register_module("down" + std::to_string(i),
                                          ResBlock(cur, ch[i], temb_dim, d)));
    cur = ch[i];
    if (i + 1 < cfg_.levels())
      downsample.push_back(
          register_module("downsample" + std::to_string(i), conv3x3(cur, cur, 2)));
  }
  mid1 = register_module("mid1", ResBlock(cur, cur, temb_dim, d));
  attention = register_module("attention", AttentionBlock(cur + d));
  mid_proj = register_module("mid_proj", conv1x1(cur + d, cur));
  mid2 = register_module("mid2", ResBlock(cur, cur, temb_dim, d));
  for (int i = cfg_.levels() - 1; i >= 0; --i) {
    up_blocks.push_back(register_module("up" + std::to_string(i),
                                        ResBlock(cur + ch[i], ch[i], temb_dim, d)));
    cur = ch[i];
    if (i > 0)
      upsample.push_back(register_module("upsample" + std::to_string(i), conv3x3(cur, cur)));
  }
  norm_out = register_module("norm_out", group_norm(cur));
  conv_out = register_module("conv_out", conv3x3(cur, 2));
}

torch::Tensor DcemNetImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t,
                                   const torch::Tensor& s) {
  if (x_t.dim() != 4 || x_t.size(1) != 2 || x_t.size(2) != cfg_.freq_bins)
    throw ContractError("denoiser input must be [B, 2, " + std::to_string(cfg_.freq_bins) +
                        ", T]");
  if (t.dim() != 1 || t.size(0) != x_t.size(0) || s.dim() != 2 ||
      s.size(0) != x_t.size(0) || s.size(1) != cfg_.embedding_dim)
    throw ContractError("denoiser: t must be [B] and s [B, D]");

  const int64_t frames = x_t.size(3);
  const int64_t mult = cfg_.time_multiple();
  const int64_t pad = (mult - frames % mult) % mult;
  auto x = pad > 0 ? torch::constant_pad_nd(x_t, {0, pad}) : x_t;

  auto temb = time_embed(t);
  auto h = conv_in(x);
  std::vector<torch::Tensor> skips;
  for (int i = 0; i < cfg_.levels(); ++i) {
    h = down_blocks[static_cast<std::size_t>(i)](h, temb, s);
    skips.push_back(h);
    if (i + 1 < cfg_.levels()) h = downsample[static_cast<std::size_t>(i)](h);
  }
  h = mid1(h, temb, s);
  h = attention(concat_condition(h, s));
  last_attention_output = h.detach();
  h = mid2(mid_proj(h), temb, s);
  for (std::size_t j = 0; j < up_blocks.size(); ++j) {
    h = up_blocks[j](torch::cat({h, skips.back()}, 1), temb, s);
    skips.pop_back();
    if (j < upsample.size()) {
      h = F::interpolate(h, F::InterpolateFuncOptions()
                                .scale_factor(std::vector<double>{2.0, 2.0})
                                .mode(torch::kNearest));
      h = upsample[j](h);
    }
  }
  auto out = conv_out(F::silu(norm_out(h)));
  return pad > 0 ? out.slice(3, 0, frames) : out;
}

torch::Tensor DcemNetImpl::embed(const torch::Tensor& enrollment_planes,
                                 const std::optional<torch::Tensor>& speaker_ids) {
  return encoder(plane_magnitude(enrollment_planes), speaker_ids);
}

void DcemNetImpl::zero_output_layer() {
  torch::NoGradGuard g;
  conv_out->weight.zero_();
  conv_out->bias.zero_();
}

int64_t DcemNetImpl::parameter_count() {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

void copy_parameters(torch::nn::Module& dst, const torch::nn::Module& src) {
  torch::NoGradGuard g;
  auto d = dst.named_parameters(true);
  auto s = src.named_parameters(true);
  if (d.size() != s.size()) throw ContractError("copy_parameters: parameter trees differ");
  for (const auto& item : s) {
    auto* target = d.find(item.key());
    if (!target || target->sizes() != item.value().sizes())
      throw ContractError("copy_parameters: mismatch at " + item.key());
    target->copy_(item.value());
  }
}

DcemNet clone_net(DcemNet& net) {
  DcemNet copy(net->config());
  copy_parameters(*copy, *net);
  return copy;
}

// --- inference wrappers -----------------------------------------------------------

torch::Tensor NetDenoiser::denoise(const torch::Tensor& x_t, double t,
                                   const torch::Tensor& s) {
  if (x_t.dim() != 3) throw ContractError("denoise: expected [2, F, T] input");
  require_finite(x_t, "denoise input");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("denoise: t outside [0, 1]");
  torch::NoGradGuard g;
  auto out = net_->forward(x_t.to(torch::kFloat).unsqueeze(0),
                           torch::full({1}, t, torch::kFloat),
                           s.to(torch::kFloat).reshape({1, -1}));
  auto result = out.squeeze(0).to(torch::kDouble);
  require_finite(result, "denoise output");
  return result;
}

SpeakerEmbedding embed_speaker(DcemNet& net, const Waveform& enrollment,
                               const TransformConfig& tcfg,
                               std::optional<int> speaker_id) {
  if (enrollment.duration() < 0.5)
    throw DomainError("embed_speaker: enrollment shorter than 0.5 s");
  torch::NoGradGuard g;
  auto planes = stft_planes(to_tensor(enrollment).to(torch::kFloat), tcfg).unsqueeze(0);
  std::optional<torch::Tensor> ids;
  if (speaker_id) ids = torch::full({1}, *speaker_id, torch::kLong);
  auto e = net->embed(planes, ids).squeeze(0);
  require_finite(e, "speaker embedding");
  return {e, speaker_id};
}

// --- checkpoints ---------------------------------------------------------------------

namespace {

c10::Dict<std::string, torch::Tensor> state_dict(torch::nn::Module& m) {
  c10::Dict<std::string, torch::Tensor> d;
  for (const auto& p : m.named_parameters(true)) d.insert(p.key(), p.value().detach().clone());
  return d;
}

void load_state(torch::nn::Module& m, const c10::Dict<std::string, torch::Tensor>& d,
                const std::string& which) {
  torch::NoGradGuard g;
  auto params = m.named_parameters(true);
  if (params.size() != d.size())
    throw DataError("checkpoint: " + which + " parameter count mismatch");
  for (auto& p : params) {
    if (!d.contains(p.key())) throw DataError("checkpoint: missing " + which + "/" + p.key());
    auto v = d.at(p.key());
    if (v.sizes() != p.value().sizes())
      throw DataError("checkpoint: shape mismatch at " + which + "/" + p.key());
    p.value().copy_(v);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, DcemNet& live, DcemNet& ema,
                     int stage, int epoch, const std::string& meta) {
  c10::impl::GenericDict root(c10::StringType::get(), c10::AnyType::get());
  nlohmann::json cfg = live->config();
  root.insert("format", std::string(kCheckpointFormat));
  root.insert("config", cfg.dump());
  root.insert("stage", static_cast<int64_t>(stage));
  root.insert("epoch", static_cast<int64_t>(epoch));
  root.insert("meta", meta);
  root.insert("live", state_dict(*live));
  root.insert("ema", state_dict(*ema));
  auto bytes = torch::pickle_save(c10::IValue(root));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  c10::IValue v;
  try {
    v = torch::pickle_load(bytes);
  } catch (const c10::Error& e) {
    throw DataError("corrupt checkpoint " + path.string());
  }
  if (!v.isGenericDict()) throw DataError("checkpoint is not a dictionary");
  auto root = v.toGenericDict();
  if (!root.contains("format") || root.at("format").toStringRef() != kCheckpointFormat)
    throw DataError("unsupported checkpoint format in " + path.string());
  Checkpoint ck;
  ck.config = nlohmann::json::parse(root.at("config").toStringRef()).get<ModelConfig>();
  ck.stage = static_cast<int>(root.at("stage").toInt());
  ck.epoch = static_cast<int>(root.at("epoch").toInt());
  ck.meta = root.at("meta").toStringRef();
  ck.live = DcemNet(ck.config);
  ck.ema = DcemNet(ck.config);
  auto to_dict = [](const c10::IValue& iv) {
    c10::Dict<std::string, torch::Tensor> d;
    for (const auto& e : iv.toGenericDict()) d.insert(e.key().toStringRef(), e.value().toTensor());
    return d;
  };
  load_state(*ck.live, to_dict(root.at("live")), "live");
  load_state(*ck.ema, to_dict(root.at("ema")), "ema");
  return ck;
}

}  // namespace dcem
