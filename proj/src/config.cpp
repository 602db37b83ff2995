#include "dcem/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dcem/errors.hpp"

namespace dcem {

using nlohmann::json;

namespace {

// Reads fields from one JSON object section and rejects keys it never consumed.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key: " + name_ + "." + item.key());
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

void to_json(json& j, const ScheduleParams& v) {
  j = {{"gamma", v.gamma}, {"sigma_min", v.sigma_min}, {"sigma_max", v.sigma_max}};
}
void from_json(const json& j, ScheduleParams& v) {
  Section s(j, "schedule");
  s.get("gamma", v.gamma);
  s.get("sigma_min", v.sigma_min);
  s.get("sigma_max", v.sigma_max);
}

void to_json(json& j, const TransformConfig& v) {
  j = {{"fft_size", v.fft_size}, {"hop", v.hop}, {"window", v.window},
       {"compress_exponent", v.compress_exponent}, {"compress_scale", v.compress_scale}};
}
void from_json(const json& j, TransformConfig& v) {
  Section s(j, "transform");
  s.get("fft_size", v.fft_size);
  s.get("hop", v.hop);
  s.get("window", v.window);
  s.get("compress_exponent", v.compress_exponent);
  s.get("compress_scale", v.compress_scale);
}

void to_json(json& j, const ModelConfig& v) {
  j = {{"base_channels", v.base_channels}, {"channel_mult", v.channel_mult},
       {"embedding_dim", v.embedding_dim}, {"freq_bins", v.freq_bins},
       {"time_features", v.time_features}, {"speaker_encoder", v.speaker_encoder},
       {"encoder_channels", v.encoder_channels}, {"num_speakers", v.num_speakers}};
}
void from_json(const json& j, ModelConfig& v) {
  Section s(j, "model");
  s.get("base_channels", v.base_channels);
  s.get("channel_mult", v.channel_mult);
  s.get("embedding_dim", v.embedding_dim);
  s.get("freq_bins", v.freq_bins);
  s.get("time_features", v.time_features);
  s.get("speaker_encoder", v.speaker_encoder);
  s.get("encoder_channels", v.encoder_channels);
  s.get("num_speakers", v.num_speakers);
}

void to_json(json& j, const TrainConfig& v) {
  j = {{"stage1_lr", v.stage1_lr},         {"stage2_lr", v.stage2_lr},
       {"stage1_epochs", v.stage1_epochs}, {"stage2_epochs", v.stage2_epochs},
       {"ema_decay", v.ema_decay},         {"batch_size", v.batch_size},
       {"crop_length", v.crop_length},     {"sisdr_weight", v.sisdr_weight},
       {"two_step_gradient", v.two_step_gradient}, {"select_samples", v.select_samples},
       {"steps_per_epoch", v.steps_per_epoch},
       {"encoder_pretrain_steps", v.encoder_pretrain_steps}, {"encoder_lr", v.encoder_lr},
       {"freeze_encoder", v.freeze_encoder}, {"grad_clip", v.grad_clip},
       {"lr_schedule", v.lr_schedule}, {"seed", v.seed}};
}
void from_json(const json& j, TrainConfig& v) {
  Section s(j, "train");
  s.get("stage1_lr", v.stage1_lr);
  s.get("stage2_lr", v.stage2_lr);
  s.get("stage1_epochs", v.stage1_epochs);
  s.get("stage2_epochs", v.stage2_epochs);
  s.get("ema_decay", v.ema_decay);
  s.get("batch_size", v.batch_size);
  s.get("crop_length", v.crop_length);
  s.get("sisdr_weight", v.sisdr_weight);
  s.get("two_step_gradient", v.two_step_gradient);
  s.get("select_samples", v.select_samples);
  s.get("steps_per_epoch", v.steps_per_epoch);
  s.get("encoder_pretrain_steps", v.encoder_pretrain_steps);
  s.get("encoder_lr", v.encoder_lr);
  s.get("freeze_encoder", v.freeze_encoder);
  s.get("grad_clip", v.grad_clip);
  s.get("lr_schedule", v.lr_schedule);
  s.get("seed", v.seed);
}

void to_json(json& j, const BaselineConfig& v) {
  j = {{"channels", v.channels}, {"layers", v.layers}, {"embedding_dim", v.embedding_dim},
       {"encoder_channels", v.encoder_channels}, {"lr", v.lr}, {"epochs", v.epochs},
       {"batch_size", v.batch_size}};
}
void from_json(const json& j, BaselineConfig& v) {
  Section s(j, "baseline");
  s.get("channels", v.channels);
  s.get("layers", v.layers);
  s.get("embedding_dim", v.embedding_dim);
  s.get("encoder_channels", v.encoder_channels);
  s.get("lr", v.lr);
  s.get("epochs", v.epochs);
  s.get("batch_size", v.batch_size);
}

void to_json(json& j, const SamplerConfig& v) {
  j = {{"steps", v.steps}, {"ensemble_size", v.ensemble_size}, {"regen_steps", v.regen_steps},
       {"seed", v.seed}, {"ensemble_norm", v.ensemble_norm}};
}
void from_json(const json& j, SamplerConfig& v) {
  Section s(j, "sampler");
  s.get("steps", v.steps);
  s.get("ensemble_size", v.ensemble_size);
  s.get("regen_steps", v.regen_steps);
  s.get("seed", v.seed);
  s.get("ensemble_norm", v.ensemble_norm);
}

void to_json(json& j, const DataConfig& v) {
  j = {{"num_speakers", v.num_speakers}, {"utterances_per_speaker", v.utterances_per_speaker},
       {"min_duration", v.min_duration}, {"max_duration", v.max_duration},
       {"train_fraction", v.train_fraction}, {"dev_fraction", v.dev_fraction},
       {"sir_min_db", v.sir_min_db}, {"sir_max_db", v.sir_max_db},
       {"snr_min_db", v.snr_min_db}, {"snr_max_db", v.snr_max_db},
       {"train_scenarios", v.train_scenarios}, {"eval_scenarios", v.eval_scenarios}};
}
void from_json(const json& j, DataConfig& v) {
  Section s(j, "data");
  s.get("num_speakers", v.num_speakers);
  s.get("utterances_per_speaker", v.utterances_per_speaker);
  s.get("min_duration", v.min_duration);
  s.get("max_duration", v.max_duration);
  s.get("train_fraction", v.train_fraction);
  s.get("dev_fraction", v.dev_fraction);
  s.get("sir_min_db", v.sir_min_db);
  s.get("sir_max_db", v.sir_max_db);
  s.get("snr_min_db", v.snr_min_db);
  s.get("snr_max_db", v.snr_max_db);
  s.get("train_scenarios", v.train_scenarios);
  s.get("eval_scenarios", v.eval_scenarios);
}

void to_json(json& j, const PathsConfig& v) {
  j = {{"run_dir", v.run_dir}, {"corpus_dir", v.corpus_dir}};
}
void from_json(const json& j, PathsConfig& v) {
  Section s(j, "paths");
  s.get("run_dir", v.run_dir);
  s.get("corpus_dir", v.corpus_dir);
}

void to_json(json& j, const ExperimentConfig& v) {
  j = {{"seed", v.seed},       {"schedule", v.schedule}, {"transform", v.transform},
       {"model", v.model},     {"train", v.train},       {"baseline", v.baseline},
       {"sampler", v.sampler}, {"data", v.data},         {"paths", v.paths}};
}
void from_json(const json& j, ExperimentConfig& v) {
  Section s(j, "config");
  s.get("seed", v.seed);
  s.get("schedule", v.schedule);
  s.get("transform", v.transform);
  s.get("model", v.model);
  s.get("train", v.train);
  s.get("baseline", v.baseline);
  s.get("sampler", v.sampler);
  s.get("data", v.data);
  s.get("paths", v.paths);
}

void ExperimentConfig::validate() const {
  try {
    schedule.validate();
    transform.validate();
    model.validate();
    train.validate();
    baseline.validate();
    sampler.validate();
    data.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (model.freq_bins != transform.bins())
    throw ConfigError("model.freq_bins (" + std::to_string(model.freq_bins) +
                      ") must equal transform bins (" + std::to_string(transform.bins()) + ")");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    cfg = j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) { return cfg; }

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  auto cfg = config_from_json(j);
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(cfg.paths.run_dir);
  resolve(cfg.paths.corpus_dir);
  return cfg;
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << config_to_json(cfg).dump(2) << "\n";
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path is not an object: " + key);
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

}  // namespace dcem
