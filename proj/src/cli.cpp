#include "dcem/cli.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <c10/util/Exception.h>

#include "dcem/audio_io.hpp"
#include "dcem/config.hpp"
#include "dcem/errors.hpp"
#include "dcem/metrics.hpp"

namespace dcem {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const Globals& g) {
  nlohmann::json j = config_to_json(ExperimentConfig{});
  fs::path base = ".";
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw ConfigError("cannot open config " + g.config_path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed config " + g.config_path + ": " + e.what());
    }
    const fs::path p(g.config_path);
    if (p.has_parent_path()) base = p.parent_path();
  }
  for (const auto& o : g.overrides) apply_override(j, o);
  auto cfg = config_from_json(j);
  auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(cfg.paths.run_dir);
  resolve(cfg.paths.corpus_dir);
  return cfg;
}

void freeze(const ExperimentConfig& cfg) {
  save_config(fs::path(cfg.paths.run_dir) / "config.json", cfg);
}

Manifest open_manifest(const ExperimentConfig& cfg) {
  const auto path = fs::path(cfg.paths.corpus_dir) / "manifest.jsonl";
  if (!fs::exists(path))
    throw DataError("no manifest at " + path.string() + "; run `dcem data` first");
  return read_manifest(path);
}

fs::path stage_best(const ExperimentConfig& cfg, int stage) {
  return fs::path(cfg.paths.run_dir) / ("stage" + std::to_string(stage)) / "ckpt" / "best.bin";
}

fs::path baseline_path(const ExperimentConfig& cfg) {
  return fs::path(cfg.paths.run_dir) / "baseline" / "baseline.bin";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

torch::Tensor embedding_for(DcemNet& net, const Waveform& enrollment, const ExperimentConfig& cfg,
                            int speaker_id) {
  std::optional<int> id;
  if (speaker_id >= 0) id = speaker_id;
  return embed_speaker(net, enrollment, cfg.transform, id).vector;
}

// --- data ---------------------------------------------------------------------------

int cmd_data(const Globals& g, std::ostream& out) {
  auto cfg = resolve_config(g);
  freeze(cfg);
  const auto manifest = build_corpus(cfg.data, cfg.seed, cfg.paths.corpus_dir);
  out << manifest.string() << "\n";
  return kExitOk;
}

// --- train ----------------------------------------------------------------------------

int cmd_train(const Globals& g, const std::string& stage, std::ostream& out) {
  if (stage != "1" && stage != "2" && stage != "all")
    throw ConfigError("--stage must be 1, 2 or all");
  auto cfg = resolve_config(g);
  freeze(cfg);
  const auto manifest = open_manifest(cfg);
  const auto train = load_samples(manifest, manifest.select("train"));
  const auto dev_all = load_samples(manifest, manifest.select("dev"));
  if (train.empty()) throw DataError("manifest has no train samples");
  const auto dev = pick_subset(dev_all, static_cast<std::size_t>(cfg.train.select_samples),
                               cfg.seed);

  auto setup_for = [&](int s) {
    TrainSetup setup{cfg.schedule, cfg.transform, cfg.train, cfg.sampler,
                     fs::path(cfg.paths.run_dir) / ("stage" + std::to_string(s)), &out};
    return setup;
  };

  if (stage == "1" || stage == "all") {
    torch::manual_seed(cfg.seed);
    DcemNet live(cfg.model);
    auto ema = clone_net(live);
    out << "stage 1: " << live->parameter_count() << " parameters, " << train.size()
        << " training samples\n";
    auto r = train_stage1(live, ema, train, dev, setup_for(1));
    out << "stage 1 best epoch " << r.best_epoch << " (" << r.best_checkpoint.string() << ")\n";
  }
  if (stage == "2" || stage == "all") {
    const auto prev = stage_best(cfg, 1);
    if (!fs::exists(prev))
      throw DataError("stage 2 needs a stage-1 checkpoint at " + prev.string() +
                      "; run `dcem train --stage 1` first");
    auto ck = load_checkpoint(prev);
    if (!(ck.config == cfg.model))
      throw ConfigError("stage-1 checkpoint model config differs from the current config");
    auto r = train_stage2(ck.live, ck.ema, train, dev, setup_for(2));
    out << "stage 2 best epoch " << r.best_epoch << " (" << r.best_checkpoint.string() << ")\n";
  }
  return kExitOk;
}

// --- baseline -------------------------------------------------------------------------

int cmd_baseline(const Globals& g, std::ostream& out) {
  auto cfg = resolve_config(g);
  freeze(cfg);
  const auto manifest = open_manifest(cfg);
  const auto train = load_samples(manifest, manifest.select("train"));
  auto net = train_discriminative_baseline(train, cfg.baseline, cfg.train, cfg.transform,
                                           cfg.seed, &out);
  save_baseline(baseline_path(cfg), net);
  out << baseline_path(cfg).string() << "\n";
  return kExitOk;
}

// --- infer ----------------------------------------------------------------------------

struct InferArgs {
  std::string ckpt;
  std::vector<std::string> inputs;
  std::string enroll;
  bool self_enroll = false;
  int ensemble = 1;
  int steps = 0;
  int64_t seed = -1;
  int speaker_id = -1;
  std::string out;
  std::string dump_steps;
  bool live = false;
};

DcemNet checkpoint_net(const std::string& path, bool live) {
  if (path.empty()) throw ConfigError("--ckpt is required");
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path);
  auto ck = load_checkpoint(path);
  return live ? ck.live : ck.ema;
}

int cmd_infer(const Globals& g, const InferArgs& a, std::ostream& out) {
  auto cfg = resolve_config(g);
  if (a.enroll.empty() && !a.self_enroll)
    throw ConfigError("enrollment required: pass --enroll FILE or --self-enroll");
  if (!a.enroll.empty() && a.self_enroll)
    throw ConfigError("--enroll and --self-enroll are mutually exclusive");
  if (a.inputs.empty()) throw ConfigError("at least one --input is required");
  if (a.out.empty()) throw ConfigError("--out is required");
  SamplerConfig sc = cfg.sampler;
  if (a.steps > 0) sc.steps = a.steps;
  if (a.seed >= 0) sc.seed = static_cast<uint64_t>(a.seed);
  sc.ensemble_size = a.ensemble;
  sc.regen_steps = std::min(sc.regen_steps, sc.steps);
  try {
    sc.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }

  auto net = checkpoint_net(a.ckpt, a.live);
  auto inner = std::make_shared<NetDenoiser>(net);
  CountingDenoiser counter(inner);
  const DiffusionSetup setup{cfg.schedule, cfg.transform};
  std::optional<Waveform> shared_enroll;
  if (!a.enroll.empty()) shared_enroll = read_wav(a.enroll);

  const bool dir_out = a.inputs.size() > 1 || fs::path(a.out).extension() != ".wav";
  for (const auto& in : a.inputs) {
    const auto mixture = read_wav(in);
    const auto s = embedding_for(net, shared_enroll ? *shared_enroll : mixture, cfg, a.speaker_id);
    counter.reset();
    const auto t0 = Clock::now();
    Waveform est;
    InferenceTrace trace;
    if (sc.ensemble_size > 1) {
      est = ensemble_infer(counter, mixture, s, sc, setup);
    } else {
      est = dcem_infer(counter, mixture, s, sc, setup, a.dump_steps.empty() ? nullptr : &trace);
    }
    const double wall = seconds_since(t0);
    const fs::path dest = dir_out ? fs::path(a.out) / fs::path(in).filename() : fs::path(a.out);
    write_wav(dest, est);
    if (!a.dump_steps.empty()) {
      const fs::path dir = fs::path(a.dump_steps) / fs::path(in).stem();
      for (std::size_t k = 0; k < trace.predictions.size(); ++k)
        write_npy(dir / ("step_" + std::to_string(k) + ".npy"), trace.predictions[k]);
    }
    out << dest.string() << " eval_count=" << counter.count()
        << " rtf=" << wall / mixture.duration() << "\n";
  }
  return kExitOk;
}

// --- regen ----------------------------------------------------------------------------

struct RegenArgs {
  std::string ckpt, pre, mixture, enroll, out;
  int n = 0;
  int64_t seed = -1;
  int speaker_id = -1;
  bool live = false;
};

int cmd_regen(const Globals& g, const RegenArgs& a, std::ostream& out) {
  auto cfg = resolve_config(g);
  SamplerConfig sc = cfg.sampler;
  if (a.n != 0) sc.regen_steps = a.n;
  if (a.seed >= 0) sc.seed = static_cast<uint64_t>(a.seed);
  if (sc.regen_steps > sc.steps) sc.steps = sc.regen_steps;
  try {
    sc.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (a.pre.empty() || a.mixture.empty() || a.enroll.empty() || a.out.empty())
    throw ConfigError("regen needs --pre, --mixture, --enroll and --out");
  const auto pre = read_wav(a.pre);
  const auto mixture = read_wav(a.mixture);
  if (pre.size() != mixture.size())
    throw DataError("length mismatch: preprocessed has " + std::to_string(pre.size()) +
                    " samples, mixture has " + std::to_string(mixture.size()));
  auto net = checkpoint_net(a.ckpt, a.live);
  CountingDenoiser counter(std::make_shared<NetDenoiser>(net));
  const auto s = embedding_for(net, read_wav(a.enroll), cfg, a.speaker_id);
  const auto t0 = Clock::now();
  const auto est = regenerate(counter, pre, mixture, s, sc, {cfg.schedule, cfg.transform});
  const double wall = seconds_since(t0);
  write_wav(a.out, est);
  out << a.out << " eval_count=" << counter.count() << " rtf=" << wall / mixture.duration()
      << "\n";
  return kExitOk;
}

// --- eval -----------------------------------------------------------------------------

struct EvalArgs {
  std::string split = "test";
  std::string scenario;
  std::string methods = "mixture,dcem,ensemble";
  std::string ckpt;
  std::string out;
  bool no_mcl_ckpt = false;
  bool no_ensemble = false;
  bool live = false;
  int limit = 0;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  auto cfg = resolve_config(g);
  freeze(cfg);
  auto methods = split_list(a.methods);
  if (a.no_ensemble) std::erase(methods, std::string("ensemble"));
  for (const auto& m : methods)
    if (m != "mixture" && m != "dcem" && m != "ensemble" && m != "rdcem" && m != "baseline")
      throw ConfigError("unknown method '" + m + "' (mixture|dcem|ensemble|rdcem|baseline)");
  const auto manifest = open_manifest(cfg);
  std::optional<Scenario> scen;
  if (!a.scenario.empty()) {
    try {
      scen = scenario_from_string(a.scenario);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  auto recs = manifest.select(a.split, scen);
  if (a.limit > 0 && recs.size() > static_cast<std::size_t>(a.limit)) recs.resize(a.limit);
  if (recs.empty()) throw DataError("no samples for split '" + a.split + "'");
  const auto samples = load_samples(manifest, recs);

  auto needs = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
  const bool diffusion = needs("dcem") || needs("ensemble") || needs("rdcem");
  DcemNet net{nullptr};
  std::shared_ptr<CountingDenoiser> counter;
  if (diffusion) {
    fs::path ck = a.ckpt;
    if (ck.empty()) ck = stage_best(cfg, a.no_mcl_ckpt ? 1 : 2);
    if (!fs::exists(ck))
      throw DataError("checkpoint not found: " + ck.string() +
                      (a.no_mcl_ckpt ? "" : " (use --no-mcl-ckpt to evaluate stage 1)"));
    auto loaded = load_checkpoint(ck);
    net = a.live ? loaded.live : loaded.ema;
    counter = std::make_shared<CountingDenoiser>(std::make_shared<NetDenoiser>(net));
  }
  BaselineNet base{nullptr};
  if (needs("baseline") || needs("rdcem")) {
    if (!fs::exists(baseline_path(cfg)))
      throw DataError("baseline not found at " + baseline_path(cfg).string() +
                      "; run `dcem baseline` first");
    base = load_baseline(baseline_path(cfg));
  }

  const DiffusionSetup setup{cfg.schedule, cfg.transform};
  MetricReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& smp = samples[i];
    SamplerConfig sc = cfg.sampler;
    sc.seed = cfg.sampler.seed + 7919ull * i;
    torch::Tensor s;
    if (diffusion) s = embedding_for(net, smp.enrollment, cfg, smp.speaker_id);
    std::optional<Waveform> base_out;
    for (const auto& m : methods) {
      if (counter) counter->reset();
      const auto t0 = Clock::now();
      Waveform est;
      if (m == "mixture") {
        est = smp.mixture;
      } else if (m == "dcem") {
        est = dcem_infer(*counter, smp.mixture, s, sc, setup);
      } else if (m == "ensemble") {
        est = ensemble_infer(*counter, smp.mixture, s, sc, setup);
      } else {
        if (!base_out) base_out = baseline_extract(base, smp.mixture, smp.enrollment, cfg.transform);
        est = m == "baseline" ? *base_out
                              : regenerate(*counter, *base_out, smp.mixture, s, sc, setup);
      }
      const double wall = seconds_since(t0);
      const auto sar = si_sar(est, smp.target, smp.mixture);
      report.add({smp.sample_id, to_string(smp.scenario), m, si_sdr(est, smp.target),
                  sar.db, wall / smp.mixture.duration(),
                  counter && m != "mixture" && m != "baseline" ? counter->count() : 0,
                  sar.degenerate});
    }
  }
  const fs::path dir = a.out.empty() ? fs::path(cfg.paths.run_dir) / "eval" / a.split : fs::path(a.out);
  fs::create_directories(dir);
  report.write_jsonl(dir / "report.jsonl");
  report.write_histogram_csv(dir / "histogram.csv");
  const auto table = report.summary_table();
  std::ofstream(dir / "summary.txt") << table;
  out << table;
  return kExitOk;
}

// --- bench ----------------------------------------------------------------------------

struct BenchArgs {
  std::string split = "test";
  std::string ckpt;
  int limit = 10;
};

int cmd_bench(const Globals& g, const BenchArgs& a, std::ostream& out) {
  auto cfg = resolve_config(g);
  freeze(cfg);
  const auto manifest = open_manifest(cfg);
  auto recs = manifest.select(a.split, Scenario::MultiNoisy);
  if (recs.size() > static_cast<std::size_t>(a.limit)) recs.resize(a.limit);
  if (recs.size() < 10) throw DataError("bench needs >= 10 MULTI_NOISY samples in split '" + a.split + "'");
  const auto samples = load_samples(manifest, recs);
  fs::path ck = a.ckpt.empty() ? stage_best(cfg, 1) : fs::path(a.ckpt);
  if (!fs::exists(ck)) throw DataError("checkpoint not found: " + ck.string());
  auto net = load_checkpoint(ck).ema;
  CountingDenoiser counter(std::make_shared<NetDenoiser>(net));
  const DiffusionSetup setup{cfg.schedule, cfg.transform};
  auto counts = [&] { return counter.count(); };
  auto full = bench(
      [&](const MixtureSample& m) {
        return dcem_infer(counter, m.mixture, embedding_for(net, m.enrollment, cfg, m.speaker_id),
                          cfg.sampler, setup);
      },
      samples, counts);
  auto regen = bench(
      [&](const MixtureSample& m) {
        return regenerate(counter, m.mixture, m.mixture,
                          embedding_for(net, m.enrollment, cfg, m.speaker_id), cfg.sampler, setup);
      },
      samples, counts);
  out << "dcem    steps=" << cfg.sampler.steps << " eval_count=" << full.eval_count
      << " rtf=" << full.rtf << "\n";
  out << "regen   N=" << cfg.sampler.regen_steps << " eval_count=" << regen.eval_count
      << " rtf=" << regen.rtf << "\n";
  out << "speedup " << full.rtf / regen.rtf << "x\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion conditional expectation model for target speech extraction", "dcem"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config_path, "experiment config (JSON)");
  app.add_option("--set", g.overrides, "override, e.g. train.stage1_epochs=5");

  auto* show = app.add_subcommand("config", "print the resolved configuration");
  auto* data = app.add_subcommand("data", "build the synthetic corpus");

  std::string stage = "all";
  auto* train = app.add_subcommand("train", "train the diffusion model");
  train->add_option("--stage", stage, "1, 2 or all");

  auto* baseline = app.add_subcommand("baseline", "train the discriminative baseline");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "extract the target speaker");
  infer->add_option("--ckpt", ia.ckpt)->required();
  infer->add_option("-i,--input", ia.inputs)->required();
  infer->add_option("--enroll", ia.enroll);
  infer->add_flag("--self-enroll", ia.self_enroll, "embed the speaker from the mixture itself");
  infer->add_option("--ensemble", ia.ensemble, "ensemble size K");
  infer->add_option("--steps", ia.steps);
  infer->add_option("--seed", ia.seed);
  infer->add_option("--speaker-id", ia.speaker_id, "for lookup-table encoders");
  infer->add_option("-o,--out", ia.out)->required();
  infer->add_option("--dump-steps", ia.dump_steps, "directory for per-step predictions (.npy)");
  infer->add_flag("--live", ia.live, "use live instead of EMA weights");

  RegenArgs ra;
  auto* regen = app.add_subcommand("regen", "regenerate a discriminative model's output");
  regen->add_option("--ckpt", ra.ckpt)->required();
  regen->add_option("--pre", ra.pre, "preprocessed waveform")->required();
  regen->add_option("--mixture", ra.mixture)->required();
  regen->add_option("--enroll", ra.enroll)->required();
  regen->add_option("--N", ra.n, "regeneration steps (>= 2)");
  regen->add_option("--seed", ra.seed);
  regen->add_option("--speaker-id", ra.speaker_id);
  regen->add_option("-o,--out", ra.out)->required();
  regen->add_flag("--live", ra.live);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score methods on a manifest split");
  eval->add_option("--split", ea.split);
  eval->add_option("--scenario", ea.scenario, "MULTI_NOISY, MULTI_CLEAN or SINGLE_NOISY");
  eval->add_option("--methods", ea.methods, "comma list of mixture,dcem,ensemble,rdcem,baseline");
  eval->add_option("--ckpt", ea.ckpt);
  eval->add_option("-o,--out", ea.out);
  eval->add_flag("--no-mcl-ckpt", ea.no_mcl_ckpt, "use the stage-1 checkpoint");
  eval->add_flag("--no-ensemble", ea.no_ensemble);
  eval->add_option("--limit", ea.limit);
  eval->add_flag("--live", ea.live, "use live instead of EMA weights");

  BenchArgs ba;
  auto* benchc = app.add_subcommand("bench", "real-time factor of full vs regenerative inference");
  benchc->add_option("--split", ba.split);
  benchc->add_option("--ckpt", ba.ckpt);
  benchc->add_option("--limit", ba.limit);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*show) {
      out << config_to_json(resolve_config(g)).dump(2) << "\n";
      return kExitOk;
    }
    if (*data) return cmd_data(g, out);
    if (*train) return cmd_train(g, stage, out);
    if (*baseline) return cmd_baseline(g, out);
    if (*infer) return cmd_infer(g, ia, out);
    if (*regen) return cmd_regen(g, ra, out);
    if (*eval) return cmd_eval(g, ea, out);
    if (*benchc) return cmd_bench(g, ba, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const c10::Error& e) {
    err << "runtime error: " << e.what_without_backtrace() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace dcem
