#include "dcem/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dcem/errors.hpp"

namespace dcem {

namespace {

std::vector<double> centered(std::span<const double> x, bool zero_mean) {
  std::vector<double> out(x.begin(), x.end());
  if (zero_mean && !out.empty()) {
    long double m = 0.0L;
    for (double v : out) m += v;
    const double mean = static_cast<double>(m / out.size());
    for (double& v : out) v -= mean;
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(acc);
}

double ratio_db(double num, double den, double cap) {
  if (den <= 0.0) return num > 0.0 ? cap : -cap;
  if (num <= 0.0) return -cap;
  return std::clamp(10.0 * std::log10(num / den), -cap, cap);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  long double acc = 0.0L;
  for (double x : v) acc += x;
  return static_cast<double>(acc / v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double si_sdr(std::span<const double> est, std::span<const double> ref, const RatioOptions& opt) {
  if (est.size() != ref.size()) throw ContractError("si_sdr: length mismatch");
  const auto e = centered(est, opt.zero_mean);
  const auto r = centered(ref, opt.zero_mean);
  const double rr = dot(r, r);
  if (!(rr > 0.0)) throw DomainError("si_sdr: silent reference");
  if (!(dot(e, e) > 0.0)) return -opt.cap_db;
  const double alpha = dot(e, r) / rr;
  long double target = 0.0L, noise = 0.0L;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double t = alpha * r[i];
    const double n = t - e[i];
    target += static_cast<long double>(t) * t;
    noise += static_cast<long double>(n) * n;
  }
  return ratio_db(static_cast<double>(target), static_cast<double>(noise), opt.cap_db);
}

SarResult si_sar(std::span<const double> est, std::span<const double> ref,
                 std::span<const double> mixture, const RatioOptions& opt) {
  if (est.size() != ref.size() || mixture.size() != ref.size())
    throw ContractError("si_sar: length mismatch");
  const auto e = centered(est, opt.zero_mean);
  const auto r = centered(ref, opt.zero_mean);
  const auto m = centered(mixture, opt.zero_mean);
  const std::size_t n = r.size();
  const double rr = dot(r, r);
  if (!(rr > 0.0)) throw DomainError("si_sar: silent reference");

  // Orthonormal basis of span{ref, mixture - ref} by Gram-Schmidt.
  std::vector<double> b1(n), b2(n);
  const double rn = std::sqrt(rr);
  for (std::size_t i = 0; i < n; ++i) b1[i] = r[i] / rn;
  std::vector<double> interf(n);
  for (std::size_t i = 0; i < n; ++i) interf[i] = m[i] - r[i];
  const double ii = dot(interf, interf);
  const double c = dot(interf, b1);
  for (std::size_t i = 0; i < n; ++i) b2[i] = interf[i] - c * b1[i];
  const double res = dot(b2, b2);
  SarResult out;
  out.degenerate = !(ii > 0.0) || res <= 1e-12 * ii;
  if (!out.degenerate) {
    const double bn = std::sqrt(res);
    for (double& v : b2) v /= bn;
  }

  const double p1 = dot(e, b1);
  const double p2 = out.degenerate ? 0.0 : dot(e, b2);
  long double proj = 0.0L, art = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = p1 * b1[i] + p2 * (out.degenerate ? 0.0 : b2[i]);
    const double a = e[i] - p;
    proj += static_cast<long double>(p) * p;
    art += static_cast<long double>(a) * a;
  }
  out.db = ratio_db(static_cast<double>(proj), static_cast<double>(art), opt.cap_db);
  return out;
}

torch::Tensor si_sdr_torch(const torch::Tensor& est, const torch::Tensor& ref, double cap_db,
                           bool zero_mean) {
  if (est.sizes() != ref.sizes() || est.dim() != 2)
    throw ContractError("si_sdr_torch: expected matching [B, L] tensors");
  constexpr double eps = 1e-8;
  auto e = zero_mean ? est - est.mean(-1, true) : est;
  auto r = zero_mean ? ref - ref.mean(-1, true) : ref;
  auto alpha = (e * r).sum(-1, true) / ((r * r).sum(-1, true) + eps);
  auto target = alpha * r;
  auto noise = target - e;
  auto ratio = ((target * target).sum(-1) + eps) / ((noise * noise).sum(-1) + eps);
  return (10.0 * torch::log10(ratio)).clamp(-cap_db, cap_db);
}

// --- report -----------------------------------------------------------------

std::vector<MetricAggregate> MetricReport::aggregates() const {
  std::map<std::pair<std::string, std::string>, std::vector<const MetricRecord*>> groups;
  for (const auto& r : records_) groups[{r.method, r.scenario}].push_back(&r);
  std::vector<MetricAggregate> out;
  for (const auto& [key, recs] : groups) {
    MetricAggregate a;
    a.method = key.first;
    a.scenario = key.second;
    a.count = recs.size();
    std::vector<double> sdr, sar, rtf, ev;
    for (const auto* r : recs) {
      sdr.push_back(r->si_sdr_db);
      sar.push_back(r->si_sar_db);
      rtf.push_back(r->rtf);
      ev.push_back(static_cast<double>(r->eval_count));
      if (r->si_sdr_db < -10.0) ++a.below_minus10;
    }
    a.mean_si_sdr = mean_of(sdr);
    a.median_si_sdr = median_of(sdr);
    a.mean_si_sar = mean_of(sar);
    a.median_si_sar = median_of(sar);
    a.mean_rtf = mean_of(rtf);
    a.mean_eval_count = mean_of(ev);
    out.push_back(a);
  }
  return out;
}

std::vector<double> MetricReport::default_histogram_edges() {
  std::vector<double> e;
  for (int v = -30; v <= 40; v += 5) e.push_back(v);
  return e;
}

std::map<std::string, std::vector<std::size_t>> MetricReport::histogram(
    const std::vector<double>& edges) const {
  std::map<std::string, std::vector<std::size_t>> out;
  if (edges.size() < 2) return out;
  for (const auto& r : records_) {
    auto& h = out[r.method];
    h.resize(edges.size() - 1, 0);
    // Values outside the edges land in the first/last bin.
    auto it = std::upper_bound(edges.begin(), edges.end(), r.si_sdr_db);
    std::ptrdiff_t bin = (it - edges.begin()) - 1;
    bin = std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(h.size()) - 1);
    ++h[static_cast<std::size_t>(bin)];
  }
  return out;
}

void MetricReport::write_jsonl(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report " + path.string());
  for (const auto& r : records_) {
    nlohmann::json j{{"sample_id", r.sample_id}, {"scenario", r.scenario},
                     {"method", r.method},       {"si_sdr_db", r.si_sdr_db},
                     {"si_sar_db", r.si_sar_db}, {"rtf", r.rtf},
                     {"eval_count", r.eval_count}, {"sar_degenerate", r.sar_degenerate},
                     // Reserved for externally computed perceptual scores.
                     {"pesq", nullptr},          {"estoi", nullptr},
                     {"dnsmos", nullptr}};
    out << j.dump() << "\n";
  }
}

MetricReport MetricReport::read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path.string());
  MetricReport rep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    MetricRecord r;
    r.sample_id = j.at("sample_id");
    r.scenario = j.at("scenario");
    r.method = j.at("method");
    r.si_sdr_db = j.at("si_sdr_db");
    r.si_sar_db = j.at("si_sar_db");
    r.rtf = j.at("rtf");
    r.eval_count = j.at("eval_count");
    r.sar_degenerate = j.value("sar_degenerate", false);
    rep.add(std::move(r));
  }
  return rep;
}

std::string MetricReport::summary_table() const {
  std::ostringstream os;
  os << std::left << std::setw(22) << "method" << std::setw(14) << "scenario" << std::right
     << std::setw(6) << "n" << std::setw(10) << "SI-SDR" << std::setw(10) << "median"
     << std::setw(10) << "SI-SAR" << std::setw(8) << "<-10dB" << std::setw(9) << "RTF"
     << std::setw(7) << "evals" << "\n";
  os << std::fixed;
  for (const auto& a : aggregates()) {
    os << std::left << std::setw(22) << a.method << std::setw(14) << a.scenario << std::right
       << std::setw(6) << a.count << std::setprecision(2) << std::setw(10) << a.mean_si_sdr
       << std::setw(10) << a.median_si_sdr << std::setw(10) << a.mean_si_sar << std::setw(8)
       << a.below_minus10 << std::setprecision(3) << std::setw(9) << a.mean_rtf
       << std::setprecision(1) << std::setw(7) << a.mean_eval_count << "\n";
  }
  return os.str();
}

void MetricReport::write_histogram_csv(const std::filesystem::path& path) const {
  const auto edges = default_histogram_edges();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "method,bin_low_db,bin_high_db,count\n";
  for (const auto& [method, counts] : histogram(edges))
    for (std::size_t i = 0; i < counts.size(); ++i)
      out << method << "," << edges[i] << "," << edges[i + 1] << "," << counts[i] << "\n";
}

// --- benchmark -------------------------------------------------------------------

BenchResult bench(const std::function<Waveform(const MixtureSample&)>& pipeline,
                  const std::vector<MixtureSample>& samples,
                  const std::function<int64_t()>& eval_counter, int warmup) {
  if (samples.size() < 10) throw DomainError("bench: need at least 10 samples");
  double audio = 0.0;
  for (const auto& s : samples) audio += s.mixture.duration();
  if (!(audio > 0.0)) throw DomainError("bench: zero-duration audio");
  for (int i = 0; i < warmup; ++i) (void)pipeline(samples[static_cast<std::size_t>(i) % samples.size()]);

  const int64_t before = eval_counter ? eval_counter() : 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& s : samples) (void)pipeline(s);
  const auto t1 = std::chrono::steady_clock::now();
  const int64_t after = eval_counter ? eval_counter() : 0;

  BenchResult r;
  r.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.audio_seconds = audio;
  r.rtf = r.wall_seconds / audio;
  r.eval_count = (after - before) / static_cast<int64_t>(samples.size());
  return r;
}

}  // namespace dcem
