#include "lmft/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace lmft {

double estimate_flops(const ViTConfig& cfg, double n) {
  if (!(n >= 1.0)) throw std::invalid_argument("estimate_flops: n_tokens must be >= 1");
  const double d = static_cast<double>(cfg.embed_dim);
  const double P = static_cast<double>(cfg.token_dim());
  const double mlp = static_cast<double>(cfg.mlp_ratio);
  const double per_layer = 8.0 * n * d * d + 4.0 * n * n * d + 4.0 * n * d * d * mlp;
  return 2.0 * n * P * d + static_cast<double>(cfg.n_layers) * per_layer +
         2.0 * d * static_cast<double>(cfg.n_classes);
}

SelectionMask random_drop_mask(const GridExtents& extents, double ratio, std::uint64_t seed) {
  const std::size_t N = extents.count(), slice = extents.slice();
  if (N == 0) throw std::invalid_argument("random_drop_mask: empty grid");
  const double max_ratio = 1.0 - 1.0 / static_cast<double>(extents.n_t);
  if (!(ratio >= 0.0) || ratio > max_ratio + 1e-12) {
    throw std::invalid_argument("random_drop_mask: ratio must lie in [0, 1 - 1/n_t]");
  }
  const auto drop = std::min(N - slice, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(N))));
  std::vector<std::size_t> rest(N - slice);
  std::iota(rest.begin(), rest.end(), slice);
  std::mt19937_64 rng(seed);
  std::shuffle(rest.begin(), rest.end(), rng);
  SelectionMask m{extents, std::vector<std::uint8_t>(N, 1)};
  for (std::size_t i = 0; i < drop; ++i) m.bits[rest[i]] = 0;
  return m;
}

EnvironmentInfo current_environment() {
  EnvironmentInfo e;
#if defined(__clang__)
  e.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  e.compiler = "gcc " __VERSION__;
#else
  e.compiler = "unknown";
#endif
#ifdef NDEBUG
  e.build_type = "release";
#else
  e.build_type = "debug";
#endif
  e.hardware_threads = std::thread::hardware_concurrency();
  return e;
}

ThroughputResult measure_throughput(const std::function<void()>& run_once, std::size_t clips, int repeats,
                                    int warmup) {
  if (repeats < 1 || clips == 0) throw std::invalid_argument("measure_throughput: repeats and clips must be >= 1");
  for (int i = 0; i < warmup; ++i) run_once();
  ThroughputResult r;
  r.environment = current_environment();
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_once();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.samples.push_back(static_cast<double>(clips) / std::max(s, 1e-12));
  }
  std::vector<double> sorted = r.samples;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  r.clips_per_second = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  // Order-statistic interval for the median: ranks n/2 ± 0.98·√n.
  const double half = 0.98 * std::sqrt(static_cast<double>(n));
  const auto lo = static_cast<std::ptrdiff_t>(std::floor(static_cast<double>(n) / 2.0 - half));
  const auto hi = static_cast<std::ptrdiff_t>(std::ceil(static_cast<double>(n) / 2.0 + half)) - 1;
  r.ci_low = sorted[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(lo, 0, static_cast<std::ptrdiff_t>(n) - 1))];
  r.ci_high = sorted[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(hi, 0, static_cast<std::ptrdiff_t>(n) - 1))];
  return r;
}

void assign_relative_cost(std::vector<EfficiencyReport>& rows, double full_flops) {
  if (!(full_flops > 0.0)) throw std::invalid_argument("full-tokenization FLOPs must be positive");
  for (auto& r : rows) r.relative_cost = r.flops / full_flops;
}

std::string format_report_csv(const std::vector<EfficiencyReport>& rows) {
  std::ostringstream os;
  os << "method,accuracy,mean_retained_tokens,flops,relative_cost,clips_per_second,clips_per_second_ci_low,"
        "clips_per_second_ci_high,train_seconds\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.method << ',' << r.accuracy << ',' << r.mean_retained_tokens << ',' << r.flops << ','
       << r.relative_cost << ',' << r.clips_per_second << ',' << r.clips_per_second_ci_low << ','
       << r.clips_per_second_ci_high << ',' << r.train_seconds << '\n';
  }
  return os.str();
}

std::string format_report_table(const std::vector<EfficiencyReport>& rows) {
  std::size_t wm = 6;
  for (const auto& r : rows) wm = std::max(wm, r.method.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(wm)) << "method" << std::right << std::setw(10) << "acc"
     << std::setw(10) << "tokens" << std::setw(12) << "MFLOPs" << std::setw(8) << "cost" << std::setw(12)
     << "clips/s" << std::setw(22) << "clips/s CI" << std::setw(10) << "train_s" << '\n';
  for (const auto& r : rows) {
    std::ostringstream ci;
    ci << std::fixed << std::setprecision(1) << '[' << r.clips_per_second_ci_low << ", "
       << r.clips_per_second_ci_high << ']';
    os << std::left << std::setw(static_cast<int>(wm)) << r.method << std::right << std::fixed
       << std::setprecision(4) << std::setw(10) << r.accuracy << std::setprecision(1) << std::setw(10)
       << r.mean_retained_tokens << std::setprecision(2) << std::setw(12) << r.flops / 1e6 << std::setw(7)
       << r.relative_cost << 'x' << std::setprecision(1) << std::setw(12) << r.clips_per_second << std::setw(22)
       << ci.str() << std::setw(10) << r.train_seconds << '\n';
  }
  return os.str();
}

std::string format_report_json(const std::vector<EfficiencyReport>& rows) {
  std::ostringstream os;
  for (const auto& r : rows) {
    nlohmann::json j;
    j["method"] = r.method;
    j["accuracy"] = r.accuracy;
    j["mean_retained_tokens"] = r.mean_retained_tokens;
    j["flops"] = r.flops;
    j["relative_cost"] = r.relative_cost;
    j["clips_per_second"] = r.clips_per_second;
    j["clips_per_second_ci"] = {r.clips_per_second_ci_low, r.clips_per_second_ci_high};
    j["train_seconds"] = r.train_seconds;
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace lmft
