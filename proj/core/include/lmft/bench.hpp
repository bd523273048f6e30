#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lmft/model.hpp"
#include "lmft/tokenizer.hpp"

// Efficiency harness: analytic FLOP estimates, throughput timing and the
// relative-cost report.

namespace lmft {

/// Forward FLOPs of one clip with `n_tokens` retained tokens (n may be a mean).
///   embedding  2·n·P·d             (P = token_dim)
///   per layer  8·n·d² + 4·n²·d      (q,k,v,o projections; scores and weighted sum)
///            + 4·n·d²·mlp_ratio     (two MLP matmuls)
///   head       2·d·C
double estimate_flops(const ViTConfig& cfg, double n_tokens);

/// Uniformly random mask dropping round(ratio·N) tokens, never from the first
/// temporal slice. ratio must lie in [0, 1 − 1/n_t].
SelectionMask random_drop_mask(const GridExtents& extents, double ratio, std::uint64_t seed);

struct EnvironmentInfo {
  std::string compiler;
  std::string build_type;
  unsigned hardware_threads = 0;
  unsigned worker_threads = 1;
};

EnvironmentInfo current_environment();

struct ThroughputResult {
  double clips_per_second = 0.0;  // median over repeats
  double ci_low = 0.0;            // ~95% distribution-free interval of the median
  double ci_high = 0.0;
  std::vector<double> samples;
  EnvironmentInfo environment;
};

/// Times `run_once` (which processes `clips` clips) `repeats` times after
/// `warmup` untimed calls.
ThroughputResult measure_throughput(const std::function<void()>& run_once, std::size_t clips, int repeats,
                                    int warmup = 1);

struct EfficiencyReport {
  std::string method;
  double accuracy = 0.0;
  double mean_retained_tokens = 0.0;
  double flops = 0.0;
  double relative_cost = 0.0;
  double clips_per_second = 0.0;
  double clips_per_second_ci_low = 0.0;
  double clips_per_second_ci_high = 0.0;
  double train_seconds = 0.0;
};

/// Relative cost is the row's FLOPs over `full_flops`.
void assign_relative_cost(std::vector<EfficiencyReport>& rows, double full_flops);

std::string format_report_csv(const std::vector<EfficiencyReport>& rows);
std::string format_report_table(const std::vector<EfficiencyReport>& rows);
/// One JSON object per line, one line per row.
std::string format_report_json(const std::vector<EfficiencyReport>& rows);

}  // namespace lmft
