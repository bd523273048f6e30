#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmft/config.hpp"
#include "lmft/nn/ops.hpp"
#include "lmft/tokenizer.hpp"

namespace lmft {

class PseudoLabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Class probabilities for one unlabeled target video. `assigned_label` is
/// set only after confidence filtering.
struct PseudoLabelRecord {
  std::string video_id;
  std::vector<double> probs;
  std::optional<int> assigned_label;
};

struct FilteredTarget {
  std::string video_id;
  int label = 0;
};

struct FilteredTargetSet {
  std::vector<FilteredTarget> entries;
  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

/// Lowest index among the maxima.
int argmax_label(std::span<const double> probs);
void validate_record(const PseudoLabelRecord& r, double tolerance = 1e-5);

/// Keeps a record iff max(probs) > gamma_c.
FilteredTargetSet filter_pseudolabels(std::span<const PseudoLabelRecord> records, double gamma_c);

/// One JSON object per line: {"video_id": "...", "probs": [...]}.
std::vector<PseudoLabelRecord> read_pseudolabels(std::istream& is);
std::vector<PseudoLabelRecord> load_pseudolabels(const std::filesystem::path& path);
void write_pseudolabels(std::ostream& os, std::span<const PseudoLabelRecord> records);
void save_pseudolabels(const std::filesystem::path& path, std::span<const PseudoLabelRecord> records);

template <typename T>
struct DaLoss {
  nn::Var<T> source;
  nn::Var<T> target;
  nn::Var<T> total;
};

/// L_s, L_t (mean cross-entropies) and L_da = L_s + lambda_t · L_t. With no
/// target batch (`target_logits` invalid) L_t is a zero constant.
template <typename T>
DaLoss<T> da_loss(const nn::Var<T>& source_logits, std::span<const int> source_labels,
                  const nn::Var<T>& target_logits, std::span<const int> pseudo_labels, T lambda_t) {
  DaLoss<T> out;
  out.source = nn::cross_entropy(source_logits, source_labels);
  if (target_logits.valid() && !pseudo_labels.empty()) {
    out.target = nn::cross_entropy(target_logits, pseudo_labels);
  } else {
    out.target = source_logits.tape()->constant(nn::BasicTensor<T>::scalar(T{0}));
  }
  out.total = nn::add(out.source, nn::scale(out.target, lambda_t));
  return out;
}

struct RewardBreakdown {
  double loss_s = 0.0;
  double loss_t = 0.0;
  double rho_s = 0.0;
  double rho_t = 0.0;
  double r_src = 0.0;
  double r_tgt = 0.0;
  double r_total = 0.0;
};

/// r = −lambda_L · L − (1 − rho) per domain; r_total = r_src + r_tgt.
RewardBreakdown compute_reward(double loss_s, double loss_t, double rho_s, double rho_t, double lambda_L);

enum class DropMode { lmft, random, none };
DropMode parse_drop_mode(const std::string& s);
std::string to_string(DropMode m);

struct TrainConfig {
  double gamma_c = 0.8;
  double lambda_t = 0.5;
  double lambda_L = 10.0;
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-4;
  double weight_decay = 0.05;
  double policy_step = 1e-2;
  double policy_mu = 0.01;
  double policy_log_sigma = -1.0;
  int mc_samples = 100;
  std::uint64_t tau_hat_seed = 0;
  std::uint64_t seed = 0;
  std::size_t patch = 16;
  std::size_t tubelet = 2;
  NormalizeScope normalize_scope = NormalizeScope::video;
  DropMode drop_mode = DropMode::lmft;
  /// NaN disables; otherwise every iteration uses this tau and the policy is frozen.
  double tau_override = std::numeric_limits<double>::quiet_NaN();
  double random_ratio = 0.5;
  bool use_target = true;
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t mlp_ratio = 2;
  double dropout = 0.0;
  std::size_t n_classes = 8;
  int eval_batch = 64;

  bool has_tau_override() const { return !std::isnan(tau_override); }
  void validate() const;
};

const std::set<std::string>& train_config_keys();
/// Reads every TrainConfig field present in `kv`; absent keys keep defaults.
TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig base = {});
KeyValueConfig to_key_values(const TrainConfig& cfg);

}  // namespace lmft
