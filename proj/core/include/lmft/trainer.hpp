#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lmft/adapt.hpp"
#include "lmft/data.hpp"
#include "lmft/model.hpp"
#include "lmft/nn/optimizer.hpp"
#include "lmft/policy.hpp"
#include "lmft/tokenizer.hpp"

namespace lmft {

/// Subtracted from pixel values in [0,1] before they reach the model.
inline constexpr float kPixelCenter = 0.5f;

/// A video partitioned once, with its motion energy (independent of tau).
/// Grid blocks hold centered pixels (value − kPixelCenter).
struct PreparedVideo {
  std::string id;
  int label = -1;
  PatchGrid grid;
  MotionEnergyTensor energy;
};

PreparedVideo prepare_video(std::string id, int label, const VideoTensor& v, std::size_t patch, std::size_t tubelet,
                            NormalizeScope scope);
std::vector<PreparedVideo> prepare_videos(const std::vector<InMemoryVideo>& videos, const TrainConfig& cfg);
std::vector<PreparedVideo> prepare_manifest(const DatasetManifest& manifest, const TrainConfig& cfg);

/// Target videos kept by the confidence filter, relabeled with their pseudo-labels.
/// Throws PseudoLabelError for an id missing from `target`.
std::vector<PreparedVideo> attach_pseudolabels(const std::vector<PreparedVideo>& target,
                                               const FilteredTargetSet& filtered);

ViTConfig vit_config_for(const TrainConfig& cfg, const PatchGrid& example);

struct IterationMetrics {
  std::size_t iter = 0;
  double loss_s = 0.0;
  double loss_t = 0.0;
  double loss_da = 0.0;
  double tau = 0.0;  // 0 when no threshold is used (random / none)
  double rho_s = 0.0;
  double rho_t = 0.0;
  double r_total = 0.0;
  double baseline = 0.0;
  RewardBreakdown reward;
};

std::string metrics_csv_header();
std::string format_metrics_row(const IterationMetrics& m);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<IterationMetrics>& rows);

/// Logits and labels of the most recent iteration, kept for recomputation checks.
struct IterationSnapshot {
  nn::Tensor source_logits;
  std::vector<int> source_labels;
  std::optional<nn::Tensor> target_logits;
  std::vector<int> target_labels;
};

class Trainer {
 public:
  /// `target` holds filtered target videos with pseudo-labels; it may be empty.
  Trainer(TrainConfig cfg, std::vector<PreparedVideo> source, std::vector<PreparedVideo> target);

  const TrainConfig& config() const { return cfg_; }
  const ViTConfig& model_config() const { return model_.config(); }
  VideoTransformer<float>& model() { return model_; }
  const VideoTransformer<float>& model() const { return model_; }
  const ThresholdPolicy& policy() const { return policy_; }
  const std::vector<IterationMetrics>& metrics() const { return metrics_; }
  const IterationSnapshot& last_iteration() const { return snapshot_; }
  std::size_t iterations_per_epoch() const;

  /// One step on the given videos (indices into the source / target sets).
  IterationMetrics train_iteration(const std::vector<std::size_t>& source_batch,
                                   const std::vector<std::size_t>& target_batch);
  void train_epoch();
  void train();

  /// tau-hat from the current policy (or the override when set).
  double final_threshold() const;

 private:
  SelectionMask mask_for(const PreparedVideo& v, double tau);
  std::vector<std::size_t> next_target_batch();

  TrainConfig cfg_;
  std::vector<PreparedVideo> source_;
  std::vector<PreparedVideo> target_;
  VideoTransformer<float> model_;
  nn::AdamW<float> optimizer_;
  ThresholdPolicy policy_;
  // Independent streams so that disabling one consumer never shifts another.
  std::mt19937_64 source_rng_, target_rng_, policy_rng_, drop_rng_, dropout_rng_;
  std::vector<std::size_t> target_order_;
  std::size_t target_cursor_ = 0;
  std::vector<IterationMetrics> metrics_;
  IterationSnapshot snapshot_;
};

/// Deployable result: parameters, policy state, tau-hat and the run settings.
struct TrainedModel {
  TrainConfig train_config;
  VideoTransformer<float> model;
  ThresholdPolicy policy;
  double tau_hat = 0.5;
  std::uint64_t tau_hat_seed = 0;
};

TrainedModel finish_training(const Trainer& trainer);
void save_trained_model(const std::filesystem::path& path, const TrainedModel& m);
/// Throws io::FormatError when the policy section (and thus tau-hat) is missing.
TrainedModel load_trained_model(const std::filesystem::path& path);

struct EvalOptions {
  std::optional<double> tau_override;
  std::optional<DropMode> drop_mode;
  std::optional<double> random_ratio;
  int batch = 64;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_drop_ratio = 0.0;
  double tau_hat = 0.0;
  double tau_used = 0.0;
  double mean_tokens = 0.0;
  std::size_t min_tokens = 0;
  std::size_t max_tokens = 0;
  std::size_t total_tokens = 0;
  std::size_t full_tokens = 0;  // per video, before dropping
  std::size_t videos = 0;
  std::string drop_mode;
};

/// Deterministic evaluation: the stored tau-hat is used, nothing is sampled.
EvalResult evaluate(const TrainedModel& m, const std::vector<PreparedVideo>& videos, const EvalOptions& opts = {});

/// Token sequences a deployed model would see for `videos` (shared by eval and bench).
std::vector<TokenSequence> deployment_tokens(const TrainedModel& m, const std::vector<PreparedVideo>& videos,
                                             const EvalOptions& opts, double* tau_used = nullptr);

/// Predicted classes for already-gathered token sequences.
std::vector<int> predict(const VideoTransformer<float>& model, const std::vector<TokenSequence>& seqs, int batch);

}  // namespace lmft
