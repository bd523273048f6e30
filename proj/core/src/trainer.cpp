#include "lmft/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "lmft/bench.hpp"
#include "lmft/binary_io.hpp"

namespace lmft {

namespace {

enum Stream : std::uint64_t { kModelInit = 1, kSourceShuffle, kTargetShuffle, kPolicy, kRandomDrop, kDropout };

std::uint64_t stream_seed(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

PreparedVideo prepare_video(std::string id, int label, const VideoTensor& v, std::size_t patch, std::size_t tubelet,
                            NormalizeScope scope) {
  PreparedVideo p;
  p.id = std::move(id);
  p.label = label;
  p.grid = partition_video(v, patch, tubelet);
  p.energy = compute_motion_energy(p.grid, scope);
  // Energy only sees differences, so centering afterwards leaves it unchanged
  // while removing the large constant component from the model input.
  for (auto& x : p.grid.blocks) x -= kPixelCenter;
  return p;
}

std::vector<PreparedVideo> prepare_videos(const std::vector<InMemoryVideo>& videos, const TrainConfig& cfg) {
  std::vector<PreparedVideo> out;
  out.reserve(videos.size());
  for (const auto& v : videos) {
    out.push_back(prepare_video(v.id, v.label, v.video, cfg.patch, cfg.tubelet, cfg.normalize_scope));
  }
  return out;
}

std::vector<PreparedVideo> prepare_manifest(const DatasetManifest& manifest, const TrainConfig& cfg) {
  std::vector<PreparedVideo> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    out.push_back(prepare_video(video_id_of(e), e.label, load_video(e.path), cfg.patch, cfg.tubelet,
                                cfg.normalize_scope));
  }
  return out;
}

std::vector<PreparedVideo> attach_pseudolabels(const std::vector<PreparedVideo>& target,
                                               const FilteredTargetSet& filtered) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < target.size(); ++i) by_id.emplace(target[i].id, i);
  std::vector<PreparedVideo> out;
  out.reserve(filtered.size());
  for (const auto& f : filtered.entries) {
    auto it = by_id.find(f.video_id);
    if (it == by_id.end()) throw PseudoLabelError("pseudo-label for unknown target video '" + f.video_id + "'");
    PreparedVideo v = target[it->second];
    v.label = f.label;
    out.push_back(std::move(v));
  }
  return out;
}

ViTConfig vit_config_for(const TrainConfig& cfg, const PatchGrid& example) {
  ViTConfig v;
  v.embed_dim = cfg.embed_dim;
  v.n_layers = cfg.n_layers;
  v.n_heads = cfg.n_heads;
  v.mlp_ratio = cfg.mlp_ratio;
  v.n_classes = cfg.n_classes;
  v.patch = cfg.patch;
  v.tubelet = cfg.tubelet;
  v.channels = example.channels;
  v.grid = example.extents;
  v.dropout = cfg.dropout;
  v.validate();
  return v;
}

std::string metrics_csv_header() { return "iter,loss_s,loss_t,loss_da,tau,rho_s,rho_t,r_total,baseline"; }

std::string format_metrics_row(const IterationMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(17) << m.iter << ',' << m.loss_s << ',' << m.loss_t << ',' << m.loss_da << ',' << m.tau
     << ',' << m.rho_s << ',' << m.rho_t << ',' << m.r_total << ',' << m.baseline;
  return os.str();
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<IterationMetrics>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write metrics " + path.string());
  os << metrics_csv_header() << '\n';
  for (const auto& r : rows) os << format_metrics_row(r) << '\n';
}

Trainer::Trainer(TrainConfig cfg, std::vector<PreparedVideo> source, std::vector<PreparedVideo> target)
    : cfg_(std::move(cfg)),
      source_(std::move(source)),
      target_(std::move(target)),
      model_((cfg_.validate(), source_.empty() ? throw std::invalid_argument("trainer needs source videos")
                                               : vit_config_for(cfg_, source_.front().grid)),
             stream_seed(cfg_.seed, kModelInit)),
      optimizer_(model_.parameters(), nn::AdamWOptions{.lr = cfg_.lr, .weight_decay = cfg_.weight_decay}),
      source_rng_(stream_seed(cfg_.seed, kSourceShuffle)),
      target_rng_(stream_seed(cfg_.seed, kTargetShuffle)),
      policy_rng_(stream_seed(cfg_.seed, kPolicy)),
      drop_rng_(stream_seed(cfg_.seed, kRandomDrop)),
      dropout_rng_(stream_seed(cfg_.seed, kDropout)) {
  policy_.mu = cfg_.policy_mu;
  policy_.log_sigma = cfg_.policy_log_sigma;
  policy_.step_size = cfg_.policy_step;
  if (!cfg_.use_target) target_.clear();
  const auto& ref = model_.config();
  auto check = [&](const PreparedVideo& v) {
    if (!(v.grid.extents == ref.grid) || v.grid.channels != ref.channels) {
      throw std::invalid_argument("video " + v.id + " has a different token grid than the first source video");
    }
    if (v.label < 0 || static_cast<std::size_t>(v.label) >= ref.n_classes) {
      throw std::invalid_argument("video " + v.id + " has no valid training label");
    }
  };
  for (const auto& v : source_) check(v);
  for (const auto& v : target_) check(v);
  target_order_.resize(target_.size());
  std::iota(target_order_.begin(), target_order_.end(), 0);
  std::shuffle(target_order_.begin(), target_order_.end(), target_rng_);
}

std::size_t Trainer::iterations_per_epoch() const {
  const auto b = static_cast<std::size_t>(cfg_.batch_size);
  return (source_.size() + b - 1) / b;
}

SelectionMask Trainer::mask_for(const PreparedVideo& v, double tau) {
  switch (cfg_.drop_mode) {
    case DropMode::lmft: return select_tokens(v.energy, tau);
    case DropMode::random: return random_drop_mask(v.grid.extents, cfg_.random_ratio, drop_rng_());
    case DropMode::none: break;
  }
  return full_mask(v.grid.extents);
}

std::vector<std::size_t> Trainer::next_target_batch() {
  std::vector<std::size_t> out;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg_.batch_size), target_.size());
  while (out.size() < n) {
    if (target_cursor_ == target_order_.size()) {
      std::shuffle(target_order_.begin(), target_order_.end(), target_rng_);
      target_cursor_ = 0;
    }
    out.push_back(target_order_[target_cursor_++]);
  }
  return out;
}

IterationMetrics Trainer::train_iteration(const std::vector<std::size_t>& source_batch,
                                          const std::vector<std::size_t>& target_batch) {
  if (source_batch.empty()) throw std::invalid_argument("empty source batch");
  const bool learn_tau = cfg_.drop_mode == DropMode::lmft && !cfg_.has_tau_override();
  PolicySample sample;
  double tau = 0.0;
  if (cfg_.drop_mode == DropMode::lmft) {
    if (learn_tau) {
      sample = sample_threshold(policy_, policy_rng_);
      tau = sample.tau;
    } else {
      tau = cfg_.tau_override;
    }
  }

  const std::size_t min_tokens = model_.config().grid.slice();
  auto tokenize = [&](const std::vector<PreparedVideo>& set, const std::vector<std::size_t>& idx,
                      std::vector<TokenSequence>& seqs, std::vector<int>& labels) {
    std::vector<double> rhos;
    for (std::size_t i : idx) {
      const auto& v = set.at(i);
      const SelectionMask m = mask_for(v, tau);
      rhos.push_back(drop_ratio(m));
      seqs.push_back(gather_tokens(v.grid, m, v.id));
      labels.push_back(v.label);
    }
    return mean_of(rhos);
  };

  std::vector<TokenSequence> src_seqs, tgt_seqs;
  std::vector<int> src_labels, tgt_labels;
  const double rho_s = tokenize(source_, source_batch, src_seqs, src_labels);
  const double rho_t = tokenize(target_, target_batch, tgt_seqs, tgt_labels);

  nn::Tape<float> tape;
  ForwardOptions fo;
  if (cfg_.dropout > 0.0) fo.dropout_rng = &dropout_rng_;
  const auto src_logits = model_.forward(tape, pack_sequences(src_seqs, src_labels, min_tokens), fo);
  nn::Var<float> tgt_logits;
  if (!tgt_seqs.empty()) tgt_logits = model_.forward(tape, pack_sequences(tgt_seqs, tgt_labels, min_tokens), fo);
  const auto loss = da_loss<float>(src_logits, src_labels, tgt_logits, tgt_labels, static_cast<float>(cfg_.lambda_t));

  optimizer_.zero_grad();
  tape.backward(loss.total);
  optimizer_.step();

  snapshot_.source_logits = src_logits.value();
  snapshot_.source_labels = src_labels;
  snapshot_.target_logits.reset();
  if (tgt_logits.valid()) snapshot_.target_logits = tgt_logits.value();
  snapshot_.target_labels = tgt_labels;

  IterationMetrics m;
  m.iter = metrics_.size();
  m.loss_s = loss.source.value().item();
  m.loss_t = loss.target.value().item();
  m.loss_da = loss.total.value().item();
  m.tau = tau;
  m.rho_s = rho_s;
  m.rho_t = rho_t;
  m.reward = compute_reward(m.loss_s, m.loss_t, rho_s, rho_t, cfg_.lambda_L);
  m.r_total = m.reward.r_total;
  if (learn_tau) policy_ = reinforce_update(policy_, sample, m.r_total);
  m.baseline = policy_.baseline;
  metrics_.push_back(m);
  return m;
}

void Trainer::train_epoch() {
  std::vector<std::size_t> order(source_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), source_rng_);
  const auto b = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += b) {
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + b)));
    train_iteration(batch, next_target_batch());
  }
}

void Trainer::train() {
  for (int e = 0; e < cfg_.epochs; ++e) train_epoch();
}

double Trainer::final_threshold() const {
  if (cfg_.has_tau_override()) return cfg_.tau_override;
  return deterministic_threshold(policy_, cfg_.mc_samples, cfg_.tau_hat_seed);
}

TrainedModel finish_training(const Trainer& trainer) {
  return TrainedModel{trainer.config(), trainer.model(), trainer.policy(), trainer.final_threshold(),
                      trainer.config().tau_hat_seed};
}

namespace {

using io::FormatError;
using io::read_le;
using io::write_le;

constexpr const char* kConfigTag = "VCFG";
constexpr const char* kTrainTag = "TCFG";
constexpr const char* kPolicyTag = "PLCY";

std::string encode_policy(const TrainedModel& m) {
  std::ostringstream os(std::ios::binary);
  write_le<double>(os, m.policy.mu);
  write_le<double>(os, m.policy.log_sigma);
  write_le<double>(os, m.policy.baseline);
  write_le<double>(os, m.tau_hat);
  write_le<double>(os, m.policy.step_size);
  write_le<std::uint64_t>(os, m.tau_hat_seed);
  return os.str();
}

void decode_policy(const std::string& payload, TrainedModel& m) {
  std::istringstream is(payload, std::ios::binary);
  m.policy.mu = read_le<double>(is, "policy mu");
  m.policy.log_sigma = read_le<double>(is, "policy log_sigma");
  m.policy.baseline = read_le<double>(is, "policy baseline");
  m.tau_hat = read_le<double>(is, "tau_hat");
  m.policy.step_size = read_le<double>(is, "policy step size");
  m.tau_hat_seed = read_le<std::uint64_t>(is, "tau_hat seed");
  if (!(m.tau_hat > 0.0 && m.tau_hat < 1.0)) throw FormatError("checkpoint tau_hat outside (0,1)");
}

}  // namespace

void save_trained_model(const std::filesystem::path& path, const TrainedModel& m) {
  nn::CheckpointFile f;
  f.tensors = m.model.export_tensors();
  f.sections.push_back({kConfigTag, serialize_config(m.model.config())});
  f.sections.push_back({kTrainTag, to_key_values(m.train_config).dump()});
  f.sections.push_back({kPolicyTag, encode_policy(m)});
  nn::save_checkpoint(path, f);
}

TrainedModel load_trained_model(const std::filesystem::path& path) {
  const nn::CheckpointFile f = nn::load_checkpoint(path);
  const auto* vcfg = f.find_section(kConfigTag);
  const auto* tcfg = f.find_section(kTrainTag);
  const auto* plcy = f.find_section(kPolicyTag);
  if (!vcfg || !tcfg) throw io::FormatError("checkpoint " + path.string() + " lacks its model configuration");
  if (!plcy) throw io::FormatError("checkpoint " + path.string() + " has no policy state (tau_hat missing)");
  TrainedModel m{train_config_from(KeyValueConfig::parse(tcfg->payload)),
                 VideoTransformer<float>(deserialize_config(vcfg->payload), 0), {}, 0.5, 0};
  m.model.import_tensors(f);
  decode_policy(plcy->payload, m);
  return m;
}

std::vector<TokenSequence> deployment_tokens(const TrainedModel& m, const std::vector<PreparedVideo>& videos,
                                             const EvalOptions& opts, double* tau_used) {
  const DropMode mode = opts.drop_mode.value_or(m.train_config.drop_mode);
  const double tau = opts.tau_override.value_or(m.tau_hat);
  const double ratio = opts.random_ratio.value_or(m.train_config.random_ratio);
  if (tau_used) *tau_used = mode == DropMode::lmft ? tau : 0.0;
  std::vector<TokenSequence> seqs;
  seqs.reserve(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& v = videos[i];
    SelectionMask mask;
    switch (mode) {
      case DropMode::lmft: mask = select_tokens(v.energy, tau); break;
      case DropMode::random:
        mask = random_drop_mask(v.grid.extents, ratio, stream_seed(m.tau_hat_seed + i, kRandomDrop));
        break;
      case DropMode::none: mask = full_mask(v.grid.extents); break;
    }
    seqs.push_back(gather_tokens(v.grid, mask, v.id));
  }
  return seqs;
}

std::vector<int> predict(const VideoTransformer<float>& model, const std::vector<TokenSequence>& seqs, int batch) {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  // A no-grad forward reads parameters only; the cast drops the non-const
  // binding that training needs.
  auto& m = const_cast<VideoTransformer<float>&>(model);
  const ForwardOptions fo{.requires_grad = false, .dropout_rng = nullptr};
  std::vector<int> out;
  out.reserve(seqs.size());
  const auto b = static_cast<std::size_t>(batch);
  for (std::size_t start = 0; start < seqs.size(); start += b) {
    const std::size_t end = std::min(seqs.size(), start + b);
    nn::Tape<float> tape;
    const auto logits = m.forward(tape, pack_sequences(std::span(seqs).subspan(start, end - start)), fo);
    const auto& v = logits.value();
    const std::size_t C = v.shape()[1];
    for (std::size_t r = 0; r < end - start; ++r) {
      const float* row = v.data().data() + r * C;
      out.push_back(static_cast<int>(std::max_element(row, row + C) - row));
    }
  }
  return out;
}

EvalResult evaluate(const TrainedModel& m, const std::vector<PreparedVideo>& videos, const EvalOptions& opts) {
  if (videos.empty()) throw std::invalid_argument("evaluate: no videos");
  EvalResult r;
  r.tau_hat = m.tau_hat;
  r.drop_mode = to_string(opts.drop_mode.value_or(m.train_config.drop_mode));
  const auto seqs = deployment_tokens(m, videos, opts, &r.tau_used);
  const auto pred = predict(m.model, seqs, opts.batch);
  std::size_t correct = 0;
  double rho = 0.0;
  r.min_tokens = seqs.front().size();
  r.full_tokens = videos.front().grid.extents.count();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (videos[i].label < 0) throw std::invalid_argument("evaluate: video " + videos[i].id + " is unlabeled");
    correct += pred[i] == videos[i].label;
    const std::size_t n = seqs[i].size();
    r.total_tokens += n;
    r.min_tokens = std::min(r.min_tokens, n);
    r.max_tokens = std::max(r.max_tokens, n);
    rho += 1.0 - static_cast<double>(n) / static_cast<double>(videos[i].grid.extents.count());
  }
  r.videos = seqs.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.videos);
  r.mean_drop_ratio = rho / static_cast<double>(r.videos);
  r.mean_tokens = static_cast<double>(r.total_tokens) / static_cast<double>(r.videos);
  return r;
}

}  // namespace lmft
