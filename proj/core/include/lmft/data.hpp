#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "lmft/adapt.hpp"
#include "lmft/config.hpp"
#include "lmft/video.hpp"

// Synthetic two-domain moving-sprite videos. The class is the sprite's
// motion direction; the domains differ only in how backgrounds are drawn.

namespace lmft {

enum class Domain { source, target };
std::string to_string(Domain d);
Domain parse_domain(const std::string& s);

enum class BackgroundFamily {
  plain,     // warm palette with a faint static gradient
  textured,  // cool palette with low-frequency sinusoidal texture
};
BackgroundFamily parse_background(const std::string& s);
std::string to_string(BackgroundFamily b);

struct SyntheticSpec {
  std::size_t n_classes = 8;
  std::size_t frames = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  double sprite_size = 12.0;
  double sprite_speed = 2.0;  // pixels per frame
  bool with_sprite = true;
  BackgroundFamily source_background = BackgroundFamily::plain;
  BackgroundFamily target_background = BackgroundFamily::textured;
  double texture_amplitude = 0.18;
  /// Sub-pixel texture drift per frame in the target domain (0 disables).
  double target_drift = 0.25;
  double noise = 0.02;
  std::size_t n_source_train = 400;
  std::size_t n_target_train = 400;
  std::size_t n_target_val = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

const std::set<std::string>& synthetic_spec_keys();
SyntheticSpec synthetic_spec_from(const KeyValueConfig& kv, SyntheticSpec base = {});

/// Renders one video. Deterministic in (spec, domain, label, video_seed).
VideoTensor render_video(const SyntheticSpec& spec, Domain domain, int label, std::uint64_t video_seed);

struct ManifestEntry {
  std::string path;
  int label = -1;  // −1 for unlabeled target videos
  std::string domain;
};

struct DatasetManifest {
  std::string split;
  std::vector<ManifestEntry> entries;
};

/// One line per video: path<TAB>label<TAB>domain. Relative paths resolve
/// against the manifest's directory on read.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Stable id of a manifest entry: its file stem.
std::string video_id_of(const ManifestEntry& e);

struct InMemoryVideo {
  std::string id;
  int label = -1;
  VideoTensor video;
};

/// Balanced labels (each class within ±1 of count/C), shuffled by `split_seed`.
std::vector<int> balanced_labels(std::size_t count, std::size_t n_classes, std::uint64_t split_seed);

struct SplitVideos {
  std::vector<InMemoryVideo> source_train;
  std::vector<InMemoryVideo> target_train;  // labels kept as ground truth
  std::vector<InMemoryVideo> target_val;
};

SplitVideos generate_splits(const SyntheticSpec& spec);

struct GeneratedDataset {
  std::filesystem::path source_train;
  std::filesystem::path target_train;
  std::filesystem::path target_val;
  std::filesystem::path target_truth;
};

/// Writes .vten files, three manifests and a hidden ground-truth file for the
/// target training split (consumed only by the synthetic oracle).
GeneratedDataset generate_domain_pair(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

VideoTensor load_video(const std::filesystem::path& path);

struct OracleOptions {
  double noise_temp = 0.5;
  double noise_std = 1.0;
  std::uint64_t seed = 0;
};

/// probs = softmax(one_hot(label) / noise_temp + N(0, noise_std²)).
std::vector<PseudoLabelRecord> oracle_probabilities(const std::vector<std::string>& ids,
                                                    const std::vector<int>& true_labels, std::size_t n_classes,
                                                    const OracleOptions& opts);

/// Ground-truth file: video_id<TAB>label per line.
void write_truth(const std::filesystem::path& path, const std::vector<std::string>& ids,
                 const std::vector<int>& labels);
void read_truth(const std::filesystem::path& path, std::vector<std::string>& ids, std::vector<int>& labels);

}  // namespace lmft
