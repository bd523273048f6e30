#include "lmft/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

namespace lmft {

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError("domain must be 'source' or 'target', got '" + s + "'");
}

BackgroundFamily parse_background(const std::string& s) {
  if (s == "plain") return BackgroundFamily::plain;
  if (s == "textured") return BackgroundFamily::textured;
  throw ConfigError("background must be 'plain' or 'textured', got '" + s + "'");
}

std::string to_string(BackgroundFamily b) { return b == BackgroundFamily::plain ? "plain" : "textured"; }

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
  if (n_classes < 1) fail("n_classes must be >= 1");
  if (frames < 1 || height < 1 || width < 1 || channels < 1) fail("video extents must be positive");
  if (!(sprite_size > 0.0) || sprite_size >= static_cast<double>(std::min(height, width))) {
    fail("sprite_size must be positive and smaller than the frame");
  }
  if (sprite_speed < 0.0 || noise < 0.0 || target_drift < 0.0 || texture_amplitude < 0.0) {
    fail("speeds, drift, amplitude and noise must be non-negative");
  }
  const double travel = sprite_speed * static_cast<double>(frames - 1);
  if (travel + sprite_size > static_cast<double>(std::min(height, width))) {
    fail("sprite path does not fit inside the frame; lower sprite_speed or sprite_size");
  }
}

const std::set<std::string>& synthetic_spec_keys() {
  static const std::set<std::string> keys = {
      "n_classes",      "frames",         "height",      "width",          "channels",
      "sprite_size",    "sprite_speed",   "with_sprite", "source_background", "target_background",
      "texture_amplitude", "target_drift", "noise",      "n_source_train", "n_target_train",
      "n_target_val",   "seed"};
  return keys;
}

SyntheticSpec synthetic_spec_from(const KeyValueConfig& kv, SyntheticSpec s) {
  auto sz = [&](const char* k, std::size_t fb) {
    const long long v = kv.get_int(k, static_cast<long long>(fb));
    if (v < 0) throw ConfigError(std::string("config key '") + k + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  s.n_classes = sz("n_classes", s.n_classes);
  s.frames = sz("frames", s.frames);
  s.height = sz("height", s.height);
  s.width = sz("width", s.width);
  s.channels = sz("channels", s.channels);
  s.sprite_size = kv.get_double("sprite_size", s.sprite_size);
  s.sprite_speed = kv.get_double("sprite_speed", s.sprite_speed);
  s.with_sprite = kv.get_bool("with_sprite", s.with_sprite);
  if (auto v = kv.raw("source_background")) s.source_background = parse_background(*v);
  if (auto v = kv.raw("target_background")) s.target_background = parse_background(*v);
  s.texture_amplitude = kv.get_double("texture_amplitude", s.texture_amplitude);
  s.target_drift = kv.get_double("target_drift", s.target_drift);
  s.noise = kv.get_double("noise", s.noise);
  s.n_source_train = sz("n_source_train", s.n_source_train);
  s.n_target_train = sz("n_target_train", s.n_target_train);
  s.n_target_val = sz("n_target_val", s.n_target_val);
  s.seed = sz("seed", s.seed);
  s.validate();
  return s;
}

namespace {

struct Wave {
  double kx, ky, phase, weight;
};

struct Background {
  std::vector<double> base;  // per channel
  std::vector<double> gain;  // per channel texture gain
  std::vector<Wave> waves;
  double grad_cos = 0.0, grad_sin = 0.0, grad_amp = 0.0;
  double drift_x = 0.0, drift_y = 0.0;

  /// Channel-independent part of frame t as an H×W map: static gradient plus
  /// drifting texture. Each wave is separable via sin(a + b) expansion.
  std::vector<double> frame(double t, std::size_t H, std::size_t W) const {
    std::vector<double> out(H * W, 0.0);
    if (grad_amp > 0.0)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          out[i * W + j] = grad_amp * ((static_cast<double>(j) * grad_cos + static_cast<double>(i) * grad_sin) / 64.0);
    std::vector<double> sa(W), ca(W), sb(H), cb(H);
    for (const auto& w : waves) {
      for (std::size_t j = 0; j < W; ++j) {
        const double a = w.kx * (static_cast<double>(j) - drift_x * t) + w.phase;
        sa[j] = w.weight * std::sin(a);
        ca[j] = w.weight * std::cos(a);
      }
      for (std::size_t i = 0; i < H; ++i) {
        const double b = w.ky * (static_cast<double>(i) - drift_y * t);
        sb[i] = std::sin(b);
        cb[i] = std::cos(b);
      }
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) out[i * W + j] += sa[j] * cb[i] + ca[j] * sb[i];
    }
    return out;
  }
};

Background draw_background(const SyntheticSpec& spec, BackgroundFamily family, bool drift, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  Background bg;
  bg.base.resize(spec.channels);
  bg.gain.resize(spec.channels);
  // Palettes are defined for RGB; extra channels reuse the blue range.
  static constexpr double warm[3][2] = {{0.45, 0.65}, {0.30, 0.45}, {0.15, 0.30}};
  static constexpr double cool[3][2] = {{0.10, 0.30}, {0.30, 0.50}, {0.50, 0.75}};
  const auto& pal = family == BackgroundFamily::plain ? warm : cool;
  for (std::size_t c = 0; c < spec.channels; ++c) {
    const auto& r = pal[std::min<std::size_t>(c, 2)];
    bg.base[c] = uni(r[0], r[1]);
    bg.gain[c] = uni(0.7, 1.3);
  }
  const double phi = uni(0.0, 2.0 * std::numbers::pi);
  if (family == BackgroundFamily::plain) {
    bg.grad_cos = std::cos(phi);
    bg.grad_sin = std::sin(phi);
    bg.grad_amp = 0.06;
  } else {
    for (int k = 0; k < 3; ++k) {
      const double period = uni(12.0, 32.0);
      const double dir = uni(0.0, 2.0 * std::numbers::pi);
      const double kk = 2.0 * std::numbers::pi / period;
      bg.waves.push_back({kk * std::cos(dir), kk * std::sin(dir), uni(0.0, 2.0 * std::numbers::pi),
                          spec.texture_amplitude / 3.0});
    }
    if (drift && spec.target_drift > 0.0) {
      bg.drift_x = spec.target_drift * std::cos(phi);
      bg.drift_y = spec.target_drift * std::sin(phi);
    }
  }
  return bg;
}

// Length of [a, a + len) ∩ [i, i + 1).
double overlap(double a, double len, double i) {
  return std::max(0.0, std::min(a + len, i + 1.0) - std::max(a, i));
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  // seed_seq keeps only 32 bits per element, so split each part.
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

VideoTensor render_video(const SyntheticSpec& spec, Domain domain, int label, std::uint64_t video_seed) {
  if (label < 0 || static_cast<std::size_t>(label) >= spec.n_classes) {
    throw std::invalid_argument("label outside [0, n_classes)");
  }
  std::mt19937_64 rng(mix_seed({spec.seed, static_cast<std::uint64_t>(domain), video_seed}));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto family = domain == Domain::source ? spec.source_background : spec.target_background;
  const Background bg = draw_background(spec, family, domain == Domain::target, rng);

  const double angle = 2.0 * std::numbers::pi * label / static_cast<double>(spec.n_classes);
  const double vx = spec.sprite_speed * std::cos(angle), vy = spec.sprite_speed * std::sin(angle);
  const double s = spec.sprite_size;
  const double span = static_cast<double>(spec.frames - 1);
  const double Wd = static_cast<double>(spec.width), Hd = static_cast<double>(spec.height);
  const double x_lo = std::max(0.0, -vx * span), x_hi = Wd - s - std::max(0.0, vx * span);
  const double y_lo = std::max(0.0, -vy * span), y_hi = Hd - s - std::max(0.0, vy * span);
  const double x0 = x_lo + (x_hi - x_lo) * u01(rng);
  const double y0 = y_lo + (y_hi - y_lo) * u01(rng);
  std::vector<double> sprite_color(spec.channels);
  for (auto& c : sprite_color) c = 0.85 + 0.15 * u01(rng);

  std::normal_distribution<double> noise(0.0, 1.0);
  VideoTensor v(spec.frames, spec.channels, spec.height, spec.width);
  const std::size_t H = spec.height, W = spec.width;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double sx = x0 + vx * static_cast<double>(t), sy = y0 + vy * static_cast<double>(t);
    const std::vector<double> shared = bg.frame(static_cast<double>(t), H, W);
    for (std::size_t c = 0; c < spec.channels; ++c)
      for (std::size_t i = 0; i < H; ++i) {
        const double cov_y = spec.with_sprite ? overlap(sy, s, static_cast<double>(i)) : 0.0;
        for (std::size_t j = 0; j < W; ++j) {
          double val = bg.base[c] + (bg.waves.empty() ? shared[i * W + j] : bg.gain[c] * shared[i * W + j]);
          if (cov_y > 0.0) {
            const double a = cov_y * overlap(sx, s, static_cast<double>(j));
            val = (1.0 - a) * val + a * sprite_color[c];
          }
          if (spec.noise > 0.0) val += spec.noise * noise(rng);
          v.at(t, c, i, j) = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
  }
  return v;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& e : m.entries) os << e.path << '\t' << e.label << '\t' << e.domain << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest " + path.string());
  DatasetManifest m;
  m.split = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string label;
    if (!std::getline(ls, e.path, '\t') || !std::getline(ls, label, '\t') || !std::getline(ls, e.domain)) {
      throw ConfigError("manifest " + path.string() + " line " + std::to_string(lineno) +
                        ": expected path<TAB>label<TAB>domain");
    }
    try {
      e.label = std::stoi(label);
    } catch (const std::exception&) {
      throw ConfigError("manifest " + path.string() + " line " + std::to_string(lineno) + ": bad label");
    }
    if (e.label < -1) throw ConfigError("manifest label must be >= -1");
    if (std::filesystem::path(e.path).is_relative()) e.path = (path.parent_path() / e.path).lexically_normal().string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::string video_id_of(const ManifestEntry& e) { return std::filesystem::path(e.path).stem().string(); }

std::vector<int> balanced_labels(std::size_t count, std::size_t n_classes, std::uint64_t split_seed) {
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<int>(i % n_classes);
  std::mt19937_64 rng(split_seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

namespace {

enum SplitId : std::uint64_t { kSourceTrain = 1, kTargetTrain = 2, kTargetVal = 3 };

std::vector<InMemoryVideo> make_split(const SyntheticSpec& spec, Domain domain, SplitId split, std::size_t count,
                                      const std::string& prefix) {
  const auto labels = balanced_labels(count, spec.n_classes, mix_seed({spec.seed, 1000 + split}));
  std::vector<InMemoryVideo> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::ostringstream id;
    id << prefix << '_' << std::setw(5) << std::setfill('0') << i;
    out.push_back({id.str(), labels[i], render_video(spec, domain, labels[i], (split << 32) | i)});
  }
  return out;
}

}  // namespace

SplitVideos generate_splits(const SyntheticSpec& spec) {
  spec.validate();
  SplitVideos s;
  s.source_train = make_split(spec, Domain::source, kSourceTrain, spec.n_source_train, "src_train");
  s.target_train = make_split(spec, Domain::target, kTargetTrain, spec.n_target_train, "tgt_train");
  s.target_val = make_split(spec, Domain::target, kTargetVal, spec.n_target_val, "tgt_val");
  return s;
}

GeneratedDataset generate_domain_pair(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  spec.validate();
  fs::create_directories(out_dir / "videos");
  GeneratedDataset out{out_dir / "source_train.tsv", out_dir / "target_train.tsv", out_dir / "target_val.tsv",
                       out_dir / "target_train_truth.tsv"};
  auto emit = [&](Domain domain, SplitId split, std::size_t count, const std::string& prefix,
                  const fs::path& manifest, bool hide_labels, std::vector<std::string>* ids,
                  std::vector<int>* truth) {
    DatasetManifest m;
    m.split = manifest.stem().string();
    for (auto& v : make_split(spec, domain, split, count, prefix)) {
      const fs::path rel = fs::path("videos") / (v.id + ".vten");
      save_vten(out_dir / rel, v.video);
      m.entries.push_back({rel.string(), hide_labels ? -1 : v.label, to_string(domain)});
      if (ids) ids->push_back(v.id);
      if (truth) truth->push_back(v.label);
    }
    write_manifest(manifest, m);
  };
  emit(Domain::source, kSourceTrain, spec.n_source_train, "src_train", out.source_train, false, nullptr, nullptr);
  std::vector<std::string> ids;
  std::vector<int> truth;
  emit(Domain::target, kTargetTrain, spec.n_target_train, "tgt_train", out.target_train, true, &ids, &truth);
  emit(Domain::target, kTargetVal, spec.n_target_val, "tgt_val", out.target_val, false, nullptr, nullptr);
  write_truth(out.target_truth, ids, truth);
  return out;
}

VideoTensor load_video(const std::filesystem::path& path) { return load_vten(path); }

std::vector<PseudoLabelRecord> oracle_probabilities(const std::vector<std::string>& ids,
                                                    const std::vector<int>& true_labels, std::size_t n_classes,
                                                    const OracleOptions& opts) {
  if (ids.size() != true_labels.size()) throw std::invalid_argument("oracle: ids and labels differ in length");
  if (opts.noise_temp < 0.0 || opts.noise_std < 0.0) throw std::invalid_argument("oracle: negative noise");
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<PseudoLabelRecord> out;
  out.reserve(ids.size());
  std::vector<double> logits(n_classes);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int y = true_labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) throw std::invalid_argument("oracle: label out of range");
    PseudoLabelRecord r;
    r.video_id = ids[i];
    r.probs.assign(n_classes, 0.0);
    if (opts.noise_temp == 0.0) {
      // Infinite inverse temperature: the true class dominates any finite noise.
      r.probs[static_cast<std::size_t>(y)] = 1.0;
      if (opts.noise_std > 0.0)
        for (std::size_t c = 0; c < n_classes; ++c) (void)normal(rng);
    } else {
      for (std::size_t c = 0; c < n_classes; ++c) {
        logits[c] = (static_cast<int>(c) == y ? 1.0 / opts.noise_temp : 0.0) + opts.noise_std * normal(rng);
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (std::size_t c = 0; c < n_classes; ++c) z += (r.probs[c] = std::exp(logits[c] - mx));
      for (auto& p : r.probs) p /= z;
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_truth(const std::filesystem::path& path, const std::vector<std::string>& ids,
                 const std::vector<int>& labels) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) os << ids[i] << '\t' << labels[i] << '\n';
}

void read_truth(const std::filesystem::path& path, std::vector<std::string>& ids, std::vector<int>& labels) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::string id;
  int label = 0;
  while (is >> id >> label) {
    ids.push_back(id);
    labels.push_back(label);
  }
}

}  // namespace lmft
