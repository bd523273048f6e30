// lmft: synth | label-oracle | train | eval | bench | viz

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "lmft/bench.hpp"
#include "lmft/binary_io.hpp"
#include "lmft/data.hpp"
#include "lmft/trainer.hpp"

namespace fs = std::filesystem;
using namespace lmft;

namespace {

constexpr int kExitUser = 1;
constexpr int kExitInternal = 2;

class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Path keys a run config may carry in addition to the training settings.
const std::set<std::string> kRunPathKeys = {"source_manifest", "target_manifest", "pseudo_labels"};

fs::path require_file(const std::string& p, const std::string& what) {
  if (p.empty()) throw UserError(what + " is required");
  if (!fs::is_regular_file(p)) throw UserError(what + " '" + p + "' does not exist");
  return p;
}

fs::path checkpoint_file(const std::string& p) {
  if (p.empty()) throw UserError("--ckpt is required");
  const fs::path path = fs::is_directory(p) ? fs::path(p) / "model.lmck" : fs::path(p);
  return require_file(path.string(), "checkpoint");
}

// Flags shared by the training-related commands. Unset flags leave the config alone.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> tau_override;
  std::optional<std::string> drop_mode;
  std::optional<double> gamma_c, lambda_t, lambda_L;

  void apply(KeyValueConfig& kv) const {
    auto num = [](double v) {
      std::ostringstream os;
      os << std::setprecision(17) << v;
      return os.str();
    };
    if (seed) kv.set("seed", std::to_string(*seed));
    if (tau_override) kv.set("tau_override", num(*tau_override));
    if (drop_mode) kv.set("drop_mode", *drop_mode);
    if (gamma_c) kv.set("gamma_c", num(*gamma_c));
    if (lambda_t) kv.set("lambda_t", num(*lambda_t));
    if (lambda_L) kv.set("lambda_L", num(*lambda_L));
  }
};

void add_training_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Master seed for every random stream");
  cmd->add_option("--tau-override", o.tau_override, "Fixed threshold in (0,1); freezes the policy");
  cmd->add_option("--drop-mode", o.drop_mode, "Token selection: lmft, random or none")
      ->check(CLI::IsMember({"lmft", "random", "none"}));
  cmd->add_option("--gamma-c", o.gamma_c, "Pseudo-label confidence threshold");
  cmd->add_option("--lambda-t", o.lambda_t, "Target loss weight");
  cmd->add_option("--lambda-L", o.lambda_L, "Loss coefficient in the reward");
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  if (a.out.empty()) throw UserError("--out is required");
  KeyValueConfig kv;
  if (!a.spec.empty()) {
    kv = KeyValueConfig::load(require_file(a.spec, "--spec"));
    kv.reject_unknown(synthetic_spec_keys());
  }
  if (a.seed) kv.set("seed", std::to_string(*a.seed));
  const auto spec = synthetic_spec_from(kv);
  const auto t0 = std::chrono::steady_clock::now();
  const auto g = generate_domain_pair(spec, a.out);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "source_train " << g.source_train.string() << '\n'
            << "target_train " << g.target_train.string() << '\n'
            << "target_val   " << g.target_val.string() << '\n'
            << "target_truth " << g.target_truth.string() << '\n'
            << "videos " << spec.n_source_train + spec.n_target_train + spec.n_target_val << " in " << std::fixed
            << std::setprecision(1) << s << " s\n";
  return 0;
}

// ---------------------------------------------------------------- label-oracle

struct OracleArgs {
  std::string truth, out;
  std::size_t classes = 8;
  double noise_temp = 0.5, noise_std = 1.0;
  std::uint64_t seed = 0;
};

int run_label_oracle(const OracleArgs& a) {
  if (a.out.empty()) throw UserError("--out is required");
  std::vector<std::string> ids;
  std::vector<int> labels;
  read_truth(require_file(a.truth, "--truth"), ids, labels);
  const auto recs = oracle_probabilities(ids, labels, a.classes,
                                         {.noise_temp = a.noise_temp, .noise_std = a.noise_std, .seed = a.seed});
  save_pseudolabels(a.out, recs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) correct += argmax_label(recs[i].probs) == labels[i];
  std::cout << "records " << recs.size() << "  argmax accuracy " << std::fixed << std::setprecision(4)
            << static_cast<double>(correct) / static_cast<double>(std::max<std::size_t>(1, recs.size())) << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, out, source, target, pseudo;
  Overrides o;
};

int run_train(const TrainArgs& a) {
  if (a.out.empty()) throw UserError("--out is required");
  KeyValueConfig kv;
  if (!a.config.empty()) kv = KeyValueConfig::load(require_file(a.config, "--config"));
  std::set<std::string> known = train_config_keys();
  known.insert(kRunPathKeys.begin(), kRunPathKeys.end());
  kv.reject_unknown(known);
  if (!a.source.empty()) kv.set("source_manifest", a.source);
  if (!a.target.empty()) kv.set("target_manifest", a.target);
  if (!a.pseudo.empty()) kv.set("pseudo_labels", a.pseudo);
  a.o.apply(kv);
  const TrainConfig cfg = train_config_from(kv);
  cfg.validate();

  // Paths in a config file resolve against the file's directory.
  const fs::path base = a.config.empty() ? fs::current_path() : fs::absolute(a.config).parent_path();
  auto resolve = [&](const std::string& key, bool from_flag) -> std::string {
    const auto v = kv.get_string(key, "");
    if (v.empty() || from_flag || fs::path(v).is_absolute()) return v;
    return (base / v).string();
  };
  const auto src_path = resolve("source_manifest", !a.source.empty());
  const auto tgt_path = resolve("target_manifest", !a.target.empty());
  const auto pl_path = resolve("pseudo_labels", !a.pseudo.empty());

  const auto source = prepare_manifest(read_manifest(require_file(src_path, "source manifest")), cfg);
  std::vector<PreparedVideo> target;
  std::size_t offered = 0;
  if (cfg.use_target && !tgt_path.empty()) {
    const auto all = prepare_manifest(read_manifest(require_file(tgt_path, "target manifest")), cfg);
    const auto recs = load_pseudolabels(require_file(pl_path, "pseudo-label file"));
    offered = recs.size();
    target = attach_pseudolabels(all, filter_pseudolabels(recs, cfg.gamma_c));
  }
  std::cerr << "source " << source.size() << " videos; target kept " << target.size() << " of " << offered
            << " pseudo-labelled\n";

  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(cfg, source, std::move(target));
  for (int e = 0; e < cfg.epochs; ++e) {
    trainer.train_epoch();
    const auto& m = trainer.metrics().back();
    std::cerr << "epoch " << e + 1 << "/" << cfg.epochs << "  L_da " << std::fixed << std::setprecision(4) << m.loss_da
              << "  tau " << m.tau << "  rho_s " << m.rho_s << '\n';
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(a.out);
  const auto trained = finish_training(trainer);
  save_trained_model(fs::path(a.out) / "model.lmck", trained);
  write_metrics_csv(fs::path(a.out) / "metrics.csv", trainer.metrics());
  {
    std::ofstream os(fs::path(a.out) / "run.cfg");
    os << kv.dump();
  }
  nlohmann::json summary{{"iterations", trainer.metrics().size()},
                         {"tau_hat", trained.tau_hat},
                         {"train_seconds", secs},
                         {"target_videos", trainer.config().use_target ? offered : 0}};
  std::ofstream(fs::path(a.out) / "summary.json") << summary.dump(2) << '\n';
  std::cout << "checkpoint " << (fs::path(a.out) / "model.lmck").string() << "\ntau_hat " << std::setprecision(6)
            << trained.tau_hat << "\ntrain_seconds " << std::setprecision(2) << secs << '\n';
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, manifest;
  std::optional<double> tau_override, random_ratio;
  std::optional<std::string> drop_mode;
  bool json = false;
};

EvalOptions eval_options(const std::optional<double>& tau, const std::optional<std::string>& mode,
                         const std::optional<double>& ratio) {
  EvalOptions o;
  o.tau_override = tau;
  if (mode) o.drop_mode = parse_drop_mode(*mode);
  o.random_ratio = ratio;
  return o;
}

int run_eval(const EvalArgs& a) {
  const auto model = load_trained_model(checkpoint_file(a.ckpt));
  const auto videos = prepare_manifest(read_manifest(require_file(a.manifest, "--manifest")), model.train_config);
  const auto r = evaluate(model, videos, eval_options(a.tau_override, a.drop_mode, a.random_ratio));
  if (a.json) {
    nlohmann::json j{{"accuracy", r.accuracy},       {"mean_drop_ratio", r.mean_drop_ratio},
                     {"tau_hat", r.tau_hat},         {"tau_used", r.tau_used},
                     {"drop_mode", r.drop_mode},     {"videos", r.videos},
                     {"mean_tokens", r.mean_tokens}, {"min_tokens", r.min_tokens},
                     {"max_tokens", r.max_tokens},   {"total_tokens", r.total_tokens},
                     {"full_tokens", r.full_tokens}};
    std::cout << j.dump() << '\n';
    return 0;
  }
  std::cout << std::fixed << std::setprecision(4) << "accuracy        " << r.accuracy << '\n'
            << "mean_drop_ratio " << r.mean_drop_ratio << '\n'
            << "tau_hat         " << r.tau_hat << '\n'
            << "tau_used        " << r.tau_used << '\n'
            << "drop_mode       " << r.drop_mode << '\n'
            << "videos          " << r.videos << '\n'
            << std::setprecision(2) << "tokens          mean " << r.mean_tokens << "  min " << r.min_tokens
            << "  max " << r.max_tokens << "  total " << r.total_tokens << "  full " << r.full_tokens << '\n';
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string ckpt, manifest;
  std::optional<double> tau_override;
  std::optional<std::uint64_t> seed;
  int repeats = 5;
  bool json = false, csv = false;
};

int run_bench(const BenchArgs& a) {
  if (a.repeats < 1) throw UserError("--repeats must be >= 1");
  const auto ckpt = checkpoint_file(a.ckpt);
  auto model = load_trained_model(ckpt);
  if (a.seed) model.tau_hat_seed = *a.seed;
  const auto videos = prepare_manifest(read_manifest(require_file(a.manifest, "--manifest")), model.train_config);
  const auto& vcfg = model.model.config();

  double train_seconds = 0.0;
  if (const auto summary = ckpt.parent_path() / "summary.json"; fs::exists(summary)) {
    std::ifstream is(summary);
    train_seconds = nlohmann::json::parse(is).value("train_seconds", 0.0);
  }

  auto row = [&](const std::string& name, const EvalOptions& o) {
    EfficiencyReport r;
    r.method = name;
    const auto res = evaluate(model, videos, o);
    r.accuracy = res.accuracy;
    r.mean_retained_tokens = res.mean_tokens;
    const auto seqs = deployment_tokens(model, videos, o);
    for (const auto& s : seqs) r.flops += estimate_flops(vcfg, static_cast<double>(s.size()));
    r.flops /= static_cast<double>(seqs.size());
    const auto t = measure_throughput(
        [&] { predict(model.model, deployment_tokens(model, videos, o), model.train_config.eval_batch); },
        videos.size(), a.repeats);
    r.clips_per_second = t.clips_per_second;
    r.clips_per_second_ci_low = t.ci_low;
    r.clips_per_second_ci_high = t.ci_high;
    r.train_seconds = train_seconds;
    return std::pair{r, res.mean_drop_ratio};
  };

  std::vector<EfficiencyReport> rows;
  rows.push_back(row("full", eval_options(std::nullopt, "none", std::nullopt)).first);
  const auto [lmft, ratio] = row("lmft", eval_options(a.tau_override, "lmft", std::nullopt));
  rows.push_back(lmft);
  // Random dropping at the drop ratio LMFT achieved, so token budgets match.
  const double max_ratio = 1.0 - 1.0 / static_cast<double>(vcfg.grid.n_t);
  rows.push_back(row("random", eval_options(std::nullopt, "random", std::min(ratio, max_ratio))).first);
  assign_relative_cost(rows, rows.front().flops);

  if (a.json) {
    std::cout << format_report_json(rows);
  } else if (a.csv) {
    std::cout << format_report_csv(rows);
  } else {
    const auto env = current_environment();
    std::cout << format_report_table(rows) << "compiler " << env.compiler << ", " << env.build_type << " build, "
              << env.worker_threads << " worker of " << env.hardware_threads << " hardware threads, " << a.repeats
              << " repeats\n";
  }
  return 0;
}

// ---------------------------------------------------------------- viz

struct VizArgs {
  std::string video, ckpt, out;
  std::optional<double> tau_override;
};

void write_ppm(const fs::path& path, std::size_t w, std::size_t h, const std::vector<std::uint8_t>& rgb) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw UserError("cannot write " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Black → red → yellow → white.
std::array<double, 3> heat(double e) {
  return {std::clamp(3.0 * e, 0.0, 1.0), std::clamp(3.0 * e - 1.0, 0.0, 1.0), std::clamp(3.0 * e - 2.0, 0.0, 1.0)};
}

int run_viz(const VizArgs& a) {
  if (a.out.empty()) throw UserError("--out is required");
  const auto model = load_trained_model(checkpoint_file(a.ckpt));
  const auto& cfg = model.train_config;
  const VideoTensor v = load_video(require_file(a.video, "--video"));
  const auto grid = partition_video(v, cfg.patch, cfg.tubelet);
  const auto energy = compute_motion_energy(grid, cfg.normalize_scope);
  const double tau = a.tau_override.value_or(model.tau_hat);
  const auto mask = select_tokens(energy, tau);
  fs::create_directories(a.out);

  const std::size_t W = v.width, H = v.height, p = cfg.patch;
  auto px = [&](std::size_t t, std::size_t c, std::size_t i, std::size_t j) {
    return v.channels == 1 ? v.at(t, 0, i, j) : v.at(t, std::min(c, v.channels - 1), i, j);
  };
  // Three stacked rows per frame: original, kept tokens (dropped dimmed to 30%), energy heat strip.
  for (std::size_t t = 0; t < v.frames; ++t) {
    std::vector<std::uint8_t> img(W * 3 * H * 3);
    const std::size_t tt = t / cfg.tubelet;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t x = i / p, y = j / p;
        const double dim = mask.at(tt, x, y) ? 1.0 : 0.3;
        const auto hc = heat(energy.at(tt, x, y));
        for (std::size_t c = 0; c < 3; ++c) {
          const double val = px(t, c, i, j);
          img[((0 * H + i) * W + j) * 3 + c] = to_byte(val);
          img[((1 * H + i) * W + j) * 3 + c] = to_byte(val * dim);
          img[((2 * H + i) * W + j) * 3 + c] = to_byte(hc[c]);
        }
      }
    std::ostringstream name;
    name << "frame_" << std::setw(3) << std::setfill('0') << t << ".ppm";
    write_ppm(fs::path(a.out) / name.str(), W, 3 * H, img);
  }
  std::ofstream(fs::path(a.out) / "mask.txt") << format_mask_line(fs::path(a.video).stem().string(), mask) << '\n';
  std::cout << "frames " << v.frames << "  tau " << std::setprecision(6) << tau << "  drop_ratio " << drop_ratio(mask)
            << "  out " << a.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnable motion-focused tokenization for video domain adaptation", "lmft"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate the synthetic two-domain dataset");
  c_synth->add_option("--spec,--config", synth.spec, "Dataset spec (key = value)");
  c_synth->add_option("--out", synth.out, "Output directory");
  c_synth->add_option("--seed", synth.seed, "Generator seed");

  OracleArgs oracle;
  auto* c_oracle = app.add_subcommand("label-oracle", "Write pseudo-labels from the synthetic oracle");
  c_oracle->add_option("--truth", oracle.truth, "Ground-truth file written by synth");
  c_oracle->add_option("--out", oracle.out, "Pseudo-label file (JSON lines)");
  c_oracle->add_option("--classes", oracle.classes, "Number of classes");
  c_oracle->add_option("--noise-temp", oracle.noise_temp, "Temperature on the one-hot logits");
  c_oracle->add_option("--noise-std", oracle.noise_std, "Std of Gaussian logit noise");
  c_oracle->add_option("--seed", oracle.seed, "Noise seed");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model with the learnable threshold");
  c_train->add_option("--config", train.config, "Run config (key = value)");
  c_train->add_option("--out", train.out, "Output directory");
  c_train->add_option("--source", train.source, "Source manifest");
  c_train->add_option("--target", train.target, "Unlabeled target manifest");
  c_train->add_option("--pseudo-labels", train.pseudo, "Pseudo-label file for the target manifest");
  add_training_flags(c_train, train.o);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint with its stored threshold");
  c_eval->add_option("--ckpt", eval.ckpt, "Checkpoint file or training output directory");
  c_eval->add_option("--manifest", eval.manifest, "Labeled manifest");
  c_eval->add_option("--tau-override", eval.tau_override, "Threshold in (0,1) instead of tau-hat");
  c_eval->add_option("--drop-mode", eval.drop_mode, "lmft, random or none")
      ->check(CLI::IsMember({"lmft", "random", "none"}));
  c_eval->add_option("--random-ratio", eval.random_ratio, "Drop ratio for --drop-mode random");
  c_eval->add_flag("--json", eval.json, "Print one JSON object");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Compare full, LMFT and random tokenization");
  c_bench->add_option("--ckpt", bench.ckpt, "Checkpoint file or training output directory");
  c_bench->add_option("--manifest", bench.manifest, "Labeled manifest");
  c_bench->add_option("--tau-override", bench.tau_override, "Threshold for the LMFT row");
  c_bench->add_option("--seed", bench.seed, "Seed for the random-drop masks");
  c_bench->add_option("--repeats", bench.repeats, "Timed repeats per method");
  auto* json_flag = c_bench->add_flag("--json", bench.json, "One JSON object per method row");
  c_bench->add_flag("--csv", bench.csv, "CSV output")->excludes(json_flag);

  VizArgs viz;
  auto* c_viz = app.add_subcommand("viz", "Write per-frame PPM images of the token selection");
  c_viz->add_option("--video", viz.video, "Input .vten video");
  c_viz->add_option("--ckpt", viz.ckpt, "Checkpoint file or training output directory");
  c_viz->add_option("--out", viz.out, "Output directory");
  c_viz->add_option("--tau-override", viz.tau_override, "Threshold in (0,1) instead of tau-hat");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUser;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_oracle) return run_label_oracle(oracle);
    if (*c_train) return run_train(train);
    if (*c_eval) return run_eval(eval);
    if (*c_bench) return run_bench(bench);
    if (*c_viz) return run_viz(viz);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUser;
  } catch (const io::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUser;
  } catch (const std::invalid_argument& e) {
    // Config, pseudo-label, tokenizer and shape errors all derive from invalid_argument.
    std::cerr << "error: " << e.what() << '\n';
    return kExitUser;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
