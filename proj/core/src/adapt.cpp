#include "lmft/adapt.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

namespace lmft {

int argmax_label(std::span<const double> probs) {
  if (probs.empty()) throw PseudoLabelError("empty probability vector");
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

void validate_record(const PseudoLabelRecord& r, double tolerance) {
  if (r.probs.empty()) throw PseudoLabelError("record " + r.video_id + ": empty probability vector");
  double total = 0.0;
  for (double p : r.probs) {
    if (!std::isfinite(p) || p < 0.0) throw PseudoLabelError("record " + r.video_id + ": invalid probability");
    total += p;
  }
  if (std::abs(total - 1.0) > tolerance) {
    throw PseudoLabelError("record " + r.video_id + ": probabilities sum to " + std::to_string(total));
  }
}

FilteredTargetSet filter_pseudolabels(std::span<const PseudoLabelRecord> records, double gamma_c) {
  if (!(gamma_c >= 0.0 && gamma_c <= 1.0)) throw std::invalid_argument("gamma_c must lie in [0,1]");
  FilteredTargetSet out;
  for (const auto& r : records) {
    validate_record(r);
    const int label = argmax_label(r.probs);
    if (r.probs[static_cast<std::size_t>(label)] > gamma_c) out.entries.push_back({r.video_id, label});
  }
  return out;
}

std::vector<PseudoLabelRecord> read_pseudolabels(std::istream& is) {
  std::vector<PseudoLabelRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw PseudoLabelError("pseudo-label line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("video_id") || !j.contains("probs") || !j["video_id"].is_string() ||
        !j["probs"].is_array()) {
      throw PseudoLabelError("pseudo-label line " + std::to_string(lineno) +
                             ": expected {\"video_id\": string, \"probs\": [reals]}");
    }
    PseudoLabelRecord r;
    r.video_id = j["video_id"].get<std::string>();
    for (const auto& p : j["probs"]) {
      if (!p.is_number()) throw PseudoLabelError("pseudo-label line " + std::to_string(lineno) + ": non-numeric prob");
      r.probs.push_back(p.get<double>());
    }
    validate_record(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<PseudoLabelRecord> load_pseudolabels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open pseudo-label file " + path.string());
  return read_pseudolabels(is);
}

void write_pseudolabels(std::ostream& os, std::span<const PseudoLabelRecord> records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["video_id"] = r.video_id;
    j["probs"] = r.probs;
    os << j.dump() << '\n';
  }
}

void save_pseudolabels(const std::filesystem::path& path, std::span<const PseudoLabelRecord> records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write pseudo-label file " + path.string());
  write_pseudolabels(os, records);
}

RewardBreakdown compute_reward(double loss_s, double loss_t, double rho_s, double rho_t, double lambda_L) {
  if (!std::isfinite(loss_s) || !std::isfinite(loss_t)) throw std::domain_error("non-finite loss in reward");
  RewardBreakdown r;
  r.loss_s = loss_s;
  r.loss_t = loss_t;
  r.rho_s = rho_s;
  r.rho_t = rho_t;
  r.r_src = -lambda_L * loss_s - (1.0 - rho_s);
  r.r_tgt = -lambda_L * loss_t - (1.0 - rho_t);
  r.r_total = r.r_src + r.r_tgt;
  return r;
}

DropMode parse_drop_mode(const std::string& s) {
  if (s == "lmft") return DropMode::lmft;
  if (s == "random") return DropMode::random;
  if (s == "none") return DropMode::none;
  throw ConfigError("drop mode must be one of lmft, random, none; got '" + s + "'");
}

std::string to_string(DropMode m) {
  switch (m) {
    case DropMode::lmft: return "lmft";
    case DropMode::random: return "random";
    case DropMode::none: return "none";
  }
  return "?";
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(gamma_c >= 0.0 && gamma_c <= 1.0)) fail("gamma_c must lie in [0,1]");
  if (!(lambda_t > 0.0)) fail("lambda_t must be > 0");
  if (!(lambda_L > 0.0)) fail("lambda_L must be > 0");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1 || eval_batch < 1) fail("batch sizes must be >= 1");
  if (!(lr > 0.0) || weight_decay < 0.0) fail("lr must be > 0 and weight_decay >= 0");
  if (!(policy_step > 0.0)) fail("policy_step must be > 0");
  if (mc_samples < 1) fail("mc_samples must be >= 1");
  if (has_tau_override() && !(tau_override > 0.0 && tau_override < 1.0)) fail("tau_override must lie in (0,1)");
  if (!(random_ratio >= 0.0 && random_ratio < 1.0)) fail("random_ratio must lie in [0,1)");
  if (patch == 0 || tubelet == 0) fail("patch and tubelet must be positive");
}

const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys = {
      "gamma_c",      "lambda_t",     "lambda_L",    "epochs",          "batch_size",   "lr",
      "weight_decay", "policy_step",  "policy_mu",   "policy_log_sigma", "mc_samples",  "tau_hat_seed",
      "seed",         "patch",        "tubelet",     "normalize_scope", "drop_mode",    "tau_override",
      "random_ratio", "use_target",   "embed_dim",   "n_layers",        "n_heads",      "mlp_ratio",
      "dropout",      "n_classes",    "eval_batch"};
  return keys;
}

TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig c) {
  auto sz = [&](const char* k, std::size_t fb) {
    const long long v = kv.get_int(k, static_cast<long long>(fb));
    if (v < 0) throw ConfigError(std::string("config key '") + k + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.gamma_c = kv.get_double("gamma_c", c.gamma_c);
  c.lambda_t = kv.get_double("lambda_t", c.lambda_t);
  c.lambda_L = kv.get_double("lambda_L", c.lambda_L);
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.lr = kv.get_double("lr", c.lr);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.policy_step = kv.get_double("policy_step", c.policy_step);
  c.policy_mu = kv.get_double("policy_mu", c.policy_mu);
  c.policy_log_sigma = kv.get_double("policy_log_sigma", c.policy_log_sigma);
  c.mc_samples = static_cast<int>(kv.get_int("mc_samples", c.mc_samples));
  c.tau_hat_seed = sz("tau_hat_seed", c.tau_hat_seed);
  c.seed = sz("seed", c.seed);
  c.patch = sz("patch", c.patch);
  c.tubelet = sz("tubelet", c.tubelet);
  if (auto v = kv.raw("normalize_scope")) c.normalize_scope = parse_normalize_scope(*v);
  if (auto v = kv.raw("drop_mode")) c.drop_mode = parse_drop_mode(*v);
  if (auto v = kv.raw("tau_override")) {
    c.tau_override = (*v == "none" || v->empty()) ? std::numeric_limits<double>::quiet_NaN()
                                                  : kv.get_double("tau_override", 0.0);
  }
  c.random_ratio = kv.get_double("random_ratio", c.random_ratio);
  c.use_target = kv.get_bool("use_target", c.use_target);
  c.embed_dim = sz("embed_dim", c.embed_dim);
  c.n_layers = sz("n_layers", c.n_layers);
  c.n_heads = sz("n_heads", c.n_heads);
  c.mlp_ratio = sz("mlp_ratio", c.mlp_ratio);
  c.dropout = kv.get_double("dropout", c.dropout);
  c.n_classes = sz("n_classes", c.n_classes);
  c.eval_batch = static_cast<int>(kv.get_int("eval_batch", c.eval_batch));
  c.validate();
  return c;
}

KeyValueConfig to_key_values(const TrainConfig& c) {
  KeyValueConfig kv;
  auto num = [](double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  };
  kv.set("gamma_c", num(c.gamma_c));
  kv.set("lambda_t", num(c.lambda_t));
  kv.set("lambda_L", num(c.lambda_L));
  kv.set("epochs", std::to_string(c.epochs));
  kv.set("batch_size", std::to_string(c.batch_size));
  kv.set("lr", num(c.lr));
  kv.set("weight_decay", num(c.weight_decay));
  kv.set("policy_step", num(c.policy_step));
  kv.set("policy_mu", num(c.policy_mu));
  kv.set("policy_log_sigma", num(c.policy_log_sigma));
  kv.set("mc_samples", std::to_string(c.mc_samples));
  kv.set("tau_hat_seed", std::to_string(c.tau_hat_seed));
  kv.set("seed", std::to_string(c.seed));
  kv.set("patch", std::to_string(c.patch));
  kv.set("tubelet", std::to_string(c.tubelet));
  kv.set("normalize_scope", to_string(c.normalize_scope));
  kv.set("drop_mode", to_string(c.drop_mode));
  kv.set("tau_override", c.has_tau_override() ? num(c.tau_override) : "none");
  kv.set("random_ratio", num(c.random_ratio));
  kv.set("use_target", c.use_target ? "true" : "false");
  kv.set("embed_dim", std::to_string(c.embed_dim));
  kv.set("n_layers", std::to_string(c.n_layers));
  kv.set("n_heads", std::to_string(c.n_heads));
  kv.set("mlp_ratio", std::to_string(c.mlp_ratio));
  kv.set("dropout", num(c.dropout));
  kv.set("n_classes", std::to_string(c.n_classes));
  kv.set("eval_batch", std::to_string(c.eval_batch));
  return kv;
}

}  // namespace lmft
