#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lmft/adapt.hpp"
#include "lmft/binary_io.hpp"
#include "lmft/data.hpp"
#include "lmft/nn/checkpoint.hpp"
#include "lmft/trainer.hpp"

using namespace lmft;
namespace fs = std::filesystem;

namespace {

SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.n_classes = 4;
  s.frames = 8;
  s.height = 32;
  s.width = 32;
  s.sprite_size = 8.0;
  s.n_source_train = 24;
  s.n_target_train = 16;
  s.n_target_val = 12;
  s.seed = 5;
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.n_classes = 4;
  c.patch = 8;
  c.tubelet = 2;
  c.embed_dim = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.batch_size = 8;
  c.epochs = 2;
  c.lr = 1e-3;
  return c;
}

struct TinyData {
  std::vector<PreparedVideo> source, target, val;
  std::vector<PseudoLabelRecord> records;
};

const TinyData& tiny_data() {
  static const TinyData d = [] {
    const auto spec = tiny_spec();
    const auto cfg = tiny_config();
    const auto splits = generate_splits(spec);
    TinyData out{prepare_videos(splits.source_train, cfg), prepare_videos(splits.target_train, cfg),
                 prepare_videos(splits.target_val, cfg), {}};
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& v : splits.target_train) {
      ids.push_back(v.id);
      labels.push_back(v.label);
    }
    out.records = oracle_probabilities(ids, labels, spec.n_classes, {.noise_temp = 0.5, .noise_std = 1.0, .seed = 1});
    return out;
  }();
  return d;
}

std::vector<PreparedVideo> filtered_target(double gamma_c) {
  const auto& d = tiny_data();
  return attach_pseudolabels(d.target, filter_pseudolabels(d.records, gamma_c));
}

std::string metrics_text(const Trainer& t) {
  std::string s;
  for (const auto& m : t.metrics()) s += format_metrics_row(m) + "\n";
  return s;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lmft_adapt_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(FilterPseudolabels, Examples) {
  const std::vector<PseudoLabelRecord> a{{"a", {0.9, 0.1}, {}}}, b{{"b", {0.7, 0.3}, {}}};
  const auto fa = filter_pseudolabels(a, 0.8);
  ASSERT_EQ(fa.size(), 1u);
  EXPECT_EQ(fa.entries[0].label, 0);
  EXPECT_TRUE(filter_pseudolabels(b, 0.8).empty());
}

TEST(FilterPseudolabels, GammaOneKeepsNothing) {
  const std::vector<PseudoLabelRecord> r{{"a", {1.0, 0.0}, {}}, {"b", {0.2, 0.8}, {}}};
  EXPECT_TRUE(filter_pseudolabels(r, 1.0).empty());
}

TEST(FilterPseudolabels, StrictThresholdAndLowestIndexTie) {
  const std::vector<PseudoLabelRecord> r{{"a", {0.25, 0.5, 0.25}, {}}, {"b", {0.4, 0.2, 0.4}, {}}};
  EXPECT_EQ(filter_pseudolabels(r, 0.5).size(), 0u);
  const auto f = filter_pseudolabels(r, 0.3);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f.entries[1].label, 0);
}

TEST(FilterPseudolabels, MonotoneInGamma) {
  const auto& recs = tiny_data().records;
  std::size_t prev = recs.size() + 1;
  for (double g = 0.0; g <= 1.0; g += 0.05) {
    const std::size_t n = filter_pseudolabels(recs, g).size();
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(FilterPseudolabels, MalformedRecordsRejected) {
  const std::vector<PseudoLabelRecord> bad_sum{{"a", {0.5, 0.4}, {}}}, negative{{"a", {1.2, -0.2}, {}}},
      empty{{"a", {}, {}}};
  EXPECT_THROW(filter_pseudolabels(bad_sum, 0.5), PseudoLabelError);
  EXPECT_THROW(filter_pseudolabels(negative, 0.5), PseudoLabelError);
  EXPECT_THROW(filter_pseudolabels(empty, 0.5), PseudoLabelError);
  EXPECT_THROW(filter_pseudolabels({}, 1.5), std::invalid_argument);
}

TEST(PseudoLabelFile, RoundTripThroughJsonLines) {
  const std::vector<PseudoLabelRecord> r{{"clip \"1\"", {0.125, 0.875}, {}}, {"c2", {1.0}, {}}};
  std::stringstream ss;
  write_pseudolabels(ss, r);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  ss.seekg(0);
  const auto back = read_pseudolabels(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].video_id, "clip \"1\"");
  EXPECT_EQ(back[0].probs, r[0].probs);
}

TEST(PseudoLabelFile, AcceptsExternalWriterFormatting) {
  // Key order, spacing and blank lines as another tool might emit them.
  std::stringstream ss("{ \"probs\" : [0.2, 0.8], \"video_id\" : \"v1\" }\n\n{\"video_id\":\"v2\",\"probs\":[1]}\n");
  const auto r = read_pseudolabels(ss);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].video_id, "v1");
  EXPECT_EQ(filter_pseudolabels(r, 0.5).entries[0].label, 1);
}

TEST(PseudoLabelFile, ContractViolationsAreTyped) {
  for (const char* text : {"not json\n", "{\"video_id\": 3, \"probs\": [1]}\n", "{\"probs\": [1]}\n",
                           "{\"video_id\": \"a\", \"probs\": [\"x\"]}\n", "{\"video_id\": \"a\", \"probs\": [0.3]}\n"}) {
    std::stringstream ss(text);
    EXPECT_THROW(read_pseudolabels(ss), PseudoLabelError) << text;
  }
}

TEST(PseudoLabelFile, UnknownVideoIdIsRejected) {
  FilteredTargetSet f;
  f.entries.push_back({"nope", 0});
  EXPECT_THROW(attach_pseudolabels(tiny_data().target, f), PseudoLabelError);
}

TEST(DaLoss, Examples) {
  nn::Tape<double> tape;
  const std::vector<int> ls{0, 1}, lt{2};
  auto zs = tape.constant(nn::Tensor64({2, 8}, 0.0));
  auto zt = tape.constant(nn::Tensor64({1, 8}, 0.0));
  const auto a = da_loss<double>(zs, ls, zt, lt, 0.5);
  EXPECT_NEAR(a.total.value().item(), 1.5 * std::log(8.0), 1e-12);
  const auto b = da_loss<double>(zs, ls, zt, lt, 0.0);
  EXPECT_EQ(b.total.value().item(), b.source.value().item());
  const auto c = da_loss<double>(zs, ls, nn::Var<double>(), {}, 0.5);
  EXPECT_EQ(c.target.value().item(), 0.0);
}

TEST(DaLoss, WeightedSumExample) {
  // Logits chosen so that L_s = 1 and L_t = 2 exactly: softmax mass e^-L on the label.
  nn::Tape<double> tape;
  auto row = [](double loss) {
    // Two classes: p(label) = e^-loss, logits (log p, log(1−p)).
    const double p = std::exp(-loss);
    return nn::Tensor64::matrix({{std::log(p), std::log(1.0 - p)}});
  };
  const std::vector<int> l{0};
  const auto r = da_loss<double>(tape.constant(row(1.0)), l, tape.constant(row(2.0)), l, 0.5);
  EXPECT_NEAR(r.source.value().item(), 1.0, 1e-12);
  EXPECT_NEAR(r.target.value().item(), 2.0, 1e-12);
  EXPECT_NEAR(r.total.value().item(), 2.0, 1e-12);
}

TEST(DaLoss, TargetContributionIsLinearInLambda) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  nn::Tensor64 zs({4, 5}), zt({3, 5});
  for (auto& v : zs.storage()) v = nd(rng);
  for (auto& v : zt.storage()) v = nd(rng);
  const std::vector<int> ls{0, 1, 2, 3}, lt{4, 4, 0};
  nn::Tape<double> tape;
  const auto a = da_loss<double>(tape.constant(zs), ls, tape.constant(zt), lt, 0.3);
  const auto b = da_loss<double>(tape.constant(zs), ls, tape.constant(zt), lt, 0.6);
  const double da = a.total.value().item() - a.source.value().item();
  const double db = b.total.value().item() - b.source.value().item();
  EXPECT_NEAR(db, 2.0 * da, 1e-12);
}

TEST(Reward, Examples) {
  const auto r = compute_reward(0.5, 0.5, 0.6, 0.6, 10.0);
  EXPECT_NEAR(r.r_src, -5.4, 1e-12);
  EXPECT_EQ(r.r_total, 2.0 * r.r_src);
  EXPECT_EQ(compute_reward(0.3, 0.0, 1.0, 0.0, 10.0).r_src, -3.0);
  EXPECT_THROW(compute_reward(std::nan(""), 0.0, 0.5, 0.5, 10.0), std::domain_error);
}

TEST(TrainConfig, KeyValueRoundTripCoversEveryField) {
  TrainConfig c = tiny_config();
  c.gamma_c = 0.4;
  c.tau_override = 0.3;
  c.drop_mode = DropMode::random;
  c.use_target = false;
  c.seed = 1234567890123ULL;
  const auto kv = to_key_values(c);
  for (const auto& k : train_config_keys()) EXPECT_TRUE(kv.has(k)) << k;
  const auto back = train_config_from(KeyValueConfig::parse(kv.dump()));
  EXPECT_EQ(to_key_values(back).dump(), kv.dump());
}

TEST(TrainConfig, InvalidValuesRejected) {
  auto c = tiny_config();
  c.gamma_c = 1.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.lambda_t = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.lambda_L = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  KeyValueConfig kv = KeyValueConfig::parse("gamma_c = 0.5\nbogus = 1\n");
  EXPECT_THROW(kv.reject_unknown(train_config_keys()), ConfigError);
}

TEST(Trainer, IdenticalSeedsGiveIdenticalMetricLogs) {
  const auto& d = tiny_data();
  Trainer a(tiny_config(), d.source, filtered_target(0.5));
  Trainer b(tiny_config(), d.source, filtered_target(0.5));
  a.train();
  b.train();
  ASSERT_EQ(a.metrics().size(), 2 * a.iterations_per_epoch());
  EXPECT_EQ(metrics_text(a), metrics_text(b));
  auto c = tiny_config();
  c.seed = 1;
  Trainer other(c, d.source, filtered_target(0.5));
  other.train();
  EXPECT_NE(metrics_text(a), metrics_text(other));
}

TEST(Trainer, GammaOneMatchesDisabledTargetLoss) {
  const auto& d = tiny_data();
  auto c = tiny_config();
  c.gamma_c = 1.0;
  Trainer a(c, d.source, filtered_target(c.gamma_c));
  c.gamma_c = 0.8;
  c.use_target = false;
  Trainer b(c, d.source, filtered_target(c.gamma_c));
  a.train();
  b.train();
  EXPECT_EQ(metrics_text(a), metrics_text(b));
  for (const auto& m : a.metrics()) {
    EXPECT_EQ(m.loss_t, 0.0);
    EXPECT_EQ(m.rho_t, 0.0);
    EXPECT_EQ(m.loss_da, m.loss_s);
  }
}

TEST(Trainer, RewardFieldsSatisfyTheirDefinitions) {
  const auto& d = tiny_data();
  const auto cfg = tiny_config();
  Trainer t(cfg, d.source, filtered_target(0.5));
  t.train_epoch();
  for (const auto& m : t.metrics()) {
    EXPECT_EQ(m.reward.r_src, -cfg.lambda_L * m.loss_s - (1.0 - m.rho_s));
    EXPECT_EQ(m.reward.r_tgt, -cfg.lambda_L * m.loss_t - (1.0 - m.rho_t));
    EXPECT_EQ(m.r_total, m.reward.r_src + m.reward.r_tgt);
    EXPECT_GT(m.tau, 0.0);
    EXPECT_LT(m.tau, 1.0);
  }
}

TEST(Trainer, LossMatchesRecomputationFromLoggedLogits) {
  const auto& d = tiny_data();
  auto tgt = filtered_target(0.0);
  Trainer t(tiny_config(), d.source, tgt);
  const auto m = t.train_iteration({0, 1}, {0, 1});
  const auto& snap = t.last_iteration();
  ASSERT_TRUE(snap.target_logits.has_value());
  nn::Tape<double> tape;
  const auto l = da_loss<double>(tape.constant(snap.source_logits.cast<double>()), snap.source_labels,
                                 tape.constant(snap.target_logits->cast<double>()), snap.target_labels, 0.5);
  EXPECT_NEAR(m.loss_s, l.source.value().item(), 1e-6);
  EXPECT_NEAR(m.loss_t, l.target.value().item(), 1e-6);
  EXPECT_NEAR(m.loss_da, l.total.value().item(), 1e-6);
  EXPECT_EQ(snap.target_labels, (std::vector<int>{tgt[0].label, tgt[1].label}));
}

TEST(Trainer, TauOverrideFreezesPolicy) {
  const auto& d = tiny_data();
  auto c = tiny_config();
  c.tau_override = 0.4;
  Trainer t(c, d.source, filtered_target(0.5));
  t.train_epoch();
  for (const auto& m : t.metrics()) EXPECT_EQ(m.tau, 0.4);
  EXPECT_EQ(t.policy().mu, c.policy_mu);
  EXPECT_EQ(t.final_threshold(), 0.4);
}

TEST(Trainer, NoneModeKeepsEveryToken) {
  const auto& d = tiny_data();
  auto c = tiny_config();
  c.drop_mode = DropMode::none;
  Trainer t(c, d.source, filtered_target(0.5));
  t.train_epoch();
  for (const auto& m : t.metrics()) {
    EXPECT_EQ(m.rho_s, 0.0);
    EXPECT_EQ(m.tau, 0.0);
  }
}

TEST(Trainer, RejectsUnlabeledOrMismatchedVideos) {
  const auto& d = tiny_data();
  auto bad = d.source;
  bad[0].label = -1;
  EXPECT_THROW(Trainer(tiny_config(), bad, {}), std::invalid_argument);
  EXPECT_THROW(Trainer(tiny_config(), d.source, bad), std::invalid_argument);
  auto other = d.source;
  other[1].grid.extents.n_t = 2;
  EXPECT_THROW(Trainer(tiny_config(), d.source, other), std::invalid_argument);
  EXPECT_THROW(Trainer(tiny_config(), {}, {}), std::invalid_argument);
}

TEST(Evaluate, DeterministicAndUsesStoredThreshold) {
  const auto& d = tiny_data();
  Trainer t(tiny_config(), d.source, filtered_target(0.5));
  t.train();
  const auto m = finish_training(t);
  const auto a = evaluate(m, d.val), b = evaluate(m, d.val);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.mean_drop_ratio, b.mean_drop_ratio);
  EXPECT_EQ(a.tau_used, m.tau_hat);
  EXPECT_EQ(a.videos, d.val.size());
  EXPECT_EQ(a.full_tokens, 64u);
  EXPECT_LE(a.min_tokens, a.max_tokens);
  EXPECT_GE(a.min_tokens, 16u);
}

TEST(Evaluate, TinyOverrideMatchesUnprunedModel) {
  const auto& d = tiny_data();
  Trainer t(tiny_config(), d.source, filtered_target(0.5));
  t.train_epoch();
  const auto m = finish_training(t);
  const auto low = evaluate(m, d.val, {.tau_override = 1e-9});
  const auto full = evaluate(m, d.val, {.drop_mode = DropMode::none});
  EXPECT_LT(low.mean_drop_ratio, 0.05);
  EXPECT_EQ(low.accuracy, full.accuracy);
  EXPECT_EQ(full.mean_drop_ratio, 0.0);
}

TEST(Evaluate, MemorizedToySetScoresPerfectly) {
  const auto& d = tiny_data();
  std::vector<PreparedVideo> toy(d.source.begin(), d.source.begin() + 4);
  for (int i = 0; i < 4; ++i) toy[static_cast<std::size_t>(i)].label = i;
  auto c = tiny_config();
  c.drop_mode = DropMode::none;
  c.batch_size = 4;
  c.epochs = 150;
  c.lr = 3e-3;
  c.weight_decay = 0.0;
  Trainer t(c, toy, {});
  t.train();
  EXPECT_EQ(evaluate(finish_training(t), toy).accuracy, 1.0);
}

TEST(Evaluate, RandomModeIsReproducibleAndHitsTheRatio) {
  const auto& d = tiny_data();
  Trainer t(tiny_config(), d.source, {});
  const auto m = finish_training(t);
  const EvalOptions o{.drop_mode = DropMode::random, .random_ratio = 0.5};
  const auto a = evaluate(m, d.val, o), b = evaluate(m, d.val, o);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.mean_tokens, 32.0);
}

TEST(TrainedModelFile, RoundTripPreservesPredictionsAndPolicy) {
  const auto& d = tiny_data();
  Trainer t(tiny_config(), d.source, filtered_target(0.5));
  t.train_epoch();
  const auto m = finish_training(t);
  const auto dir = scratch("roundtrip");
  save_trained_model(dir / "model.lmck", m);
  const auto back = load_trained_model(dir / "model.lmck");
  EXPECT_EQ(back.tau_hat, m.tau_hat);
  EXPECT_EQ(back.policy.mu, m.policy.mu);
  EXPECT_EQ(back.policy.log_sigma, m.policy.log_sigma);
  EXPECT_EQ(back.policy.baseline, m.policy.baseline);
  EXPECT_EQ(back.tau_hat_seed, m.tau_hat_seed);
  EXPECT_EQ(to_key_values(back.train_config).dump(), to_key_values(m.train_config).dump());
  const auto a = evaluate(m, d.val), b = evaluate(back, d.val);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.total_tokens, b.total_tokens);
}

TEST(TrainedModelFile, MissingThresholdIsAnError) {
  const auto& d = tiny_data();
  Trainer t(tiny_config(), d.source, {});
  const auto m = finish_training(t);
  const auto dir = scratch("no_tau");
  save_trained_model(dir / "model.lmck", m);
  auto f = nn::load_checkpoint(dir / "model.lmck");
  std::erase_if(f.sections, [](const auto& s) { return s.tag == "PLCY"; });
  nn::save_checkpoint(dir / "stripped.lmck", f);
  EXPECT_THROW(load_trained_model(dir / "stripped.lmck"), io::FormatError);
}

TEST(Metrics, CsvHeaderAndPrecision) {
  EXPECT_EQ(metrics_csv_header(), "iter,loss_s,loss_t,loss_da,tau,rho_s,rho_t,r_total,baseline");
  IterationMetrics m;
  m.iter = 3;
  m.loss_s = 0.1;
  const auto row = format_metrics_row(m);
  EXPECT_EQ(row.substr(0, 2), "3,");
  EXPECT_DOUBLE_EQ(std::stod(row.substr(2)), 0.1);
  EXPECT_NE(row.find("0.10000000000000001"), std::string::npos);
}
