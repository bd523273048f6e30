#include <benchmark/benchmark.h>

#include <random>

#include "lmft/bench.hpp"
#include "lmft/data.hpp"
#include "lmft/model.hpp"
#include "lmft/nn/ops.hpp"
#include "lmft/tokenizer.hpp"

using namespace lmft;

namespace {

// Default desk-scale setup: 16 frames of 64x64 RGB, 16x16 patches, tubelet 2.
const SyntheticSpec& spec() {
  static const SyntheticSpec s;
  return s;
}

const VideoTensor& sample_video() {
  static const VideoTensor v = render_video(spec(), Domain::target, 3, 11);
  return v;
}

ViTConfig model_config() {
  ViTConfig c;
  c.channels = spec().channels;
  c.grid = partition_video(sample_video(), c.patch, c.tubelet).extents;
  return c;
}

void BM_MotionEnergy(benchmark::State& state) {
  const auto& v = sample_video();
  for (auto _ : state) {
    auto e = compute_motion_energy(partition_video(v, 16, 2));
    benchmark::DoNotOptimize(e.values.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_MotionEnergy);

void BM_SelectAndGather(benchmark::State& state) {
  const auto grid = partition_video(sample_video(), 16, 2);
  const auto energy = compute_motion_energy(grid);
  for (auto _ : state) {
    auto seq = gather_tokens(grid, select_tokens(energy, 0.3), "v");
    benchmark::DoNotOptimize(seq.blocks.data());
  }
}
BENCHMARK(BM_SelectAndGather);

// Inference on a batch of 32 clips with a fraction of the tokens dropped at random.
void BM_ForwardAtDropRatio(benchmark::State& state) {
  const double ratio = static_cast<double>(state.range(0)) / 100.0;
  const auto cfg = model_config();
  VideoTransformer<float> model(cfg, 1);
  const auto grid = partition_video(sample_video(), cfg.patch, cfg.tubelet);
  std::vector<TokenSequence> seqs;
  for (std::uint64_t i = 0; i < 32; ++i)
    seqs.push_back(gather_tokens(grid, random_drop_mask(grid.extents, ratio, i), std::to_string(i)));
  const auto batch = pack_sequences(seqs);
  for (auto _ : state) {
    nn::Tape<float> tape;
    auto logits = model.forward(tape, batch, {.requires_grad = false});
    benchmark::DoNotOptimize(logits.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
  state.counters["tokens"] = static_cast<double>(batch.positions.size());
  state.counters["est_MFLOPs_per_clip"] = estimate_flops(cfg, static_cast<double>(batch.positions.size()) / 32.0) / 1e6;
}
BENCHMARK(BM_ForwardAtDropRatio)->Arg(0)->Arg(18)->Arg(50)->Arg(75)->Unit(benchmark::kMillisecond);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::normal_distribution<float> nd;
  nn::Tensor a({n, 64}), b({64, 64});
  for (auto& x : a.storage()) x = nd(rng);
  for (auto& x : b.storage()) x = nd(rng);
  for (auto _ : state) {
    nn::Tape<float> tape;
    auto y = nn::matmul(tape.constant(a), tape.constant(b));
    benchmark::DoNotOptimize(y.value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * n * 64 * 64));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(4)->Range(64, 4096);

}  // namespace

BENCHMARK_MAIN();
