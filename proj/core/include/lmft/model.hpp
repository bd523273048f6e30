#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lmft/nn/autograd.hpp"
#include "lmft/nn/checkpoint.hpp"
#include "lmft/nn/ops.hpp"
#include "lmft/tokenizer.hpp"

namespace lmft {

struct ViTConfig {
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t n_classes = 8;
  std::size_t patch = 16;
  std::size_t tubelet = 2;
  std::size_t channels = 3;
  GridExtents grid{8, 4, 4};
  double dropout = 0.0;

  std::size_t token_dim() const { return tubelet * channels * patch * patch; }
  void validate() const;
  bool operator==(const ViTConfig&) const = default;
};

std::string serialize_config(const ViTConfig& cfg);
ViTConfig deserialize_config(const std::string& payload);

/// Allowed attention pairs of a packed batch: (i, j) iff both rows fall in
/// the same segment.
class BlockDiagonalMask {
 public:
  explicit BlockDiagonalMask(std::vector<std::size_t> lengths);

  const std::vector<std::size_t>& lengths() const { return lengths_; }
  std::size_t rows() const { return offsets_.back(); }
  std::size_t segment_of(std::size_t row) const;
  bool allowed(std::size_t i, std::size_t j) const { return segment_of(i) == segment_of(j); }
  std::size_t allowed_pairs() const;
  /// Dense N×N additive bias: 0 where allowed, −inf elsewhere.
  std::vector<float> additive_bias() const;

 private:
  std::vector<std::size_t> lengths_;
  std::vector<std::size_t> offsets_;
};

/// Variable-length token sequences concatenated without padding.
struct PackedBatch {
  std::size_t token_dim = 0;
  std::vector<float> tokens;          // rows × token_dim
  std::vector<TokenIndex> positions;  // original grid index of each row
  std::vector<std::size_t> lengths;   // per-video segment lengths
  std::vector<int> labels;            // empty when unlabeled

  std::size_t rows() const { return positions.size(); }
  std::size_t videos() const { return lengths.size(); }
};

/// Packs sequences in order. `min_tokens` enforces the first-slice guarantee (0 disables).
PackedBatch pack_sequences(std::span<const TokenSequence> seqs, std::span<const int> labels = {},
                           std::size_t min_tokens = 0);

struct ForwardOptions {
  /// When false, parameters enter the tape as constants and no backward closures are kept.
  bool requires_grad = true;
  /// Dropout is active only when a generator is supplied.
  std::mt19937_64* dropout_rng = nullptr;
};

template <typename T>
struct BlockParams {
  nn::Parameter<T> ln1_g, ln1_b;
  nn::Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;
  nn::Parameter<T> ln2_g, ln2_b;
  nn::Parameter<T> w1, b1, w2, b2;
};

/// Pre-norm transformer over tubelet tokens with factorized positional
/// embeddings looked up by original grid index, per-video mean pooling and a
/// linear head. Instantiated for float (training) and double (checks).
template <typename T>
class VideoTransformer {
 public:
  VideoTransformer(ViTConfig cfg, std::uint64_t seed);

  const ViTConfig& config() const { return cfg_; }
  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;

  /// Token embeddings [rows × embed_dim] for a packed batch.
  nn::Var<T> embed(nn::Tape<T>& tape, const PackedBatch& batch, const ForwardOptions& opts = {});
  nn::Var<T> embed_tokens(nn::Tape<T>& tape, const TokenSequence& seq, const ForwardOptions& opts = {});

  /// Per-video logits [videos × n_classes].
  nn::Var<T> forward(nn::Tape<T>& tape, const PackedBatch& batch, const ForwardOptions& opts = {});

  template <typename U>
  VideoTransformer<U> cast() const;

  std::vector<nn::NamedTensor> export_tensors() const;
  void import_tensors(const nn::CheckpointFile& ckpt);

 private:
  template <typename U>
  friend class VideoTransformer;

  void for_each_param(auto&& fn);
  nn::Var<T> bind(nn::Tape<T>& tape, nn::Parameter<T>& p, const ForwardOptions& opts);

  ViTConfig cfg_;
  nn::Parameter<T> patch_proj_;
  nn::Parameter<T> pos_t_, pos_x_, pos_y_;
  std::vector<BlockParams<T>> blocks_;
  nn::Parameter<T> ln_f_g_, ln_f_b_;
  nn::Parameter<T> head_w_, head_b_;
};

extern template class VideoTransformer<float>;
extern template class VideoTransformer<double>;

}  // namespace lmft
