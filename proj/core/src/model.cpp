#include "lmft/model.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace lmft {

void ViTConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("ViTConfig: " + m); };
  if (embed_dim == 0 || n_layers == 0 || n_heads == 0 || mlp_ratio == 0 || n_classes == 0) {
    fail("extents must be positive");
  }
  if (embed_dim % n_heads != 0) fail("embed_dim must be divisible by n_heads");
  if (patch == 0 || tubelet == 0 || channels == 0) fail("tokenization extents must be positive");
  if (grid.count() == 0) fail("grid extents must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
}

std::string serialize_config(const ViTConfig& c) {
  std::ostringstream os;
  os << "embed_dim=" << c.embed_dim << "\nn_layers=" << c.n_layers << "\nn_heads=" << c.n_heads
     << "\nmlp_ratio=" << c.mlp_ratio << "\nn_classes=" << c.n_classes << "\npatch=" << c.patch
     << "\ntubelet=" << c.tubelet << "\nchannels=" << c.channels << "\nn_t=" << c.grid.n_t
     << "\nn_x=" << c.grid.n_x << "\nn_y=" << c.grid.n_y << "\ndropout=" << c.dropout << "\n";
  return os.str();
}

ViTConfig deserialize_config(const std::string& payload) {
  ViTConfig c;
  std::istringstream is(payload);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq);
    const std::string v = line.substr(eq + 1);
    auto u = [&] { return static_cast<std::size_t>(std::stoull(v)); };
    if (k == "embed_dim") c.embed_dim = u();
    else if (k == "n_layers") c.n_layers = u();
    else if (k == "n_heads") c.n_heads = u();
    else if (k == "mlp_ratio") c.mlp_ratio = u();
    else if (k == "n_classes") c.n_classes = u();
    else if (k == "patch") c.patch = u();
    else if (k == "tubelet") c.tubelet = u();
    else if (k == "channels") c.channels = u();
    else if (k == "n_t") c.grid.n_t = u();
    else if (k == "n_x") c.grid.n_x = u();
    else if (k == "n_y") c.grid.n_y = u();
    else if (k == "dropout") c.dropout = std::stod(v);
    else throw std::invalid_argument("ViTConfig: unknown key " + k);
  }
  c.validate();
  return c;
}

BlockDiagonalMask::BlockDiagonalMask(std::vector<std::size_t> lengths) : lengths_(std::move(lengths)) {
  if (lengths_.empty()) throw std::invalid_argument("block-diagonal mask needs at least one segment");
  offsets_.push_back(0);
  for (std::size_t l : lengths_) {
    if (l == 0) throw std::invalid_argument("block-diagonal mask: zero-length segment");
    offsets_.push_back(offsets_.back() + l);
  }
}

std::size_t BlockDiagonalMask::segment_of(std::size_t row) const {
  if (row >= rows()) throw std::out_of_range("row outside packed batch");
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), row);
  return static_cast<std::size_t>(it - offsets_.begin()) - 1;
}

std::size_t BlockDiagonalMask::allowed_pairs() const {
  std::size_t n = 0;
  for (std::size_t l : lengths_) n += l * l;
  return n;
}

std::vector<float> BlockDiagonalMask::additive_bias() const {
  const std::size_t n = rows();
  std::vector<float> bias(n * n, -std::numeric_limits<float>::infinity());
  for (std::size_t s = 0; s < lengths_.size(); ++s)
    for (std::size_t i = offsets_[s]; i < offsets_[s + 1]; ++i)
      for (std::size_t j = offsets_[s]; j < offsets_[s + 1]; ++j) bias[i * n + j] = 0.0f;
  return bias;
}

PackedBatch pack_sequences(std::span<const TokenSequence> seqs, std::span<const int> labels,
                           std::size_t min_tokens) {
  if (seqs.empty()) throw std::invalid_argument("cannot pack an empty batch");
  if (!labels.empty() && labels.size() != seqs.size()) throw std::invalid_argument("label count mismatch");
  PackedBatch b;
  b.token_dim = seqs.front().block_size;
  std::size_t rows = 0;
  for (const auto& s : seqs) rows += s.size();
  b.tokens.reserve(rows * b.token_dim);
  b.positions.reserve(rows);
  for (const auto& s : seqs) {
    if (s.block_size != b.token_dim) throw std::invalid_argument("token dims differ within batch");
    if (s.size() == 0 || s.size() < min_tokens) {
      throw std::invalid_argument("sequence " + s.video_id + " has " + std::to_string(s.size()) +
                                  " tokens, fewer than the first-slice minimum");
    }
    b.tokens.insert(b.tokens.end(), s.blocks.begin(), s.blocks.end());
    b.positions.insert(b.positions.end(), s.indices.begin(), s.indices.end());
    b.lengths.push_back(s.size());
  }
  b.labels.assign(labels.begin(), labels.end());
  return b;
}

namespace {

template <typename T>
nn::Parameter<T> randn_param(const std::string& name, nn::Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  nn::BasicTensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(normal(rng));
  return nn::Parameter<T>(name, std::move(t));
}

template <typename T>
nn::Parameter<T> const_param(const std::string& name, nn::Shape shape, T fill) {
  return nn::Parameter<T>(name, nn::BasicTensor<T>(std::move(shape), fill));
}

constexpr double kInitStd = 0.02;

}  // namespace

template <typename T>
VideoTransformer<T>::VideoTransformer(ViTConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.embed_dim, h = d * cfg_.mlp_ratio;
  patch_proj_ = randn_param<T>("patch_proj", {cfg_.token_dim(), d}, kInitStd, rng);
  pos_t_ = randn_param<T>("pos_t", {cfg_.grid.n_t, d}, kInitStd, rng);
  pos_x_ = randn_param<T>("pos_x", {cfg_.grid.n_x, d}, kInitStd, rng);
  pos_y_ = randn_param<T>("pos_y", {cfg_.grid.n_y, d}, kInitStd, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockParams<T> b;
    b.ln1_g = const_param<T>(p + "ln1_g", {d}, T{1});
    b.ln1_b = const_param<T>(p + "ln1_b", {d}, T{0});
    b.wq = randn_param<T>(p + "wq", {d, d}, kInitStd, rng);
    b.bq = const_param<T>(p + "bq", {d}, T{0});
    b.wk = randn_param<T>(p + "wk", {d, d}, kInitStd, rng);
    b.bk = const_param<T>(p + "bk", {d}, T{0});
    b.wv = randn_param<T>(p + "wv", {d, d}, kInitStd, rng);
    b.bv = const_param<T>(p + "bv", {d}, T{0});
    b.wo = randn_param<T>(p + "wo", {d, d}, kInitStd, rng);
    b.bo = const_param<T>(p + "bo", {d}, T{0});
    b.ln2_g = const_param<T>(p + "ln2_g", {d}, T{1});
    b.ln2_b = const_param<T>(p + "ln2_b", {d}, T{0});
    b.w1 = randn_param<T>(p + "w1", {d, h}, kInitStd, rng);
    b.b1 = const_param<T>(p + "b1", {h}, T{0});
    b.w2 = randn_param<T>(p + "w2", {h, d}, kInitStd, rng);
    b.b2 = const_param<T>(p + "b2", {d}, T{0});
    blocks_.push_back(std::move(b));
  }
  ln_f_g_ = const_param<T>("ln_f_g", {d}, T{1});
  ln_f_b_ = const_param<T>("ln_f_b", {d}, T{0});
  head_w_ = randn_param<T>("head_w", {d, cfg_.n_classes}, kInitStd, rng);
  head_b_ = const_param<T>("head_b", {cfg_.n_classes}, T{0});
}

template <typename T>
void VideoTransformer<T>::for_each_param(auto&& fn) {
  fn(patch_proj_);
  fn(pos_t_);
  fn(pos_x_);
  fn(pos_y_);
  for (auto& b : blocks_) {
    for (auto* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln2_g,
                    &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2}) {
      fn(*p);
    }
  }
  fn(ln_f_g_);
  fn(ln_f_b_);
  fn(head_w_);
  fn(head_b_);
}

template <typename T>
std::vector<nn::Parameter<T>*> VideoTransformer<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  for_each_param([&](nn::Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::vector<const nn::Parameter<T>*> VideoTransformer<T>::parameters() const {
  std::vector<const nn::Parameter<T>*> out;
  for (auto* p : const_cast<VideoTransformer*>(this)->parameters()) out.push_back(p);
  return out;
}

template <typename T>
nn::Var<T> VideoTransformer<T>::bind(nn::Tape<T>& tape, nn::Parameter<T>& p, const ForwardOptions& opts) {
  return opts.requires_grad ? tape.parameter(p) : tape.constant(p.value);
}

template <typename T>
nn::Var<T> VideoTransformer<T>::embed(nn::Tape<T>& tape, const PackedBatch& batch, const ForwardOptions& opts) {
  if (batch.token_dim != cfg_.token_dim()) {
    throw std::invalid_argument("token dim " + std::to_string(batch.token_dim) + " does not match model " +
                                std::to_string(cfg_.token_dim()));
  }
  const std::size_t n = batch.rows();
  std::vector<T> data(batch.tokens.begin(), batch.tokens.end());
  auto x = tape.constant(nn::BasicTensor<T>({n, batch.token_dim}, std::move(data)));
  std::vector<std::size_t> ti(n), xi(n), yi(n);
  for (std::size_t r = 0; r < n; ++r) {
    ti[r] = batch.positions[r].t;
    xi[r] = batch.positions[r].x;
    yi[r] = batch.positions[r].y;
  }
  auto e = nn::matmul(x, bind(tape, patch_proj_, opts));
  e = nn::add(e, nn::gather_rows(bind(tape, pos_t_, opts), std::span<const std::size_t>(ti)));
  e = nn::add(e, nn::gather_rows(bind(tape, pos_x_, opts), std::span<const std::size_t>(xi)));
  e = nn::add(e, nn::gather_rows(bind(tape, pos_y_, opts), std::span<const std::size_t>(yi)));
  return e;
}

template <typename T>
nn::Var<T> VideoTransformer<T>::embed_tokens(nn::Tape<T>& tape, const TokenSequence& seq,
                                             const ForwardOptions& opts) {
  return embed(tape, pack_sequences(std::span<const TokenSequence>(&seq, 1)), opts);
}

template <typename T>
nn::Var<T> VideoTransformer<T>::forward(nn::Tape<T>& tape, const PackedBatch& batch, const ForwardOptions& opts) {
  const BlockDiagonalMask mask(batch.lengths);
  if (mask.rows() != batch.rows()) throw std::invalid_argument("segment lengths do not cover the packed rows");
  const std::span<const std::size_t> lengths(mask.lengths());
  const T drop = opts.dropout_rng ? static_cast<T>(cfg_.dropout) : T{0};
  auto maybe_drop = [&](const nn::Var<T>& v) { return drop > T{0} ? nn::dropout(v, drop, *opts.dropout_rng) : v; };
  auto linear = [&](const nn::Var<T>& in, nn::Parameter<T>& w, nn::Parameter<T>& b) {
    return nn::add_bias(nn::matmul(in, bind(tape, w, opts)), bind(tape, b, opts));
  };

  auto x = maybe_drop(embed(tape, batch, opts));
  for (auto& b : blocks_) {
    auto h = nn::layernorm(x, bind(tape, b.ln1_g, opts), bind(tape, b.ln1_b, opts));
    auto q = linear(h, b.wq, b.bq);
    auto k = linear(h, b.wk, b.bk);
    auto v = linear(h, b.wv, b.bv);
    auto a = nn::segment_attention(q, k, v, cfg_.n_heads, lengths);
    x = nn::add(x, maybe_drop(linear(a, b.wo, b.bo)));
    h = nn::layernorm(x, bind(tape, b.ln2_g, opts), bind(tape, b.ln2_b, opts));
    auto m = nn::gelu(linear(h, b.w1, b.b1));
    x = nn::add(x, maybe_drop(linear(m, b.w2, b.b2)));
  }
  x = nn::layernorm(x, bind(tape, ln_f_g_, opts), bind(tape, ln_f_b_, opts));
  auto pooled = nn::segment_mean_pool(x, lengths);
  return linear(pooled, head_w_, head_b_);
}

template <typename T>
template <typename U>
VideoTransformer<U> VideoTransformer<T>::cast() const {
  VideoTransformer<U> out(cfg_, 0);
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
  return out;
}

template <typename T>
std::vector<nn::NamedTensor> VideoTransformer<T>::export_tensors() const {
  std::vector<nn::NamedTensor> out;
  for (const auto* p : parameters()) out.push_back({p->name, p->value.template cast<float>()});
  return out;
}

template <typename T>
void VideoTransformer<T>::import_tensors(const nn::CheckpointFile& ckpt) {
  for (auto* p : parameters()) {
    const nn::Tensor* t = ckpt.find_tensor(p->name);
    if (!t) throw std::runtime_error("checkpoint is missing parameter " + p->name);
    if (t->shape() != p->value.shape()) {
      throw std::runtime_error("checkpoint parameter " + p->name + " has shape " + nn::shape_string(t->shape()) +
                               ", model expects " + nn::shape_string(p->value.shape()));
    }
    p->value = t->template cast<T>();
    p->zero_grad();
  }
}

template class VideoTransformer<float>;
template class VideoTransformer<double>;
template VideoTransformer<double> VideoTransformer<float>::cast<double>() const;
template VideoTransformer<float> VideoTransformer<double>::cast<float>() const;
template VideoTransformer<float> VideoTransformer<float>::cast<float>() const;
template VideoTransformer<double> VideoTransformer<double>::cast<double>() const;

}  // namespace lmft
