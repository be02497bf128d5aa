#include "skillsight/nn.hpp"

#include <cmath>

#include "skillsight/error.hpp"

namespace skillsight::nn {

Var ParamStore::add(const std::string& name, Matrix init) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name " + name);
  Var v(std::move(init), true);
  entries_.emplace_back(name, v);
  return v;
}

std::vector<Var> ParamStore::vars() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& [_, v] : entries_) out.push_back(v);
  return out;
}

const Var* ParamStore::find(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return &v;
  }
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : entries_) {
    Var copy = v;
    copy.zero_grad();
  }
}

Index ParamStore::scalar_count() const {
  Index n = 0;
  for (const auto& [_, v] : entries_) n += v.value().size();
  return n;
}

Matrix xavier_uniform(Index in, Index out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(in, out);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix normal_init(Index rows, Index cols, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(ParamStore& store, const std::string& name, Index in, Index out, Rng& rng)
    : weight_(store.add(name + ".weight", xavier_uniform(in, out, rng))),
      bias_(store.add(name + ".bias", Matrix::Zero(1, out))) {}

Var Linear::operator()(const Var& x) const { return ag::add_row(ag::matmul(x, weight_), bias_); }

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Index width)
    : gamma_(store.add(name + ".gamma", Matrix::Ones(1, width))),
      beta_(store.add(name + ".beta", Matrix::Zero(1, width))) {}

Var LayerNorm::operator()(const Var& x) const { return ag::layer_norm(x, gamma_, beta_); }

Mlp::Mlp(ParamStore& store, const std::string& name, const std::vector<Index>& widths, Rng& rng) {
  if (widths.size() < 2) throw ConfigError("Mlp needs at least two widths", name);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    if (widths[i] <= 0 || widths[i + 1] <= 0) throw ConfigError("Mlp widths must be > 0", name);
    layers_.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1], rng);
  }
}

Var Mlp::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = ag::gelu(h);
  }
  return h;
}

Groups full_group(Index rows) {
  std::vector<Index> g(static_cast<std::size_t>(rows));
  for (Index i = 0; i < rows; ++i) g[static_cast<std::size_t>(i)] = i;
  return {g};
}

AttentionBlock::AttentionBlock(ParamStore& store, const std::string& name,
                               const EncoderConfig& cfg, Rng& rng)
    : heads_(cfg.heads), width_(cfg.width) {
  if (cfg.width <= 0 || cfg.heads <= 0 || cfg.width % cfg.heads != 0) {
    throw ConfigError("width must be a positive multiple of heads", name);
  }
  ln1_ = LayerNorm(store, name + ".ln1", cfg.width);
  qkv_ = Linear(store, name + ".qkv", cfg.width, 3 * cfg.width, rng);
  proj_ = Linear(store, name + ".proj", cfg.width, cfg.width, rng);
  ln2_ = LayerNorm(store, name + ".ln2", cfg.width);
  ffn_ = Mlp(store, name + ".ffn",
             {cfg.width, static_cast<Index>(cfg.mlp_ratio) * cfg.width, cfg.width}, rng);
}

Var AttentionBlock::attend(const Var& x, const Groups& groups, const Var& bias) const {
  Var h = qkv_(ln1_(x));
  Var q = ag::slice_cols(h, 0, width_);
  Var k = ag::slice_cols(h, width_, width_);
  Var v = ag::slice_cols(h, 2 * width_, width_);
  return ag::add(x, proj_(ag::grouped_attention(q, k, v, groups, heads_, bias)));
}

Var AttentionBlock::feed_forward(const Var& x) const { return ag::add(x, ffn_(ln2_(x))); }

SequenceEncoder::SequenceEncoder(ParamStore& store, const std::string& name,
                                 const EncoderConfig& cfg, Index max_tokens, Rng& rng)
    : cfg_(cfg) {
  if (cfg.layers < 0) throw ConfigError("layers must be >= 0", name);
  pos_ = store.add(name + ".pos", normal_init(max_tokens, cfg.width, 0.02, rng));
  for (int i = 0; i < cfg.layers; ++i) {
    blocks_.emplace_back(store, name + ".block" + std::to_string(i), cfg, rng);
  }
  final_ln_ = LayerNorm(store, name + ".ln", cfg.width);
}

Var SequenceEncoder::operator()(const Var& tokens) const {
  if (tokens.rows() > pos_.rows()) {
    throw ShapeError("SequenceEncoder: " + std::to_string(tokens.rows()) +
                     " tokens exceed positional table of " + std::to_string(pos_.rows()));
  }
  if (tokens.cols() != cfg_.width) {
    throw ShapeError("SequenceEncoder: token width " + std::to_string(tokens.cols()) +
                     " != encoder width " + std::to_string(cfg_.width));
  }
  Var x = ag::add(tokens, ag::slice_rows(pos_, 0, tokens.rows()));
  const Groups all = full_group(tokens.rows());
  for (const auto& b : blocks_) x = b(x, all);
  return final_ln_(x);
}

ConvEmbedder::ConvEmbedder(ParamStore& store, const std::string& name,
                           const ConvEmbedderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  if (cfg.input_size < 4 || cfg.channels1 <= 0 || cfg.channels2 <= 0 || cfg.out_width <= 0) {
    throw ConfigError("invalid conv embedder geometry", name);
  }
  g1_ = {3, cfg.input_size, cfg.input_size, 3, 2, 1};
  g2_ = {cfg.channels1, g1_.out_height(), g1_.out_width(), 3, 2, 1};
  w1_ = store.add(name + ".conv1.weight", xavier_uniform(3 * 9, cfg.channels1, rng));
  b1_ = store.add(name + ".conv1.bias", Matrix::Zero(1, cfg.channels1));
  w2_ = store.add(name + ".conv2.weight", xavier_uniform(cfg.channels1 * 9, cfg.channels2, rng));
  b2_ = store.add(name + ".conv2.bias", Matrix::Zero(1, cfg.channels2));
  const Index flat = static_cast<Index>(cfg.channels2) * g2_.out_height() * g2_.out_width();
  head_ = Linear(store, name + ".head", flat, cfg.out_width, rng);
}

Var ConvEmbedder::operator()(const Var& x) const {
  Var h = ag::gelu(ag::conv2d(x, w1_, b1_, g1_));
  h = ag::gelu(ag::conv2d(h, w2_, b2_, g2_));
  return head_(h);
}

}  // namespace skillsight::nn
