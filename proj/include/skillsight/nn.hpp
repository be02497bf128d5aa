#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "skillsight/autograd.hpp"

namespace skillsight::nn {

using ag::Index;
using ag::Matrix;
using ag::Var;

using Rng = std::mt19937_64;

// Ordered, named collection of trainable tensors. Modules register their
// parameters here at construction; optimizers and checkpoints walk it.
class ParamStore {
 public:
  Var add(const std::string& name, Matrix init);
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<Var> vars() const;
  const Var* find(const std::string& name) const;
  void zero_grad();
  Index scalar_count() const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

Matrix xavier_uniform(Index in, Index out, Rng& rng);
Matrix normal_init(Index rows, Index cols, double std, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Index in, Index out, Rng& rng);
  Var operator()(const Var& x) const;
  Index in_features() const { return weight_.rows(); }
  Index out_features() const { return weight_.cols(); }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_;
  Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Index width);
  Var operator()(const Var& x) const;

 private:
  Var gamma_;
  Var beta_;
};

// Linear layers with GELU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, const std::vector<Index>& widths, Rng& rng);
  Var operator()(const Var& x) const;
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
};

using Groups = std::vector<std::vector<Index>>;

// Every row attends to every other row.
Groups full_group(Index rows);

struct EncoderConfig {
  int layers = 4;
  int heads = 4;
  int width = 64;
  int mlp_ratio = 4;
};

// Pre-norm multi-head self-attention block.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParamStore& store, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  // Attention half only (x + proj(attn(ln(x)))). `bias` follows
  // ag::grouped_attention.
  Var attend(const Var& x, const Groups& groups, const Var& bias = Var()) const;
  // Feed-forward half (x + mlp(ln(x))).
  Var feed_forward(const Var& x) const;
  Var operator()(const Var& x, const Groups& groups) const {
    return feed_forward(attend(x, groups));
  }

 private:
  int heads_ = 1;
  Index width_ = 0;
  LayerNorm ln1_, ln2_;
  Linear qkv_, proj_;
  Mlp ffn_;
};

// Token-sequence transformer: learned positional embedding, a stack of
// AttentionBlocks and a final LayerNorm. Callers place any special tokens
// (class, distillation, ...) in the first rows themselves.
class SequenceEncoder {
 public:
  SequenceEncoder() = default;
  SequenceEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg,
                  Index max_tokens, Rng& rng);
  Var operator()(const Var& tokens) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Var pos_;
  std::vector<AttentionBlock> blocks_;
  LayerNorm final_ln_;
};

// Small convolutional image embedder: two stride-2 3x3 convolutions with GELU
// followed by a linear projection of the flattened feature map.
struct ConvEmbedderConfig {
  int input_size = 16;  // square input, pixels
  int channels1 = 16;
  int channels2 = 32;
  int out_width = 64;
};

class ConvEmbedder {
 public:
  ConvEmbedder() = default;
  ConvEmbedder(ParamStore& store, const std::string& name, const ConvEmbedderConfig& cfg,
               Rng& rng);
  // x: one image per row, CHW with 3 channels, values in [0,1].
  Var operator()(const Var& x) const;
  const ConvEmbedderConfig& config() const { return cfg_; }

 private:
  ConvEmbedderConfig cfg_;
  ag::ConvGeometry g1_, g2_;
  Var w1_, b1_, w2_, b2_;
  Linear head_;
};

}  // namespace skillsight::nn
