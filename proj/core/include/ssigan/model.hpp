#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssigan/ops.hpp"
#include "ssigan/rng.hpp"
#include "ssigan/tensor.hpp"

namespace ssigan {

constexpr std::int64_t kSequenceLen = 100;
constexpr std::int64_t kChannelCount = 60;

enum class GeneratorVariant { kTransformer, kConvOnly };
enum class DiscriminatorVariant { kShiftedWindow, kPlainTransformer };

struct ModelConfig {
  int noise_dim = 128;
  int head_size = 64;  // per-head key width
  int num_heads = 4;
  int ff_dim = 128;
  int num_blocks = 2;
  double dropout_rate = 0.29;
  int embed_dim = 64;
  int window_size = 10;
  int shift_size = 5;
  double leaky_slope = 0.2;
  GeneratorVariant generator_variant = GeneratorVariant::kTransformer;
  DiscriminatorVariant discriminator_variant =
      DiscriminatorVariant::kShiftedWindow;

  void validate() const;
  std::string serialize() const;  // key=value lines
  static ModelConfig parse(const std::string& text);
  void save(const std::string& path) const;
  static ModelConfig load(const std::string& path);
};

// Named view over a persistent f64 buffer, for checkpoints.
struct StateEntry {
  std::string name;
  ad::Shape shape;
  std::vector<double>* data;
};

void save_state(const std::vector<StateEntry>& entries,
                const std::string& path);
void load_state(const std::vector<StateEntry>& entries,
                const std::string& path);

// Weights of one multi-head attention layer.
struct AttentionWeights {
  ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Multi-head windowed self-attention with cyclic shift:
// roll(-shift) -> partition into T/window windows -> scaled dot-product
// attention per window -> merge -> roll(+shift).
ad::Tensor window_attention(ad::Tape* tape, const ad::Tensor& x,
                            const AttentionWeights& w, int window_size,
                            int shift, int num_heads, int head_size);

// D(x) = Z / (Z + 1) with Z = sum_k exp(logit_k), evaluated as
// sigmoid(logsumexp) so +-large logits stay stable.
ad::Tensor realfake_probability(ad::Tape* tape, const ad::Tensor& class_logits);

// Pre-norm residual transformer block with windowed attention.
struct SwinBlock {
  AttentionWeights attn;
  ad::Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  ad::Tensor ff_w1, ff_b1, ff_w2, ff_b2;

  ad::Tensor forward(ad::Tape* tape, const ad::Tensor& x,
                     const ModelConfig& config, int window_size, int shift,
                     ad::Mode mode, Rng& dropout_rng) const;
};

class Generator {
 public:
  Generator(const ModelConfig& config, std::uint64_t seed);

  // z: [B, noise_dim] -> [B, 100, 60], values strictly in (-1, 1).
  ad::Tensor forward(ad::Tape* tape, const ad::Tensor& z, ad::Mode mode,
                     Rng& dropout_rng);

  std::vector<ad::Tensor> parameters() const;
  std::vector<StateEntry> state_entries();
  std::int64_t parameter_count() const;
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  ad::Tensor proj_w_, proj_b_;
  std::vector<SwinBlock> blocks_;
  ad::Tensor conv1_kernel_, conv2_kernel_;
  ad::Tensor bn1_gamma_, bn1_beta_, bn2_gamma_, bn2_beta_;
  ad::BatchNormStats bn1_stats_, bn2_stats_;
  ad::Tensor out_w_, out_b_;
};

class Discriminator {
 public:
  Discriminator(const ModelConfig& config, std::uint64_t seed);

  // x: [B, 100, 60] -> class logits [B, 3].
  ad::Tensor forward(ad::Tape* tape, const ad::Tensor& x, ad::Mode mode,
                     Rng& dropout_rng);

  // Argmax class per sample, inference mode.
  std::vector<int> predict(const ad::Tensor& x);

  std::vector<ad::Tensor> parameters() const;
  std::vector<StateEntry> state_entries();
  std::int64_t parameter_count() const;
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  ad::Tensor in_w_, in_b_;
  std::vector<SwinBlock> blocks_;
  ad::Tensor head_w_, head_b_, out_w_, out_b_;
};

}  // namespace ssigan
