#pragma once

#include "ssigan/rng.hpp"
#include "ssigan/tensor.hpp"

namespace ssigan::ad {

// Elementwise / structural ------------------------------------------------

// b must have the same shape as a, or a shape that is a trailing suffix of
// a's (bias broadcast).
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
Tensor add_scalar(Tape* tape, const Tensor& a, double c);

Tensor reshape(Tape* tape, const Tensor& a, Shape shape);
Tensor transpose(Tape* tape, const Tensor& a, const std::vector<int>& perm);
Tensor concatenate(Tape* tape, const std::vector<Tensor>& parts, int axis);
Tensor slice(Tape* tape, const Tensor& a, int axis, std::int64_t start,
             std::int64_t len);
Tensor roll(Tape* tape, const Tensor& a, std::int64_t offset, int axis);

// Activations / pointwise math --------------------------------------------

Tensor leaky_relu(Tape* tape, const Tensor& a, double alpha);
Tensor tanh_op(Tape* tape, const Tensor& a);
Tensor sigmoid(Tape* tape, const Tensor& a);
Tensor exp_op(Tape* tape, const Tensor& a);
Tensor log_op(Tape* tape, const Tensor& a);
// Straight-through clamp: gradient passes where lo < v < hi, else 0.
Tensor clamp(Tape* tape, const Tensor& a, double lo, double hi);

// Matrix products ----------------------------------------------------------

// a: [..., m, k] (leading axes collapsed to batch), b: [k, n].
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// a: [N, m, k], b: [N, k, n].
Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b);

// Reductions ---------------------------------------------------------------

Tensor reduce_sum(Tape* tape, const Tensor& a);
Tensor reduce_mean(Tape* tape, const Tensor& a);
// x: [B, T, D] -> [B, D], mean over T.
Tensor global_average_pool(Tape* tape, const Tensor& x);

// Softmax over the last axis.
Tensor softmax(Tape* tape, const Tensor& a);
// Stable log(sum(exp(row))) over the last axis: [..., K] -> [...].
Tensor row_logsumexp(Tape* tape, const Tensor& a);
// Mean over rows of -sum(target * log(prob)); probabilities are clamped to
// [1e-12, 1] inside the log.
Tensor cross_entropy(Tape* tape, const Tensor& probs, const Tensor& targets);
// Fused, numerically stable; gradient w.r.t. logits is (softmax - target)/B.
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             const Tensor& targets);

// Normalization ------------------------------------------------------------

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
};

// Normalizes over all axes except the last (feature) axis. Training mode
// uses batch statistics and updates running stats with the given momentum;
// inference mode uses the running stats.
Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, BatchNormStats& stats, Mode mode,
                  double momentum = 0.99, double eps = 1e-5);

// Regularization -----------------------------------------------------------

// Inverted dropout: training zeroes with probability rate and scales
// survivors by 1/(1-rate); inference is the identity.
Tensor dropout(Tape* tape, const Tensor& x, double rate, Mode mode, Rng& rng);

// Convolution --------------------------------------------------------------

// x: [B, H, W, Cin], kernel: [Cin, K, K, Cout], output [B, sH, sW, Cout]
// ("same"-style transposed convolution; requires K >= s and K - s even).
Tensor conv2d_transpose(Tape* tape, const Tensor& x, const Tensor& kernel,
                        int stride);

// Fused layers -------------------------------------------------------------

enum class Activation { kNone, kLeakyRelu, kTanh };

// y = dropout(act(x w + b)): one tape step holding only x and y; the
// pre-activation is reconstructed from y in backward. x: [..., K], w: [K, N],
// b: [N]. Dropout (rate > 0, training mode) is inverted and only supported
// for kNone/kLeakyRelu.
Tensor dense_layer(Tape* tape, const Tensor& x, const Tensor& w,
                   const Tensor& b, Activation act = Activation::kNone,
                   double alpha = 0.2, double dropout_rate = 0.0,
                   Mode mode = Mode::kInference, Rng* rng = nullptr);

// Complete multi-head windowed self-attention as a single tape step:
// cyclic roll by -shift, Q/K/V projections, per-window scaled dot-product
// softmax attention, head merge, output projection, roll back. Only the
// input and output are stored; projections and attention probabilities are
// recomputed during backward. x: [B, T, E]; wq/wk/wv: [E, H*Dh]; wo: [H*Dh, E].
Tensor multi_head_window_attention(Tape* tape, const Tensor& x,
                                   const Tensor& wq, const Tensor& bq,
                                   const Tensor& wk, const Tensor& bk,
                                   const Tensor& wv, const Tensor& bv,
                                   const Tensor& wo, const Tensor& bo,
                                   int window_size, int shift, int num_heads,
                                   int head_size);

// Attention ----------------------------------------------------------------

// q, k, v: [N, T, d]. Softmax(q kT / sqrt(d)) v per batch entry. Attention
// probabilities are recomputed during backward instead of stored, so memory
// stays O(T^2) regardless of N.
Tensor scaled_dot_attention(Tape* tape, const Tensor& q, const Tensor& k,
                            const Tensor& v);

// Forward-only attention probabilities for inspection/tests: [N, T, T].
Tensor attention_probabilities(const Tensor& q, const Tensor& k);

}  // namespace ssigan::ad
