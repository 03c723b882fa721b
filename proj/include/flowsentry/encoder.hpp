#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "flowsentry/tensor.hpp"

namespace flowsentry {

enum class MaskMode { Bidirectional, Causal };

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;  // divides d_model
  std::size_t n_layers = 2;
  std::size_t d_ff = 128;
  std::size_t max_length = 32;  // T_max
  MaskMode mask_mode = MaskMode::Bidirectional;
  double dropout_rate = 0.0;  // [0, 1), training only

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws InvalidConfig.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// One pre-norm block: x + Attn(LN1(x)), then y + FFN(LN2(y)).
struct LayerParams {
  Matrix ln1_gain, ln1_bias;            // 1 x d
  Matrix query, key, value, output;     // d x d
  Matrix ln2_gain, ln2_bias;            // 1 x d
  Matrix ff_in, ff_in_bias;             // d x d_ff, 1 x d_ff
  Matrix ff_out, ff_out_bias;           // d_ff x d, 1 x d
};

struct EncoderParams {
  Matrix positional;  // T_max x d
  std::vector<LayerParams> layers;
};

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, LayerParams>
void for_each_tensor(P& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "ln1_gain", p.ln1_gain);
  fn(prefix + "ln1_bias", p.ln1_bias);
  fn(prefix + "query", p.query);
  fn(prefix + "key", p.key);
  fn(prefix + "value", p.value);
  fn(prefix + "output", p.output);
  fn(prefix + "ln2_gain", p.ln2_gain);
  fn(prefix + "ln2_bias", p.ln2_bias);
  fn(prefix + "ff_in", p.ff_in);
  fn(prefix + "ff_in_bias", p.ff_in_bias);
  fn(prefix + "ff_out", p.ff_out);
  fn(prefix + "ff_out_bias", p.ff_out_bias);
}

template <class P, class Fn>
  requires std::same_as<std::remove_const_t<P>, EncoderParams>
void for_each_tensor(P& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "positional", p.positional);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for_each_tensor(p.layers[l], prefix + "layer" + std::to_string(l) + ".", fn);
  }
}

/// Xavier-uniform matrices, zero biases, unit layer-norm gains, N(0, 0.02)
/// positional embeddings.
EncoderParams init_encoder(const EncoderConfig& config, Rng& rng);

/// Same shapes, all zeros (gradient accumulators).
EncoderParams zero_encoder(const EncoderConfig& config);

/// Everything the backward pass needs from one layer's forward pass.
struct LayerTrace {
  Matrix input;
  Matrix ln1_hat;
  Eigen::VectorXd ln1_inv_std;
  Matrix normed1;
  Matrix q, k, v;
  std::vector<Matrix> attention;  // per head, T x T, rows sum to 1 over allowed keys
  Matrix context;
  Matrix attn_dropout;  // empty when dropout is off
  Matrix mid;
  Matrix ln2_hat;
  Eigen::VectorXd ln2_inv_std;
  Matrix normed2;
  Matrix ff_pre;
  Matrix ff_dropout;
};

struct EncoderTrace {
  std::vector<LayerTrace> layers;
  std::vector<std::uint8_t> valid;
  Matrix output;  // T x d, h_1..h_T
};

/// Whether query position i may attend to key position j.
inline bool attention_allowed(MaskMode mode, std::span<const std::uint8_t> valid, std::size_t i,
                              std::size_t j) {
  return valid[j] != 0 && (mode == MaskMode::Bidirectional || j <= i);
}

/// Forward pass keeping intermediates. Dropout is applied only when
/// `dropout_rng` is non-null and the configured rate is positive. Throws
/// SequenceTooLong or DimensionMismatch.
EncoderTrace encode_forward(const EncoderConfig& config, const EncoderParams& params, const Matrix& tokens,
                            std::span<const std::uint8_t> valid, Rng* dropout_rng = nullptr);

/// h_1..h_T for the given token rows (inference; no dropout).
Matrix encode(const EncoderConfig& config, const EncoderParams& params, const Matrix& tokens,
              std::span<const std::uint8_t> valid);

/// Accumulates parameter gradients into `grads` and returns dLoss/dTokens.
Matrix encode_backward(const EncoderConfig& config, const EncoderParams& params, const EncoderTrace& trace,
                       const Matrix& d_output, EncoderParams& grads);

}  // namespace flowsentry
