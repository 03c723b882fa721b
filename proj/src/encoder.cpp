#include "flowsentry/encoder.hpp"

#include <cmath>
#include <limits>

#include "flowsentry/error.hpp"

namespace flowsentry {

namespace {

constexpr double kLayerNormEps = 1e-5;

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& hat,
                Eigen::VectorXd& inv_std, Matrix& out) {
  const auto n = static_cast<double>(x.cols());
  hat.resize(x.rows(), x.cols());
  inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    inv_std(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    hat.row(r) = (x.row(r).array() - mean) * inv_std(r);
  }
  out = (hat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

Matrix layer_norm_backward(const Matrix& d_out, const Matrix& hat, const Eigen::VectorXd& inv_std,
                           const Matrix& gain, Matrix& d_gain, Matrix& d_bias) {
  d_gain.row(0) += (d_out.array() * hat.array()).colwise().sum().matrix();
  d_bias.row(0) += d_out.colwise().sum();
  const Matrix d_hat = d_out.array().rowwise() * gain.row(0).array();
  const auto n = static_cast<double>(hat.cols());
  Matrix d_in(hat.rows(), hat.cols());
  for (Eigen::Index r = 0; r < hat.rows(); ++r) {
    const double mean_d = d_hat.row(r).sum() / n;
    const double mean_dh = d_hat.row(r).dot(hat.row(r)) / n;
    d_in.row(r) = inv_std(r) * (d_hat.row(r).array() - mean_d - hat.row(r).array() * mean_dh);
  }
  return d_in;
}

/// Inverted dropout mask: entries are 0 or 1/(1-rate).
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

void accumulate(Matrix& into, const Matrix& value) { into += value; }

}  // namespace

void EncoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw Error(Errc::InvalidConfig, "d_model must be a positive multiple of n_heads");
  }
  if (d_ff == 0 || max_length == 0) throw Error(Errc::InvalidConfig, "d_ff and max_length must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw Error(Errc::InvalidConfig, "dropout_rate outside [0, 1)");
}

EncoderParams init_encoder(const EncoderConfig& c, Rng& rng) {
  c.validate();
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const auto ff = static_cast<Eigen::Index>(c.d_ff);
  EncoderParams p;
  p.positional = gaussian_matrix(static_cast<Eigen::Index>(c.max_length), d, 0.02, rng);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerParams layer;
    layer.ln1_gain = Matrix::Ones(1, d);
    layer.ln1_bias = Matrix::Zero(1, d);
    layer.query = xavier_uniform(d, d, rng);
    layer.key = xavier_uniform(d, d, rng);
    layer.value = xavier_uniform(d, d, rng);
    layer.output = xavier_uniform(d, d, rng);
    layer.ln2_gain = Matrix::Ones(1, d);
    layer.ln2_bias = Matrix::Zero(1, d);
    layer.ff_in = xavier_uniform(d, ff, rng);
    layer.ff_in_bias = Matrix::Zero(1, ff);
    layer.ff_out = xavier_uniform(ff, d, rng);
    layer.ff_out_bias = Matrix::Zero(1, d);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

EncoderParams zero_encoder(const EncoderConfig& c) {
  Rng unused(0);
  EncoderParams p = init_encoder(c, unused);
  for_each_tensor(p, "", [](const std::string&, Matrix& m) { m.setZero(); });
  return p;
}

EncoderTrace encode_forward(const EncoderConfig& c, const EncoderParams& params, const Matrix& tokens,
                            std::span<const std::uint8_t> valid, Rng* dropout_rng) {
  const auto T = tokens.rows();
  const auto d = static_cast<Eigen::Index>(c.d_model);
  if (static_cast<std::size_t>(T) > c.max_length) {
    throw Error(Errc::SequenceTooLong,
                "sequence of " + std::to_string(T) + " exceeds max_length " + std::to_string(c.max_length));
  }
  if (tokens.cols() != d || static_cast<Eigen::Index>(valid.size()) != T) {
    throw Error(Errc::DimensionMismatch, "token matrix does not match d_model or mask length");
  }
  const bool dropout = dropout_rng != nullptr && c.dropout_rate > 0.0;
  const auto dh = static_cast<Eigen::Index>(c.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  EncoderTrace trace;
  trace.valid.assign(valid.begin(), valid.end());
  Matrix x = tokens + params.positional.topRows(T);

  for (const LayerParams& p : params.layers) {
    LayerTrace lt;
    lt.input = x;
    layer_norm(x, p.ln1_gain, p.ln1_bias, lt.ln1_hat, lt.ln1_inv_std, lt.normed1);
    lt.q = lt.normed1 * p.query;
    lt.k = lt.normed1 * p.key;
    lt.v = lt.normed1 * p.value;
    lt.context = Matrix::Zero(T, d);

    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h) * dh;
      const Matrix scores = (lt.q.middleCols(col, dh) * lt.k.middleCols(col, dh).transpose()) * scale;
      Matrix probs = Matrix::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double max_score = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < T; ++j) {
          if (attention_allowed(c.mask_mode, valid, i, j)) max_score = std::max(max_score, scores(i, j));
        }
        if (!std::isfinite(max_score)) continue;  // no admissible key: zero output
        double sum = 0.0;
        for (Eigen::Index j = 0; j < T; ++j) {
          if (attention_allowed(c.mask_mode, valid, i, j)) {
            probs(i, j) = std::exp(scores(i, j) - max_score);
            sum += probs(i, j);
          }
        }
        probs.row(i) /= sum;
      }
      lt.context.middleCols(col, dh) = probs * lt.v.middleCols(col, dh);
      lt.attention.push_back(std::move(probs));
    }

    Matrix attn_out = lt.context * p.output;
    if (dropout) {
      lt.attn_dropout = dropout_mask(T, d, c.dropout_rate, *dropout_rng);
      attn_out.array() *= lt.attn_dropout.array();
    }
    lt.mid = x + attn_out;

    layer_norm(lt.mid, p.ln2_gain, p.ln2_bias, lt.ln2_hat, lt.ln2_inv_std, lt.normed2);
    lt.ff_pre = (lt.normed2 * p.ff_in).rowwise() + p.ff_in_bias.row(0);
    Matrix ff_out = (lt.ff_pre.cwiseMax(0.0) * p.ff_out).rowwise() + p.ff_out_bias.row(0);
    if (dropout) {
      lt.ff_dropout = dropout_mask(T, d, c.dropout_rate, *dropout_rng);
      ff_out.array() *= lt.ff_dropout.array();
    }
    x = lt.mid + ff_out;
    trace.layers.push_back(std::move(lt));
  }
  trace.output = std::move(x);
  return trace;
}

Matrix encode(const EncoderConfig& c, const EncoderParams& params, const Matrix& tokens,
              std::span<const std::uint8_t> valid) {
  return encode_forward(c, params, tokens, valid).output;
}

Matrix encode_backward(const EncoderConfig& c, const EncoderParams& params, const EncoderTrace& trace,
                       const Matrix& d_output, EncoderParams& grads) {
  const auto dh = static_cast<Eigen::Index>(c.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dx = d_output;

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerParams& p = params.layers[l];
    const LayerTrace& lt = trace.layers[l];
    LayerParams& g = grads.layers[l];

    // Feed-forward branch.
    Matrix d_ff = dx;
    if (lt.ff_dropout.size() != 0) d_ff.array() *= lt.ff_dropout.array();
    const Matrix relu = lt.ff_pre.cwiseMax(0.0);
    accumulate(g.ff_out, relu.transpose() * d_ff);
    g.ff_out_bias.row(0) += d_ff.colwise().sum();
    Matrix d_pre = (d_ff * p.ff_out.transpose()).array() * (lt.ff_pre.array() > 0.0).cast<double>();
    accumulate(g.ff_in, lt.normed2.transpose() * d_pre);
    g.ff_in_bias.row(0) += d_pre.colwise().sum();
    const Matrix d_normed2 = d_pre * p.ff_in.transpose();
    Matrix d_mid = dx + layer_norm_backward(d_normed2, lt.ln2_hat, lt.ln2_inv_std, p.ln2_gain, g.ln2_gain,
                                            g.ln2_bias);

    // Attention branch.
    Matrix d_attn = d_mid;
    if (lt.attn_dropout.size() != 0) d_attn.array() *= lt.attn_dropout.array();
    accumulate(g.output, lt.context.transpose() * d_attn);
    const Matrix d_context = d_attn * p.output.transpose();

    Matrix dq = Matrix::Zero(lt.q.rows(), lt.q.cols());
    Matrix dk = Matrix::Zero(lt.k.rows(), lt.k.cols());
    Matrix dv = Matrix::Zero(lt.v.rows(), lt.v.cols());
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto col = static_cast<Eigen::Index>(h) * dh;
      const Matrix& probs = lt.attention[h];
      const Matrix d_ctx_h = d_context.middleCols(col, dh);
      const Matrix d_probs = d_ctx_h * lt.v.middleCols(col, dh).transpose();
      dv.middleCols(col, dh) = probs.transpose() * d_ctx_h;
      const Eigen::VectorXd row_dot = (d_probs.array() * probs.array()).rowwise().sum();
      const Matrix d_scores = probs.array() * (d_probs.array().colwise() - row_dot.array());
      dq.middleCols(col, dh) = d_scores * lt.k.middleCols(col, dh) * scale;
      dk.middleCols(col, dh) = d_scores.transpose() * lt.q.middleCols(col, dh) * scale;
    }
    accumulate(g.query, lt.normed1.transpose() * dq);
    accumulate(g.key, lt.normed1.transpose() * dk);
    accumulate(g.value, lt.normed1.transpose() * dv);
    const Matrix d_normed1 = dq * p.query.transpose() + dk * p.key.transpose() + dv * p.value.transpose();
    dx = d_mid + layer_norm_backward(d_normed1, lt.ln1_hat, lt.ln1_inv_std, p.ln1_gain, g.ln1_gain,
                                     g.ln1_bias);
  }

  grads.positional.topRows(dx.rows()) += dx;
  return dx;
}

}  // namespace flowsentry
