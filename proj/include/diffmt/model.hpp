#pragma once

// Conditional denoising network: a pre-LN encoder/decoder transformer that
// reads the source sentence and a noisy target sequence y_t at step t and
// predicts, for every target position, a distribution over the clean token.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "diffmt/common.hpp"
#include "diffmt/schedule.hpp"

namespace diffmt {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major (positions x K) probability table.
using ProbTable = Matrix<double>;

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int vocab_size = 64;
  int seq_len = 32;
  int steps = 100;

  /// Throws InvalidArgument on non-positive sizes, odd d_model or
  /// d_model % n_heads != 0.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <class S>
struct AttentionParams {
  Matrix<S> wq, wk, wv, wo;
  Matrix<S> bq, bk, bv, bo;
};

template <class S>
struct FeedForwardParams {
  Matrix<S> w1, b1, w2, b2;
};

template <class S>
struct EncoderLayerParams {
  Matrix<S> ln1_g, ln1_b;
  AttentionParams<S> self_attn;
  Matrix<S> ln2_g, ln2_b;
  FeedForwardParams<S> ffn;
};

template <class S>
struct DecoderLayerParams {
  Matrix<S> ln1_g, ln1_b;
  AttentionParams<S> self_attn;
  Matrix<S> ln2_g, ln2_b;
  AttentionParams<S> cross_attn;
  Matrix<S> ln3_g, ln3_b;
  FeedForwardParams<S> ffn;
};

/// Every trainable tensor of the network. Biases and gains are 1 x n rows.
template <class S>
struct DenoiserParams {
  Matrix<S> token_embedding;  // K x d, shared by encoder and decoder inputs
  Matrix<S> time_w, time_b;   // projection of the sinusoidal step embedding
  std::vector<EncoderLayerParams<S>> encoder;
  Matrix<S> enc_ln_g, enc_ln_b;
  std::vector<DecoderLayerParams<S>> decoder;
  Matrix<S> dec_ln_g, dec_ln_b;
  Matrix<S> out_w, out_b;  // d x K head

  /// All tensors zero-filled with the right shapes.
  static DenoiserParams zeros(const ModelConfig& cfg);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
  /// gains; the output head is scaled by 0.1.
  static DenoiserParams init(const ModelConfig& cfg, std::uint64_t seed);

  /// Stable (name, tensor) enumeration; the order defines the checkpoint
  /// layout and the optimizer's state layout.
  std::vector<std::pair<std::string, Matrix<S>*>> named_tensors();
  std::vector<std::pair<std::string, const Matrix<S>*>> named_tensors() const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  template <class T>
  DenoiserParams<T> cast() const;
};

/// One batch of denoiser inputs; sequences are concatenated row-major.
struct DenoiserInput {
  int batch = 0;
  std::vector<Token> noisy;   // batch * L, y_t
  std::vector<Token> source;  // batch * L, encoder input with language tags
  std::vector<int> steps;     // batch, each in [1, T]
  /// batch * L; 1 marks source positions that may be attended to. When
  /// empty it is derived as source != [PAD].
  std::vector<std::uint8_t> source_mask;
};

/// Fixed sinusoidal embedding: [sin(p w_0), cos(p w_0), sin(p w_1), ...] with
/// w_i = 10000^(-2i/dim).
std::vector<double> sinusoidal_embedding(double position, int dim);

/// phi(t) = sinusoidal(t) W + b; added to the input of every encoder and
/// decoder layer.
template <class S>
std::vector<S> time_encoding(int t, const DenoiserParams<S>& params, const ModelConfig& cfg);

/// Raw logits, (batch * L) x K.
template <class S>
Matrix<S> forward_logits(const DenoiserParams<S>& params, const ModelConfig& cfg, const DenoiserInput& input);

/// Predicted x0 distributions, (batch * L) x K; each row sums to 1.
template <class S>
ProbTable forward(const DenoiserParams<S>& params, const ModelConfig& cfg, const DenoiserInput& input);

template <class S>
struct LossAndGradients {
  double loss = 0;                    // batch mean of the sequence loss
  std::vector<double> example_loss;   // per example, summed over positions
  DenoiserParams<S> grad;
};

/// Loss of the sampled variational-bound term for every example in `input`
/// (clean targets in `clean`), averaged over the batch, and its gradient with
/// respect to every parameter.
template <class S>
LossAndGradients<S> loss_and_gradients(const DenoiserParams<S>& params, const ModelConfig& cfg,
                                       const NoiseSchedule& sched, const DenoiserInput& input,
                                       const std::vector<Token>& clean);

/// Loss only (no backward pass).
template <class S>
double batch_loss(const DenoiserParams<S>& params, const ModelConfig& cfg, const NoiseSchedule& sched,
                  const DenoiserInput& input, const std::vector<Token>& clean);

/// Anything that maps (y_t, x, t) to per-position x0 distributions.
class X0Predictor {
 public:
  virtual ~X0Predictor() = default;
  virtual int vocab_size() const = 0;
  virtual int seq_len() const = 0;
  virtual ProbTable predict(const DenoiserInput& input) const = 0;
};

class TransformerDenoiser final : public X0Predictor {
 public:
  TransformerDenoiser(ModelConfig cfg, DenoiserParams<float> params);

  int vocab_size() const override { return cfg_.vocab_size; }
  int seq_len() const override { return cfg_.seq_len; }
  ProbTable predict(const DenoiserInput& input) const override;

  const ModelConfig& config() const { return cfg_; }
  const DenoiserParams<float>& params() const { return params_; }

 private:
  ModelConfig cfg_;
  DenoiserParams<float> params_;
};

}  // namespace diffmt
