/// @file
/// @brief Small decoder-only transformer with segment-level recurrence memory,
/// trained by plain SGD with hand-written backpropagation.
///
/// Each layer is pre-norm: x + Attn(LN(x)) followed by h + FFN(LN(h)), with a
/// tanh-approximated GELU in the feed-forward block. Attention sees the cached
/// inputs of the previous window(s) (up to `memory` rows, no gradient) plus the
/// causal prefix of the current window. Positions enter only through a learned
/// per-head bias indexed by query-key distance, so cached states need no
/// re-encoding when the window advances.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "upmt/predictor.hpp"

namespace upmt {

struct AttentionConfig {
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int window = 128;
  int memory = 128;
  uint64_t seed = 1;
};

class AttentionModel final : public Predictor {
 public:
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  /// Cached layer inputs from earlier windows: one (rows x d_model) matrix per layer.
  using Memory = std::vector<Matrix>;

  struct Tensor {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;
  };

  /// Random initialization from config.seed. Parameters are rounded to float
  /// precision so that a checkpoint round trip is exact.
  explicit AttentionModel(AttentionConfig config = {});

  std::string kind() const override { return "attention"; }
  bool trainable() const override { return true; }
  std::unique_ptr<PredictorSession> start_session() const override;
  PredictorCheckpoint to_checkpoint() const override;
  static AttentionModel from_checkpoint(const PredictorCheckpoint& checkpoint);

  const AttentionConfig& config() const { return config_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  Memory empty_memory() const;

  /// One forward (and optionally backward) pass over a window of at most
  /// `window` tokens. targets[i] is the id to be predicted from position i, or
  /// -1 for none. Returns sum_i -weights[targets[i]] * log q_i(targets[i]) / norm.
  /// When `grad` is given the parameter gradient of that value is added to it.
  /// When `next_memory` is given it receives the memory for the following window.
  double window_pass(std::span<const TokenId> tokens, std::span<const TokenId> targets, const Memory& memory,
                     std::span<const double> weights, double norm, std::vector<double>* grad,
                     Memory* next_memory = nullptr, Matrix* log_probs = nullptr) const;

 private:
  struct LayerSlots {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, bo, rel, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  friend class AttentionSession;

  std::size_t add_tensor(const std::string& name, int rows, int cols);
  int ffn_width() const { return 4 * config_.d_model; }
  int rel_span() const { return config_.window + config_.memory; }

  AttentionConfig config_;
  std::vector<Tensor> tensors_;
  std::vector<double> params_;
  std::size_t embedding_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_out_ = 0, b_out_ = 0;
  std::vector<LayerSlots> layers_;
};

struct FinetuneOptions {
  int epochs = 200;
  double stop_loss = 0.1;
  double learning_rate = 0.5;
  double clip_norm = 1.0;
};

/// Gradient descent on the mean favorite-aware loss over equal-length
/// segments, visited in order with recurrence memory carried between them.
/// Position i of a segment predicts the next token of the stream, so the last
/// position of a segment predicts the first token of the following segment.
/// Stops after `epochs` epochs or once the epoch-mean loss drops below
/// `stop_loss`. Throws NonFiniteLoss on divergence.
PredictorCheckpoint finetune(const Predictor& model, const std::vector<TokenSequence>& segments,
                             const FavoriteWeights& weights, const FinetuneOptions& options, uint64_t seed);

struct PretrainOptions {
  int segment_length = 64;
  int epochs = 30;
  double learning_rate = 0.3;
  double clip_norm = 1.0;
};

/// Trains a fresh model with plain cross-entropy on the bundled corpus of
/// public-domain melodies.
PredictorCheckpoint pretrain(const AttentionConfig& config, const PretrainOptions& options);

}  // namespace upmt
