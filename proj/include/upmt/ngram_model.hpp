/// @file
/// @brief Count-based n-gram predictor with longest-suffix backoff.
#pragma once

#include <map>
#include <span>
#include <vector>

#include "upmt/predictor.hpp"

namespace upmt {

struct NGramConfig {
  int order = 5;         // 2..5
  double delta = 0.01;   // additive smoothing; 0 disables it
};

/// Distribution after a context comes from the longest context suffix (at most
/// order-1 tokens) that occurred in training, smoothed by delta. Untrained
/// models and unseen histories fall back to the unigram table, then uniform.
class NGramModel final : public Predictor {
 public:
  explicit NGramModel(NGramConfig config = {});

  /// Adds counts from one sequence. With weights, each observed target c adds
  /// w[c] instead of 1 (the n-gram analogue of the favorite-aware loss), after
  /// rescaling w so that its mean over the sequence's tokens is 1.
  void fit(const TokenSequence& seq, std::span<const double> weights = {});

  std::string kind() const override { return "ngram"; }
  bool trainable() const override { return false; }
  std::unique_ptr<PredictorSession> start_session() const override;
  PredictorCheckpoint to_checkpoint() const override;
  static NGramModel from_checkpoint(const PredictorCheckpoint& checkpoint);

  const NGramConfig& config() const { return config_; }
  /// Smoothed distribution for an explicit history (only the last order-1 tokens matter).
  std::vector<double> distribution_after(std::span<const TokenId> history) const;

 private:
  struct Row {
    std::map<TokenId, double> counts;
    double total = 0.0;
  };

  NGramConfig config_;
  std::map<std::vector<TokenId>, Row> table_;
};

}  // namespace upmt
