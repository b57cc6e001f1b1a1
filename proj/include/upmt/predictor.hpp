/// @file
/// @brief Next-token predictor interface, constrained sampling, favorite-aware
/// weights and loss, and the checkpoint container shared by all models.
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "upmt/remi.hpp"
#include "upmt/vocabulary.hpp"

namespace upmt {

/// Seeded generator with a platform-independent double conversion
/// (std::uniform_real_distribution differs between standard libraries).
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

struct ParamArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;

  friend bool operator==(const ParamArray&, const ParamArray&) = default;
};

/// Trained model state plus the favorite weights and loss curve that produced it.
struct PredictorCheckpoint {
  std::string kind;  // "attention" or "ngram"
  std::vector<std::pair<std::string, std::string>> hyperparameters;
  uint64_t vocabulary_hash = Vocabulary::hash();
  uint64_t seed = 0;
  std::vector<ParamArray> arrays;
  std::vector<double> loss_curve;
  std::vector<double> weights;  // empty when trained without favorite weights
  double alpha = 0.0;
  std::vector<EventFamily> selected;

  std::string hyperparameter(const std::string& key) const;
  const ParamArray& array(const std::string& name) const;

  friend bool operator==(const PredictorCheckpoint&, const PredictorCheckpoint&) = default;
};

// ---------------------------------------------------------------------------
// Predictor interface
// ---------------------------------------------------------------------------

/// Incremental inference state: push tokens one at a time and read the
/// next-token distribution after each.
class PredictorSession {
 public:
  virtual ~PredictorSession() = default;
  virtual void push(TokenId token) = 0;
  /// Distribution over all Vocabulary::size() ids for the next token.
  virtual std::vector<double> distribution() = 0;
};

class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual std::string kind() const = 0;
  virtual bool trainable() const = 0;
  virtual std::unique_ptr<PredictorSession> start_session() const = 0;
  virtual PredictorCheckpoint to_checkpoint() const = 0;
  /// Hash of the vocabulary the model was built for.
  virtual uint64_t vocabulary_hash() const { return Vocabulary::hash(); }

  /// Next-token distribution after the given context.
  std::vector<double> predict(std::span<const TokenId> context) const;
};

/// Rebuilds a model from its checkpoint. Throws VocabularyMismatch when the
/// checkpoint was written for a different vocabulary.
std::unique_ptr<Predictor> make_predictor(const PredictorCheckpoint& checkpoint);

/// Below this temperature sampling degenerates to argmax (lowest id on ties).
inline constexpr double kArgmaxTemperature = 1e-6;

/// Renormalizes `probs` over `allowed`, sharpens by 1/temperature and draws
/// one id. Throws AllMasked when every allowed id has zero probability.
TokenId sample_constrained(std::span<const double> probs, std::span<const TokenId> allowed, double temperature,
                           Rng& rng);

TokenId sample_constrained(const Predictor& model, std::span<const TokenId> context,
                           std::span<const TokenId> allowed, double temperature, uint64_t seed);

/// All ids of the given family, in order.
std::vector<TokenId> family_ids(EventFamily family);

// ---------------------------------------------------------------------------
// Favorite-aware weighting
// ---------------------------------------------------------------------------

struct FavoriteWeights {
  std::vector<double> w;  // one weight per token id
  double alpha = 0.01;
  std::vector<EventFamily> selected;
};

inline constexpr double kDefaultAlpha = 0.01;

/// w_c = alpha + Count(c) / (total count of selected-family tokens) for classes
/// of the selected families, alpha for every other class.
FavoriteWeights compute_favorite_weights(const TokenSequence& favorite, std::span<const EventFamily> selected,
                                         double alpha = kDefaultAlpha);

/// Every weight equal to `value`; with 1 the weighted loss is plain cross-entropy.
FavoriteWeights unit_weights(double value = 1.0);

/// -(1/N) * sum_i w[truth_i] * logq[i][truth_i].
double favorite_aware_loss(const std::vector<std::vector<double>>& logq, std::span<const TokenId> truth,
                           std::span<const double> weights);

}  // namespace upmt
