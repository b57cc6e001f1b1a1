#include "upmt/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "upmt/attention_model.hpp"
#include "upmt/error.hpp"
#include "upmt/ngram_model.hpp"

namespace upmt {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string PredictorCheckpoint::hyperparameter(const std::string& key) const {
  for (const auto& [k, v] : hyperparameters) {
    if (k == key) return v;
  }
  throw Error(ErrorCode::ParseError, "checkpoint missing hyperparameter '" + key + "'");
}

const ParamArray& PredictorCheckpoint::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw Error(ErrorCode::ParseError, "checkpoint missing array '" + name + "'");
}

std::vector<double> Predictor::predict(std::span<const TokenId> context) const {
  auto session = start_session();
  for (TokenId t : context) session->push(t);
  return session->distribution();
}

std::unique_ptr<Predictor> make_predictor(const PredictorCheckpoint& checkpoint) {
  if (checkpoint.vocabulary_hash != Vocabulary::hash()) {
    throw Error(ErrorCode::VocabularyMismatch, "checkpoint vocabulary hash differs from the codec in use");
  }
  if (checkpoint.kind == "attention") return std::make_unique<AttentionModel>(AttentionModel::from_checkpoint(checkpoint));
  if (checkpoint.kind == "ngram") return std::make_unique<NGramModel>(NGramModel::from_checkpoint(checkpoint));
  throw Error(ErrorCode::ParseError, "unknown model kind '" + checkpoint.kind + "'");
}

TokenId sample_constrained(std::span<const double> probs, std::span<const TokenId> allowed, double temperature,
                           Rng& rng) {
  if (allowed.empty()) throw Error(ErrorCode::InvalidArgument, "empty allowed set");
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");

  std::vector<double> logp(allowed.size(), -std::numeric_limits<double>::infinity());
  double max_logp = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < allowed.size(); ++i) {
    const TokenId id = allowed[i];
    if (id < 0 || static_cast<std::size_t>(id) >= probs.size()) {
      throw Error(ErrorCode::OutOfVocabulary, "allowed id " + std::to_string(id));
    }
    if (probs[static_cast<std::size_t>(id)] > 0.0) {
      logp[i] = std::log(probs[static_cast<std::size_t>(id)]);
      max_logp = std::max(max_logp, logp[i]);
    }
  }
  if (max_logp == -std::numeric_limits<double>::infinity()) {
    throw Error(ErrorCode::AllMasked, "no allowed token has probability mass");
  }

  if (temperature < kArgmaxTemperature) {
    std::size_t best = allowed.size();
    for (std::size_t i = 0; i < allowed.size(); ++i) {
      if (logp[i] == max_logp && (best == allowed.size() || allowed[i] < allowed[best])) best = i;
    }
    return allowed[best];
  }

  std::vector<double> mass(allowed.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < allowed.size(); ++i) {
    if (std::isfinite(logp[i])) mass[i] = std::exp((logp[i] - max_logp) / temperature);
    total += mass[i];
  }
  const double target = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < allowed.size(); ++i) {
    if (mass[i] <= 0.0) continue;
    last_positive = i;
    acc += mass[i];
    if (target < acc) return allowed[i];
  }
  return allowed[last_positive];
}

TokenId sample_constrained(const Predictor& model, std::span<const TokenId> context,
                           std::span<const TokenId> allowed, double temperature, uint64_t seed) {
  Rng rng(seed);
  const auto probs = model.predict(context);
  return sample_constrained(probs, allowed, temperature, rng);
}

std::vector<TokenId> family_ids(EventFamily family) {
  const IdRange r = Vocabulary::classes_of(family);
  std::vector<TokenId> ids(static_cast<std::size_t>(r.size));
  for (int i = 0; i < r.size; ++i) ids[static_cast<std::size_t>(i)] = r.first + i;
  return ids;
}

FavoriteWeights compute_favorite_weights(const TokenSequence& favorite, std::span<const EventFamily> selected,
                                         double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(ErrorCode::InvalidArgument, "alpha must be > 0");
  if (favorite.empty()) throw Error(ErrorCode::InvalidArgument, "favorite sequence is empty");

  FavoriteWeights fw;
  fw.alpha = alpha;
  fw.selected.assign(selected.begin(), selected.end());
  std::vector<double> counts(Vocabulary::size(), 0.0);
  double total = 0.0;
  for (TokenId id : favorite.tokens) {
    const EventFamily f = Vocabulary::family_of(id);
    if (std::find(selected.begin(), selected.end(), f) != selected.end()) {
      counts[static_cast<std::size_t>(id)] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw Error(ErrorCode::NoSelectedEvents, "favorite has no tokens of the selected families");
  fw.w.assign(Vocabulary::size(), alpha);
  for (EventFamily f : fw.selected) {
    const IdRange r = Vocabulary::classes_of(f);
    for (TokenId id = r.first; id <= r.last(); ++id) {
      fw.w[static_cast<std::size_t>(id)] = alpha + counts[static_cast<std::size_t>(id)] / total;
    }
  }
  return fw;
}

FavoriteWeights unit_weights(double value) {
  FavoriteWeights fw;
  fw.w.assign(Vocabulary::size(), value);
  fw.alpha = value;
  return fw;
}

double favorite_aware_loss(const std::vector<std::vector<double>>& logq, std::span<const TokenId> truth,
                           std::span<const double> weights) {
  if (logq.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(logq.size()) + " rows vs " + std::to_string(truth.size()) + " targets");
  }
  if (truth.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto c = static_cast<std::size_t>(truth[i]);
    if (c >= logq[i].size() || c >= weights.size()) {
      throw Error(ErrorCode::LengthMismatch, "target class outside row at position " + std::to_string(i));
    }
    sum += weights[c] * logq[i][c];
  }
  return -sum / static_cast<double>(truth.size());
}

}  // namespace upmt
