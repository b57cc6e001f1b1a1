#include "upmt/ngram_model.hpp"

#include <algorithm>
#include <string>

#include "upmt/error.hpp"
#include "upmt/text.hpp"

namespace upmt {

namespace {

class NGramSession final : public PredictorSession {
 public:
  explicit NGramSession(const NGramModel& model) : model_(model) {}

  void push(TokenId token) override {
    history_.push_back(token);
    const auto keep = static_cast<std::size_t>(model_.config().order - 1);
    if (history_.size() > keep) history_.erase(history_.begin(), history_.end() - static_cast<std::ptrdiff_t>(keep));
  }

  std::vector<double> distribution() override { return model_.distribution_after(history_); }

 private:
  const NGramModel& model_;
  std::vector<TokenId> history_;
};

}  // namespace

NGramModel::NGramModel(NGramConfig config) : config_(config) {
  if (config_.order < 2 || config_.order > 5) {
    throw Error(ErrorCode::InvalidArgument, "n-gram order must be in 2..5");
  }
  if (!(config_.delta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing constant must be >= 0");
}

void NGramModel::fit(const TokenSequence& seq, std::span<const double> weights) {
  if (!weights.empty() && weights.size() != static_cast<std::size_t>(Vocabulary::size())) {
    throw Error(ErrorCode::LengthMismatch, "weight vector must have one entry per token id");
  }
  const auto& t = seq.tokens;
  for (TokenId id : t) {
    if (id < 0 || id >= Vocabulary::size()) throw Error(ErrorCode::OutOfVocabulary, std::to_string(id));
  }
  // Weights are rescaled to mean 1 over the sequence, so that delta keeps the
  // meaning of a pseudo-count against observation counts.
  double scale = 1.0;
  if (!weights.empty()) {
    double sum = 0.0;
    for (TokenId id : t) sum += weights[static_cast<std::size_t>(id)];
    if (sum > 0.0) scale = static_cast<double>(t.size()) / sum;
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double w = weights.empty() ? 1.0 : scale * weights[static_cast<std::size_t>(t[i])];
    const std::size_t max_k = std::min<std::size_t>(i, static_cast<std::size_t>(config_.order - 1));
    for (std::size_t k = 0; k <= max_k; ++k) {
      std::vector<TokenId> ctx(t.begin() + static_cast<std::ptrdiff_t>(i - k), t.begin() + static_cast<std::ptrdiff_t>(i));
      Row& row = table_[ctx];
      // Counts live at float precision so a reloaded checkpoint predicts identically.
      double& c = row.counts[t[i]];
      c = static_cast<float>(c + w);
    }
  }
  for (auto& [ctx, row] : table_) {
    row.total = 0.0;
    for (const auto& [id, c] : row.counts) row.total += c;
  }
}

std::vector<double> NGramModel::distribution_after(std::span<const TokenId> history) const {
  const auto C = static_cast<std::size_t>(Vocabulary::size());
  const std::size_t max_k = std::min<std::size_t>(history.size(), static_cast<std::size_t>(config_.order - 1));
  for (std::size_t k = max_k + 1; k-- > 0;) {
    const std::vector<TokenId> ctx(history.end() - static_cast<std::ptrdiff_t>(k), history.end());
    const auto it = table_.find(ctx);
    if (it == table_.end() || it->second.total <= 0.0) continue;
    const Row& row = it->second;
    const double denom = row.total + config_.delta * static_cast<double>(C);
    std::vector<double> p(C, config_.delta / denom);
    for (const auto& [id, c] : row.counts) p[static_cast<std::size_t>(id)] = (c + config_.delta) / denom;
    return p;
  }
  return std::vector<double>(C, 1.0 / static_cast<double>(C));
}

std::unique_ptr<PredictorSession> NGramModel::start_session() const {
  return std::make_unique<NGramSession>(*this);
}

PredictorCheckpoint NGramModel::to_checkpoint() const {
  PredictorCheckpoint cp;
  cp.kind = "ngram";
  cp.hyperparameters = {{"order", std::to_string(config_.order)}, {"delta", format_double(config_.delta)}};
  const int width = config_.order + 2;  // context length, padded context, next id, count
  ParamArray table{"table", {0, width}, {}};
  for (const auto& [ctx, row] : table_) {
    for (const auto& [id, c] : row.counts) {
      table.values.push_back(static_cast<float>(ctx.size()));
      for (int j = 0; j < config_.order - 1; ++j) {
        table.values.push_back(static_cast<std::size_t>(j) < ctx.size() ? static_cast<float>(ctx[static_cast<std::size_t>(j)]) : -1.0f);
      }
      table.values.push_back(static_cast<float>(id));
      table.values.push_back(static_cast<float>(c));
      ++table.shape[0];
    }
  }
  cp.arrays.push_back(std::move(table));
  return cp;
}

NGramModel NGramModel::from_checkpoint(const PredictorCheckpoint& checkpoint) {
  if (checkpoint.kind != "ngram") throw Error(ErrorCode::ParseError, "not an n-gram checkpoint");
  NGramConfig config;
  config.order = static_cast<int>(parse_int(checkpoint.hyperparameter("order")));
  config.delta = parse_double(checkpoint.hyperparameter("delta"));
  NGramModel model(config);
  const ParamArray& table = checkpoint.array("table");
  const int width = config.order + 2;
  if (table.shape.size() != 2 || table.shape[1] != width ||
      table.values.size() != static_cast<std::size_t>(table.shape[0]) * static_cast<std::size_t>(width)) {
    throw Error(ErrorCode::ParseError, "n-gram table has the wrong shape");
  }
  for (int r = 0; r < table.shape[0]; ++r) {
    const float* row = table.values.data() + static_cast<std::ptrdiff_t>(r) * width;
    const auto k = static_cast<std::size_t>(row[0]);
    if (k >= static_cast<std::size_t>(config.order)) throw Error(ErrorCode::ParseError, "n-gram context too long");
    std::vector<TokenId> ctx;
    for (std::size_t j = 0; j < k; ++j) ctx.push_back(static_cast<TokenId>(row[1 + j]));
    const auto id = static_cast<TokenId>(row[width - 2]);
    if (id < 0 || id >= Vocabulary::size()) throw Error(ErrorCode::OutOfVocabulary, std::to_string(id));
    model.table_[ctx].counts[id] = row[width - 1];
  }
  for (auto& [ctx, row] : model.table_) {
    for (const auto& [id, c] : row.counts) row.total += c;
  }
  return model;
}

}  // namespace upmt
