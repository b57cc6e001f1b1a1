#include "upmt/predictor.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "support/synth.hpp"
#include "upmt/attention_model.hpp"
#include "upmt/error.hpp"
#include "upmt/ngram_model.hpp"

namespace upmt {
namespace {

TokenId note_on(int pitch) { return Vocabulary::id_of(EventFamily::NoteOn, pitch); }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::IoError;
}

class UniformModel final : public Predictor {
 public:
  std::string kind() const override { return "uniform"; }
  bool trainable() const override { return false; }
  std::unique_ptr<PredictorSession> start_session() const override {
    struct S final : PredictorSession {
      void push(TokenId) override {}
      std::vector<double> distribution() override {
        return std::vector<double>(Vocabulary::size(), 1.0 / Vocabulary::size());
      }
    };
    return std::make_unique<S>();
  }
  PredictorCheckpoint to_checkpoint() const override { return {}; }
};

AttentionConfig tiny_config(uint64_t seed = 7) {
  AttentionConfig c;
  c.d_model = 8;
  c.layers = 2;
  c.heads = 2;
  c.window = 6;
  c.memory = 4;
  c.seed = seed;
  return c;
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<TokenId> pick(0, Vocabulary::size() - 1);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = pick(rng);
  return out;
}

// --- favorite weights ------------------------------------------------------

TEST(FavoriteWeights, HandExample) {
  const TokenSequence fav{{0, note_on(60), note_on(60), note_on(62)}};
  const EventFamily sel[] = {EventFamily::NoteOn};
  const FavoriteWeights fw = compute_favorite_weights(fav, sel, 0.01);
  EXPECT_DOUBLE_EQ(fw.w[static_cast<std::size_t>(note_on(60))], 0.01 + 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(fw.w[static_cast<std::size_t>(note_on(62))], 0.01 + 1.0 / 3.0);
  EXPECT_EQ(fw.w[0], 0.01);
  EXPECT_EQ(fw.w[static_cast<std::size_t>(note_on(61))], 0.01);
}

TEST(FavoriteWeights, Errors) {
  const EventFamily sel[] = {EventFamily::NoteOn};
  EXPECT_EQ(code_of([&] { compute_favorite_weights(TokenSequence{{0, 1}}, sel); }), ErrorCode::NoSelectedEvents);
  EXPECT_EQ(code_of([&] { compute_favorite_weights(TokenSequence{{note_on(1)}}, sel, 0.0); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { compute_favorite_weights(TokenSequence{}, sel); }), ErrorCode::InvalidArgument);
}

TEST(FavoriteWeights, SelectedExcessSumsToOne) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EventFamily> sel;
    for (EventFamily f : kAllFamilies) {
      if (rng() % 3 == 0) sel.push_back(f);
    }
    if (sel.empty()) sel.push_back(EventFamily::NoteOn);
    const double alpha = 0.001 + static_cast<double>(rng() % 1000) / 1000.0;
    TokenSequence fav{random_tokens(rng, 50 + rng() % 200)};
    fav.tokens.push_back(Vocabulary::classes_of(sel.front()).first);
    const FavoriteWeights fw = compute_favorite_weights(fav, sel, alpha);
    double excess = 0.0;
    for (TokenId id = 0; id < Vocabulary::size(); ++id) {
      const bool in_sel = std::find(sel.begin(), sel.end(), Vocabulary::family_of(id)) != sel.end();
      if (in_sel) {
        excess += fw.w[static_cast<std::size_t>(id)] - alpha;
      } else {
        ASSERT_EQ(fw.w[static_cast<std::size_t>(id)], alpha);
      }
    }
    EXPECT_NEAR(excess, 1.0, 1e-9);
  }
}

// --- loss ------------------------------------------------------------------

TEST(FavoriteLoss, HalfHalfIsLn2) {
  const std::vector<std::vector<double>> logq = {{std::log(0.5), std::log(0.5)}};
  const std::vector<TokenId> truth = {1};
  const std::vector<double> w = {1.0, 1.0};
  EXPECT_NEAR(favorite_aware_loss(logq, truth, w), std::log(2.0), 1e-15);
}

TEST(FavoriteLoss, PerfectPredictionAndLinearity) {
  const std::vector<std::vector<double>> perfect = {{0.0, -INFINITY}, {-INFINITY, 0.0}};
  const std::vector<TokenId> truth = {0, 1};
  EXPECT_EQ(favorite_aware_loss(perfect, truth, std::vector<double>{3.0, 0.2}), 0.0);

  const std::vector<std::vector<double>> logq = {{std::log(0.3), std::log(0.7)}, {std::log(0.9), std::log(0.1)}};
  const std::vector<double> w = {0.4, 1.5};
  const std::vector<double> w2 = {0.8, 3.0};
  EXPECT_DOUBLE_EQ(favorite_aware_loss(logq, truth, w2), 2.0 * favorite_aware_loss(logq, truth, w));
  EXPECT_EQ(code_of([&] { favorite_aware_loss(logq, std::vector<TokenId>{0}, w); }), ErrorCode::LengthMismatch);
}

TEST(FavoriteLoss, UnitWeightsGiveCrossEntropy) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  const auto ones = unit_weights().w;
  for (int batch = 0; batch < 100; ++batch) {
    const std::size_t n = 1 + rng() % 20;
    std::vector<std::vector<double>> logq(n);
    std::vector<TokenId> truth(n);
    double ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(Vocabulary::size());
      for (auto& v : p) v = u(rng);
      const double s = std::accumulate(p.begin(), p.end(), 0.0);
      for (auto& v : p) logq[i].push_back(std::log(v / s));
      truth[i] = static_cast<TokenId>(rng() % Vocabulary::size());
      ce -= logq[i][static_cast<std::size_t>(truth[i])];
    }
    EXPECT_NEAR(favorite_aware_loss(logq, truth, ones), ce / static_cast<double>(n), 1e-12);
  }
}

// --- sampling --------------------------------------------------------------

TEST(Sampling, SingleAllowedIdIsForced) {
  const UniformModel model;
  const TokenId only[] = {note_on(71)};
  for (uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(sample_constrained(model, {}, only, 1.0, seed), note_on(71));
}

TEST(Sampling, NGramArgmaxFollowsCounts) {
  NGramModel model({.order = 3, .delta = 0.01});
  TokenSequence train;
  for (int i = 0; i < 20; ++i) train.tokens.push_back(note_on(i % 2 == 0 ? 60 : 62));
  model.fit(train);
  const std::vector<TokenId> context = {note_on(62), note_on(60)};
  const auto allowed = family_ids(EventFamily::NoteOn);
  EXPECT_EQ(sample_constrained(model, context, allowed, 1e-9, 1), note_on(62));
}

TEST(Sampling, UniformMonteCarlo) {
  const UniformModel model;
  const std::vector<TokenId> allowed = {note_on(60), note_on(62), note_on(64), note_on(65), note_on(67)};
  const auto probs = model.predict({});
  Rng rng(2024);
  std::vector<int> hits(allowed.size(), 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const TokenId t = sample_constrained(probs, allowed, 1.0, rng);
    ++hits[static_cast<std::size_t>(std::find(allowed.begin(), allowed.end(), t) - allowed.begin())];
  }
  const double p = 1.0 / static_cast<double>(allowed.size());
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int h : hits) EXPECT_NEAR(h, draws * p, 3 * sigma);
}

TEST(Sampling, AllMaskedWithoutSmoothing) {
  NGramModel model({.order = 2, .delta = 0.0});
  model.fit(TokenSequence{{note_on(60), note_on(62), note_on(60), note_on(62)}});
  const std::vector<TokenId> ctx = {note_on(60)};
  const TokenId allowed[] = {note_on(70), note_on(72)};
  EXPECT_EQ(code_of([&] { sample_constrained(model, ctx, allowed, 1.0, 3); }), ErrorCode::AllMasked);
}

TEST(Sampling, TemperatureSharpens) {
  std::vector<double> probs(Vocabulary::size(), 0.0);
  probs[10] = 0.6;
  probs[11] = 0.4;
  const TokenId allowed[] = {10, 11};
  Rng hot(1), cold(1);
  int hot_hits = 0, cold_hits = 0;
  for (int i = 0; i < 4000; ++i) {
    hot_hits += sample_constrained(probs, allowed, 1.0, hot) == 10;
    cold_hits += sample_constrained(probs, allowed, 0.25, cold) == 10;
  }
  EXPECT_GT(cold_hits, hot_hits);
  EXPECT_NEAR(cold_hits / 4000.0, std::pow(0.6, 4) / (std::pow(0.6, 4) + std::pow(0.4, 4)), 0.03);
}

TEST(Sampling, ArgmaxTieTakesLowestId) {
  std::vector<double> probs(Vocabulary::size(), 0.0);
  probs[30] = probs[20] = 0.5;
  const TokenId allowed[] = {30, 20};
  Rng rng(1);
  EXPECT_EQ(sample_constrained(probs, allowed, 1e-9, rng), 20);
}

TEST(Sampling, SeededDeterminism) {
  NGramModel model;
  model.fit(encode(testing::synth_song(3, testing::song_options_for(3)), 0));
  const auto allowed = family_ids(EventFamily::NoteOn);
  const std::vector<TokenId> ctx = {0, 1};
  for (uint64_t seed = 0; seed < 10; ++seed) {
    EXPECT_EQ(sample_constrained(model, ctx, allowed, 1.0, seed), sample_constrained(model, ctx, allowed, 1.0, seed));
  }
}

// --- n-gram ----------------------------------------------------------------

TEST(NGram, DistributionsAreValidAndBackOff) {
  NGramModel model({.order = 4, .delta = 0.05});
  const TokenSequence seq = encode(testing::synth_song(8, testing::song_options_for(8)), 0);
  model.fit(seq);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto ctx = random_tokens(rng, rng() % 6);
    const auto p = model.predict(ctx);
    ASSERT_EQ(p.size(), static_cast<std::size_t>(Vocabulary::size()));
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    EXPECT_TRUE(std::all_of(p.begin(), p.end(), [](double v) { return v > 0.0; }));
  }
  // An unseen history backs off to the unigram table, not to uniform.
  const std::vector<TokenId> unseen = {note_on(1), note_on(2), note_on(3)};
  EXPECT_EQ(model.predict(unseen), model.predict({}));
}

TEST(NGram, CheckpointPredictsIdentically) {
  NGramModel model({.order = 5, .delta = 0.01});
  const TokenSequence seq = encode(testing::synth_song(9, testing::song_options_for(9)), 0);
  const EventFamily sel[] = {EventFamily::NoteOn};
  model.fit(seq, compute_favorite_weights(seq, sel).w);
  const auto restored = make_predictor(model.to_checkpoint());
  const std::span<const TokenId> ctx(seq.tokens.data(), 20);
  EXPECT_EQ(restored->predict(ctx), model.predict(ctx));
  EXPECT_EQ(restored->to_checkpoint(), model.to_checkpoint());
}

TEST(NGram, RejectsForeignVocabulary) {
  PredictorCheckpoint cp = NGramModel().to_checkpoint();
  cp.vocabulary_hash ^= 1;
  EXPECT_EQ(code_of([&] { make_predictor(cp); }), ErrorCode::VocabularyMismatch);
}

// --- attention model -------------------------------------------------------

TEST(Attention, GradientMatchesFiniteDifferences) {
  AttentionModel model(tiny_config());
  std::mt19937_64 rng(42);
  // Perturb the zero-initialized tensors so every code path carries gradient.
  std::normal_distribution<double> noise(0.0, 0.3);
  for (auto& p : model.parameters()) p += noise(rng);

  const auto& c = model.config();
  AttentionModel::Memory memory(static_cast<std::size_t>(c.layers));
  for (auto& m : memory) m = AttentionModel::Matrix::NullaryExpr(c.memory, c.d_model, [&] { return noise(rng); });
  const auto tokens = random_tokens(rng, static_cast<std::size_t>(c.window));
  auto targets = random_tokens(rng, tokens.size());
  targets[2] = -1;
  std::vector<double> weights(Vocabulary::size());
  for (auto& w : weights) w = 0.1 + std::abs(noise(rng));

  std::vector<double> grad;
  model.window_pass(tokens, targets, memory, weights, 5.0, &grad);

  auto loss_at = [&](std::size_t k, double delta) {
    const double saved = model.parameters()[k];
    model.parameters()[k] = saved + delta;
    const double l = model.window_pass(tokens, targets, memory, weights, 5.0, nullptr);
    model.parameters()[k] = saved;
    return l;
  };

  std::vector<std::size_t> order(model.parameters().size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int checked = 0;
  double worst = 0.0;
  for (std::size_t k : order) {
    if (checked >= 150) break;
    if (std::abs(grad[k]) < 1e-6) continue;
    const double h = 1e-5;
    const double numeric = (loss_at(k, h) - loss_at(k, -h)) / (2 * h);
    const double rel = std::abs(numeric - grad[k]) / std::max(std::abs(numeric) + std::abs(grad[k]), 1e-12);
    worst = std::max(worst, rel);
    ++checked;
  }
  EXPECT_GE(checked, 100);
  EXPECT_LE(worst, 1e-4);

  // Every tensor kind receives gradient, including the relative-position bias.
  for (const auto& t : model.tensors()) {
    double sum = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(t.rows * t.cols); ++i) sum += std::abs(grad[t.offset + i]);
    EXPECT_GT(sum, 0.0) << t.name;
  }
}

TEST(Attention, SessionMatchesBatchAcrossWindows) {
  const AttentionModel model(tiny_config(3));
  std::mt19937_64 rng(8);
  const auto tokens = random_tokens(rng, 20);  // more than three windows of 6
  const std::vector<double> ones(Vocabulary::size(), 1.0);

  auto session = model.start_session();
  AttentionModel::Memory memory = model.empty_memory();
  const auto W = static_cast<std::size_t>(model.config().window);
  for (std::size_t start = 0; start < tokens.size(); start += W) {
    const std::size_t len = std::min(W, tokens.size() - start);
    const std::span<const TokenId> win(tokens.data() + start, len);
    const std::vector<TokenId> none(len, -1);
    AttentionModel::Matrix logp;
    model.window_pass(win, none, memory, ones, 1.0, nullptr, &memory, &logp);
    for (std::size_t i = 0; i < len; ++i) {
      session->push(win[i]);
      const auto p = session->distribution();
      double total = 0.0;
      for (std::size_t c = 0; c < p.size(); ++c) {
        ASSERT_NEAR(p[c], std::exp(logp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c))), 1e-12);
        total += p[c];
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Attention, CheckpointRoundTripIsExact) {
  const AttentionModel model(tiny_config(5));
  const PredictorCheckpoint cp = model.to_checkpoint();
  const auto restored = make_predictor(cp);
  EXPECT_EQ(restored->to_checkpoint(), cp);
  const std::vector<TokenId> ctx = {0, 1, note_on(60), 300};
  EXPECT_EQ(restored->predict(ctx), model.predict(ctx));
}

std::vector<TokenSequence> toy_segments() {
  // Two segments of a strictly periodic stream: fully predictable from context.
  std::vector<TokenId> cycle = {0, 1, 140, note_on(60), 307, 5, 140, note_on(62), 307, 9, 140, note_on(64), 307};
  std::vector<TokenId> stream;
  while (stream.size() < 48) stream.insert(stream.end(), cycle.begin(), cycle.end());
  return {TokenSequence{{stream.begin(), stream.begin() + 24}}, TokenSequence{{stream.begin() + 24, stream.begin() + 48}}};
}

TEST(Finetune, ZeroEpochsKeepsParameters) {
  const AttentionModel model(tiny_config(9));
  const auto segs = toy_segments();
  const EventFamily sel[] = {EventFamily::NoteOn};
  FinetuneOptions opt;
  opt.epochs = 0;
  const PredictorCheckpoint cp = finetune(model, segs, compute_favorite_weights(segs[0], sel), opt, 1);
  EXPECT_EQ(cp.arrays, model.to_checkpoint().arrays);
  EXPECT_TRUE(cp.loss_curve.empty());
}

TEST(Finetune, LossFallsAndRunsAreReproducible) {
  AttentionConfig cfg = tiny_config(12);
  cfg.d_model = 16;
  cfg.window = 24;
  cfg.memory = 24;
  const AttentionModel model(cfg);
  const auto segs = toy_segments();
  FinetuneOptions opt;
  opt.epochs = 50;
  opt.stop_loss = 0.0;
  const PredictorCheckpoint a = finetune(model, segs, unit_weights(), opt, 4);
  ASSERT_EQ(a.loss_curve.size(), 50u);
  auto median3 = [&](std::size_t i) {
    std::array<double, 3> v = {a.loss_curve[i - 1], a.loss_curve[i], a.loss_curve[i + 1]};
    std::sort(v.begin(), v.end());
    return v[1];
  };
  EXPECT_LT(median3(48), median3(1));
  EXPECT_LT(a.loss_curve.back(), a.loss_curve.front());

  const PredictorCheckpoint b = finetune(model, segs, unit_weights(), opt, 4);
  EXPECT_EQ(a, b);
}

TEST(Finetune, StopsEarlyBelowThreshold) {
  const AttentionModel model(tiny_config(2));
  FinetuneOptions opt;
  opt.epochs = 10;
  opt.stop_loss = 1e9;
  const auto cp = finetune(model, toy_segments(), unit_weights(), opt, 0);
  EXPECT_EQ(cp.loss_curve.size(), 1u);
}

TEST(Finetune, RejectsUntrainableModels) {
  EXPECT_EQ(code_of([] { finetune(NGramModel(), toy_segments(), unit_weights(), {}, 0); }),
            ErrorCode::InvalidArgument);
}

TEST(Finetune, DivergenceReportsNonFiniteLoss) {
  AttentionModel model(tiny_config(1));
  for (auto& p : model.parameters()) p *= 1e200;
  FinetuneOptions opt;
  opt.epochs = 3;
  EXPECT_EQ(code_of([&] { finetune(model, toy_segments(), unit_weights(), opt, 0); }), ErrorCode::NonFiniteLoss);
}

}  // namespace
}  // namespace upmt
