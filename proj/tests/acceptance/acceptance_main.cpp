// Acceptance gate: runs every criterion at its stated tolerance and time
// budget and prints one PASS/FAIL line each. Exit status 0 iff all pass.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "support/synth.hpp"
#include "upmt/attention_model.hpp"
#include "upmt/cli.hpp"
#include "upmt/error.hpp"
#include "upmt/metrics.hpp"
#include "upmt/ngram_model.hpp"
#include "upmt/pattern.hpp"
#include "upmt/remi.hpp"
#include "upmt/storage.hpp"
#include "upmt/transfer.hpp"

namespace upmt {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

// Small attention model used wherever a "toy model" is called for.
AttentionConfig toy_config(uint64_t seed = 1) {
  return {.d_model = 32, .layers = 2, .heads = 4, .window = 128, .memory = 128, .seed = seed};
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<TokenId> pick(0, Vocabulary::size() - 1);
  std::vector<TokenId> out(n);
  for (auto& t : out) t = pick(rng);
  return out;
}

TokenSequence melody(const Score& s) { return encode(s, select_melody_track(s)); }

// 1 ---------------------------------------------------------------------------
Outcome codec_round_trip() {
  std::mt19937_64 rng(2024);
  int scores = 0, tracks = 0;
  for (int i = 0; i < 60; ++i) {
    const Score s = testing::random_score(rng, 3, 80);
    if (read_smf(write_smf(s)) != s) return {false, "SMF round trip differs on score " + std::to_string(i)};
    ++scores;
    for (std::size_t t = 0; t < s.tracks.size(); ++t) {
      if (s.tracks[t].notes.empty()) continue;
      const TokenSequence seq = encode(s, t);
      if (encode(decode(seq, s, t), t) != seq) {
        return {false, "encode(decode(x)) != x on score " + std::to_string(i) + " track " + std::to_string(t)};
      }
      ++tracks;
    }
  }
  return {true, std::to_string(scores) + " scores, " + std::to_string(tracks) + " tracks"};
}

// 2 ---------------------------------------------------------------------------
Outcome favorite_weights() {
  std::mt19937_64 rng(11);
  const std::vector<EventFamily> families = {EventFamily::Position, EventFamily::Chord, EventFamily::TempoClass,
                                             EventFamily::TempoValue, EventFamily::NoteVelocity,
                                             EventFamily::NoteOn, EventFamily::NoteDuration};
  double worst = 0.0;
  int cases = 0;
  while (cases < 100) {
    const Score s = testing::random_score(rng, 2, 60);
    if (s.tracks.empty() || s.tracks[0].notes.empty()) continue;
    const TokenSequence fav = encode(s, 0);
    std::vector<EventFamily> sel;
    for (EventFamily f : families) {
      if (rng() % 2 && count_family(fav, f) > 0) sel.push_back(f);
    }
    if (sel.empty()) sel.push_back(EventFamily::NoteOn);
    const double alpha = std::uniform_real_distribution<double>(1e-4, 0.5)(rng);
    const FavoriteWeights w = compute_favorite_weights(fav, sel, alpha);
    double excess = 0.0;
    for (TokenId c = 0; c < Vocabulary::size(); ++c) {
      const bool selected = std::find(sel.begin(), sel.end(), Vocabulary::family_of(c)) != sel.end();
      const double wc = w.w[static_cast<std::size_t>(c)];
      if (selected) {
        excess += wc - alpha;
      } else if (wc != alpha) {
        return {false, "off-selection weight " + fmt(wc, 17) + " != alpha on case " + std::to_string(cases)};
      }
    }
    worst = std::max(worst, std::abs(excess - 1.0));
    ++cases;
  }
  return {worst <= 1e-9, "100 cases, max |sum(w-alpha)-1| = " + fmt(worst, 3)};
}

// 3 ---------------------------------------------------------------------------
Outcome loss_is_cross_entropy() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  const auto ones = unit_weights().w;
  double worst = 0.0;
  for (int batch = 0; batch < 100; ++batch) {
    const std::size_t n = 1 + rng() % 32;
    std::vector<std::vector<double>> logq(n);
    std::vector<TokenId> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(static_cast<std::size_t>(Vocabulary::size()));
      for (auto& v : p) v = u(rng);
      const double total = std::accumulate(p.begin(), p.end(), 0.0);
      for (double v : p) logq[i].push_back(std::log(v / total));
      truth[i] = static_cast<TokenId>(rng() % static_cast<uint64_t>(Vocabulary::size()));
    }
    const double got = favorite_aware_loss(logq, truth, ones);
    worst = std::max(worst, std::abs(got - testing::cross_entropy(logq, truth)));
  }
  return {worst <= 1e-12, "100 batches, max diff = " + fmt(worst, 3)};
}

// 4 ---------------------------------------------------------------------------
Outcome gradient_check() {
  AttentionModel model({.d_model = 16, .layers = 2, .heads = 2, .window = 8, .memory = 4, .seed = 3});
  std::mt19937_64 rng(42);
  // Zero-initialized biases and unit gains would hide some paths; perturb all.
  std::normal_distribution<double> noise(0.0, 0.3);
  for (auto& p : model.parameters()) p += noise(rng);
  const auto& c = model.config();
  AttentionModel::Memory memory(static_cast<std::size_t>(c.layers));
  for (auto& m : memory) m = AttentionModel::Matrix::NullaryExpr(c.memory, c.d_model, [&] { return noise(rng); });
  const auto tokens = random_tokens(rng, static_cast<std::size_t>(c.window));
  const auto targets = random_tokens(rng, tokens.size());
  std::vector<double> weights(static_cast<std::size_t>(Vocabulary::size()));
  for (auto& w : weights) w = 0.1 + std::abs(noise(rng));

  std::vector<double> grad;
  model.window_pass(tokens, targets, memory, weights, 4.0, &grad);
  auto loss_at = [&](std::size_t k, double delta) {
    const double saved = model.parameters()[k];
    model.parameters()[k] = saved + delta;
    const double l = model.window_pass(tokens, targets, memory, weights, 4.0, nullptr);
    model.parameters()[k] = saved;
    return l;
  };
  std::vector<std::size_t> order(model.parameters().size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int checked = 0;
  double worst = 0.0;
  for (std::size_t k : order) {
    if (checked >= 200) break;
    if (std::abs(grad[k]) < 1e-6) continue;
    const double h = 1e-5;
    const double numeric = (loss_at(k, h) - loss_at(k, -h)) / (2 * h);
    worst = std::max(worst, std::abs(numeric - grad[k]) / std::max(std::abs(numeric) + std::abs(grad[k]), 1e-12));
    ++checked;
  }
  return {checked >= 100 && worst <= 1e-4,
          std::to_string(checked) + " coordinates, max relative error = " + fmt(worst, 3)};
}

// 5 ---------------------------------------------------------------------------
Outcome finetune_convergence() {
  // Each favorite is a single piece; the default stop rule (loss < 0.1) stays on.
  std::string detail;
  bool pass = true;
  for (uint64_t seed : {1, 2, 3, 4, 7}) {
    const TokenSequence fav = melody(testing::synth_song(seed, testing::song_options_for(seed)));
    const EventFamily sel[] = {EventFamily::NoteOn};
    const PredictorCheckpoint cp = finetune(AttentionModel(toy_config()), segment(fav, 128),
                                            compute_favorite_weights(fav, sel), FinetuneOptions{}, seed);
    const auto& curve = cp.loss_curve;
    int reached = 0;
    for (std::size_t e = 0; e < curve.size() && !reached; ++e) {
      if (curve[e] < 0.5) reached = static_cast<int>(e) + 1;
    }
    bool monotone = true;
    double prev = INFINITY;
    for (std::size_t e = 9; e < curve.size(); ++e) {
      const double ma = std::accumulate(curve.begin() + static_cast<std::ptrdiff_t>(e - 9),
                                        curve.begin() + static_cast<std::ptrdiff_t>(e + 1), 0.0) /
                        10.0;
      monotone &= ma <= prev;
      prev = ma;
    }
    pass &= reached > 0 && monotone;
    detail += (detail.empty() ? "" : "; ") + std::string("piece ") + std::to_string(seed) + ": " +
              std::to_string(fav.size()) + " tokens, loss " + fmt(curve.front(), 3) + "->" + fmt(curve.back(), 3) +
              " in " + std::to_string(curve.size()) + " ep, <0.5 at ep " + std::to_string(reached) +
              (monotone ? ", MA10 non-increasing" : ", MA10 rises");
  }
  return {pass, detail};
}

// 6 ---------------------------------------------------------------------------
Outcome smpi_fidelity() {
  const PatternInterval smpi = smp_to_smpi(SignaturePattern{{60, 62, 62, 64, 62, 62, 60, 68}});
  const std::vector<int> expected = {2, 0, 2, -2, 0, -2, 8};
  return {smpi.deltas == expected, "SMPI = " + format_smpi(smpi)};
}

// 7 ---------------------------------------------------------------------------
Outcome transfer_structure() {
  int pairs = 0, regions = 0, adjusted = 0;
  for (uint64_t k = 0; k < 24; ++k) {
    const TokenSequence y = melody(testing::synth_song(100 + k, testing::song_options_for(100 + k)));
    const TokenSequence fav = melody(testing::synth_song(200 + k, testing::song_options_for(200 + k)));
    const EventFamily sel[] = {EventFamily::NoteOn};
    NGramModel model;
    model.fit(fav, compute_favorite_weights(fav, sel).w);
    TransferConfig cfg;
    cfg.seed = k;
    const PatternInterval smpi =
        smp_to_smpi(extract_smp_shortening(selected_stream(fav, EventFamily::NoteOn), cfg.pattern_length));
    const TransferResult r = transfer(y, model, smpi, cfg);
    const std::string where = "pair " + std::to_string(k);
    if (r.tokens.size() != y.size()) return {false, where + ": length changed"};
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (Vocabulary::family_of(y.tokens[i]) != EventFamily::NoteOn && r.tokens.tokens[i] != y.tokens[i]) {
        return {false, where + ": non-NoteOn token changed at " + std::to_string(i)};
      }
    }
    // Interval scan over the output's NoteOn stream: after every trigger the
    // following slots realize the whole SMPI back to back.
    const auto out = selected_stream(r.tokens, EventFamily::NoteOn);
    for (std::size_t s = 0; s < r.slots.size(); ++s) {
      if (r.slots[s].kind != SlotKind::Trigger) continue;
      const std::size_t len = std::min(smpi.deltas.size(), out.size() - 1 - s);
      for (std::size_t j = 0; j < len; ++j) {
        if (r.slots[s + 1 + j].adjusted) ++adjusted;
        if (out[s + 1 + j] - out[s + j] != smpi.deltas[j]) {
          return {false, where + ": region at slot " + std::to_string(s) + " breaks at interval " +
                             std::to_string(j + 1)};
        }
      }
      ++regions;
    }
    ++pairs;
  }
  return {adjusted == 0, std::to_string(pairs) + " pairs, " + std::to_string(regions) +
                             " injected regions realized exactly, " + std::to_string(adjusted) + " remapped slots"};
}

// 8 ---------------------------------------------------------------------------
Outcome ps_improvement() {
  int improved = 0;
  double on_sum = 0.0, off_sum = 0.0;
  int n = 0;
  const int pairs = 20;
  for (int k = 0; k < pairs; ++k) {
    const Score y = testing::synth_song(300 + k, testing::song_options_for(300 + k));
    const Score fav = testing::synth_song(400 + k, testing::song_options_for(400 + k));
    const TokenSequence ft = melody(fav);
    const EventFamily sel[] = {EventFamily::NoteOn};
    NGramModel model;
    model.fit(ft, compute_favorite_weights(ft, sel).w);
    TransferConfig cfg;
    cfg.temperature = kArgmaxTemperature;  // deterministic decoding
    const ScoreTransfer on = transfer_score(y, fav, model, cfg);
    cfg.event_learning = false;
    const ScoreTransfer off = transfer_score(y, fav, model, cfg);

    const auto x = selected_stream(ft, EventFamily::NoteOn);
    const auto base = selected_stream(melody(y), EventFamily::NoteOn);
    const auto s_on = selected_stream(on.result.tokens, EventFamily::NoteOn);
    const auto s_off = selected_stream(off.result.tokens, EventFamily::NoteOn);
    bool all = true;
    for (int p = 2; p <= 5; ++p) {
      const double ps_on = pattern_similarity(x, s_on, p);
      all &= ps_on >= pattern_similarity(x, base, p);
      on_sum += ps_on;
      off_sum += pattern_similarity(x, s_off, p);
      ++n;
    }
    improved += all;
  }
  const double share = static_cast<double>(improved) / pairs;
  return {share >= 0.9 && on_sum > off_sum,
          std::to_string(improved) + "/" + std::to_string(pairs) + " pairs improve at every p; mean PS on " +
              fmt(on_sum / n, 3) + " vs off " + fmt(off_sum / n, 3)};
}

// 9 ---------------------------------------------------------------------------
Outcome oa_oracle() {
  for (uint64_t k = 0; k < 20; ++k) {
    const Score s = testing::synth_song(k, testing::song_options_for(k));
    for (Metric m : kAllMetrics) {
      if (d_metric(s, s, m) != 1.0) return {false, "d(s,s) != 1 for " + metric_name(m)};
    }
  }
  int compared = 0;
  double worst = 0.0;
  for (uint64_t k = 0; k < 20; ++k) {
    testing::SongOptions oa = testing::song_options_for(k), ob = testing::song_options_for(k + 50);
    ob.bars = oa.bars;
    const Score a = testing::synth_song(k, oa);
    const Score b = testing::synth_song(k + 50, ob);
    for (Metric m : kAllMetrics) {
      const double got = *d_metric(a, b, m);
      const double want = testing::brute_force_d(a, b, m);
      worst = std::max(worst, std::abs(got - want));
      ++compared;
    }
  }
  return {worst == 0.0, "self = 1 on 20 pieces x 4 metrics; " + std::to_string(compared) +
                            " brute-force recounts, max diff = " + fmt(worst, 3)};
}

// 10 --------------------------------------------------------------------------
Outcome ps_oracle() {
  std::mt19937_64 rng(77);
  int compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t zx = 2 + rng() % 99, zy = 2 + rng() % 99;
    const int alphabet = 2 + static_cast<int>(rng() % 4);
    std::vector<int> x(zx), y(zy);
    for (auto& v : x) v = 60 + static_cast<int>(rng() % static_cast<uint64_t>(alphabet));
    for (auto& v : y) v = 60 + static_cast<int>(rng() % static_cast<uint64_t>(alphabet));
    for (int p = 1; p <= 5; ++p) {
      if (static_cast<int>(zy) <= p + 1) continue;
      if (pattern_similarity(x, y, p) != testing::brute_force_ps(x, y, p)) {
        return {false, "mismatch on trial " + std::to_string(trial) + " p " + std::to_string(p)};
      }
      ++compared;
    }
  }
  const std::vector<int> eight = {60, 62, 64, 65, 67, 69, 71, 72};
  const double self = pattern_similarity(eight, eight, 2);
  return {self == 4.0 / 6.0, std::to_string(compared) + " exact matches on 200 pairs; PS(x,x,2) = " + fmt(self, 17)};
}

// 11 --------------------------------------------------------------------------
Outcome kendall_oracle() {
  std::mt19937_64 rng(8);
  int compared = 0;
  while (compared < 100) {
    const std::size_t n = 2 + rng() % 9;
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = static_cast<double>(rng() % 6);
    for (auto& v : y) v = static_cast<double>(rng() % 6);
    if (std::equal(x.begin() + 1, x.end(), x.begin()) || std::equal(y.begin() + 1, y.end(), y.begin())) continue;
    if (kendall_tau(x, y).tau != testing::brute_force_tau(x, y)) {
      return {false, "mismatch on vector " + std::to_string(compared)};
    }
    ++compared;
  }
  const double rev = kendall_tau(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}).tau;
  return {rev == -1.0, "100 exact matches; tau([1,2,3],[3,2,1]) = " + fmt(rev)};
}

// 12 --------------------------------------------------------------------------
Outcome ablation_shape() {
  const int pairs = 5;
  bool pass = true;
  double dn_gain = 0.0;
  int dn_up = 0;
  std::string issues;
  for (int k = 0; k < pairs; ++k) {
    const Score y = testing::synth_song(500 + k, testing::song_options_for(500 + k));
    const Score fav = testing::synth_song(600 + k, testing::song_options_for(600 + k));
    const TokenSequence ft = melody(fav);
    auto d = [&](const Score& s, Metric m) { return *d_metric(s, fav, m); };
    for (EventFamily f : {EventFamily::NoteOn, EventFamily::NoteDuration, EventFamily::Position}) {
      const EventFamily sel[] = {f};
      const auto model = make_predictor(finetune(AttentionModel(toy_config()), segment(ft, 128),
                                                 compute_favorite_weights(ft, sel), FinetuneOptions{}, 1));
      TransferConfig cfg;
      cfg.selected = {f};
      cfg.seed = static_cast<uint64_t>(k);
      const Score out = transfer_score(y, fav, *model, cfg).score;
      const double dp = d(out, Metric::PitchClass) - d(y, Metric::PitchClass);
      const double dn = d(out, Metric::Note) - d(y, Metric::Note);
      const double dd = d(out, Metric::Duration) - d(y, Metric::Duration);
      const double dioi = d(out, Metric::IOI) - d(y, Metric::IOI);
      const std::string tag = " pair " + std::to_string(k) + " " + family_option(f);
      if (f == EventFamily::Position && (dp != 0.0 || dn != 0.0)) {
        pass = false;
        issues += tag + ": D_P/D_N moved;";
      }
      if (f == EventFamily::NoteDuration && (dp != 0.0 || dn != 0.0 || (dd == 0.0 && dioi == 0.0))) {
        pass = false;
        issues += tag + ": change outside D_D/D_IOI or none;";
      }
      if (f == EventFamily::NoteOn) {
        dn_gain += dn;
        dn_up += dn > 0.0;
      }
    }
  }
  pass &= dn_gain > 0.0;
  return {pass, "position: D_P,D_N unchanged; duration: only D_D/D_IOI change; note-on: D_N up on " +
                    std::to_string(dn_up) + "/" + std::to_string(pairs) + " pairs, mean +" +
                    fmt(dn_gain / pairs, 3) + (issues.empty() ? "" : "; " + issues)};
}

// 13 --------------------------------------------------------------------------
Outcome pipeline_determinism() {
  const fs::path dir = fs::temp_directory_path() / "upmt_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_smf_file(testing::synth_song(31, testing::song_options_for(31)), (dir / "favorite.mid").string());
  write_smf_file(testing::synth_song(32, testing::song_options_for(32)), (dir / "input.mid").string());
  PipelineConfig config;
  config.d_model = 32;
  config.seed = 13;
  const cli::PipelineRun a = cli::run_pipeline(dir / "favorite.mid", dir / "input.mid", config, dir / "run1");
  const cli::PipelineRun b = cli::run_pipeline(dir / "favorite.mid", dir / "input.mid", config, dir / "run2");
  std::string differing;
  int compared = 0;
  for (const auto& [pa, pb] : {std::pair{a.layout.transferred_midi(), b.layout.transferred_midi()},
                               {a.layout.report(), b.layout.report()},
                               {a.layout.baseline_report(), b.layout.baseline_report()},
                               {a.layout.loss_curve(), b.layout.loss_curve()}}) {
    if (read_file(pa) != read_file(pb)) differing += " " + pa.filename().string();
    ++compared;
  }
  const std::size_t epochs = load_loss_curve(a.layout.loss_curve()).size();
  fs::remove_all(dir);
  return {differing.empty(), std::to_string(compared) + " artifacts byte-identical across reruns (" +
                                 std::to_string(epochs) + " fine-tuning epochs)" +
                                 (differing.empty() ? "" : "; differ:" + differing)};
}

}  // namespace
}  // namespace upmt

int main() {
  using namespace upmt;
  const std::vector<Criterion> criteria = {
      {1, "codec round-trip", 10, codec_round_trip},
      {2, "favorite-aware weights", 1, favorite_weights},
      {3, "unit-weight loss equals cross-entropy", 1, loss_is_cross_entropy},
      {4, "attention gradient check", 60, gradient_check},
      {5, "fine-tuning convergence", 300, finetune_convergence},
      {6, "SMPI fidelity", 1, smpi_fidelity},
      {7, "transfer structure preservation", 120, transfer_structure},
      {8, "PS improvement", 120, ps_improvement},
      {9, "OA oracle", 30, oa_oracle},
      {10, "PS oracle", 10, ps_oracle},
      {11, "Kendall tau oracle", 5, kendall_oracle},
      {12, "event-family ablation shape", 300, ablation_shape},
      {13, "pipeline determinism", 300, pipeline_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const Error& e) {
      o = {false, std::string("error ") + std::string(error_name(e.code())) + ": " + e.what()};
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << std::setw(2) << c.id << "  " << c.name << "  ["
              << std::fixed << std::setprecision(2) << secs << " s / " << std::setprecision(0) << c.budget_seconds
              << " s" << (in_time ? "" : ", over budget") << "]  " << std::defaultfloat << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria pass" : std::to_string(failed) + " criteria fail") << std::endl;
  return failed == 0 ? 0 : 1;
}
