#include "upmt/transfer.hpp"

#include <algorithm>
#include <optional>

#include "upmt/error.hpp"

namespace upmt {

namespace {

void validate(const TransferConfig& config) {
  if (config.selected.size() != 1) {
    throw Error(ErrorCode::InvalidArgument, "transfer selects exactly one event family per pass");
  }
  if (!(config.temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
}

}  // namespace

int apply_pitch_policy(int value, EventFamily family, PitchPolicy policy) {
  const int hi = Vocabulary::class_count(family) - 1;
  if (value >= 0 && value <= hi) return value;
  if (policy == PitchPolicy::Fold && family == EventFamily::NoteOn) {
    while (value > hi) value -= 12;
    while (value < 0) value += 12;
    return value;
  }
  return std::clamp(value, 0, hi);
}

TransferResult transfer(const TokenSequence& input, const Predictor& model, const PatternInterval& smpi,
                        const TransferConfig& config) {
  validate(config);
  if (smpi.deltas.empty()) throw Error(ErrorCode::InvalidArgument, "SMPI must hold at least one interval");
  if (model.vocabulary_hash() != Vocabulary::hash()) {
    throw Error(ErrorCode::VocabularyMismatch, "model was built for a different vocabulary");
  }
  check_grammar(input);

  const EventFamily family = config.selected.front();
  const auto allowed = family_ids(family);
  const TokenId base = Vocabulary::classes_of(family).first;

  TransferResult result;
  if (count_family(input, family) == 0) {
    result.tokens = input;
    result.empty_selection = true;
    return result;
  }

  const std::size_t last_interval = smpi.deltas.size();  // a-1
  const std::size_t first_forced = config.forced_start == ForcedStart::FirstInterval ? 1 : 2;
  Rng rng(config.seed);
  auto session = model.start_session();
  bool flag = false;
  std::size_t idx = 1;               // 1-based index into smpi
  std::optional<int> previous;       // value at slot v

  result.tokens.tokens.reserve(input.size());
  for (std::size_t n = 0; n < input.size(); ++n) {
    const TokenId y = input.tokens[n];
    if (Vocabulary::family_of(y) != family) {
      result.tokens.tokens.push_back(y);
      session->push(y);
      continue;
    }

    SlotRecord rec;
    rec.position = n;
    if (flag && config.event_learning) {
      const int raw = *previous + smpi.deltas[idx - 1];
      rec.value = apply_pitch_policy(raw, family, config.pitch_policy);
      rec.adjusted = rec.value != raw;
      rec.kind = SlotKind::Forced;
      if (++idx > last_interval) {
        flag = false;
        ++result.injections;
      }
    } else {
      const auto probs = session->distribution();
      rec.value = sample_constrained(probs, allowed, config.temperature, rng) - base;
      rec.kind = SlotKind::Sampled;
      // The first slot has no predecessor to measure an interval against.
      if (config.event_learning && previous && rec.value - *previous == smpi.deltas[0] &&
          first_forced <= last_interval) {
        rec.kind = SlotKind::Trigger;
        flag = true;
        idx = first_forced;
      }
    }
    previous = rec.value;
    const TokenId out = base + rec.value;
    result.tokens.tokens.push_back(out);
    session->push(out);
    result.slots.push_back(rec);
  }
  return result;
}

ScoreTransfer transfer_score(const Score& input, const Score& favorite, const Predictor& model,
                             const TransferConfig& config) {
  validate(config);
  ScoreTransfer out;
  out.track = select_melody_track(input);
  out.input_tokens = encode(input, out.track);
  out.favorite_tokens = encode(favorite, select_melody_track(favorite));

  const auto stream = selected_stream(out.favorite_tokens, config.selected.front());
  out.smp = extract_smp_shortening(stream, config.pattern_length, ExtractOptions{config.random_pattern, config.seed});
  out.smpi = smp_to_smpi(out.smp);
  out.result = transfer(out.input_tokens, model, out.smpi, config);
  out.score = decode(out.result.tokens, input, out.track);
  return out;
}

}  // namespace upmt
