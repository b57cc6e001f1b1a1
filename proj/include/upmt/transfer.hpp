/// @file
/// @brief Transfer engine: event selection plus SMPI injection driven by a
/// trigger/flag state machine, and the Score-level transfer pipeline.
#pragma once

#include <cstdint>
#include <vector>

#include "upmt/midi_io.hpp"
#include "upmt/pattern.hpp"
#include "upmt/predictor.hpp"
#include "upmt/remi.hpp"

namespace upmt {

enum class PitchPolicy {
  Fold,      // shift NoteOn values by octaves into range; other families saturate
  Saturate,  // clamp into the family's class range
};

enum class ForcedStart {
  FirstInterval,   // forced slots apply i_1..i_{a-1} after the trigger
  SecondInterval,  // the trigger counts as i_1; forced slots apply i_2..i_{a-1}
};

struct TransferConfig {
  /// Exactly one family per pass.
  std::vector<EventFamily> selected{EventFamily::NoteOn};
  double temperature = 1.0;
  uint64_t seed = 0;
  PitchPolicy pitch_policy = PitchPolicy::Fold;
  ForcedStart forced_start = ForcedStart::FirstInterval;
  /// When false only event selection runs: every selected slot is sampled.
  bool event_learning = true;
  int pattern_length = kDefaultPatternLength;
  bool random_pattern = false;
};

enum class SlotKind {
  Sampled,  // drawn from the model, no trigger
  Trigger,  // drawn from the model and matched i_1, arming the forced phase
  Forced,   // set to previous slot value + next SMPI interval
};

struct SlotRecord {
  std::size_t position = 0;
  SlotKind kind = SlotKind::Sampled;
  int value = 0;
  bool adjusted = false;  // forced value was out of range and remapped by the pitch policy
};

struct TransferResult {
  TokenSequence tokens;
  std::vector<SlotRecord> slots;
  bool empty_selection = false;  // input had no selected-family tokens; tokens == input
  std::size_t injections = 0;    // completed forced regions
};

/// Maps an out-of-range class value of `family` back into range.
int apply_pitch_policy(int value, EventFamily family, PitchPolicy policy);

/// Rewrites the selected-family slots of `input`, copying every other token.
TransferResult transfer(const TokenSequence& input, const Predictor& model, const PatternInterval& smpi,
                        const TransferConfig& config);

struct ScoreTransfer {
  Score score;
  std::size_t track = 0;  // rewritten track of the input
  TokenSequence input_tokens;
  TokenSequence favorite_tokens;
  SignaturePattern smp;
  PatternInterval smpi;
  TransferResult result;
};

/// Full pipeline: melody track of each score, encode, SMP/SMPI of the
/// favorite's selected stream (shortening the pattern as needed), transfer,
/// and decode onto a copy of the input with every other track untouched.
ScoreTransfer transfer_score(const Score& input, const Score& favorite, const Predictor& model,
                             const TransferConfig& config);

}  // namespace upmt
