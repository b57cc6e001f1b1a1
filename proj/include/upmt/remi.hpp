/// @file
/// @brief REMI codec: Score track <-> token sequence, plus the token-text
/// interchange format.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "upmt/midi_io.hpp"
#include "upmt/vocabulary.hpp"

namespace upmt {

struct TokenSequence {
  std::vector<TokenId> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Bar layout of a score, derived from its time-signature map. A time
/// signature change always starts a new bar.
class BarGrid {
 public:
  explicit BarGrid(const Score& score);

  int64_t bar_start(std::size_t bar) const;
  int64_t bar_length(std::size_t bar) const;
  /// Numerator of the time signature in effect at the start of the bar.
  int beats_in_bar(std::size_t bar) const;
  std::size_t bar_of(int64_t tick) const;

 private:
  void extend_to_bar(std::size_t bar) const;
  void extend_to_tick(int64_t tick) const;

  int ticks_per_quarter_;
  std::vector<TimeSignature> signatures_;
  mutable std::vector<int64_t> starts_;
  mutable std::vector<int> beats_;
};

// Quantization tables shared by the codec and the metrics.
int velocity_bin(int velocity);
int velocity_from_bin(int bin);
/// Duration in thirty-second notes, rounded to nearest.
int64_t ticks_to_32nds(int64_t ticks, int ticks_per_quarter);
int64_t thirty_seconds_to_ticks(int64_t n, int ticks_per_quarter);
/// Nearest of the 16 bar positions for an offset inside a bar (may return 16).
int position_of_offset(int64_t offset, int64_t bar_length);
int64_t offset_of_position(int position, int64_t bar_length);
/// Integer BPM clamped to the representable 30..209 range.
int quantize_bpm(int microseconds_per_quarter);
EventToken tempo_class_token(int bpm);
EventToken tempo_value_token(int bpm);

/// Detects the chord (class 0..59, root * 5 + quality) sounding over a set of
/// pitch classes, or nullopt when fewer than three template tones sound.
/// Qualities in order: major, minor, diminished, augmented, dominant seventh.
std::optional<int> detect_chord(const std::array<bool, 12>& pitch_classes);

TokenSequence encode(const Score& score, std::size_t track);

/// Reconstructs the given track from tokens; every other track is copied from
/// the template. The template's tempo map is kept when the token tempo events
/// agree with it, otherwise the map is rebuilt from the tokens.
Score decode(const TokenSequence& seq, const Score& template_score, std::size_t track);

/// Index of the first token that breaks the REMI grammar, or nullopt when the
/// whole sequence is valid. A missing tail reports index == size().
std::optional<std::size_t> find_grammar_violation(const TokenSequence& seq);
void check_grammar(const TokenSequence& seq);

/// Consecutive non-overlapping windows of exactly `length` tokens; the final
/// partial window is dropped.
std::vector<TokenSequence> segment(const TokenSequence& seq, std::size_t length);

std::size_t count_family(const TokenSequence& seq, EventFamily family);

// Token text: one header line then one "Family:class" token per line.
std::string token_text_header();
void write_token_text(std::ostream& out, const TokenSequence& seq);
TokenSequence read_token_text(std::istream& in);
void save_tokens(const TokenSequence& seq, const std::string& path);
TokenSequence load_tokens(const std::string& path);

}  // namespace upmt
