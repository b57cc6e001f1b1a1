/// @file
/// @brief REMI event families and the token-id vocabulary.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace upmt {

enum class EventFamily : uint8_t {
  Bar,
  Position,
  Chord,
  TempoClass,
  TempoValue,
  NoteVelocity,
  NoteOn,
  NoteDuration,
};

inline constexpr std::array<EventFamily, 8> kAllFamilies = {
    EventFamily::Bar,          EventFamily::Position, EventFamily::Chord,  EventFamily::TempoClass,
    EventFamily::TempoValue,   EventFamily::NoteVelocity, EventFamily::NoteOn, EventFamily::NoteDuration};

inline constexpr int kPositionsPerBar = 16;
inline constexpr int kChordClasses = 60;       // 12 roots x 5 qualities
inline constexpr int kTempoClasses = 3;
inline constexpr int kTempoValues = 60;
inline constexpr int kVelocityBins = 32;
inline constexpr int kPitches = 128;
inline constexpr int kDurationClasses = 64;    // 1..64 thirty-second notes
inline constexpr int kCodecVersion = 1;

using TokenId = int32_t;

struct EventToken {
  EventFamily family = EventFamily::Bar;
  int value = 0;  // class within the family

  friend bool operator==(const EventToken&, const EventToken&) = default;
};

/// Contiguous id block [first, first + size) of one family.
struct IdRange {
  TokenId first = 0;
  int size = 0;

  TokenId last() const { return first + size - 1; }
  bool contains(TokenId id) const { return id >= first && id < first + size; }
};

/// Fixed bijection between EventToken and integer ids. Family blocks are laid
/// out in EventFamily order, so the mapping never changes between runs.
class Vocabulary {
 public:
  static constexpr int kSize = 1 + kPositionsPerBar + kChordClasses + kTempoClasses + kTempoValues +
                               kVelocityBins + kPitches + kDurationClasses;

  static constexpr int size() { return kSize; }
  static int class_count(EventFamily family);
  static IdRange classes_of(EventFamily family);

  /// Throws OutOfVocabulary for ids outside [0, size()).
  static EventFamily family_of(TokenId id);
  static EventToken token_of(TokenId id);
  /// Throws OutOfVocabulary when the class is outside the family range.
  static TokenId id_of(EventToken token);
  static TokenId id_of(EventFamily family, int value) { return id_of(EventToken{family, value}); }

  /// Stable 64-bit fingerprint of the layout (family names, sizes, grid, version).
  static uint64_t hash();
};

std::string_view family_name(EventFamily family);
std::optional<EventFamily> family_from_name(std::string_view name);
/// Lower-case dashed spelling used on the command line and in configs ("note-on").
std::string family_option(EventFamily family);
std::optional<EventFamily> family_from_option(std::string_view option);

}  // namespace upmt
