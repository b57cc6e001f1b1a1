/// @file
/// @brief Standard MIDI File (formats 0/1) reading and writing.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace upmt {

struct Note {
  int pitch = 60;        // 0..127
  int velocity = 100;    // 1..127
  int64_t start_tick = 0;
  int64_t duration_ticks = 1;

  friend bool operator==(const Note&, const Note&) = default;
};

/// Ordering used for Track::notes: (start, pitch, duration, velocity).
bool note_less(const Note& a, const Note& b);

/// A non-note channel message (CC, program change, pitch bend, aftertouch)
/// kept opaquely so it can be re-emitted verbatim.
struct ChannelEvent {
  int64_t tick = 0;
  uint8_t status = 0;  // includes the channel nibble
  std::vector<uint8_t> data;

  friend bool operator==(const ChannelEvent&, const ChannelEvent&) = default;
};

struct Track {
  std::string name;
  int channel = 0;
  std::vector<Note> notes;
  std::vector<ChannelEvent> controls;

  friend bool operator==(const Track&, const Track&) = default;
};

struct TempoChange {
  int64_t tick = 0;
  int microseconds_per_quarter = 500000;

  friend bool operator==(const TempoChange&, const TempoChange&) = default;
};

struct TimeSignature {
  int64_t tick = 0;
  int numerator = 4;
  int denominator = 4;  // power of two

  friend bool operator==(const TimeSignature&, const TimeSignature&) = default;
};

/// In-memory symbolic music. Tempo and time-signature maps are strictly
/// sorted by tick and always carry an entry at tick 0.
struct Score {
  int ticks_per_quarter = 480;
  std::vector<Track> tracks;
  std::vector<TempoChange> tempo_map{TempoChange{}};
  std::vector<TimeSignature> time_signature_map{TimeSignature{}};

  friend bool operator==(const Score&, const Score&) = default;
};

/// Sorts notes and controls and normalizes the tempo / time-signature maps
/// (last entry wins on equal ticks, defaults inserted at tick 0).
void normalize(Score& score);

/// Checks the Score invariants; returns an empty string when they hold,
/// otherwise a description of the first violation.
std::string check_invariants(const Score& score);

Score read_smf(std::span<const uint8_t> bytes);
std::vector<uint8_t> write_smf(const Score& score);

Score read_smf_file(const std::string& path);
void write_smf_file(const Score& score, const std::string& path);

/// Index of the track with the most notes (lowest index on ties).
/// Throws NoNotes when no track has notes.
std::size_t select_melody_track(const Score& score);

/// Variable-length quantity helpers (exposed for tests).
void append_vlq(std::vector<uint8_t>& out, uint32_t value);

}  // namespace upmt
