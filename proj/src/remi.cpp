#include "upmt/remi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <tuple>

#include "upmt/error.hpp"

namespace upmt {

// ---------------------------------------------------------------------------
// BarGrid
// ---------------------------------------------------------------------------

BarGrid::BarGrid(const Score& score)
    : ticks_per_quarter_(score.ticks_per_quarter), signatures_(score.time_signature_map) {
  if (signatures_.empty() || signatures_.front().tick != 0) {
    signatures_.insert(signatures_.begin(), TimeSignature{});
  }
  starts_.push_back(0);
  beats_.push_back(signatures_.front().numerator);
}

void BarGrid::extend_to_bar(std::size_t bar) const {
  while (starts_.size() <= bar + 1) {
    const int64_t s = starts_.back();
    auto it = std::upper_bound(signatures_.begin(), signatures_.end(), s,
                               [](int64_t t, const TimeSignature& ts) { return t < ts.tick; });
    const TimeSignature& sig = *std::prev(it);
    int64_t len = std::max<int64_t>(1, int64_t{ticks_per_quarter_} * 4 * sig.numerator / sig.denominator);
    int64_t next = s + len;
    if (it != signatures_.end() && it->tick < next) next = it->tick;
    starts_.push_back(next);
    auto it2 = std::upper_bound(signatures_.begin(), signatures_.end(), next,
                                [](int64_t t, const TimeSignature& ts) { return t < ts.tick; });
    beats_.push_back(std::prev(it2)->numerator);
  }
}

void BarGrid::extend_to_tick(int64_t tick) const {
  while (starts_.back() <= tick) extend_to_bar(starts_.size());
}

int64_t BarGrid::bar_start(std::size_t bar) const {
  extend_to_bar(bar);
  return starts_[bar];
}

int64_t BarGrid::bar_length(std::size_t bar) const {
  extend_to_bar(bar);
  return starts_[bar + 1] - starts_[bar];
}

int BarGrid::beats_in_bar(std::size_t bar) const {
  extend_to_bar(bar);
  return beats_[bar];
}

std::size_t BarGrid::bar_of(int64_t tick) const {
  if (tick < 0) return 0;
  extend_to_tick(tick);
  auto it = std::upper_bound(starts_.begin(), starts_.end(), tick);
  return static_cast<std::size_t>(std::distance(starts_.begin(), it) - 1);
}

// ---------------------------------------------------------------------------
// Quantization tables
// ---------------------------------------------------------------------------

int velocity_bin(int velocity) { return std::clamp(velocity, 0, 127) * kVelocityBins / 128; }

int velocity_from_bin(int bin) { return std::clamp(bin * 4 + 2, 1, 127); }

int64_t ticks_to_32nds(int64_t ticks, int ticks_per_quarter) {
  return (16 * ticks + ticks_per_quarter) / (2 * int64_t{ticks_per_quarter});
}

int64_t thirty_seconds_to_ticks(int64_t n, int ticks_per_quarter) {
  return std::max<int64_t>(1, (2 * n * ticks_per_quarter + 8) / 16);
}

int position_of_offset(int64_t offset, int64_t bar_length) {
  return static_cast<int>((2 * kPositionsPerBar * offset + bar_length) / (2 * bar_length));
}

int64_t offset_of_position(int position, int64_t bar_length) {
  return (2 * position * bar_length + kPositionsPerBar) / (2 * kPositionsPerBar);
}

int quantize_bpm(int microseconds_per_quarter) {
  const double bpm = 60'000'000.0 / microseconds_per_quarter;
  return std::clamp(static_cast<int>(std::lround(bpm)), 30, 209);
}

EventToken tempo_class_token(int bpm) { return {EventFamily::TempoClass, (bpm - 30) / kTempoValues}; }

EventToken tempo_value_token(int bpm) { return {EventFamily::TempoValue, (bpm - 30) % kTempoValues}; }

std::optional<int> detect_chord(const std::array<bool, 12>& pitch_classes) {
  static const std::vector<std::vector<int>> kTemplates = {
      {0, 4, 7}, {0, 3, 7}, {0, 3, 6}, {0, 4, 8}, {0, 4, 7, 10}};
  std::optional<int> best;
  int best_matched = 0;
  int best_missing = 0;
  for (int root = 0; root < 12; ++root) {
    for (int q = 0; q < static_cast<int>(kTemplates.size()); ++q) {
      int matched = 0;
      for (int iv : kTemplates[q]) matched += pitch_classes[(root + iv) % 12] ? 1 : 0;
      const int missing = static_cast<int>(kTemplates[q].size()) - matched;
      if (matched < 3) continue;
      if (!best || matched > best_matched || (matched == best_matched && missing < best_missing)) {
        best = root * 5 + q;
        best_matched = matched;
        best_missing = missing;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

namespace {

struct TempoEvent {
  std::size_t bar;
  int position;
  int bpm;
  int64_t tick;  // exact beat tick

  friend bool operator==(const TempoEvent& a, const TempoEvent& b) {
    return std::tie(a.bar, a.position, a.bpm) == std::tie(b.bar, b.position, b.bpm);
  }
};

int beat_position(int beat, int beats) { return (2 * kPositionsPerBar * beat + beats) / (2 * beats); }

int64_t beat_tick(const BarGrid& grid, std::size_t bar, int beat) {
  return grid.bar_start(bar) + grid.bar_length(bar) * beat / grid.beats_in_bar(bar);
}

int tempo_at(const Score& score, int64_t tick) {
  auto it = std::upper_bound(score.tempo_map.begin(), score.tempo_map.end(), tick,
                             [](int64_t t, const TempoChange& tc) { return t < tc.tick; });
  if (it == score.tempo_map.begin()) return TempoChange{}.microseconds_per_quarter;
  return std::prev(it)->microseconds_per_quarter;
}

/// Tempo groups for bars [0, bar_count): one at the first beat, then one at
/// every beat where the integer BPM changes.
std::vector<TempoEvent> tempo_events(const Score& score, const BarGrid& grid, std::size_t bar_count) {
  std::vector<TempoEvent> events;
  for (std::size_t bar = 0; bar < bar_count; ++bar) {
    const int beats = grid.beats_in_bar(bar);
    for (int k = 0; k < beats; ++k) {
      const int64_t tick = beat_tick(grid, bar, k);
      const int bpm = quantize_bpm(tempo_at(score, tick));
      if (events.empty() || events.back().bpm != bpm) {
        events.push_back({bar, beat_position(k, beats), bpm, tick});
      }
    }
  }
  return events;
}

struct QuantizedNote {
  std::size_t bar;
  int position;
  int pitch;
  int velocity_bin;
  int length;  // in 32nds, 1..64
  int64_t start;  // decoded-domain ticks
  int64_t end;
};

enum GroupKind { kChordGroup = 0, kTempoGroup = 1, kNoteGroup = 2 };

struct Group {
  std::size_t bar;
  int position;
  int kind;
  int pitch;
  int velocity_bin;
  int length;
  int value;
};

}  // namespace

TokenSequence encode(const Score& score, std::size_t track) {
  if (track >= score.tracks.size()) {
    throw Error(ErrorCode::InvalidArgument, "track index " + std::to_string(track) + " out of range");
  }
  const Track& t = score.tracks[track];
  if (t.notes.empty()) throw Error(ErrorCode::EmptyTrack, "track " + std::to_string(track) + " has no notes");

  const BarGrid grid(score);
  const int tpq = score.ticks_per_quarter;

  std::vector<QuantizedNote> notes;
  notes.reserve(t.notes.size());
  std::size_t bar_count = 0;
  for (const Note& n : t.notes) {
    std::size_t bar = grid.bar_of(n.start_tick);
    int pos = position_of_offset(n.start_tick - grid.bar_start(bar), grid.bar_length(bar));
    if (pos >= kPositionsPerBar) {
      ++bar;
      pos = 0;
    }
    const int len = static_cast<int>(std::clamp<int64_t>(ticks_to_32nds(n.duration_ticks, tpq), 1, kDurationClasses));
    const int64_t start = grid.bar_start(bar) + offset_of_position(pos, grid.bar_length(bar));
    notes.push_back({bar, pos, n.pitch, velocity_bin(n.velocity), len, start,
                     start + thirty_seconds_to_ticks(len, tpq)});
    bar_count = std::max(bar_count, bar + 1);
  }

  std::vector<Group> groups;
  for (const auto& n : notes) {
    groups.push_back({n.bar, n.position, kNoteGroup, n.pitch, n.velocity_bin, n.length, 0});
  }
  for (const auto& e : tempo_events(score, grid, bar_count)) {
    groups.push_back({e.bar, e.position, kTempoGroup, 0, 0, 0, e.bpm});
  }

  // Chords from the quantized notes, emitted on change, at most once per beat.
  std::optional<int> last_chord;
  for (std::size_t bar = 0; bar < bar_count; ++bar) {
    const int beats = grid.beats_in_bar(bar);
    for (int k = 0; k < beats; ++k) {
      const int64_t from = beat_tick(grid, bar, k);
      const int64_t to = k + 1 < beats ? beat_tick(grid, bar, k + 1) : grid.bar_start(bar + 1);
      std::array<bool, 12> pcs{};
      for (const auto& n : notes) {
        if (n.start < to && n.end > from) pcs[n.pitch % 12] = true;
      }
      const auto chord = detect_chord(pcs);
      if (chord && chord != last_chord) {
        groups.push_back({bar, beat_position(k, beats), kChordGroup, 0, 0, 0, *chord});
        last_chord = chord;
      }
    }
  }

  std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    return std::tie(a.bar, a.position, a.kind, a.pitch, a.velocity_bin, a.length, a.value) <
           std::tie(b.bar, b.position, b.kind, b.pitch, b.velocity_bin, b.length, b.value);
  });

  TokenSequence seq;
  auto push = [&seq](EventFamily f, int v) { seq.tokens.push_back(Vocabulary::id_of(f, v)); };
  std::size_t g = 0;
  for (std::size_t bar = 0; bar < bar_count; ++bar) {
    push(EventFamily::Bar, 0);
    for (; g < groups.size() && groups[g].bar == bar; ++g) {
      const Group& gr = groups[g];
      push(EventFamily::Position, gr.position);
      switch (gr.kind) {
        case kChordGroup:
          push(EventFamily::Chord, gr.value);
          break;
        case kTempoGroup:
          seq.tokens.push_back(Vocabulary::id_of(tempo_class_token(gr.value)));
          seq.tokens.push_back(Vocabulary::id_of(tempo_value_token(gr.value)));
          break;
        default:
          push(EventFamily::NoteVelocity, gr.velocity_bin);
          push(EventFamily::NoteOn, gr.pitch);
          push(EventFamily::NoteDuration, gr.length - 1);
          break;
      }
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Grammar and decoding
// ---------------------------------------------------------------------------

std::optional<std::size_t> find_grammar_violation(const TokenSequence& seq) {
  const auto& tk = seq.tokens;
  const std::size_t n = tk.size();
  auto fam = [&](std::size_t i) -> std::optional<EventFamily> {
    if (i >= n) return std::nullopt;
    if (tk[i] < 0 || tk[i] >= Vocabulary::size()) return std::nullopt;
    return Vocabulary::family_of(tk[i]);
  };
  bool seen_bar = false;
  std::size_t i = 0;
  while (i < n) {
    const auto f = fam(i);
    if (!f) return i;
    if (*f == EventFamily::Bar) {
      seen_bar = true;
      ++i;
      continue;
    }
    if (*f != EventFamily::Position || !seen_bar) return i;
    const auto next = fam(i + 1);
    if (!next) return i + 1;
    switch (*next) {
      case EventFamily::Chord:
        i += 2;
        break;
      case EventFamily::TempoClass:
        if (fam(i + 2) != EventFamily::TempoValue) return i + 2;
        i += 3;
        break;
      case EventFamily::NoteVelocity:
        if (fam(i + 2) != EventFamily::NoteOn) return i + 2;
        if (fam(i + 3) != EventFamily::NoteDuration) return i + 3;
        i += 4;
        break;
      default:
        return i + 1;
    }
  }
  return std::nullopt;
}

void check_grammar(const TokenSequence& seq) {
  if (const auto at = find_grammar_violation(seq)) {
    throw Error(ErrorCode::GrammarViolation, "at token index " + std::to_string(*at));
  }
}

Score decode(const TokenSequence& seq, const Score& template_score, std::size_t track) {
  check_grammar(seq);
  Score out = template_score;
  if (track >= out.tracks.size()) out.tracks.resize(track + 1);
  const BarGrid grid(out);
  const int tpq = out.ticks_per_quarter;

  std::vector<Note> notes;
  std::vector<TempoEvent> tempi;
  std::size_t bar_count = 0;
  const auto& tk = seq.tokens;
  for (std::size_t i = 0; i < tk.size();) {
    const EventToken t = Vocabulary::token_of(tk[i]);
    if (t.family == EventFamily::Bar) {
      ++bar_count;
      ++i;
      continue;
    }
    const std::size_t bar = bar_count - 1;
    const int pos = t.value;
    const EventToken next = Vocabulary::token_of(tk[i + 1]);
    if (next.family == EventFamily::Chord) {
      i += 2;
    } else if (next.family == EventFamily::TempoClass) {
      const int bpm = 30 + next.value * kTempoValues + Vocabulary::token_of(tk[i + 2]).value;
      const int beats = grid.beats_in_bar(bar);
      int64_t tick = grid.bar_start(bar) + offset_of_position(pos, grid.bar_length(bar));
      for (int k = 0; k < beats; ++k) {
        if (beat_position(k, beats) == pos) {
          tick = beat_tick(grid, bar, k);
          break;
        }
      }
      tempi.push_back({bar, pos, bpm, tick});
      i += 3;
    } else {
      const int vel = velocity_from_bin(next.value);
      const int pitch = Vocabulary::token_of(tk[i + 2]).value;
      const int len = Vocabulary::token_of(tk[i + 3]).value + 1;
      const int64_t start = grid.bar_start(bar) + offset_of_position(pos, grid.bar_length(bar));
      notes.push_back({pitch, vel, start, thirty_seconds_to_ticks(len, tpq)});
      i += 4;
    }
  }

  std::sort(notes.begin(), notes.end(), note_less);
  out.tracks[track].notes = std::move(notes);

  if (tempi != tempo_events(template_score, BarGrid(template_score), bar_count)) {
    std::vector<TempoChange> map;
    for (const auto& e : tempi) {
      map.push_back({e.tick, static_cast<int>(std::lround(60'000'000.0 / e.bpm))});
    }
    std::stable_sort(map.begin(), map.end(),
                     [](const TempoChange& a, const TempoChange& b) { return a.tick < b.tick; });
    if (map.empty() || map.front().tick != 0) {
      map.insert(map.begin(), TempoChange{0, template_score.tempo_map.empty()
                                                 ? TempoChange{}.microseconds_per_quarter
                                                 : template_score.tempo_map.front().microseconds_per_quarter});
    }
    out.tempo_map = std::move(map);
    normalize(out);
  }
  return out;
}

std::vector<TokenSequence> segment(const TokenSequence& seq, std::size_t length) {
  std::vector<TokenSequence> out;
  if (length == 0) return out;
  for (std::size_t start = 0; start + length <= seq.tokens.size(); start += length) {
    out.push_back({std::vector<TokenId>(seq.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                        seq.tokens.begin() + static_cast<std::ptrdiff_t>(start + length))});
  }
  return out;
}

std::size_t count_family(const TokenSequence& seq, EventFamily family) {
  const IdRange r = Vocabulary::classes_of(family);
  return static_cast<std::size_t>(
      std::count_if(seq.tokens.begin(), seq.tokens.end(), [&](TokenId id) { return r.contains(id); }));
}

// ---------------------------------------------------------------------------
// Token text
// ---------------------------------------------------------------------------

std::string token_text_header() {
  return "#remi q=" + std::to_string(kPositionsPerBar) + " C=" + std::to_string(Vocabulary::size()) +
         " version=" + std::to_string(kCodecVersion);
}

void write_token_text(std::ostream& out, const TokenSequence& seq) {
  out << token_text_header() << '\n';
  for (TokenId id : seq.tokens) {
    const EventToken t = Vocabulary::token_of(id);
    out << family_name(t.family) << ':' << t.value << '\n';
  }
}

TokenSequence read_token_text(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "line 1: missing token header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("#remi ", 0) != 0) throw Error(ErrorCode::ParseError, "line 1: not a token file");
  if (line != token_text_header()) {
    throw Error(ErrorCode::VersionMismatch, "token header '" + line + "' expected '" + token_text_header() + "'");
  }
  TokenSequence seq;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto colon = line.find(':');
    const auto fam = colon == std::string::npos ? std::nullopt : family_from_name(line.substr(0, colon));
    if (!fam) throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": bad token '" + line + "'");
    int value = 0;
    std::istringstream vs(line.substr(colon + 1));
    if (!(vs >> value) || !vs.eof()) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": bad class '" + line + "'");
    }
    seq.tokens.push_back(Vocabulary::id_of(*fam, value));
  }
  return seq;
}

void save_tokens(const TokenSequence& seq, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_token_text(out, seq);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

TokenSequence load_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_token_text(in);
}

}  // namespace upmt
