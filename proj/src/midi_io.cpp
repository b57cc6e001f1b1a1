#include "upmt/midi_io.hpp"

#include <algorithm>
#include <cstring>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <tuple>

#include "upmt/error.hpp"

namespace upmt {

bool note_less(const Note& a, const Note& b) {
  return std::tie(a.start_tick, a.pitch, a.duration_ticks, a.velocity) <
         std::tie(b.start_tick, b.pitch, b.duration_ticks, b.velocity);
}

namespace {

template <typename T>
void normalize_map(std::vector<T>& map, const T& fallback) {
  std::stable_sort(map.begin(), map.end(),
                   [](const T& a, const T& b) { return a.tick < b.tick; });
  std::vector<T> out;
  for (const auto& e : map) {
    if (!out.empty() && out.back().tick == e.tick) {
      out.back() = e;
    } else {
      out.push_back(e);
    }
  }
  if (out.empty() || out.front().tick != 0) {
    T head = fallback;
    head.tick = 0;
    out.insert(out.begin(), head);
  }
  map = std::move(out);
}

}  // namespace

void normalize(Score& score) {
  for (auto& track : score.tracks) {
    std::sort(track.notes.begin(), track.notes.end(), note_less);
    std::stable_sort(track.controls.begin(), track.controls.end(),
                     [](const ChannelEvent& a, const ChannelEvent& b) { return a.tick < b.tick; });
  }
  normalize_map(score.tempo_map, TempoChange{});
  normalize_map(score.time_signature_map, TimeSignature{});
}

std::string check_invariants(const Score& score) {
  if (score.ticks_per_quarter <= 0 || score.ticks_per_quarter >= 0x8000) {
    return "ticks_per_quarter out of range";
  }
  auto strictly_sorted = [](const auto& map) {
    if (map.empty() || map.front().tick != 0) return false;
    for (std::size_t i = 1; i < map.size(); ++i) {
      if (map[i].tick <= map[i - 1].tick) return false;
    }
    return true;
  };
  if (!strictly_sorted(score.tempo_map)) return "tempo_map not strictly sorted from tick 0";
  if (!strictly_sorted(score.time_signature_map)) {
    return "time_signature_map not strictly sorted from tick 0";
  }
  for (const auto& t : score.tempo_map) {
    if (t.microseconds_per_quarter <= 0 || t.microseconds_per_quarter > 0xFFFFFF) {
      return "tempo out of range";
    }
  }
  for (const auto& ts : score.time_signature_map) {
    const int d = ts.denominator;
    if (ts.numerator <= 0 || ts.numerator > 255 || d <= 0 || (d & (d - 1)) != 0) {
      return "invalid time signature";
    }
  }
  for (std::size_t i = 0; i < score.tracks.size(); ++i) {
    const auto& track = score.tracks[i];
    const std::string where = "track " + std::to_string(i) + ": ";
    if (track.channel < 0 || track.channel > 15) return where + "channel out of range";
    for (std::size_t k = 0; k < track.notes.size(); ++k) {
      const auto& n = track.notes[k];
      if (n.pitch < 0 || n.pitch > 127) return where + "pitch out of range";
      if (n.velocity < 1 || n.velocity > 127) return where + "velocity out of range";
      if (n.start_tick < 0) return where + "negative start tick";
      if (n.duration_ticks < 1) return where + "duration below one tick";
      if (k > 0 && note_less(n, track.notes[k - 1])) return where + "notes not sorted";
    }
    for (std::size_t k = 0; k < track.controls.size(); ++k) {
      const auto& c = track.controls[k];
      const int kind = c.status & 0xF0;
      if (kind < 0xA0 || kind > 0xE0) return where + "control is not a non-note channel message";
      if ((c.status & 0x0F) != track.channel) return where + "control channel differs from track";
      const std::size_t want = (kind == 0xC0 || kind == 0xD0) ? 1 : 2;
      if (c.data.size() != want) return where + "control data length";
      for (auto b : c.data) {
        if (b & 0x80) return where + "control data byte has high bit";
      }
      if (c.tick < 0 || (k > 0 && c.tick < track.controls[k - 1].tick)) {
        return where + "controls not sorted";
      }
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

namespace {

uint32_t read_be32(const uint8_t* p) {
  return (uint32_t{p[0]} << 24) | (uint32_t{p[1]} << 16) | (uint32_t{p[2]} << 8) | uint32_t{p[3]};
}

uint16_t read_be16(const uint8_t* p) { return static_cast<uint16_t>((p[0] << 8) | p[1]); }

class ChunkReader {
 public:
  explicit ChunkReader(std::span<const uint8_t> data) : data_(data) {}

  bool done() const { return pos_ >= data_.size(); }

  uint8_t byte() {
    if (pos_ >= data_.size()) throw Error(ErrorCode::TruncatedChunk, "track data ends mid-event");
    return data_[pos_++];
  }

  uint8_t peek() const {
    if (pos_ >= data_.size()) throw Error(ErrorCode::TruncatedChunk, "track data ends mid-event");
    return data_[pos_];
  }

  uint32_t vlq() {
    uint32_t value = 0;
    for (int i = 0; i < 4; ++i) {
      const uint8_t b = byte();
      value = (value << 7) | (b & 0x7F);
      if ((b & 0x80) == 0) return value;
    }
    throw Error(ErrorCode::BadVariableLength, "variable-length quantity exceeds 4 bytes");
  }

  std::span<const uint8_t> take(std::size_t n) {
    if (n > data_.size() - pos_) throw Error(ErrorCode::TruncatedChunk, "event payload past chunk end");
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  std::span<const uint8_t> data_;
  std::size_t pos_ = 0;
};

struct OpenNote {
  int64_t tick;
  int velocity;
};

struct ParsedChunk {
  std::string name;
  std::optional<int> channel_prefix;
  bool has_channel_events = false;
  bool has_timing_meta = false;
  std::vector<int> channel_order;
  std::map<int, Track> by_channel;
};

Track& channel_track(ParsedChunk& chunk, int channel) {
  auto it = chunk.by_channel.find(channel);
  if (it == chunk.by_channel.end()) {
    chunk.channel_order.push_back(channel);
    Track t;
    t.channel = channel;
    it = chunk.by_channel.emplace(channel, std::move(t)).first;
  }
  return it->second;
}

ParsedChunk parse_track_chunk(std::span<const uint8_t> data, Score& score) {
  ParsedChunk chunk;
  ChunkReader in(data);
  int64_t tick = 0;
  uint8_t running = 0;
  std::map<int, std::deque<OpenNote>> open;  // key: channel << 8 | pitch

  while (!in.done()) {
    tick += in.vlq();
    uint8_t status = in.peek();
    if (status & 0x80) {
      in.byte();
    } else {
      if (running == 0) throw Error(ErrorCode::MalformedEvent, "data byte without running status");
      status = running;
    }

    if (status == 0xFF) {
      running = 0;
      const uint8_t type = in.byte();
      const auto payload = in.take(in.vlq());
      if (type == 0x2F) break;
      if (type == 0x51) {
        if (payload.size() != 3) throw Error(ErrorCode::MalformedEvent, "set-tempo length");
        const int us = (payload[0] << 16) | (payload[1] << 8) | payload[2];
        if (us == 0) throw Error(ErrorCode::MalformedEvent, "zero tempo");
        score.tempo_map.push_back({tick, us});
        chunk.has_timing_meta = true;
      } else if (type == 0x58) {
        if (payload.size() < 2 || payload[1] > 7 || payload[0] == 0) {
          throw Error(ErrorCode::MalformedEvent, "time-signature payload");
        }
        score.time_signature_map.push_back({tick, payload[0], 1 << payload[1]});
        chunk.has_timing_meta = true;
      } else if (type == 0x03) {
        if (chunk.name.empty()) chunk.name.assign(payload.begin(), payload.end());
      } else if (type == 0x20) {
        if (payload.size() == 1 && payload[0] < 16) chunk.channel_prefix = payload[0];
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      running = 0;
      in.take(in.vlq());
      continue;
    }
    if (status >= 0xF0) throw Error(ErrorCode::MalformedEvent, "system message inside track");

    running = status;
    const int kind = status & 0xF0;
    const int channel = status & 0x0F;
    const std::size_t count = (kind == 0xC0 || kind == 0xD0) ? 1 : 2;
    uint8_t bytes[2] = {0, 0};
    for (std::size_t i = 0; i < count; ++i) {
      bytes[i] = in.byte();
      if (bytes[i] & 0x80) throw Error(ErrorCode::MalformedEvent, "status byte where data expected");
    }
    chunk.has_channel_events = true;
    Track& track = channel_track(chunk, channel);
    const int key = (channel << 8) | bytes[0];

    if (kind == 0x90 && bytes[1] > 0) {
      open[key].push_back({tick, bytes[1]});
    } else if (kind == 0x80 || kind == 0x90) {
      auto it = open.find(key);
      if (it != open.end() && !it->second.empty()) {
        const OpenNote on = it->second.front();
        it->second.pop_front();
        track.notes.push_back({bytes[0], on.velocity, on.tick, std::max<int64_t>(1, tick - on.tick)});
      }
    } else {
      ChannelEvent ev;
      ev.tick = tick;
      ev.status = status;
      ev.data.assign(bytes, bytes + count);
      track.controls.push_back(std::move(ev));
    }
  }

  // Notes still sounding at end of track end there (at least one tick long).
  for (auto& [key, queue] : open) {
    Track& track = channel_track(chunk, key >> 8);
    for (const auto& on : queue) {
      track.notes.push_back({key & 0xFF, on.velocity, on.tick, std::max<int64_t>(1, tick - on.tick)});
    }
  }
  return chunk;
}

}  // namespace

Score read_smf(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "MThd", 4) != 0) {
    throw Error(ErrorCode::MalformedHeader, "missing MThd chunk");
  }
  const uint32_t header_len = read_be32(bytes.data() + 4);
  if (header_len < 6) throw Error(ErrorCode::MalformedHeader, "MThd length below 6");
  if (bytes.size() - 8 < header_len) throw Error(ErrorCode::TruncatedChunk, "MThd chunk truncated");

  const uint16_t format = read_be16(bytes.data() + 8);
  const uint16_t ntracks = read_be16(bytes.data() + 10);
  const uint16_t division = read_be16(bytes.data() + 12);
  if (format > 1) throw Error(ErrorCode::UnsupportedFormat, "SMF format " + std::to_string(format));
  if (division & 0x8000) throw Error(ErrorCode::UnsupportedFormat, "SMPTE time division");
  if (division == 0) throw Error(ErrorCode::MalformedHeader, "zero ticks per quarter");

  Score score;
  score.ticks_per_quarter = division;
  score.tempo_map.clear();
  score.time_signature_map.clear();

  std::size_t offset = 8 + static_cast<std::size_t>(header_len);
  std::size_t found = 0;
  while (found < ntracks) {
    if (bytes.size() - offset < 8) throw Error(ErrorCode::TruncatedChunk, "missing track chunk");
    const uint8_t* head = bytes.data() + offset;
    const uint32_t len = read_be32(head + 4);
    offset += 8;
    if (bytes.size() - offset < len) throw Error(ErrorCode::TruncatedChunk, "chunk length past end of file");
    const auto body = bytes.subspan(offset, len);
    offset += len;
    if (std::memcmp(head, "MTrk", 4) != 0) continue;

    ParsedChunk chunk = parse_track_chunk(body, score);
    const bool conductor = format == 1 && found == 0 && !chunk.has_channel_events &&
                           (ntracks > 1 || chunk.has_timing_meta);
    ++found;
    if (conductor) continue;
    if (chunk.channel_order.empty()) {
      Track t;
      t.name = chunk.name;
      t.channel = chunk.channel_prefix.value_or(0);
      score.tracks.push_back(std::move(t));
      continue;
    }
    for (int ch : chunk.channel_order) {
      Track t = std::move(chunk.by_channel.at(ch));
      t.name = chunk.name;
      score.tracks.push_back(std::move(t));
    }
  }
  normalize(score);
  return score;
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

void append_vlq(std::vector<uint8_t>& out, uint32_t value) {
  uint8_t buf[5];
  int n = 0;
  buf[n++] = value & 0x7F;
  while ((value >>= 7) != 0) buf[n++] = static_cast<uint8_t>(0x80 | (value & 0x7F));
  while (n > 0) out.push_back(buf[--n]);
}

namespace {

void append_be32(std::vector<uint8_t>& out, uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

void append_be16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

struct TimedEvent {
  int64_t tick;
  int order;  // within a tick: meta, note-off, control, note-on
  std::size_t seq;
  std::vector<uint8_t> bytes;
};

void append_chunk(std::vector<uint8_t>& out, std::vector<TimedEvent> events) {
  std::stable_sort(events.begin(), events.end(), [](const TimedEvent& a, const TimedEvent& b) {
    return std::tie(a.tick, a.order, a.seq) < std::tie(b.tick, b.order, b.seq);
  });
  std::vector<uint8_t> body;
  int64_t last = 0;
  for (const auto& ev : events) {
    append_vlq(body, static_cast<uint32_t>(ev.tick - last));
    body.insert(body.end(), ev.bytes.begin(), ev.bytes.end());
    last = ev.tick;
  }
  append_vlq(body, 0);
  body.insert(body.end(), {0xFF, 0x2F, 0x00});
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  append_be32(out, static_cast<uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
}

std::vector<uint8_t> meta(uint8_t type, std::span<const uint8_t> payload) {
  std::vector<uint8_t> b{0xFF, type};
  append_vlq(b, static_cast<uint32_t>(payload.size()));
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

int log2_exact(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  return r;
}

}  // namespace

std::vector<uint8_t> write_smf(const Score& score) {
  const bool default_maps = score.tempo_map == std::vector<TempoChange>{TempoChange{}} &&
                            score.time_signature_map == std::vector<TimeSignature>{TimeSignature{}};
  const bool conductor = !score.tracks.empty() || !default_maps;

  std::vector<uint8_t> out{'M', 'T', 'h', 'd', 0, 0, 0, 6};
  append_be16(out, 1);
  append_be16(out, static_cast<uint16_t>(score.tracks.size() + (conductor ? 1 : 0)));
  append_be16(out, static_cast<uint16_t>(score.ticks_per_quarter));

  if (conductor) {
    std::vector<TimedEvent> events;
    std::size_t seq = 0;
    for (const auto& ts : score.time_signature_map) {
      const uint8_t payload[4] = {static_cast<uint8_t>(ts.numerator),
                                  static_cast<uint8_t>(log2_exact(ts.denominator)), 24, 8};
      events.push_back({ts.tick, 0, seq++, meta(0x58, payload)});
    }
    for (const auto& t : score.tempo_map) {
      const uint32_t us = static_cast<uint32_t>(t.microseconds_per_quarter);
      const uint8_t payload[3] = {static_cast<uint8_t>(us >> 16), static_cast<uint8_t>(us >> 8),
                                  static_cast<uint8_t>(us)};
      events.push_back({t.tick, 0, seq++, meta(0x51, payload)});
    }
    append_chunk(out, std::move(events));
  }

  for (const auto& track : score.tracks) {
    std::vector<TimedEvent> events;
    std::size_t seq = 0;
    const auto ch = static_cast<uint8_t>(track.channel & 0x0F);
    if (!track.name.empty()) {
      const std::vector<uint8_t> name(track.name.begin(), track.name.end());
      events.push_back({0, 0, seq++, meta(0x03, name)});
    }
    const uint8_t prefix[1] = {ch};
    events.push_back({0, 0, seq++, meta(0x20, prefix)});
    for (const auto& n : track.notes) {
      const auto p = static_cast<uint8_t>(n.pitch);
      events.push_back({n.start_tick, 3, seq++,
                        {static_cast<uint8_t>(0x90 | ch), p, static_cast<uint8_t>(n.velocity)}});
      events.push_back({n.start_tick + n.duration_ticks, 1, seq++,
                        {static_cast<uint8_t>(0x80 | ch), p, 0x40}});
    }
    for (const auto& c : track.controls) {
      std::vector<uint8_t> bytes{c.status};
      bytes.insert(bytes.end(), c.data.begin(), c.data.end());
      events.push_back({c.tick, 2, seq++, std::move(bytes)});
    }
    append_chunk(out, std::move(events));
  }
  return out;
}

Score read_smf_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_smf(bytes);
}

void write_smf_file(const Score& score, const std::string& path) {
  const auto bytes = write_smf(score);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path);
}

std::size_t select_melody_track(const Score& score) {
  std::size_t best = 0;
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < score.tracks.size(); ++i) {
    if (score.tracks[i].notes.size() > best_count) {
      best = i;
      best_count = score.tracks[i].notes.size();
    }
  }
  if (best_count == 0) throw Error(ErrorCode::NoNotes, "no track contains notes");
  return best;
}

}  // namespace upmt
