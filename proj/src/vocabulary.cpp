#include "upmt/vocabulary.hpp"

#include <cctype>
#include <string>

#include "upmt/error.hpp"

namespace upmt {

static_assert(Vocabulary::kSize == 364);

int Vocabulary::class_count(EventFamily family) {
  switch (family) {
    case EventFamily::Bar: return 1;
    case EventFamily::Position: return kPositionsPerBar;
    case EventFamily::Chord: return kChordClasses;
    case EventFamily::TempoClass: return kTempoClasses;
    case EventFamily::TempoValue: return kTempoValues;
    case EventFamily::NoteVelocity: return kVelocityBins;
    case EventFamily::NoteOn: return kPitches;
    case EventFamily::NoteDuration: return kDurationClasses;
  }
  return 0;
}

IdRange Vocabulary::classes_of(EventFamily family) {
  TokenId first = 0;
  for (EventFamily f : kAllFamilies) {
    if (f == family) return {first, class_count(f)};
    first += class_count(f);
  }
  return {};
}

EventFamily Vocabulary::family_of(TokenId id) {
  if (id < 0 || id >= kSize) {
    throw Error(ErrorCode::OutOfVocabulary, "token id " + std::to_string(id));
  }
  TokenId first = 0;
  for (EventFamily f : kAllFamilies) {
    first += class_count(f);
    if (id < first) return f;
  }
  return EventFamily::NoteDuration;
}

EventToken Vocabulary::token_of(TokenId id) {
  const EventFamily f = family_of(id);
  return {f, id - classes_of(f).first};
}

TokenId Vocabulary::id_of(EventToken token) {
  const IdRange r = classes_of(token.family);
  if (token.value < 0 || token.value >= r.size) {
    throw Error(ErrorCode::OutOfVocabulary, std::string(family_name(token.family)) + ":" +
                                                std::to_string(token.value));
  }
  return r.first + token.value;
}

uint64_t Vocabulary::hash() {
  // FNV-1a over a canonical description of the layout.
  std::string desc = "remi;q=" + std::to_string(kPositionsPerBar) + ";v=" + std::to_string(kCodecVersion);
  for (EventFamily f : kAllFamilies) {
    desc += ";";
    desc += family_name(f);
    desc += "=" + std::to_string(class_count(f));
  }
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : desc) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string_view family_name(EventFamily family) {
  switch (family) {
    case EventFamily::Bar: return "Bar";
    case EventFamily::Position: return "Position";
    case EventFamily::Chord: return "Chord";
    case EventFamily::TempoClass: return "TempoClass";
    case EventFamily::TempoValue: return "TempoValue";
    case EventFamily::NoteVelocity: return "NoteVelocity";
    case EventFamily::NoteOn: return "NoteOn";
    case EventFamily::NoteDuration: return "NoteDuration";
  }
  return "?";
}

std::optional<EventFamily> family_from_name(std::string_view name) {
  for (EventFamily f : kAllFamilies) {
    if (family_name(f) == name) return f;
  }
  return std::nullopt;
}

std::string family_option(EventFamily family) {
  std::string out;
  for (char c : family_name(family)) {
    if (std::isupper(static_cast<unsigned char>(c))) {
      if (!out.empty()) out += '-';
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      out += c;
    }
  }
  return out;
}

std::optional<EventFamily> family_from_option(std::string_view option) {
  for (EventFamily f : kAllFamilies) {
    if (family_option(f) == option) return f;
  }
  return std::nullopt;
}

}  // namespace upmt
