#include "upmt/corpus.hpp"

#include <utility>

namespace upmt {

namespace {

// (pitch, length in eighth notes); pitch 0 is a rest.
using Line = std::vector<std::pair<int, int>>;

const std::vector<Line>& melodies() {
  static const std::vector<Line> kMelodies = {
      // Ode to Joy
      {{64, 2}, {64, 2}, {65, 2}, {67, 2}, {67, 2}, {65, 2}, {64, 2}, {62, 2}, {60, 2}, {60, 2}, {62, 2}, {64, 2},
       {64, 3}, {62, 1}, {62, 4}, {64, 2}, {64, 2}, {65, 2}, {67, 2}, {67, 2}, {65, 2}, {64, 2}, {62, 2},
       {60, 2}, {60, 2}, {62, 2}, {64, 2}, {62, 3}, {60, 1}, {60, 4}},
      // Twinkle, Twinkle, Little Star
      {{60, 2}, {60, 2}, {67, 2}, {67, 2}, {69, 2}, {69, 2}, {67, 4}, {65, 2}, {65, 2}, {64, 2}, {64, 2},
       {62, 2}, {62, 2}, {60, 4}, {67, 2}, {67, 2}, {65, 2}, {65, 2}, {64, 2}, {64, 2}, {62, 4}, {67, 2},
       {67, 2}, {65, 2}, {65, 2}, {64, 2}, {64, 2}, {62, 4}, {60, 2}, {60, 2}, {67, 2}, {67, 2}, {69, 2},
       {69, 2}, {67, 4}, {65, 2}, {65, 2}, {64, 2}, {64, 2}, {62, 2}, {62, 2}, {60, 4}},
      // Frere Jacques
      {{60, 2}, {62, 2}, {64, 2}, {60, 2}, {60, 2}, {62, 2}, {64, 2}, {60, 2}, {64, 2}, {65, 2}, {67, 4},
       {64, 2}, {65, 2}, {67, 4}, {67, 1}, {69, 1}, {67, 1}, {65, 1}, {64, 2}, {60, 2}, {67, 1}, {69, 1},
       {67, 1}, {65, 1}, {64, 2}, {60, 2}, {60, 2}, {55, 2}, {60, 4}, {60, 2}, {55, 2}, {60, 4}},
      // Mary Had a Little Lamb
      {{64, 2}, {62, 2}, {60, 2}, {62, 2}, {64, 2}, {64, 2}, {64, 4}, {62, 2}, {62, 2}, {62, 4}, {64, 2},
       {67, 2}, {67, 4}, {64, 2}, {62, 2}, {60, 2}, {62, 2}, {64, 2}, {64, 2}, {64, 2}, {64, 2}, {62, 2},
       {62, 2}, {64, 2}, {62, 2}, {60, 8}},
      // Hot Cross Buns
      {{64, 2}, {62, 2}, {60, 4}, {64, 2}, {62, 2}, {60, 4}, {60, 1}, {60, 1}, {60, 1}, {60, 1}, {62, 1},
       {62, 1}, {62, 1}, {62, 1}, {64, 2}, {62, 2}, {60, 4}},
      // London Bridge
      {{67, 3}, {69, 1}, {67, 2}, {65, 2}, {64, 2}, {65, 2}, {67, 4}, {62, 2}, {64, 2}, {65, 4}, {64, 2},
       {65, 2}, {67, 4}, {67, 3}, {69, 1}, {67, 2}, {65, 2}, {64, 2}, {65, 2}, {67, 4}, {62, 4}, {67, 4},
       {64, 2}, {60, 6}},
      // Row, Row, Row Your Boat (6/8 felt in eighths)
      {{60, 3}, {60, 3}, {60, 2}, {62, 1}, {64, 3}, {64, 2}, {62, 1}, {64, 2}, {65, 1}, {67, 6}, {72, 1},
       {72, 1}, {72, 1}, {67, 1}, {67, 1}, {67, 1}, {64, 1}, {64, 1}, {64, 1}, {60, 1}, {60, 1}, {60, 1},
       {67, 2}, {65, 1}, {64, 2}, {62, 1}, {60, 6}},
  };
  return kMelodies;
}

}  // namespace

std::vector<Score> public_domain_tunes() {
  static const int kShifts[] = {0, 2, 5, 7, -3};
  std::vector<Score> out;
  for (const Line& line : melodies()) {
    for (int shift : kShifts) {
      Score s;
      s.ticks_per_quarter = 480;
      s.tempo_map = {{0, 600000}};  // 100 BPM
      Track t;
      t.name = "melody";
      int64_t tick = 0;
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& [pitch, eighths] : line) {
          if (pitch > 0) t.notes.push_back({pitch + shift, 80, tick, int64_t{eighths} * 240});
          tick += int64_t{eighths} * 240;
        }
      }
      s.tracks.push_back(std::move(t));
      normalize(s);
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace upmt
