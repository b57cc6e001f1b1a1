#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace upmt::testing {

double brute_force_d(const Score& a, const Score& b, Metric m) {
  auto bin_of = [&](const Score& s, const std::vector<Note>& notes, std::size_t i) -> int {
    const Note& n = notes[i];
    if (m == Metric::PitchClass) return n.pitch % 12;
    if (m == Metric::Note) return n.pitch;
    const int tpq = s.ticks_per_quarter;
    if (m == Metric::Duration) {
      const long q = std::max(1L, std::lround(static_cast<double>(n.duration_ticks) * 8 / tpq));
      return static_cast<int>(std::min(q, 32L)) - 1;
    }
    if (i + 1 == notes.size()) return -1;
    const long g = std::lround(static_cast<double>(notes[i + 1].start_tick - n.start_tick) * 8 / tpq);
    return static_cast<int>(std::min(g, 31L));
  };
  auto per_bar = [&](const Score& s, std::size_t t) {
    std::map<int64_t, std::map<int, double>> bars;
    std::vector<Note> notes = s.tracks[t].notes;
    std::sort(notes.begin(), notes.end(), note_less);
    for (std::size_t i = 0; i < notes.size(); ++i) {
      const int bin = bin_of(s, notes, i);
      if (bin >= 0) bars[notes[i].start_tick / (4 * s.ticks_per_quarter)][bin] += 1;
    }
    return bars;
  };
  double sum = 0;
  int count = 0;
  for (std::size_t t = 0; t < std::min(a.tracks.size(), b.tracks.size()); ++t) {
    if (a.tracks[t].notes.empty() || b.tracks[t].notes.empty()) continue;
    const auto ba = per_bar(a, t), bb = per_bar(b, t);
    for (const auto& [bar, ha] : ba) {
      const auto it = bb.find(bar);
      if (it == bb.end()) continue;
      double ta = 0, tb = 0;
      for (const auto& [k, v] : ha) ta += v;
      for (const auto& [k, v] : it->second) tb += v;
      double oa = 0;
      for (const auto& [k, v] : ha) {
        const auto jt = it->second.find(k);
        if (jt != it->second.end()) oa += std::min(v / ta, jt->second / tb);
      }
      sum += oa;
      ++count;
    }
  }
  return sum / count;
}

double brute_force_ps(const std::vector<int>& x, const std::vector<int>& y, int p) {
  std::set<std::vector<int>> windows;
  std::vector<int> ix, iy;
  for (std::size_t k = 1; k < x.size(); ++k) ix.push_back(x[k] - x[k - 1]);
  for (std::size_t k = 1; k < y.size(); ++k) iy.push_back(y[k] - y[k - 1]);
  for (std::size_t s = 0; s + p + 1 <= ix.size(); ++s) windows.insert({ix.begin() + s, ix.begin() + s + p + 1});
  int match = 0;
  const int zy = static_cast<int>(y.size());
  for (int z = 1; z < zy - 1 - p; ++z) {
    match += windows.count({iy.begin() + (z - 1), iy.begin() + (z - 1) + p + 1}) > 0;
  }
  return static_cast<double>(match) / (zy - p);
}

double brute_force_tau(const std::vector<double>& x, const std::vector<double>& y) {
  double concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const bool tx = x[i] == x[j], ty = y[i] == y[j];
      if (tx && ty) continue;
      if (tx) {
        ++tie_x;
      } else if (ty) {
        ++tie_y;
      } else if ((x[i] < x[j]) == (y[i] < y[j])) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  // Same floating-point evaluation order as the library, so results agree
  // bit for bit exactly when the pair counts agree.
  const double tau = (concordant - discordant) / std::sqrt(concordant + discordant + tie_y) /
                     std::sqrt(concordant + discordant + tie_x);
  return std::clamp(tau, -1.0, 1.0);  // e.g. 3/sqrt(3)/sqrt(3) rounds above 1
}
double cross_entropy(const std::vector<std::vector<double>>& logq, const std::vector<int>& truth) {
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) sum -= logq[i][static_cast<std::size_t>(truth[i])];
  return sum / static_cast<double>(truth.size());
}

}  // namespace upmt::testing
