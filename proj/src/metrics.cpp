#include "upmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "upmt/error.hpp"
#include "upmt/pattern.hpp"
#include "upmt/remi.hpp"

namespace upmt {

namespace {

void normalize_histogram(Histogram& h) {
  const double total = std::accumulate(h.bins.begin(), h.bins.end(), 0.0);
  h.empty = total == 0.0;
  if (!h.empty) {
    for (double& b : h.bins) b /= total;
  }
}

// (bar, bin) for every event the metric counts on this track.
std::vector<std::pair<std::size_t, int>> metric_events(const Score& score, std::size_t track, Metric metric) {
  if (track >= score.tracks.size()) throw Error(ErrorCode::InvalidArgument, "no track " + std::to_string(track));
  const BarGrid grid(score);
  std::vector<Note> notes = score.tracks[track].notes;
  std::sort(notes.begin(), notes.end(), note_less);
  std::vector<std::pair<std::size_t, int>> out;
  for (std::size_t i = 0; i < notes.size(); ++i) {
    const Note& n = notes[i];
    const std::size_t bar = grid.bar_of(n.start_tick);
    switch (metric) {
      case Metric::PitchClass:
        out.emplace_back(bar, n.pitch % 12);
        break;
      case Metric::Note:
        out.emplace_back(bar, n.pitch);
        break;
      case Metric::Duration:
        out.emplace_back(bar, duration_bin(n.duration_ticks, score.ticks_per_quarter));
        break;
      case Metric::IOI:
        if (i + 1 < notes.size()) {
          out.emplace_back(bar, ioi_bin(notes[i + 1].start_tick - n.start_tick, score.ticks_per_quarter));
        }
        break;
    }
  }
  return out;
}

}  // namespace

std::string metric_name(Metric metric) {
  switch (metric) {
    case Metric::PitchClass: return "D_P";
    case Metric::Note: return "D_N";
    case Metric::Duration: return "D_D";
    case Metric::IOI: return "D_IOI";
  }
  return "?";
}

int bin_count(Metric metric) {
  switch (metric) {
    case Metric::PitchClass: return 12;
    case Metric::Note: return 128;
    case Metric::Duration: return 32;
    case Metric::IOI: return 32;
  }
  return 0;
}

int duration_bin(int64_t duration_ticks, int ticks_per_quarter) {
  return static_cast<int>(std::clamp<int64_t>(ticks_to_32nds(duration_ticks, ticks_per_quarter), 1, 32)) - 1;
}

int ioi_bin(int64_t gap_ticks, int ticks_per_quarter) {
  const auto n = static_cast<int64_t>(std::llround(static_cast<double>(gap_ticks) * 8.0 / ticks_per_quarter));
  return static_cast<int>(std::clamp<int64_t>(n, 0, 31));
}

std::size_t bar_count(const Score& score) {
  int64_t last = -1;
  for (const auto& t : score.tracks) {
    for (const auto& n : t.notes) last = std::max(last, n.start_tick);
  }
  return last < 0 ? 0 : BarGrid(score).bar_of(last) + 1;
}

std::vector<Histogram> bar_histograms(const Score& score, std::size_t track, Metric metric) {
  const auto events = metric_events(score, track, metric);
  std::vector<Histogram> bars(bar_count(score), Histogram{std::vector<double>(static_cast<std::size_t>(bin_count(metric)), 0.0), true});
  for (const auto& [bar, bin] : events) bars[bar].bins[static_cast<std::size_t>(bin)] += 1.0;
  for (auto& h : bars) normalize_histogram(h);
  return bars;
}

Histogram piece_histogram(const Score& score, std::size_t track, Metric metric) {
  Histogram h{std::vector<double>(static_cast<std::size_t>(bin_count(metric)), 0.0), true};
  for (const auto& [bar, bin] : metric_events(score, track, metric)) h.bins[static_cast<std::size_t>(bin)] += 1.0;
  normalize_histogram(h);
  return h;
}

double overlapped_area(const Histogram& p, const Histogram& q) {
  if (p.bins.size() != q.bins.size()) {
    throw Error(ErrorCode::BinMismatch,
                std::to_string(p.bins.size()) + " vs " + std::to_string(q.bins.size()) + " bins");
  }
  double oa = 0.0;
  for (std::size_t b = 0; b < p.bins.size(); ++b) oa += std::min(p.bins[b], q.bins[b]);
  return oa;
}

DMetricResult d_metric_detail(const Score& a, const Score& b, Metric metric, const DMetricOptions& options) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (options.melody_only) {
    pairs.emplace_back(select_melody_track(a), select_melody_track(b));
  } else {
    for (std::size_t t = 0; t < std::min(a.tracks.size(), b.tracks.size()); ++t) pairs.emplace_back(t, t);
  }
  const bool per_bar = bar_count(a) == bar_count(b);
  DMetricResult out;
  for (const auto& [ta, tb] : pairs) {
    if (a.tracks[ta].notes.empty() || b.tracks[tb].notes.empty()) continue;
    if (per_bar) {
      const auto ha = bar_histograms(a, ta, metric);
      const auto hb = bar_histograms(b, tb, metric);
      for (std::size_t bar = 0; bar < ha.size(); ++bar) {
        if (ha[bar].empty || hb[bar].empty) continue;
        out.rows.push_back({ta, bar, overlapped_area(ha[bar], hb[bar])});
      }
    } else {
      const Histogram ha = piece_histogram(a, ta, metric);
      const Histogram hb = piece_histogram(b, tb, metric);
      if (ha.empty || hb.empty) continue;
      out.rows.push_back({ta, std::nullopt, overlapped_area(ha, hb)});
    }
  }
  if (!out.rows.empty()) {
    double sum = 0.0;
    for (const auto& r : out.rows) sum += r.oa;
    out.value = sum / static_cast<double>(out.rows.size());
  }
  return out;
}

std::optional<double> d_metric(const Score& a, const Score& b, Metric metric, const DMetricOptions& options) {
  return d_metric_detail(a, b, metric, options).value;
}

double pattern_similarity(std::span<const int> x, std::span<const int> y_hat, int p, PsVariant variant) {
  if (p < 1) throw Error(ErrorCode::InvalidArgument, "pattern length p must be at least 1");
  const auto zy = static_cast<int64_t>(y_hat.size());
  if (zy <= p + 1) {
    throw Error(ErrorCode::TooShort, "stream of " + std::to_string(zy) + " values is too short for p=" + std::to_string(p));
  }
  std::vector<int> ix;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) ix.push_back(x[k + 1] - x[k]);
  std::vector<int> iy;
  for (std::size_t k = 0; k + 1 < y_hat.size(); ++k) iy.push_back(y_hat[k + 1] - y_hat[k]);

  const auto w = static_cast<std::size_t>(p + 1);
  // 1-based window starts: z < zy-1-p (literal) or z <= zy-1-p (every window).
  const int64_t last_start = variant == PsVariant::Literal ? zy - 2 - p : zy - 1 - p;
  int64_t match = 0;
  for (int64_t z = 1; z <= last_start; ++z) {
    const std::span<const int> window(iy.data() + (z - 1), w);
    if (count_occurrences(ix, window) > 0) ++match;
  }
  const int64_t denom = variant == PsVariant::Literal ? zy - p : zy - 1 - p;
  return static_cast<double>(match) / static_cast<double>(denom);
}

namespace {

int sign(double v) { return (v > 0) - (v < 0); }

// Sum over pairs of sign(dx) * sign(dy).
int64_t concordance(std::span<const double> x, std::span<const double> y) {
  int64_t s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) s += sign(x[i] - x[j]) * sign(y[i] - y[j]);
  }
  return s;
}

std::vector<int64_t> tie_groups(std::span<const double> v) {
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<int64_t> groups;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    if (j - i > 1) groups.push_back(static_cast<int64_t>(j - i));
    i = j;
  }
  return groups;
}

// Two-sided exact p-value without ties: permutations with at most c
// discordant pairs (Mahonian numbers), doubled.
double exact_p_no_ties(int64_t n, int64_t discordant) {
  const int64_t total_pairs = n * (n - 1) / 2;
  const int64_t c = std::min(discordant, total_pairs - discordant);
  std::vector<double> counts(static_cast<std::size_t>(total_pairs + 1), 0.0);
  counts[0] = 1.0;
  for (int64_t k = 2; k <= n; ++k) {
    std::vector<double> next(counts.size(), 0.0);
    for (std::size_t inv = 0; inv < counts.size(); ++inv) {
      if (counts[inv] == 0.0) continue;
      for (int64_t add = 0; add < k && inv + static_cast<std::size_t>(add) < next.size(); ++add) {
        next[inv + static_cast<std::size_t>(add)] += counts[inv];
      }
    }
    counts = std::move(next);
  }
  double le = 0.0, total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    total += counts[i];
    if (static_cast<int64_t>(i) <= c) le += counts[i];
  }
  return std::min(1.0, 2.0 * le / total);
}

// Two-sided exact p-value with ties: every distinct arrangement of y against x.
double exact_p_with_ties(std::span<const double> x, std::span<const double> y, int64_t observed) {
  std::vector<double> perm(y.begin(), y.end());
  std::sort(perm.begin(), perm.end());
  int64_t extreme = 0, total = 0;
  do {
    ++total;
    if (std::llabs(concordance(x, perm)) >= std::llabs(observed)) ++extreme;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace

KendallResult kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "lists differ in length");
  const auto n = static_cast<int64_t>(x.size());
  if (n < 2) throw Error(ErrorCode::DegenerateInput, "need at least two observations");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error(ErrorCode::DegenerateInput, "non-finite value");
  }
  const auto tx = tie_groups(x);
  const auto ty = tie_groups(y);
  const int64_t n0 = n * (n - 1) / 2;
  int64_t n1 = 0, n2 = 0;
  for (int64_t t : tx) n1 += t * (t - 1) / 2;
  for (int64_t t : ty) n2 += t * (t - 1) / 2;
  if (n1 == n0 || n2 == n0) throw Error(ErrorCode::DegenerateInput, "all values tied in one list");

  const int64_t s = concordance(x, y);
  KendallResult r;
  r.tau = static_cast<double>(s) / std::sqrt(static_cast<double>(n0 - n1)) / std::sqrt(static_cast<double>(n0 - n2));
  r.tau = std::clamp(r.tau, -1.0, 1.0);

  if (n <= 10) {
    if (tx.empty() && ty.empty()) {
      const int64_t discordant = (n0 - s) / 2;
      r.p_value = exact_p_no_ties(n, discordant);
    } else {
      r.p_value = exact_p_with_ties(x, y, s);
    }
    return r;
  }
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  for (int64_t t : tx) {
    x0 += static_cast<double>(t * (t - 1) * (t - 2));
    x1 += static_cast<double>(t * (t - 1) * (2 * t + 5));
  }
  for (int64_t t : ty) {
    y0 += static_cast<double>(t * (t - 1) * (t - 2));
    y1 += static_cast<double>(t * (t - 1) * (2 * t + 5));
  }
  const double m = static_cast<double>(n) * static_cast<double>(n - 1);
  const double var = (m * (2.0 * static_cast<double>(n) + 5.0) - x1 - y1) / 18.0 +
                     2.0 * static_cast<double>(n1) * static_cast<double>(n2) / m +
                     x0 * y0 / (9.0 * m * static_cast<double>(n - 2));
  const double z = static_cast<double>(s) / std::sqrt(var);
  r.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
  return r;
}

SimilarityReport similarity_report(const Score& candidate, const Score& reference, int p_min, int p_max,
                                   EventFamily family, const DMetricOptions& options) {
  SimilarityReport report;
  for (Metric m : kAllMetrics) {
    auto detail = d_metric_detail(candidate, reference, m, options);
    report.d[m] = detail.value;
    report.detail[m] = std::move(detail.rows);
  }
  const auto y_hat = selected_stream(encode(candidate, select_melody_track(candidate)), family);
  const auto x = selected_stream(encode(reference, select_melody_track(reference)), family);
  for (int p = p_min; p <= p_max; ++p) {
    try {
      report.ps_by_p[p] = pattern_similarity(x, y_hat, p);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::TooShort) throw;
      report.ps_by_p[p] = std::nullopt;
    }
  }
  return report;
}

}  // namespace upmt
