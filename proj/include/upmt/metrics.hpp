/// @file
/// @brief Evaluation metrics: per-bar distribution overlap (pitch class, note,
/// duration, inter-onset interval), pattern similarity, Kendall correlation.
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "upmt/midi_io.hpp"
#include "upmt/vocabulary.hpp"

namespace upmt {

enum class Metric { PitchClass, Note, Duration, IOI };

inline constexpr Metric kAllMetrics[] = {Metric::PitchClass, Metric::Note, Metric::Duration, Metric::IOI};

std::string metric_name(Metric metric);  // "D_P", "D_N", "D_D", "D_IOI"
int bin_count(Metric metric);            // 12, 128, 32, 32

struct Histogram {
  std::vector<double> bins;
  bool empty = true;  // no events counted; bins are all zero

  friend bool operator==(const Histogram&, const Histogram&) = default;
};

/// Bin of one note for the duration metric: length in 32nd notes, clamped to 1..32.
int duration_bin(int64_t duration_ticks, int ticks_per_quarter);
/// Bin of an onset gap: 32nd notes, clamped to 0..31.
int ioi_bin(int64_t gap_ticks, int ticks_per_quarter);

/// Number of bars covering every note onset of the score (0 if it has no notes).
std::size_t bar_count(const Score& score);

/// One normalized histogram per bar of the score; bars without events are
/// flagged empty. IOI counts the gap from each onset to the next onset of the
/// track (anywhere in the piece) in the bar of the earlier note.
std::vector<Histogram> bar_histograms(const Score& score, std::size_t track, Metric metric);
/// All bars of the track pooled into one normalized histogram.
Histogram piece_histogram(const Score& score, std::size_t track, Metric metric);

/// Sum of bin-wise minima. Throws BinMismatch on different bin counts.
double overlapped_area(const Histogram& p, const Histogram& q);

struct OverlapRow {
  std::size_t track = 0;
  std::optional<std::size_t> bar;  // nullopt for a pooled piece-level comparison
  double oa = 0.0;
};

struct DMetricOptions {
  /// Compare only the melody track of each score instead of pairing tracks by index.
  bool melody_only = false;
};

struct DMetricResult {
  std::optional<double> value;  // nullopt when no comparable (track, bar) pair exists
  std::vector<OverlapRow> rows;
};

/// Mean OA between paired tracks. Scores with equal bar counts are compared
/// bar by bar, skipping bars empty on either side; otherwise each track pair
/// is compared once through pooled piece histograms.
DMetricResult d_metric_detail(const Score& a, const Score& b, Metric metric, const DMetricOptions& options = {});
std::optional<double> d_metric(const Score& a, const Score& b, Metric metric, const DMetricOptions& options = {});

enum class PsVariant {
  Literal,     // windows z = 1 .. z_yhat-2-p, divided by z_yhat-p
  Normalized,  // every window, divided by the window count
};

/// Fraction of (p+1)-interval windows of y_hat's interval stream that occur
/// contiguously in x's interval stream. Throws TooShort when y_hat has p+1
/// values or fewer.
double pattern_similarity(std::span<const int> x, std::span<const int> y_hat, int p,
                          PsVariant variant = PsVariant::Literal);

struct KendallResult {
  double tau = 0.0;
  double p_value = 1.0;
};

/// Tau-b with a two-sided p-value: exact permutation distribution for n <= 10,
/// tie-corrected normal approximation above. Throws DegenerateInput when a
/// list is constant or shorter than 2.
KendallResult kendall_tau(std::span<const double> x, std::span<const double> y);

struct SimilarityReport {
  std::map<Metric, std::optional<double>> d;
  std::map<Metric, std::vector<OverlapRow>> detail;
  std::map<int, std::optional<double>> ps_by_p;  // nullopt where the stream is too short
};

/// Distribution metrics between `candidate` and `reference` plus PS of the
/// candidate's melody stream of `family` against the reference's, for p in
/// [p_min, p_max].
SimilarityReport similarity_report(const Score& candidate, const Score& reference, int p_min = 2, int p_max = 5,
                                   EventFamily family = EventFamily::NoteOn, const DMetricOptions& options = {});

}  // namespace upmt
