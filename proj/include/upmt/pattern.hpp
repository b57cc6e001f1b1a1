/// @file
/// @brief Signature music pattern (SMP) extraction and its interval form (SMPI).
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "upmt/remi.hpp"

namespace upmt {

/// Class values of the tokens belonging to the given families, in order.
std::vector<int> selected_stream(const TokenSequence& seq, std::span<const EventFamily> families);
std::vector<int> selected_stream(const TokenSequence& seq, EventFamily family);

struct SignaturePattern {
  std::vector<int> values;

  friend bool operator==(const SignaturePattern&, const SignaturePattern&) = default;
};

struct PatternInterval {
  std::vector<int> deltas;

  friend bool operator==(const PatternInterval&, const PatternInterval&) = default;
};

inline constexpr int kDefaultPatternLength = 8;

struct ExtractOptions {
  /// Pick uniformly among all repeated sublists instead of the ranked choice.
  bool random_choice = false;
  uint64_t seed = 0;
};

/// Among the length-a sublists that occur at least twice (overlaps count),
/// returns the one with the most occurrences, then the earliest first
/// occurrence. Throws NoRepeatedPattern when nothing repeats.
SignaturePattern extract_smp(std::span<const int> stream, int a, const ExtractOptions& options = {});

/// extract_smp at length a, shortening a step by step down to 2 until some
/// sublist repeats.
SignaturePattern extract_smp_shortening(std::span<const int> stream, int a, const ExtractOptions& options = {});

PatternInterval smp_to_smpi(const SignaturePattern& smp);

/// Occurrences of `pattern` as a contiguous sublist of `stream` (overlaps count).
std::size_t count_occurrences(std::span<const int> stream, std::span<const int> pattern);

/// "2,0,2,-2" form used on the command line and in run directories.
std::string format_smpi(const PatternInterval& smpi);
PatternInterval parse_smpi(std::string_view text);

}  // namespace upmt
