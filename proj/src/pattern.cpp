#include "upmt/pattern.hpp"

#include <algorithm>
#include <map>

#include "upmt/error.hpp"
#include "upmt/predictor.hpp"
#include "upmt/text.hpp"

namespace upmt {

std::vector<int> selected_stream(const TokenSequence& seq, std::span<const EventFamily> families) {
  std::vector<int> out;
  for (TokenId id : seq.tokens) {
    const EventToken t = Vocabulary::token_of(id);
    if (std::find(families.begin(), families.end(), t.family) != families.end()) out.push_back(t.value);
  }
  return out;
}

std::vector<int> selected_stream(const TokenSequence& seq, EventFamily family) {
  return selected_stream(seq, std::span<const EventFamily>(&family, 1));
}

SignaturePattern extract_smp(std::span<const int> stream, int a, const ExtractOptions& options) {
  if (a < 2) throw Error(ErrorCode::InvalidArgument, "pattern length must be at least 2");
  const auto len = static_cast<std::size_t>(a);
  if (stream.size() < len) {
    throw Error(ErrorCode::NoRepeatedPattern, "stream of " + std::to_string(stream.size()) +
                                                  " values is shorter than the pattern length " + std::to_string(a));
  }
  struct Entry {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::map<std::vector<int>, Entry> dict;
  for (std::size_t i = 0; i + len <= stream.size(); ++i) {
    auto [it, inserted] = dict.try_emplace(std::vector<int>(stream.begin() + static_cast<std::ptrdiff_t>(i),
                                                            stream.begin() + static_cast<std::ptrdiff_t>(i + len)));
    if (inserted) it->second.first = i;
    ++it->second.count;
  }

  // Map iteration is lexicographic, so the strict comparisons below keep the
  // lexicographically smallest candidate on a full tie.
  std::vector<const std::pair<const std::vector<int>, Entry>*> repeated;
  for (const auto& kv : dict) {
    if (kv.second.count >= 2) repeated.push_back(&kv);
  }
  if (repeated.empty()) {
    throw Error(ErrorCode::NoRepeatedPattern, "no sublist of length " + std::to_string(a) + " repeats");
  }
  if (options.random_choice) {
    std::sort(repeated.begin(), repeated.end(), [](auto* x, auto* y) { return x->second.first < y->second.first; });
    Rng rng(options.seed);
    return {repeated[static_cast<std::size_t>(rng.uniform() * static_cast<double>(repeated.size()))]->first};
  }
  const auto* best = repeated.front();
  for (const auto* kv : repeated) {
    if (kv->second.count > best->second.count ||
        (kv->second.count == best->second.count && kv->second.first < best->second.first)) {
      best = kv;
    }
  }
  return {best->first};
}

SignaturePattern extract_smp_shortening(std::span<const int> stream, int a, const ExtractOptions& options) {
  for (int len = a; len >= 2; --len) {
    try {
      return extract_smp(stream, len, options);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoRepeatedPattern || len == 2) throw;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "pattern length must be at least 2");
}

PatternInterval smp_to_smpi(const SignaturePattern& smp) {
  if (smp.values.size() < 2) throw Error(ErrorCode::InvalidArgument, "pattern needs at least two values");
  PatternInterval out;
  for (std::size_t k = 0; k + 1 < smp.values.size(); ++k) out.deltas.push_back(smp.values[k + 1] - smp.values[k]);
  return out;
}

std::size_t count_occurrences(std::span<const int> stream, std::span<const int> pattern) {
  if (pattern.empty() || pattern.size() > stream.size()) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + pattern.size() <= stream.size(); ++i) {
    if (std::equal(pattern.begin(), pattern.end(), stream.begin() + static_cast<std::ptrdiff_t>(i))) ++n;
  }
  return n;
}

std::string format_smpi(const PatternInterval& smpi) {
  std::string out;
  for (std::size_t i = 0; i < smpi.deltas.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(smpi.deltas[i]);
  }
  return out;
}

PatternInterval parse_smpi(std::string_view text) {
  text = trim(text);
  if (text.empty()) throw Error(ErrorCode::ParseError, "empty interval list");
  PatternInterval out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = text.find(',', start);
    out.deltas.push_back(static_cast<int>(parse_int(trim(text.substr(start, end - start)))));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace upmt
