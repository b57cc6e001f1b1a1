/// @file
/// @brief Command-line front end. Each pipeline stage is also exposed as a
/// function so that `pipeline` and the individual subcommands share one path.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "upmt/error.hpp"
#include "upmt/midi_io.hpp"
#include "upmt/pattern.hpp"
#include "upmt/predictor.hpp"
#include "upmt/storage.hpp"
#include "upmt/transfer.hpp"

namespace upmt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitDomain = 4;

/// Environment variable naming the directory under which `pipeline` creates
/// run directories when --out is not given.
inline constexpr const char* kRunRootEnv = "UPMT_RUN_ROOT";

int exit_code_for(const Error& error);

/// Tokens of the melody track (most notes) of a score.
TokenSequence melody_tokens(const Score& score);

/// Favorite-aware training of the configured model on the favorite's tokens.
/// The attention model is fine-tuned on segments of `segment_length` tokens
/// (the whole sequence when it is shorter); the n-gram model is fitted with the
/// same class weights.
PredictorCheckpoint train_stage(const TokenSequence& favorite, const PipelineConfig& config);

/// SMP of the favorite's selected stream, shortened as needed.
SignaturePattern pattern_stage(const TokenSequence& favorite, const PipelineConfig& config);

struct TransferStage {
  Score score;
  std::size_t track = 0;
  TokenSequence input_tokens;
  TransferResult result;
};

TransferStage transfer_stage(const Score& input, const Predictor& model, const PatternInterval& smpi,
                             const PipelineConfig& config);

struct PipelineRun {
  RunLayout layout;
  RunManifest manifest;
  SimilarityReport report;    // transferred vs favorite
  SimilarityReport baseline;  // input vs favorite
};

/// Runs every stage and writes the run directory (see RunLayout).
PipelineRun run_pipeline(const std::filesystem::path& favorite, const std::filesystem::path& input,
                         const PipelineConfig& config, const std::filesystem::path& out_dir);

/// Entry point; `args` excludes the program name. Data goes to `out`,
/// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace upmt::cli
