/// @file
/// @brief Persistence: pipeline config, model checkpoints, similarity reports,
/// run manifests with content hashes, and the run-directory layout.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "upmt/metrics.hpp"
#include "upmt/predictor.hpp"
#include "upmt/transfer.hpp"

namespace upmt {

// ---------------------------------------------------------------------------
// Pipeline config
// ---------------------------------------------------------------------------

/// Every tunable of the pipeline. Stored as flat `key = value` lines; `#`
/// starts a comment. Keys missing from a file keep their defaults.
struct PipelineConfig {
  // favorite-aware weighting and transfer
  double alpha = kDefaultAlpha;
  EventFamily select = EventFamily::NoteOn;
  int pattern_length = kDefaultPatternLength;
  double temperature = 1.0;
  PitchPolicy pitch_policy = PitchPolicy::Fold;
  ForcedStart forced_start = ForcedStart::FirstInterval;
  bool event_learning = true;
  bool random_pattern = false;

  // model and training
  std::string model = "attention";  // attention | ngram
  int segment_length = 128;
  int epochs = 200;
  double stop_loss = 0.1;
  double learning_rate = 0.5;
  double clip_norm = 1.0;
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int window = 128;
  int memory = 128;
  int pretrain_epochs = 0;  // 0 skips pretraining on the bundled corpus
  int ngram_order = 5;
  double ngram_delta = 0.01;

  // evaluation
  int p_min = 2;
  int p_max = 5;

  uint64_t seed = 0;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

/// Throws ParseError naming the offending key (and line) on unknown keys,
/// malformed values, or values outside their valid range.
PipelineConfig parse_config(std::istream& in);
void write_config(std::ostream& out, const PipelineConfig& config);
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& config, const std::filesystem::path& path);
/// Range checks shared by the loader and the command line.
void validate_config(const PipelineConfig& config);

std::string pitch_policy_name(PitchPolicy policy);
std::string forced_start_name(ForcedStart start);

/// Transfer settings drawn from the config.
TransferConfig transfer_config(const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

/// Text header (`key=value` lines up to `end_header`) followed by every
/// declared array as little-endian 32-bit floats, in declaration order.
void write_checkpoint(std::ostream& out, const PredictorCheckpoint& checkpoint);
PredictorCheckpoint read_checkpoint(std::istream& in);
void save_checkpoint(const PredictorCheckpoint& checkpoint, const std::filesystem::path& path);
PredictorCheckpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// CSV with header `kind,name,track,bar,value`. Kinds: `metric` (one D value),
/// `ps` (name = p), `bar` (per-bar OA), `pooled` (per-track pooled OA).
/// Undefined values are written as an empty field.
void write_report(std::ostream& out, const SimilarityReport& report);
SimilarityReport read_report(std::istream& in);
void save_report(const SimilarityReport& report, const std::filesystem::path& path);
SimilarityReport load_report(const std::filesystem::path& path);

/// `epoch,loss` rows.
void save_loss_curve(const std::vector<double>& curve, const std::filesystem::path& path);
std::vector<double> load_loss_curve(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Run manifest and layout
// ---------------------------------------------------------------------------

std::string sha256_hex(const std::vector<uint8_t>& bytes);
std::string sha256_file(const std::filesystem::path& path);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

struct ManifestEntry {
  std::string role;
  std::string sha256;
  std::string path;  // relative to the run directory for outputs, as given for inputs

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct RunManifest {
  std::string run_id;
  int codec_version = kCodecVersion;
  uint64_t seed = 0;
  std::vector<ManifestEntry> inputs;
  std::vector<ManifestEntry> outputs;
  std::vector<std::pair<std::string, std::string>> stages;  // stage name, UTC completion time

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

void write_manifest(std::ostream& out, const RunManifest& manifest);
RunManifest read_manifest(std::istream& in);
void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest load_manifest(const std::filesystem::path& path);

/// Rehashes every referenced file. Throws HashMismatch naming the first file
/// whose content changed, IoError if one is missing.
void verify_manifest(const RunManifest& manifest, const std::filesystem::path& run_dir);

/// Fixed file names inside a run directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.txt"; }
  std::filesystem::path manifest() const { return root / "manifest.txt"; }
  std::filesystem::path tokens_dir() const { return root / "tokens"; }
  std::filesystem::path checkpoints_dir() const { return root / "checkpoints"; }
  std::filesystem::path patterns_dir() const { return root / "patterns"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path input_tokens() const { return tokens_dir() / "input.txt"; }
  std::filesystem::path favorite_tokens() const { return tokens_dir() / "favorite.txt"; }
  std::filesystem::path transferred_tokens() const { return tokens_dir() / "transferred.txt"; }
  std::filesystem::path checkpoint() const { return checkpoints_dir() / "model.ckpt"; }
  std::filesystem::path smp() const { return patterns_dir() / "smp.txt"; }
  std::filesystem::path smpi() const { return patterns_dir() / "smpi.txt"; }
  std::filesystem::path loss_curve() const { return reports_dir() / "loss.csv"; }
  std::filesystem::path report() const { return reports_dir() / "similarity.csv"; }
  std::filesystem::path baseline_report() const { return reports_dir() / "input_similarity.csv"; }
  std::filesystem::path transferred_midi() const { return root / "transferred.mid"; }

  void create() const;
};

}  // namespace upmt
