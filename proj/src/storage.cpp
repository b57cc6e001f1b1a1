#include "upmt/storage.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <sstream>

#include "upmt/error.hpp"
#include "upmt/text.hpp"

namespace upmt {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::string pitch_policy_name(PitchPolicy policy) { return policy == PitchPolicy::Fold ? "fold" : "saturate"; }

std::string forced_start_name(ForcedStart start) {
  return start == ForcedStart::FirstInterval ? "first" : "second";
}

namespace {

struct Field {
  const char* key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, std::string_view)> set;
};

bool parse_bool(std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(ErrorCode::ParseError, "expected true or false, got '" + std::string(v) + "'");
}

template <typename T>
Field int_field(const char* key, T PipelineConfig::*member) {
  return {key, [member](const PipelineConfig& c) { return std::to_string(c.*member); },
          [member](PipelineConfig& c, std::string_view v) {
            if constexpr (std::is_unsigned_v<T>) {
              c.*member = static_cast<T>(parse_uint(v));
            } else {
              const int64_t x = parse_int(v);
              if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
                throw Error(ErrorCode::ParseError, "out of range");
              }
              c.*member = static_cast<T>(x);
            }
          }};
}

Field double_field(const char* key, double PipelineConfig::*member) {
  return {key, [member](const PipelineConfig& c) { return format_double(c.*member); },
          [member](PipelineConfig& c, std::string_view v) { c.*member = parse_double(v); }};
}

Field bool_field(const char* key, bool PipelineConfig::*member) {
  return {key, [member](const PipelineConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member](PipelineConfig& c, std::string_view v) { c.*member = parse_bool(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      double_field("alpha", &PipelineConfig::alpha),
      {"select", [](const PipelineConfig& c) { return family_option(c.select); },
       [](PipelineConfig& c, std::string_view v) {
         const auto f = family_from_option(v);
         if (!f) throw Error(ErrorCode::ParseError, "unknown event family '" + std::string(v) + "'");
         c.select = *f;
       }},
      int_field("pattern_length", &PipelineConfig::pattern_length),
      double_field("temperature", &PipelineConfig::temperature),
      {"pitch_policy", [](const PipelineConfig& c) { return pitch_policy_name(c.pitch_policy); },
       [](PipelineConfig& c, std::string_view v) {
         if (v == "fold") {
           c.pitch_policy = PitchPolicy::Fold;
         } else if (v == "saturate") {
           c.pitch_policy = PitchPolicy::Saturate;
         } else {
           throw Error(ErrorCode::ParseError, "expected fold or saturate");
         }
       }},
      {"forced_start", [](const PipelineConfig& c) { return forced_start_name(c.forced_start); },
       [](PipelineConfig& c, std::string_view v) {
         if (v == "first") {
           c.forced_start = ForcedStart::FirstInterval;
         } else if (v == "second") {
           c.forced_start = ForcedStart::SecondInterval;
         } else {
           throw Error(ErrorCode::ParseError, "expected first or second");
         }
       }},
      bool_field("event_learning", &PipelineConfig::event_learning),
      bool_field("random_pattern", &PipelineConfig::random_pattern),
      {"model", [](const PipelineConfig& c) { return c.model; },
       [](PipelineConfig& c, std::string_view v) { c.model = std::string(v); }},
      int_field("segment_length", &PipelineConfig::segment_length),
      int_field("epochs", &PipelineConfig::epochs),
      double_field("stop_loss", &PipelineConfig::stop_loss),
      double_field("learning_rate", &PipelineConfig::learning_rate),
      double_field("clip_norm", &PipelineConfig::clip_norm),
      int_field("d_model", &PipelineConfig::d_model),
      int_field("layers", &PipelineConfig::layers),
      int_field("heads", &PipelineConfig::heads),
      int_field("window", &PipelineConfig::window),
      int_field("memory", &PipelineConfig::memory),
      int_field("pretrain_epochs", &PipelineConfig::pretrain_epochs),
      int_field("ngram_order", &PipelineConfig::ngram_order),
      double_field("ngram_delta", &PipelineConfig::ngram_delta),
      int_field("p_min", &PipelineConfig::p_min),
      int_field("p_max", &PipelineConfig::p_max),
      int_field("seed", &PipelineConfig::seed),
  };
  return kFields;
}

void require(bool ok, const char* key, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ParseError, std::string("'") + key + "' " + what);
}

}  // namespace

void validate_config(const PipelineConfig& c) {
  require(c.alpha > 0.0 && std::isfinite(c.alpha), "alpha", "must be > 0");
  require(c.pattern_length >= 2, "pattern_length", "must be >= 2");
  require(c.temperature > 0.0, "temperature", "must be > 0");
  require(c.model == "attention" || c.model == "ngram", "model", "must be attention or ngram");
  require(c.segment_length >= 2, "segment_length", "must be >= 2");
  require(c.epochs >= 0, "epochs", "must be >= 0");
  require(c.learning_rate > 0.0, "learning_rate", "must be > 0");
  require(c.clip_norm > 0.0, "clip_norm", "must be > 0");
  require(c.d_model >= 1, "d_model", "must be >= 1");
  require(c.layers >= 1, "layers", "must be >= 1");
  require(c.heads >= 1 && c.d_model % c.heads == 0, "heads", "must divide d_model");
  require(c.window >= 2, "window", "must be >= 2");
  require(c.memory >= 0, "memory", "must be >= 0");
  require(c.pretrain_epochs >= 0, "pretrain_epochs", "must be >= 0");
  require(c.ngram_order >= 2 && c.ngram_order <= 5, "ngram_order", "must be in 2..5");
  require(c.ngram_delta >= 0.0, "ngram_delta", "must be >= 0");
  require(c.p_min >= 1 && c.p_max >= c.p_min, "p_min", "must satisfy 1 <= p_min <= p_max");
}

PipelineConfig parse_config(std::istream& in) {
  PipelineConfig config;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = "line " + std::to_string(lineno);
    if (eq == std::string_view::npos) throw Error(ErrorCode::ParseError, where + ": expected key = value");
    const std::string key(trim(body.substr(0, eq)));
    const std::string_view value = trim(body.substr(eq + 1));
    const auto& fs_ = fields();
    const auto it = std::find_if(fs_.begin(), fs_.end(), [&](const Field& f) { return key == f.key; });
    if (it == fs_.end()) throw Error(ErrorCode::ParseError, where + ": unknown key '" + key + "'");
    try {
      it->set(config, value);
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, where + ": bad value for '" + key + "': " + e.what());
    }
  }
  try {
    validate_config(config);
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
  return config;
}

void write_config(std::ostream& out, const PipelineConfig& config) {
  out << "# upmt pipeline config\n";
  for (const auto& f : fields()) out << f.key << " = " << f.get(config) << "\n";
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_config(in);
}

void save_config(const PipelineConfig& config, const fs::path& path) {
  std::ostringstream ss;
  write_config(ss, config);
  write_text_file(path, ss.str());
}

TransferConfig transfer_config(const PipelineConfig& c) {
  TransferConfig t;
  t.selected = {c.select};
  t.temperature = c.temperature;
  t.seed = c.seed;
  t.pitch_policy = c.pitch_policy;
  t.forced_start = c.forced_start;
  t.event_learning = c.event_learning;
  t.pattern_length = c.pattern_length;
  t.random_pattern = c.random_pattern;
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string join_families(const std::vector<EventFamily>& families) {
  std::string out;
  for (std::size_t i = 0; i < families.size(); ++i) {
    if (i) out += ',';
    out += family_option(families[i]);
  }
  return out;
}

std::vector<EventFamily> split_families(std::string_view text) {
  std::vector<EventFamily> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto end = text.find(',', start);
    const auto name = text.substr(start, end - start);
    const auto f = family_from_option(name);
    if (!f) throw Error(ErrorCode::ParseError, "unknown event family '" + std::string(name) + "'");
    out.push_back(*f);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

void put_le32(std::ostream& out, float v) {
  const auto bits = std::bit_cast<uint32_t>(v);
  const char b[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                     static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
  out.write(b, 4);
}

}  // namespace

void write_checkpoint(std::ostream& out, const PredictorCheckpoint& cp) {
  out << "upmt-checkpoint " << kCheckpointFormatVersion << "\n";
  out << "kind=" << cp.kind << "\n";
  out << "vocabulary_hash=" << cp.vocabulary_hash << "\n";
  out << "seed=" << cp.seed << "\n";
  for (const auto& [k, v] : cp.hyperparameters) out << "hyper." << k << "=" << v << "\n";
  out << "alpha=" << format_double(cp.alpha) << "\n";
  out << "selected=" << join_families(cp.selected) << "\n";
  out << "loss_curve=" << join_doubles(cp.loss_curve) << "\n";
  out << "weights=" << join_doubles(cp.weights) << "\n";
  for (const auto& a : cp.arrays) {
    out << "array=" << a.name;
    for (int d : a.shape) out << " " << d;
    out << "\n";
  }
  out << "end_header\n";
  for (const auto& a : cp.arrays) {
    for (float v : a.values) put_le32(out, v);
  }
}

PredictorCheckpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("upmt-checkpoint ", 0) != 0) {
    throw Error(ErrorCode::ParseError, "not a checkpoint file");
  }
  const int64_t version = parse_int(trim(std::string_view(line).substr(16)));
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint format " + std::to_string(version) + ", expected " +
                                                std::to_string(kCheckpointFormatVersion));
  }
  PredictorCheckpoint cp;
  int lineno = 1;
  bool ended = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line == "end_header") {
      ended = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": no '='");
    const std::string key = line.substr(0, eq);
    const std::string_view value = std::string_view(line).substr(eq + 1);
    if (key == "kind") {
      cp.kind = value;
    } else if (key == "vocabulary_hash") {
      cp.vocabulary_hash = parse_uint(value);
    } else if (key == "seed") {
      cp.seed = parse_uint(value);
    } else if (key.rfind("hyper.", 0) == 0) {
      cp.hyperparameters.emplace_back(key.substr(6), std::string(value));
    } else if (key == "alpha") {
      cp.alpha = parse_double(value);
    } else if (key == "selected") {
      cp.selected = split_families(value);
    } else if (key == "loss_curve") {
      cp.loss_curve = split_doubles(value);
    } else if (key == "weights") {
      cp.weights = split_doubles(value);
    } else if (key == "array") {
      std::istringstream ss{std::string(value)};
      ParamArray a;
      ss >> a.name;
      int d;
      while (ss >> d) {
        if (d < 0) throw Error(ErrorCode::ParseError, "negative dimension in array '" + a.name + "'");
        a.shape.push_back(d);
      }
      if (a.name.empty()) throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": unnamed array");
      cp.arrays.push_back(std::move(a));
    } else {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (!ended) throw Error(ErrorCode::ParseError, "checkpoint header is not terminated");
  for (auto& a : cp.arrays) {
    std::size_t count = 1;
    for (int d : a.shape) count *= static_cast<std::size_t>(d);
    a.values.resize(count);
    for (float& v : a.values) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw Error(ErrorCode::ParseError, "checkpoint data ends inside array '" + a.name + "'");
      }
      v = std::bit_cast<float>(static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
                               static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::ParseError, "trailing bytes after arrays");
  return cp;
}

void save_checkpoint(const PredictorCheckpoint& checkpoint, const fs::path& path) {
  std::ostringstream ss(std::ios::binary);
  write_checkpoint(ss, checkpoint);
  const std::string s = ss.str();
  write_file(path, std::vector<uint8_t>(s.begin(), s.end()));
}

PredictorCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::string opt_value(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto end = line.find(',', start);
    out.push_back(line.substr(start, end - start));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

Metric metric_from_name(const std::string& name) {
  for (Metric m : kAllMetrics) {
    if (metric_name(m) == name) return m;
  }
  throw Error(ErrorCode::ParseError, "unknown metric '" + name + "'");
}

}  // namespace

void write_report(std::ostream& out, const SimilarityReport& report) {
  out << "kind,name,track,bar,value\n";
  for (const auto& [m, v] : report.d) out << "metric," << metric_name(m) << ",,," << opt_value(v) << "\n";
  for (const auto& [p, v] : report.ps_by_p) out << "ps," << p << ",,," << opt_value(v) << "\n";
  for (const auto& [m, rows] : report.detail) {
    for (const auto& r : rows) {
      out << (r.bar ? "bar," : "pooled,") << metric_name(m) << "," << r.track << ","
          << (r.bar ? std::to_string(*r.bar) : std::string()) << "," << format_double(r.oa) << "\n";
    }
  }
}

SimilarityReport read_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "kind,name,track,bar,value") {
    throw Error(ErrorCode::ParseError, "line 1: missing report header");
  }
  SimilarityReport report;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "line " + std::to_string(lineno);
    if (f.size() != 5) throw Error(ErrorCode::ParseError, where + ": expected 5 fields");
    const std::optional<double> value = f[4].empty() ? std::nullopt : std::optional(parse_double(f[4]));
    if (f[0] == "metric") {
      const Metric m = metric_from_name(f[1]);
      report.d[m] = value;
      report.detail.try_emplace(m);
    } else if (f[0] == "ps") {
      report.ps_by_p[static_cast<int>(parse_int(f[1]))] = value;
    } else if (f[0] == "bar" || f[0] == "pooled") {
      if (!value) throw Error(ErrorCode::ParseError, where + ": detail row without value");
      OverlapRow row;
      row.track = static_cast<std::size_t>(parse_uint(f[2]));
      if (f[0] == "bar") row.bar = static_cast<std::size_t>(parse_uint(f[3]));
      row.oa = *value;
      report.detail[metric_from_name(f[1])].push_back(row);
    } else {
      throw Error(ErrorCode::ParseError, where + ": unknown record kind '" + f[0] + "'");
    }
  }
  return report;
}

void save_report(const SimilarityReport& report, const fs::path& path) {
  std::ostringstream ss;
  write_report(ss, report);
  write_text_file(path, ss.str());
}

SimilarityReport load_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_report(in);
}

void save_loss_curve(const std::vector<double>& curve, const fs::path& path) {
  std::string text = "epoch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) text += std::to_string(i + 1) + "," + format_double(curve[i]) + "\n";
  write_text_file(path, text);
}

std::vector<double> load_loss_curve(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,loss") throw Error(ErrorCode::ParseError, "missing loss header");
  std::vector<double> curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 2 || parse_int(f[0]) != static_cast<int64_t>(curve.size() + 1)) {
      throw Error(ErrorCode::ParseError, "bad loss row '" + line + "'");
    }
    curve.push_back(parse_double(f[1]));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Files, hashes, manifest
// ---------------------------------------------------------------------------

std::string sha256_hex(const std::vector<uint8_t>& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "SHA-256 failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_text_file(const fs::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

void write_manifest(std::ostream& out, const RunManifest& m) {
  out << "upmt-manifest 1\n";
  out << "run_id " << m.run_id << "\n";
  out << "codec_version " << m.codec_version << "\n";
  out << "seed " << m.seed << "\n";
  for (const auto& e : m.inputs) out << "input " << e.role << " " << e.sha256 << " " << e.path << "\n";
  for (const auto& e : m.outputs) out << "output " << e.role << " " << e.sha256 << " " << e.path << "\n";
  for (const auto& [stage, when] : m.stages) out << "stage " << stage << " " << when << "\n";
}

RunManifest read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "upmt-manifest 1") throw Error(ErrorCode::ParseError, "not a manifest");
  RunManifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw Error(ErrorCode::ParseError, where + ": malformed");
    const std::string key = line.substr(0, sp);
    const std::string rest = line.substr(sp + 1);
    if (key == "run_id") {
      m.run_id = rest;
    } else if (key == "codec_version") {
      m.codec_version = static_cast<int>(parse_int(rest));
    } else if (key == "seed") {
      m.seed = parse_uint(rest);
    } else if (key == "input" || key == "output") {
      // role and hash never contain spaces; the path may.
      const auto a = rest.find(' ');
      const auto b = a == std::string::npos ? a : rest.find(' ', a + 1);
      if (b == std::string::npos) throw Error(ErrorCode::ParseError, where + ": expected role, hash and path");
      ManifestEntry e{rest.substr(0, a), rest.substr(a + 1, b - a - 1), rest.substr(b + 1)};
      (key == "input" ? m.inputs : m.outputs).push_back(std::move(e));
    } else if (key == "stage") {
      const auto a = rest.find(' ');
      if (a == std::string::npos) throw Error(ErrorCode::ParseError, where + ": expected stage and time");
      m.stages.emplace_back(rest.substr(0, a), rest.substr(a + 1));
    } else {
      throw Error(ErrorCode::ParseError, where + ": unknown key '" + key + "'");
    }
  }
  return m;
}

void save_manifest(const RunManifest& manifest, const fs::path& path) {
  std::ostringstream ss;
  write_manifest(ss, manifest);
  write_text_file(path, ss.str());
}

RunManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_manifest(in);
}

void verify_manifest(const RunManifest& manifest, const fs::path& run_dir) {
  auto check = [&](const ManifestEntry& e, const fs::path& p) {
    const std::string actual = sha256_file(p);
    if (actual != e.sha256) {
      throw Error(ErrorCode::HashMismatch, e.role + " (" + p.string() + ") changed: expected " + e.sha256 +
                                               ", found " + actual);
    }
  };
  for (const auto& e : manifest.inputs) check(e, fs::path(e.path));
  for (const auto& e : manifest.outputs) check(e, run_dir / e.path);
}

void RunLayout::create() const {
  std::error_code ec;
  for (const auto& dir : {root, tokens_dir(), checkpoints_dir(), patterns_dir(), reports_dir()}) {
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  }
}

}  // namespace upmt
