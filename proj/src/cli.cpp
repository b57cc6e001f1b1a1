#include "upmt/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "upmt/attention_model.hpp"
#include "upmt/metrics.hpp"
#include "upmt/ngram_model.hpp"
#include "upmt/remi.hpp"
#include "upmt/text.hpp"

namespace upmt::cli {

namespace fs = std::filesystem;

int exit_code_for(const Error& error) {
  return error_class(error.code()) == ErrorClass::Io ? kExitIo : kExitDomain;
}

TokenSequence melody_tokens(const Score& score) { return encode(score, select_melody_track(score)); }

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

PredictorCheckpoint train_stage(const TokenSequence& favorite, const PipelineConfig& config) {
  validate_config(config);
  const EventFamily selected[] = {config.select};
  const FavoriteWeights weights = compute_favorite_weights(favorite, selected, config.alpha);

  if (config.model == "ngram") {
    NGramModel model({.order = config.ngram_order, .delta = config.ngram_delta});
    model.fit(favorite, weights.w);
    PredictorCheckpoint cp = model.to_checkpoint();
    cp.seed = config.seed;
    cp.weights = weights.w;
    cp.alpha = weights.alpha;
    cp.selected = weights.selected;
    return cp;
  }

  const AttentionConfig ac{.d_model = config.d_model,
                           .layers = config.layers,
                           .heads = config.heads,
                           .window = config.window,
                           .memory = config.memory,
                           .seed = config.seed};
  std::unique_ptr<Predictor> base;
  if (config.pretrain_epochs > 0) {
    PretrainOptions po;
    po.epochs = config.pretrain_epochs;
    base = make_predictor(pretrain(ac, po));
  } else {
    base = std::make_unique<AttentionModel>(ac);
  }
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(config.segment_length), favorite.size());
  const FinetuneOptions fo{.epochs = config.epochs,
                           .stop_loss = config.stop_loss,
                           .learning_rate = config.learning_rate,
                           .clip_norm = config.clip_norm};
  return finetune(*base, segment(favorite, n), weights, fo, config.seed);
}

SignaturePattern pattern_stage(const TokenSequence& favorite, const PipelineConfig& config) {
  validate_config(config);
  return extract_smp_shortening(selected_stream(favorite, config.select), config.pattern_length,
                                ExtractOptions{config.random_pattern, config.seed});
}

TransferStage transfer_stage(const Score& input, const Predictor& model, const PatternInterval& smpi,
                             const PipelineConfig& config) {
  validate_config(config);
  TransferStage out;
  out.track = select_melody_track(input);
  out.input_tokens = encode(input, out.track);
  out.result = transfer(out.input_tokens, model, smpi, transfer_config(config));
  out.score = decode(out.result.tokens, input, out.track);
  return out;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string config_text(const PipelineConfig& config) {
  std::ostringstream ss;
  write_config(ss, config);
  return ss.str();
}

/// Content-derived, so the same inputs and config always map to the same id.
std::string run_id(const std::string& favorite_hash, const std::string& input_hash, const std::string& config) {
  const std::string key = favorite_hash + input_hash + config;
  return "run-" + sha256_hex(std::vector<uint8_t>(key.begin(), key.end())).substr(0, 16);
}

std::string smp_text(const SignaturePattern& smp) {
  std::string s;
  for (std::size_t i = 0; i < smp.values.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(smp.values[i]);
  }
  return s + "\n";
}

std::string report_text(const SimilarityReport& report) {
  std::ostringstream ss;
  write_report(ss, report);
  return ss.str();
}

}  // namespace

PipelineRun run_pipeline(const fs::path& favorite_path, const fs::path& input_path, const PipelineConfig& config,
                         const fs::path& out_dir) {
  validate_config(config);
  PipelineRun run;
  run.layout = RunLayout{out_dir};
  const RunLayout& L = run.layout;
  RunManifest& m = run.manifest;

  const std::string fav_hash = sha256_file(favorite_path);
  const std::string in_hash = sha256_file(input_path);
  const std::string cfg = config_text(config);
  m.run_id = run_id(fav_hash, in_hash, cfg);
  m.seed = config.seed;
  m.inputs = {{"favorite", fav_hash, fs::absolute(favorite_path).string()},
              {"input", in_hash, fs::absolute(input_path).string()}};

  L.create();
  write_text_file(L.config(), cfg);

  const Score favorite = read_smf_file(favorite_path.string());
  const Score input = read_smf_file(input_path.string());
  const TokenSequence fav_tokens = melody_tokens(favorite);
  save_tokens(fav_tokens, L.favorite_tokens().string());
  save_tokens(melody_tokens(input), L.input_tokens().string());
  m.stages.emplace_back("tokenize", utc_now());

  const PredictorCheckpoint cp = train_stage(fav_tokens, config);
  save_checkpoint(cp, L.checkpoint());
  save_loss_curve(cp.loss_curve, L.loss_curve());
  m.stages.emplace_back("train", utc_now());

  const SignaturePattern smp = pattern_stage(fav_tokens, config);
  const PatternInterval smpi = smp_to_smpi(smp);
  write_text_file(L.smp(), smp_text(smp));
  write_text_file(L.smpi(), format_smpi(smpi) + "\n");
  m.stages.emplace_back("extract-pattern", utc_now());

  // The transfer runs from the stored artifacts, exactly as the subcommand does.
  const auto model = make_predictor(load_checkpoint(L.checkpoint()));
  const TransferStage ts = transfer_stage(input, *model, parse_smpi(trim(read_text_file(L.smpi()))), config);
  save_tokens(ts.result.tokens, L.transferred_tokens().string());
  write_smf_file(ts.score, L.transferred_midi().string());
  m.stages.emplace_back("transfer", utc_now());

  const Score transferred = read_smf_file(L.transferred_midi().string());
  run.report = similarity_report(transferred, favorite, config.p_min, config.p_max, config.select);
  run.baseline = similarity_report(input, favorite, config.p_min, config.p_max, config.select);
  save_report(run.report, L.report());
  save_report(run.baseline, L.baseline_report());
  m.stages.emplace_back("evaluate", utc_now());

  for (const auto& [role, path] : std::vector<std::pair<std::string, fs::path>>{
           {"config", L.config()},
           {"favorite_tokens", L.favorite_tokens()},
           {"input_tokens", L.input_tokens()},
           {"checkpoint", L.checkpoint()},
           {"loss_curve", L.loss_curve()},
           {"smp", L.smp()},
           {"smpi", L.smpi()},
           {"transferred_tokens", L.transferred_tokens()},
           {"transferred_midi", L.transferred_midi()},
           {"report", L.report()},
           {"baseline_report", L.baseline_report()},
       }) {
    m.outputs.push_back({role, sha256_file(path), fs::relative(path, L.root).generic_string()});
  }
  save_manifest(m, L.manifest());
  return run;
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kSelectChoices = {"note-on", "note-duration", "position"};

/// Config file plus the per-run flags that override it.
struct ConfigFlags {
  std::string config_path;
  uint64_t seed = 0;
  std::string select;
  int pattern_length = 0;
  double temperature = 0.0;
  int epochs = 0;
  std::string model;
  std::vector<CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Pipeline config file")->check(CLI::ExistingFile);
    options = {
        app->add_option("--seed", seed, "Random seed"),
        app->add_option("--select", select, "Event family to transfer")->check(CLI::IsMember(kSelectChoices)),
        app->add_option("--pattern-length", pattern_length, "Signature pattern length a"),
        app->add_option("--temperature", temperature, "Sampling temperature"),
        app->add_option("--epochs", epochs, "Fine-tuning epochs"),
        app->add_option("--model", model, "Predictor kind")->check(CLI::IsMember({"attention", "ngram"})),
    };
  }

  PipelineConfig resolve() const {
    PipelineConfig c = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (options[0]->count()) c.seed = seed;
    if (options[1]->count()) c.select = *family_from_option(select);
    if (options[2]->count()) c.pattern_length = pattern_length;
    if (options[3]->count()) c.temperature = temperature;
    if (options[4]->count()) c.epochs = epochs;
    if (options[5]->count()) c.model = model;
    try {
      validate_config(c);
    } catch (const Error& e) {
      throw CLI::ValidationError(e.what());
    }
    return c;
  }
};

void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text_file(path, text);
  }
}

std::string token_text(const TokenSequence& seq) {
  std::ostringstream ss;
  write_token_text(ss, seq);
  return ss.str();
}

std::string slot_kind_name(SlotKind kind) {
  switch (kind) {
    case SlotKind::Sampled: return "sampled";
    case SlotKind::Trigger: return "trigger";
    case SlotKind::Forced: return "forced";
  }
  return "?";
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

/// Two numeric columns, separated by a comma or whitespace. A first line that
/// does not parse is taken as a header.
std::pair<std::vector<double>, std::vector<double>> read_columns(std::istream& in) {
  std::vector<double> x, y;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (char& ch : line) {
      if (ch == ',' || ch == '\t' || ch == '\r') ch = ' ';
    }
    std::istringstream ss(line);
    std::string a, b, extra;
    if (!(ss >> a)) continue;
    if (!(ss >> b) || (ss >> extra)) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": expected two columns");
    }
    try {
      const double va = parse_double(a);
      const double vb = parse_double(b);
      x.push_back(va);
      y.push_back(vb);
    } catch (const Error&) {
      if (lineno == 1 && x.empty()) continue;
      throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": expected numbers");
    }
  }
  return {x, y};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transfer a MIDI piece toward a favorite piece and score the result."};
  app.name("upmt");
  app.require_subcommand(1, 1);

  // tokenize
  std::string tok_input, tok_out;
  int tok_track = -1;
  auto* tokenize = app.add_subcommand("tokenize", "MIDI to token text");
  tokenize->add_option("--input", tok_input, "MIDI file")->required()->check(CLI::ExistingFile);
  tokenize->add_option("--track", tok_track, "Track index (default: melody track)");
  tokenize->add_option("--out", tok_out, "Token text file (default: stdout)");

  // detokenize
  std::string det_input, det_template, det_out;
  int det_track = -1;
  auto* detokenize = app.add_subcommand("detokenize", "Token text to MIDI, onto a template score");
  detokenize->add_option("--input", det_input, "Token text file")->required()->check(CLI::ExistingFile);
  detokenize->add_option("--template", det_template, "MIDI file supplying the other tracks")
      ->required()
      ->check(CLI::ExistingFile);
  detokenize->add_option("--track", det_track, "Track to replace (default: melody track)");
  detokenize->add_option("--out", det_out, "Output MIDI file")->required();

  // train
  std::string train_favorite, train_out, train_loss;
  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "Favorite-aware training; prints the loss curve");
  train->add_option("--favorite", train_favorite, "Favorite MIDI file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Checkpoint file")->required();
  train_flags.attach(train);

  // extract-pattern
  std::string pat_favorite, pat_out, pat_smp;
  ConfigFlags pat_flags;
  auto* extract = app.add_subcommand("extract-pattern", "Signature pattern interval of the favorite");
  extract->add_option("--favorite", pat_favorite, "Favorite MIDI file")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", pat_out, "SMPI file (default: stdout)");
  extract->add_option("--smp-out", pat_smp, "Also write the pattern itself");
  pat_flags.attach(extract);

  // transfer
  std::string tr_input, tr_ckpt, tr_smpi, tr_out, tr_tokens;
  ConfigFlags tr_flags;
  auto* xfer = app.add_subcommand("transfer", "Rewrite the input's selected events; prints the slot trace");
  xfer->add_option("--input", tr_input, "Input MIDI file")->required()->check(CLI::ExistingFile);
  xfer->add_option("--checkpoint", tr_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  xfer->add_option("--smpi", tr_smpi, "SMPI file")->required()->check(CLI::ExistingFile);
  xfer->add_option("--out", tr_out, "Output MIDI file")->required();
  xfer->add_option("--tokens-out", tr_tokens, "Also write the transferred tokens");
  tr_flags.attach(xfer);

  // evaluate
  std::string ev_a, ev_b, ev_hist;
  bool ev_melody = false;
  auto* evaluate = app.add_subcommand("evaluate", "D_P, D_N, D_D, D_IOI of a candidate against a reference");
  evaluate->add_option("--a", ev_a, "Candidate MIDI file")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--b", ev_b, "Reference MIDI file")->required()->check(CLI::ExistingFile);
  evaluate->add_flag("--melody-only", ev_melody, "Compare only the melody tracks");
  evaluate->add_option("--histograms", ev_hist, "Write per-track piece histograms as CSV");

  // similarity
  std::vector<std::string> sim_a;
  std::string sim_b, sim_select = "note-on", sim_variant = "literal";
  int sim_p = 0, sim_p_min = 2, sim_p_max = 5;
  auto* similarity = app.add_subcommand("similarity", "Pattern similarity table");
  similarity->add_option("--a", sim_a, "Candidate MIDI file(s)")->required()->check(CLI::ExistingFile);
  similarity->add_option("--b", sim_b, "Reference MIDI file")->required()->check(CLI::ExistingFile);
  auto* sim_p_opt = similarity->add_option("--p", sim_p, "Single pattern length");
  similarity->add_option("--p-min", sim_p_min, "Smallest pattern length")->excludes(sim_p_opt);
  similarity->add_option("--p-max", sim_p_max, "Largest pattern length")->excludes(sim_p_opt);
  similarity->add_option("--select", sim_select, "Event family")->check(CLI::IsMember(kSelectChoices));
  similarity->add_option("--variant", sim_variant, "literal or normalized")
      ->check(CLI::IsMember({"literal", "normalized"}));

  // correlate
  std::string cor_input;
  auto* correlate = app.add_subcommand("correlate", "Kendall tau-b of two numeric columns");
  correlate->add_option("--input", cor_input, "Two-column file (default: stdin)")->check(CLI::ExistingFile);

  // pipeline
  std::string pipe_favorite, pipe_input, pipe_out, pipe_rerun;
  ConfigFlags pipe_flags;
  auto* pipeline = app.add_subcommand("pipeline", "All stages into one run directory");
  auto* pipe_fav_opt = pipeline->add_option("--favorite", pipe_favorite, "Favorite MIDI file")->check(CLI::ExistingFile);
  auto* pipe_in_opt = pipeline->add_option("--input", pipe_input, "Input MIDI file")->check(CLI::ExistingFile);
  pipeline->add_option("--out", pipe_out, std::string("Run directory (default: $") + kRunRootEnv + "/<run id>)");
  pipeline->add_option("--rerun", pipe_rerun, "Repeat the run recorded in this run directory")
      ->check(CLI::ExistingDirectory)
      ->excludes(pipe_fav_opt)
      ->excludes(pipe_in_opt);
  pipe_flags.attach(pipeline);

  std::vector<const char*> argv{"upmt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (tokenize->parsed()) {
      const Score score = read_smf_file(tok_input);
      const std::size_t track = tok_track >= 0 ? static_cast<std::size_t>(tok_track) : select_melody_track(score);
      if (track >= score.tracks.size()) throw Error(ErrorCode::InvalidArgument, "track index out of range");
      write_output(tok_out, token_text(encode(score, track)), out);
    } else if (detokenize->parsed()) {
      const Score tmpl = read_smf_file(det_template);
      const std::size_t track = det_track >= 0 ? static_cast<std::size_t>(det_track) : select_melody_track(tmpl);
      if (track >= tmpl.tracks.size()) throw Error(ErrorCode::InvalidArgument, "track index out of range");
      write_smf_file(decode(load_tokens(det_input), tmpl, track), det_out);
    } else if (train->parsed()) {
      const PipelineConfig config = train_flags.resolve();
      const PredictorCheckpoint cp = train_stage(melody_tokens(read_smf_file(train_favorite)), config);
      save_checkpoint(cp, train_out);
      out << "epoch,loss\n";
      for (std::size_t i = 0; i < cp.loss_curve.size(); ++i) out << i + 1 << "," << format_double(cp.loss_curve[i]) << "\n";
    } else if (extract->parsed()) {
      const PipelineConfig config = pat_flags.resolve();
      const SignaturePattern smp = pattern_stage(melody_tokens(read_smf_file(pat_favorite)), config);
      if (!pat_smp.empty()) write_text_file(pat_smp, smp_text(smp));
      write_output(pat_out, format_smpi(smp_to_smpi(smp)) + "\n", out);
    } else if (xfer->parsed()) {
      const PipelineConfig config = tr_flags.resolve();
      const auto model = make_predictor(load_checkpoint(tr_ckpt));
      const PatternInterval smpi = parse_smpi(trim(read_text_file(tr_smpi)));
      const TransferStage ts = transfer_stage(read_smf_file(tr_input), *model, smpi, config);
      write_smf_file(ts.score, tr_out);
      if (!tr_tokens.empty()) save_tokens(ts.result.tokens, tr_tokens);
      if (ts.result.empty_selection) err << "warning: input has no selected events; output equals input\n";
      out << "position,kind,value,adjusted\n";
      for (const auto& s : ts.result.slots) {
        out << s.position << "," << slot_kind_name(s.kind) << "," << s.value << "," << (s.adjusted ? 1 : 0) << "\n";
      }
    } else if (evaluate->parsed()) {
      const Score a = read_smf_file(ev_a);
      const Score b = read_smf_file(ev_b);
      SimilarityReport report;
      for (Metric m : kAllMetrics) {
        auto detail = d_metric_detail(a, b, m, {.melody_only = ev_melody});
        report.d[m] = detail.value;
        report.detail[m] = std::move(detail.rows);
      }
      out << report_text(report);
      if (!ev_hist.empty()) {
        std::string csv = "metric,track,bin,a,b\n";
        const std::size_t tracks = std::min(a.tracks.size(), b.tracks.size());
        for (Metric m : kAllMetrics) {
          for (std::size_t t = 0; t < tracks; ++t) {
            const Histogram ha = piece_histogram(a, t, m);
            const Histogram hb = piece_histogram(b, t, m);
            for (std::size_t k = 0; k < ha.bins.size(); ++k) {
              csv += metric_name(m) + "," + std::to_string(t) + "," + std::to_string(k) + "," +
                     format_double(ha.bins[k]) + "," + format_double(hb.bins[k]) + "\n";
            }
          }
        }
        write_text_file(ev_hist, csv);
      }
    } else if (similarity->parsed()) {
      const int p_lo = sim_p_opt->count() ? sim_p : sim_p_min;
      const int p_hi = sim_p_opt->count() ? sim_p : sim_p_max;
      if (p_lo < 1 || p_hi < p_lo) throw Error(ErrorCode::InvalidArgument, "bad pattern length range");
      const EventFamily family = *family_from_option(sim_select);
      const PsVariant variant = sim_variant == "literal" ? PsVariant::Literal : PsVariant::Normalized;
      const auto x = selected_stream(melody_tokens(read_smf_file(sim_b)), family);
      out << "a,p,ps\n";
      for (const auto& path : sim_a) {
        const auto y_hat = selected_stream(melody_tokens(read_smf_file(path)), family);
        for (int p = p_lo; p <= p_hi; ++p) {
          std::optional<double> ps;
          try {
            ps = pattern_similarity(x, y_hat, p, variant);
          } catch (const Error& e) {
            if (e.code() != ErrorCode::TooShort) throw;
          }
          out << path << "," << p << "," << optional_text(ps) << "\n";
        }
      }
    } else if (correlate->parsed()) {
      std::pair<std::vector<double>, std::vector<double>> cols;
      if (cor_input.empty()) {
        cols = read_columns(std::cin);
      } else {
        std::ifstream in(cor_input);
        if (!in) throw Error(ErrorCode::IoError, "cannot open " + cor_input);
        cols = read_columns(in);
      }
      const KendallResult r = kendall_tau(cols.first, cols.second);
      out << "tau,p_value\n" << format_double(r.tau) << "," << format_double(r.p_value) << "\n";
    } else if (pipeline->parsed()) {
      PipelineConfig config;
      fs::path favorite, input;
      if (!pipe_rerun.empty()) {
        const RunLayout prev{pipe_rerun};
        const RunManifest m = load_manifest(prev.manifest());
        verify_manifest(m, prev.root);
        for (const auto& e : m.inputs) (e.role == "favorite" ? favorite : input) = e.path;
        config = load_config(prev.config());
      } else {
        if (pipe_favorite.empty() || pipe_input.empty()) {
          err << "pipeline: --favorite and --input are required (or --rerun)\n";
          return kExitUsage;
        }
        favorite = pipe_favorite;
        input = pipe_input;
        config = pipe_flags.resolve();
      }
      fs::path out_dir = pipe_out;
      if (out_dir.empty()) {
        const char* root = std::getenv(kRunRootEnv);
        if (root == nullptr || *root == '\0') {
          err << "pipeline: give --out or set " << kRunRootEnv << "\n";
          return kExitUsage;
        }
        out_dir = fs::path(root) / run_id(sha256_file(favorite), sha256_file(input), config_text(config));
      }
      const PipelineRun result = run_pipeline(favorite, input, config, out_dir);
      err << "run " << result.manifest.run_id << " written to " << result.layout.root.string() << "\n";
      out << report_text(result.report);
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << error_name(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}

}  // namespace upmt::cli
