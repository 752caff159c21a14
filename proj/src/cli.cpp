#include "tspnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "tspnet/errors.hpp"
#include "tspnet/gradcheck.hpp"
#include "tspnet/training.hpp"

namespace tspnet {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kGradcheckTolerance = 1e-4;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

struct LoadedConfig {
  RunConfig run;
  std::string text;
  fs::path base;  // relative paths resolve against the config's directory
};

LoadedConfig load_run_config(const fs::path& path) {
  LoadedConfig c;
  c.text = read_text(path);
  json j;
  try {
    j = json::parse(c.text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  c.run = run_config_from_json(j);
  c.base = path.parent_path();
  return c;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
  return s;
}

std::string segment_text(const SegmentIndex& s) {
  std::ostringstream ss;
  ss << "scale " << s.scale << " (w=" << s.width << ") index " << s.index << " frames [" << s.start << ", "
     << s.end() << ")";
  return ss.str();
}

json segment_json(const SegmentIndex& s) {
  return {{"scale", s.scale}, {"index", s.index}, {"start", s.start}, {"end", s.end()}, {"width", s.width}};
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> widths;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != item.size()) throw ConfigError("--widths", "expected comma-separated integers, got '" + text + "'");
    widths.push_back(v);
  }
  return widths;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const std::string& config_path, const std::string& out_dir, bool as_json, std::ostream& out) {
  const LoadedConfig cfg = load_run_config(config_path);
  const auto corpus = generate_synthetic_corpus(cfg.run.synth, cfg.run.synth_sentences);
  const fs::path dir(out_dir);
  save_corpus(dir, corpus);
  write_text(dir / "config.json", cfg.text);
  if (as_json) {
    out << json{{"manifest", (dir / "manifest.jsonl").string()}, {"sentences", corpus.size()}}.dump() << "\n";
  } else {
    out << "wrote " << corpus.size() << " sentences to " << (dir / "manifest.jsonl").string() << "\n";
  }
  return kExitOk;
}

std::vector<CorpusEntry> load_training_corpus(const fs::path& manifest) {
  std::vector<std::string> texts;
  for (const auto& row : read_manifest(manifest)) texts.push_back(row.text);
  return load_corpus(manifest, Vocabulary::build(texts));
}

int cmd_train(const std::string& config_path, bool as_json, std::ostream& out, std::ostream& err) {
  const LoadedConfig cfg = load_run_config(config_path);
  if (cfg.run.corpus.empty()) throw ConfigError("corpus", "a training manifest is required");
  if (cfg.run.output_dir.empty()) throw ConfigError("output_dir", "an output directory is required");
  const auto corpus = load_training_corpus(resolve(cfg.base, cfg.run.corpus));
  std::vector<CorpusEntry> validation;
  if (!cfg.run.validation.empty()) validation = load_training_corpus(resolve(cfg.base, cfg.run.validation));

  const fs::path dir = resolve(cfg.base, cfg.run.output_dir);
  fs::create_directories(dir);
  write_text(dir / "config.json", cfg.text);
  std::ofstream log(dir / "log.jsonl");
  if (!log) throw Error("cannot write " + (dir / "log.jsonl").string());

  TrainHooks hooks;
  if (!validation.empty()) hooks.validation = &validation;
  hooks.on_epoch = [&](const EpochLog& e) {
    const json j = to_json(e, cfg.run.train.log_wall_time);
    log << j.dump() << "\n" << std::flush;
    if (as_json) {
      out << j.dump() << "\n";
    } else {
      out << "epoch " << e.epoch << "  loss " << std::setprecision(6) << e.loss << "  token_acc " << e.token_accuracy;
      if (e.validation) out << "  val_bleu4 " << e.validation->bleu.at(4);
      out << "\n";
    }
  };
  hooks.on_checkpoint = [&](const Checkpoint& c) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch-%04zu.ckpt", c.epoch);
    save_checkpoint(dir / name, c);
    save_checkpoint(dir / "final.ckpt", c);
  };
  try {
    const TrainResult result = train(corpus, cfg.run.train, hooks);
    const auto& last = result.log.back();
    if (!as_json) {
      out << "finished at epoch " << last.epoch << ", checkpoint " << (dir / "final.ckpt").string() << "\n";
    }
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_translate(const std::string& ckpt_path, const std::string& features_path, std::optional<std::size_t> beam,
                  std::optional<std::size_t> max_len, bool as_json, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const FeatureSequence seq = load_feature_file(features_path);
  DecodeOptions opts{ckpt.model.config.beam_width, ckpt.model.config.max_decode_length,
                     ckpt.model.config.length_penalty};
  if (beam) opts.beam_width = *beam;
  if (max_len) opts.max_len = *max_len;
  const DecodeResult r = translate(ckpt.model, seq, opts);
  const auto words = ckpt.model.vocab.words_of(r.tokens);
  if (as_json) {
    out << json{{"tokens", words},
                {"ids", r.tokens},
                {"finished", r.finished},
                {"log_prob", r.log_prob},
                {"score", r.score}}
               .dump()
        << "\n";
  } else {
    out << join(words) << "\n";
  }
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& manifest, const std::string& out_path,
                 std::optional<std::size_t> beam, std::size_t threads, bool as_json, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto corpus = load_corpus(manifest, ckpt.model.vocab);
  DecodeOptions opts{ckpt.model.config.beam_width, ckpt.model.config.max_decode_length,
                     ckpt.model.config.length_penalty};
  if (beam) opts.beam_width = *beam;
  const EvaluationReport report = evaluate(corpus, ckpt.model, opts, threads);
  if (!out_path.empty()) write_text(out_path, to_json(report).dump(2) + "\n");
  if (as_json) {
    out << to_json(report.scores).dump() << "\n";
  } else {
    out << std::fixed << std::setprecision(2);
    for (const auto& [n, v] : report.scores.bleu) out << "BLEU-" << n << " " << v << "\n";
    out << "ROUGE-L " << report.scores.rouge_l << "\n";
  }
  return kExitOk;
}

int cmd_inspect(const std::string& features_path, const std::string& widths_text, std::optional<std::size_t> stride_opt,
                std::size_t pivot, const std::string& ckpt_path, std::size_t top, bool as_json, std::ostream& out) {
  const FeatureSequence seq = load_feature_file(features_path);
  std::optional<Checkpoint> ckpt;
  std::vector<std::size_t> widths = widths_text.empty() ? std::vector<std::size_t>{8, 12, 16} : parse_widths(widths_text);
  std::size_t stride = stride_opt.value_or(2);
  if (!ckpt_path.empty()) {
    ckpt = load_checkpoint(ckpt_path);
    const auto& c = ckpt->model.config;
    if (!widths_text.empty() && widths != c.widths) {
      throw ConfigError("--widths", "differs from the checkpoint's widths");
    }
    if (stride_opt && *stride_opt != c.stride) throw ConfigError("--stride", "differs from the checkpoint's stride");
    widths = c.widths;
    stride = c.stride;
  }
  const MultiScaleLayout layout = plan_layout(seq.frames, widths, stride);
  if (pivot >= layout.pivot_count) {
    throw ConfigError("--pivot", "pivot " + std::to_string(pivot) + " out of range, video has " +
                                     std::to_string(layout.pivot_count) + " pivots");
  }
  const Neighborhood nb = surrounding_neighborhood(layout, pivot);

  struct Scored {
    SegmentIndex segment;
    Real weight;
  };
  std::vector<Scored> scored;
  std::string mode;
  if (ckpt) {
    mode = to_string(ckpt->model.config.mode);
    EncodeOptions opts;
    opts.keep_attention_trace = true;
    const EncodedVideo enc = ckpt->model.encode(seq, opts);
    if (enc.attention_trace) {
      const auto& members = enc.attention_trace->neighborhoods[pivot].members;
      const auto& weights = enc.attention_trace->weights[pivot];
      for (std::size_t i = 0; i < members.size(); ++i) scored.push_back({members[i], weights[i]});
      std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.weight > b.weight; });
    }
  }

  if (as_json) {
    json j{{"layout",
            {{"frames", layout.original_length},
             {"pivot_count", layout.pivot_count},
             {"padded_length", layout.padded_length},
             {"widths", layout.widths},
             {"stride", layout.stride}}},
           {"pivot", segment_json(nb.pivot)}};
    json members = json::array();
    for (const auto& m : nb.members) members.push_back(segment_json(m));
    j["neighborhood"] = members;
    if (ckpt) {
      json att = json::array();
      for (const auto& s : scored) {
        json e = segment_json(s.segment);
        e["weight"] = s.weight;
        att.push_back(e);
      }
      j["mode"] = mode;
      j["attention"] = att;
    }
    out << j.dump() << "\n";
    return kExitOk;
  }

  out << "frames " << layout.original_length << ", pivots " << layout.pivot_count << ", padded to "
      << layout.padded_length << ", stride " << layout.stride << ", widths";
  for (auto w : layout.widths) out << " " << w;
  out << "\n";
  out << "pivot " << pivot << ": " << segment_text(nb.pivot) << "\n";
  out << "neighborhood: " << nb.members.size() << " members\n";
  for (const auto& m : nb.members) out << "  " << segment_text(m) << "\n";
  if (ckpt) {
    if (scored.empty()) {
      out << "mode " << mode << " has no inter-scale attention to show\n";
    } else {
      out << "attention (" << mode << ", " << scored.size() << " segments, descending):\n";
      out << std::fixed << std::setprecision(4);
      for (std::size_t i = 0; i < scored.size(); ++i) {
        out << (i < top ? "* " : "  ") << scored[i].weight << "  " << segment_text(scored[i].segment) << "\n";
      }
    }
  }
  return kExitOk;
}

int cmd_gradcheck(const std::string& mode_name, std::uint64_t seed, bool as_json, std::ostream& out) {
  const EncoderMode mode = encoder_mode_from_string(mode_name);
  const GradcheckReport report = model_gradcheck(mode, seed);
  const bool pass = report.max_rel_err < kGradcheckTolerance;
  if (as_json) {
    json j = to_json(report);
    j["mode"] = mode_name;
    j["seed"] = seed;
    j["tolerance"] = kGradcheckTolerance;
    j["pass"] = pass;
    out << j.dump() << "\n";
  } else {
    out << std::scientific << std::setprecision(3);
    for (const auto& p : report.parameters) {
      out << "  " << std::left << std::setw(36) << p.name << " rel " << p.max_rel_err << "  abs " << p.max_abs_err
          << "\n";
    }
    out << (pass ? "PASS" : "FAIL") << " mode " << mode_name << ": max relative error " << report.max_rel_err
        << " (" << report.worst_parameter << ") over " << report.checked << " entries\n";
  }
  return pass ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical sign-video translation: synthesis, training, decoding and diagnostics"};
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "Machine-readable JSON on stdout");

  std::string config, out_dir, ckpt, features, manifest, out_path, widths, mode = "joint";
  std::optional<std::size_t> beam, max_len, stride;
  std::size_t pivot = 0, threads = 0, top = 4;
  std::uint64_t seed = 1;

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  synth->add_option("--config", config, "Run config (JSON)")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_flag("--json", as_json);

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config, "Run config (JSON)")->required();
  train_cmd->add_flag("--json", as_json);

  auto* translate_cmd = app.add_subcommand("translate", "Translate one feature file");
  translate_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  translate_cmd->add_option("--features", features, "Feature file")->required();
  translate_cmd->add_option("--beam", beam, "Beam width (1 = greedy)")->check(CLI::PositiveNumber);
  translate_cmd->add_option("--max-len", max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
  translate_cmd->add_flag("--json", as_json);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a manifest");
  evaluate_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  evaluate_cmd->add_option("--manifest", manifest, "Manifest (JSONL)")->required();
  evaluate_cmd->add_option("--out", out_path, "Report file (JSON)");
  evaluate_cmd->add_option("--beam", beam, "Beam width (1 = greedy)")->check(CLI::PositiveNumber);
  evaluate_cmd->add_option("--threads", threads, "Worker threads (0 = TSP_THREADS or all cores)");
  evaluate_cmd->add_flag("--json", as_json);

  auto* inspect_cmd = app.add_subcommand("inspect", "Show the segments around a pivot");
  inspect_cmd->add_option("--features", features, "Feature file")->required();
  inspect_cmd->add_option("--widths", widths, "Comma-separated widths (default 8,12,16)");
  inspect_cmd->add_option("--stride", stride, "Stride (default 2)")->check(CLI::PositiveNumber);
  inspect_cmd->add_option("--pivot", pivot, "Pivot index")->required();
  inspect_cmd->add_option("--ckpt", ckpt, "Checkpoint for attention weights");
  inspect_cmd->add_option("--top", top, "Segments to mark as highest-scoring");
  inspect_cmd->add_flag("--json", as_json);

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check on a toy model");
  gradcheck_cmd->add_option("--mode", mode, "Encoder mode");
  gradcheck_cmd->add_option("--seed", seed, "Seed");
  gradcheck_cmd->add_flag("--json", as_json);

  std::vector<const char*> argv{"tspnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  try {
    if (synth->parsed()) return cmd_synth(config, out_dir, as_json, out);
    if (train_cmd->parsed()) return cmd_train(config, as_json, out, err);
    if (translate_cmd->parsed()) return cmd_translate(ckpt, features, beam, max_len, as_json, out);
    if (evaluate_cmd->parsed()) return cmd_evaluate(ckpt, manifest, out_path, beam, threads, as_json, out);
    if (inspect_cmd->parsed()) return cmd_inspect(features, widths, stride, pivot, ckpt, top, as_json, out);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(mode, seed, as_json, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace tspnet
