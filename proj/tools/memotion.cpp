// Copyright (c) 2026, The memotion-mtl Authors
// SPDX-License-Identifier: Apache-2.0

// memotion: synth, preprocess, train, evaluate, predict, gradcheck.
//
// Exit codes: 0 success, 2 data error, 3 numerical abort, 4 checkpoint
// problem, 1 anything else. MEMOTION_LOG sets the log level (trace, debug,
// info, warn, error, off); logs go to stderr.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "memotion/config.hpp"
#include "memotion/gradcheck_suite.hpp"
#include "memotion/image_io.hpp"
#include "memotion/labels.hpp"
#include "memotion/records.hpp"
#include "memotion/synthetic.hpp"
#include "memotion/tokenizer.hpp"
#include "memotion/train.hpp"

namespace fs = std::filesystem;
using namespace memotion;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_st("memotion");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("MEMOTION_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only honor real names.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  return path.empty() ? RunConfig::parse("", "<defaults>", overrides) : RunConfig::load(path, overrides);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

/// Records must match the model's input sizes and vocabulary.
void check_records(const ModelConfig& mc, const std::vector<MemeSample>& samples, const std::string& source) {
  if (samples.empty()) throw InputError(source + ": no records");
  for (const auto& s : samples) {
    const std::string where = source + ": record '" + s.id + "'";
    if (uses_image(mc.variant)) {
      if (s.image.height != mc.image.input_resolution || s.image.width != mc.image.input_resolution)
        throw InputError(where + " has a " + std::to_string(s.image.height) + "x" + std::to_string(s.image.width) +
                         " image, model expects " + std::to_string(mc.image.input_resolution));
    }
    if (uses_text(mc.variant)) {
      if (s.text.length() != mc.text.max_seq_len)
        throw InputError(where + " has " + std::to_string(s.text.length()) + " tokens, model expects " +
                         std::to_string(mc.text.max_seq_len));
      for (auto id : s.text.input_ids)
        if (id < 0 || static_cast<std::size_t>(id) >= mc.text.vocab_size)
          throw InputError(where + " has token id " + std::to_string(id) + " outside the vocabulary of " +
                           std::to_string(mc.text.vocab_size));
    }
  }
}

Raster to_raster(const ImageData& img) {
  Raster r;
  r.height = img.height;
  r.width = img.width;
  r.channels = 3;
  r.values.resize(std::size_t{img.height} * img.width * 3);
  const std::size_t plane = std::size_t{img.height} * img.width;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) r.values[i * 3 + c] = double(img.pixels[c * plane + i]) + kPixelMean;
  return r;
}

std::string histogram_text(const std::vector<LabelSet>& labels) {
  const auto h = label_histograms(labels);
  std::string out;
  for (Task t : kAllTasks) {
    out += "  " + std::string(task_name(t)) + ":";
    for (auto c : h[task_index(t)]) out += " " + std::to_string(c);
    out += "\n";
  }
  return out;
}

// ---- synth

struct SynthArgs {
  std::string out;
  std::size_t n = 200;
  std::uint64_t seed = 5;
  std::size_t resolution = 64;
  std::size_t seq_len = 32;
  std::size_t vocab_size = 200;
};

int cmd_synth(const SynthArgs& a) {
  SyntheticConfig sc;
  sc.resolution = a.resolution;
  sc.max_seq_len = a.seq_len;
  sc.vocab_size = a.vocab_size;
  const auto d = generate_synthetic_dataset(a.n, a.seed, sc);
  const fs::path dir(a.out);
  fs::create_directories(dir / "images");
  std::vector<LabeledText> rows;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    write_pnm((dir / "images" / (s.id + ".ppm")).string(), to_raster(s.image));
    rows.push_back({s.id + ".ppm", d.texts[i], s.labels});
  }
  write_text(dir / "labels.csv", format_label_file(rows, LabelMap::builtin()));
  d.vocab.save((dir / "vocab.txt").string());
  write_records((dir / "train.mem").string(), d.samples);
  spdlog::info("wrote {} synthetic samples to {}", d.samples.size(), dir.string());
  std::cout << "samples\t" << d.samples.size() << "\nvocab\t" << d.vocab.size() << "\n";
  return 0;
}

// ---- preprocess

struct PreprocessArgs {
  std::string config, labels, images, vocab, out, label_map;
  std::optional<std::size_t> resolution, seq_len, vocab_size;
  std::vector<std::string> overrides;
};

fs::path find_image(const fs::path& dir, const std::string& name) {
  const fs::path direct = dir / name;
  if (fs::exists(direct) && (direct.extension() == ".ppm" || direct.extension() == ".pgm")) return direct;
  for (const char* ext : {".ppm", ".pgm"}) {
    fs::path alt = direct;
    alt.replace_extension(ext);
    if (fs::exists(alt)) return alt;
  }
  if (fs::exists(direct)) return direct;  // decoder reports the format problem
  throw DecodeError(direct.string() + ": image not found (convert to PPM first)");
}

int cmd_preprocess(const PreprocessArgs& a) {
  const auto rc = load_run_config(a.config, a.overrides);
  const std::string labels_path = a.labels.empty() ? rc.data.labels : a.labels;
  const std::string images_dir = a.images.empty() ? rc.data.images : a.images;
  const std::string vocab_path = a.vocab.empty() ? rc.data.vocab : a.vocab;
  if (labels_path.empty() || images_dir.empty() || vocab_path.empty() || a.out.empty())
    throw ConfigError("preprocess needs --labels, --images, --vocab and --out (or the [data] keys)");
  const std::size_t resolution = a.resolution.value_or(rc.model.image.input_resolution);
  const std::size_t seq_len = a.seq_len.value_or(rc.model.text.max_seq_len);
  const std::size_t vocab_size = a.vocab_size.value_or(rc.data.vocab_size);

  const LabelMap map = a.label_map.empty() ? LabelMap::builtin() : LabelMap::load(a.label_map);
  const auto rows = parse_label_file(labels_path, map);
  Vocabulary vocab;
  if (fs::exists(vocab_path)) {
    vocab = Vocabulary::load(vocab_path);
    spdlog::info("loaded vocabulary of {} entries from {}", vocab.size(), vocab_path);
  } else {
    std::vector<std::string> corpus;
    for (const auto& r : rows) corpus.push_back(r.text);
    vocab = build_vocab(corpus, vocab_size);
    vocab.save(vocab_path);
    spdlog::info("built vocabulary of {} entries into {}", vocab.size(), vocab_path);
  }
  RecordWriter writer(a.out);
  std::size_t truncated = 0;
  std::vector<LabelSet> labels;
  for (const auto& r : rows) {
    MemeSample s;
    s.id = fs::path(r.image_name).stem().string();
    s.image = load_image(find_image(images_dir, r.image_name).string(), resolution);
    auto tok = tokenize(r.text, vocab, seq_len);
    truncated += tok.truncated;
    s.text = std::move(tok.encoded);
    s.labels = r.labels;
    labels.push_back(s.labels);
    writer.write(s);
  }
  writer.close();
  std::cout << "samples\t" << rows.size() << "\ntruncated_texts\t" << truncated << "\nclass histograms\n"
            << histogram_text(labels);
  return 0;
}

// ---- train

struct TrainArgs {
  std::string config, records, variant, out, vocab, resume;
  std::vector<std::string> overrides;
};

std::string metrics_table(Variant v, const EvalResult& r) {
  std::ostringstream os;
  os << "variant";
  for (Task t : kAllTasks) os << '\t' << task_name(t);
  os << "\tmean\n" << variant_name(v);
  os << std::fixed << std::setprecision(4);
  for (Task t : kAllTasks) os << '\t' << r.macro_f1[task_index(t)];
  os << '\t' << r.mean_f1 << '\n';
  return os.str();
}

std::string report_text(const CompetitionReport& r) {
  std::ostringstream os;
  write_table(os, r);
  os << '\n';
  write_key_values(os, r);
  return os.str();
}

int cmd_train(const TrainArgs& a) {
  const fs::path out(a.out);
  fs::create_directories(out);

  std::optional<Checkpoint> resume_ck;
  RunConfig rc = load_run_config(a.config, a.overrides);
  if (!a.resume.empty()) {
    resume_ck = load_checkpoint(a.resume);
    rc.model = checkpoint_model_config(*resume_ck);
    rc.train = checkpoint_train_config(*resume_ck);
  } else {
    if (!a.variant.empty()) rc.model.variant = parse_variant(a.variant);
    const std::string vocab_path = a.vocab.empty() ? rc.data.vocab : a.vocab;
    if (!vocab_path.empty()) rc.model.text.vocab_size = Vocabulary::load(vocab_path).size();
    rc.validate();
  }
  const std::string records = a.records.empty() ? rc.data.records : a.records;
  if (records.empty()) throw ConfigError("train needs --records (or data.records)");
  const auto samples = read_records(records);
  check_records(rc.model, samples, records);
  auto [train, val] = split_train_validation<MemeSample>(samples, rc.train.validation_fraction, rc.train.seed);
  spdlog::info("{} records: {} train, {} validation; variant {}", samples.size(), train.size(), val.size(),
               variant_name(rc.model.variant));

  const MemeModel<float> model(rc.model);
  std::optional<TrainState<float>> state;
  if (resume_ck) {
    load_parameters(model, *resume_ck);
    state = load_train_state(*resume_ck, model);
    spdlog::info("resuming after epoch {}", state->epoch);
  }
  spdlog::info("{} parameters", model.parameters().count());

  const fs::path log_path = out / "train_log.tsv";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw InputError("cannot write " + log_path.string());
  log << log_header() << '\n';
  if (state)
    for (const auto& e : state->log) log << format_log_line(e) << '\n';
  log.flush();

  TrainHooks<float> hooks;
  hooks.on_log = [&](const EpochLog& e) {
    log << format_log_line(e) << '\n';
    log.flush();
    spdlog::info("epoch {} ({}) lr {:.3g} mean val F1 {:.4f}", e.epoch, phase_name(e.phase), e.lr, e.monitored);
  };
  const auto state_path = (out / "state.ckpt").string();
  hooks.on_epoch_end = [&](const TrainState<float>& st) {
    save_checkpoint(state_path, training_checkpoint(model, st, rc.train));
  };
  const auto result = train_two_phase(model, std::span<const MemeSample>(train), std::span<const MemeSample>(val),
                                      rc.train, hooks, std::move(state));

  save_checkpoint((out / "best.ckpt").string(), model_checkpoint(model));
  const auto eval = evaluate_model(model, std::span<const MemeSample>(val));
  const auto report = competition_scores(eval.predictions, gold_labels(val));
  const std::string text = metrics_table(rc.model.variant, eval) + "\n" + report_text(report);
  write_text(out / "validation_metrics.txt", text);
  spdlog::info("best epoch {} with mean validation macro F1 {:.4f}", result.best_epoch, result.best_metric);
  std::cout << text;
  return 0;
}

// ---- evaluate / predict

struct ModelArgs {
  std::string checkpoint, records, config, variant;
  std::vector<std::string> overrides;
};

MemeModel<float> load_for_inference(const ModelArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  if (a.config.empty() && a.variant.empty() && a.overrides.empty()) return load_model<float>(ck);
  // Explicit architecture: the checkpoint must fit it.
  auto rc = load_run_config(a.config, a.overrides);
  if (!a.variant.empty()) rc.model.variant = parse_variant(a.variant);
  MemeModel<float> model(rc.model);
  load_parameters(model, ck);
  return model;
}

std::vector<LabelSet> read_predictions(const std::string& path, const std::vector<MemeSample>& samples,
                                       const LabelMap& map) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open predictions " + path);
  std::string line;
  std::getline(in, line);  // header
  std::map<std::string, LabelSet> by_id;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 1 + kNumTasks) throw FormatError(path + ":" + std::to_string(lineno) + ": expected 6 fields");
    LabelSet l;
    for (Task t : kAllTasks) {
      auto v = map.lookup(t, f[1 + task_index(t)]);
      if (!v) throw ParseError(path + ":" + std::to_string(lineno) + ": unknown label '" + f[1 + task_index(t)] + "'");
      l[t] = *v;
    }
    by_id[f[0]] = l;
  }
  std::vector<LabelSet> out;
  for (const auto& s : samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw InputError(path + ": no prediction for '" + s.id + "'");
    out.push_back(it->second);
  }
  return out;
}

int cmd_evaluate(const ModelArgs& a, const std::string& predictions, const std::string& label_map) {
  if (a.records.empty()) throw ConfigError("evaluate needs --records");
  const auto samples = read_records(a.records);
  std::vector<LabelSet> pred;
  if (!predictions.empty()) {
    pred = read_predictions(predictions, samples, label_map.empty() ? LabelMap::builtin() : LabelMap::load(label_map));
  } else {
    if (a.checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint or --predictions");
    const auto model = load_for_inference(a);
    check_records(model.config(), samples, a.records);
    pred = predict(model, std::span<const MemeSample>(samples));
  }
  std::cout << report_text(competition_scores(pred, gold_labels(samples)));
  return 0;
}

int cmd_predict(const ModelArgs& a, const std::string& out, const std::string& label_map) {
  if (a.checkpoint.empty() || a.records.empty() || out.empty())
    throw ConfigError("predict needs --checkpoint, --records and --out");
  const auto samples = read_records(a.records);
  const auto model = load_for_inference(a);
  check_records(model.config(), samples, a.records);
  const auto pred = predict(model, std::span<const MemeSample>(samples));
  const LabelMap map = label_map.empty() ? LabelMap::builtin() : LabelMap::load(label_map);
  std::string text = "id";
  for (Task t : kAllTasks) text += "\t" + std::string(task_name(t));
  text += "\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    text += samples[i].id;
    for (Task t : kAllTasks) text += "\t" + map.name(t, pred[i][t]);
    text += "\n";
  }
  write_text(out, text);
  spdlog::info("wrote {} predictions to {}", samples.size(), out);
  return 0;
}

// ---- gradcheck

struct GradArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::size_t cases = 100;
  std::uint64_t seed = 7;
  std::size_t per_tensor = 16;
  bool inject_faulty = false;
};

int cmd_gradcheck(const GradArgs& a) {
  const auto rc = load_run_config(a.config, a.overrides);
  const auto rep = run_gradcheck_suite(rc.model, a.cases, a.seed, a.per_tensor, a.inject_faulty);
  std::cout << "op\tcases\tmax_rel_error\tstatus\n";
  for (const auto& op : rep.ops)
    std::cout << op.name << '\t' << op.cases << '\t' << std::scientific << std::setprecision(3)
              << op.worst.max_rel_error << '\t' << (op.passed() ? "ok" : "FAIL") << '\n';
  std::cout << "model(" << variant_name(rc.model.variant) << ")\t" << rep.model.worst.checked << '\t'
            << rep.model.worst.max_rel_error << '\t' << (rep.model.worst.max_rel_error < kGradTolerance ? "ok" : "FAIL")
            << '\n';
  const auto& worst = rep.worst_op();
  std::cout << "worst op: " << worst.name << " " << worst.worst.max_rel_error << "\n";
  std::cout << "worst model parameter: " << rep.model.worst_parameter << " " << rep.model.worst.max_rel_error << "\n";
  std::cout << "tolerance " << kGradTolerance << ": " << (rep.passed() ? "PASS" : "FAIL") << "\n";
  return rep.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"memotion: multimodal multi-task meme classification"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus (images, labels, vocabulary, records)");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--n", sa.n, "number of samples")->capture_default_str();
  synth->add_option("--seed", sa.seed)->capture_default_str();
  synth->add_option("--resolution", sa.resolution)->capture_default_str();
  synth->add_option("--seq-len", sa.seq_len)->capture_default_str();
  synth->add_option("--vocab-size", sa.vocab_size)->capture_default_str();

  PreprocessArgs pa;
  auto* pre = app.add_subcommand("preprocess", "labels file + PPM images -> record file");
  pre->add_option("--config", pa.config, "run configuration file");
  pre->add_option("--labels", pa.labels, "label file (csv or tsv)");
  pre->add_option("--images", pa.images, "image directory");
  pre->add_option("--vocab", pa.vocab, "vocabulary file; built from the label texts if missing");
  pre->add_option("--out", pa.out, "record file to write")->required();
  pre->add_option("--resolution", pa.resolution, "image side length");
  pre->add_option("--seq-len", pa.seq_len, "token sequence length");
  pre->add_option("--vocab-size", pa.vocab_size, "size of a newly built vocabulary");
  pre->add_option("--label-map", pa.label_map, "label string table (default: built-in)");
  pre->add_option("--set", pa.overrides, "section.key=value override");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "two-phase training");
  tr->add_option("--config", ta.config, "run configuration file");
  tr->add_option("--records", ta.records, "record file");
  tr->add_option("--variant", ta.variant, "text, image or multimodal")
      ->check(CLI::IsMember({"text", "image", "multimodal"}));
  tr->add_option("--vocab", ta.vocab, "vocabulary file (sets text.vocab_size)");
  tr->add_option("--out", ta.out, "output directory")->required();
  tr->add_option("--resume", ta.resume, "training state checkpoint (state.ckpt) to continue from");
  tr->add_option("--set", ta.overrides, "section.key=value override");

  ModelArgs ea;
  std::string eval_predictions, eval_label_map;
  auto* ev = app.add_subcommand("evaluate", "competition scores on a record file");
  ev->add_option("--checkpoint", ea.checkpoint, "model checkpoint");
  ev->add_option("--records", ea.records, "record file with gold labels")->required();
  ev->add_option("--predictions", eval_predictions, "score a predictions file instead of a model");
  ev->add_option("--label-map", eval_label_map, "label string table for --predictions");
  ev->add_option("--config", ea.config, "expected architecture; the checkpoint must match it");
  ev->add_option("--variant", ea.variant, "expected variant");
  ev->add_option("--set", ea.overrides, "section.key=value override of the expected architecture");

  ModelArgs pr_args;
  std::string pred_out, pred_label_map;
  auto* pr = app.add_subcommand("predict", "write predicted class names per sample");
  pr->add_option("--checkpoint", pr_args.checkpoint, "model checkpoint")->required();
  pr->add_option("--records", pr_args.records, "record file")->required();
  pr->add_option("--out", pred_out, "output tsv")->required();
  pr->add_option("--label-map", pred_label_map, "label string table (default: built-in)");
  pr->add_option("--config", pr_args.config, "expected architecture; the checkpoint must match it");
  pr->add_option("--variant", pr_args.variant, "expected variant");
  pr->add_option("--set", pr_args.overrides, "section.key=value override of the expected architecture");

  GradArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op and the desk model");
  gc->add_option("--config", ga.config, "run configuration file (model section)");
  gc->add_option("--cases", ga.cases, "seeded cases per op")->capture_default_str();
  gc->add_option("--seed", ga.seed)->capture_default_str();
  gc->add_option("--per-tensor", ga.per_tensor, "coordinates per model tensor, 0 for all")->capture_default_str();
  gc->add_option("--set", ga.overrides, "section.key=value override");
  gc->add_flag("--inject-faulty-op", ga.inject_faulty)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*pre) return cmd_preprocess(pa);
    if (*tr) return cmd_train(ta);
    if (*ev) return cmd_evaluate(ea, eval_predictions, eval_label_map);
    if (*pr) return cmd_predict(pr_args, pred_out, pred_label_map);
    if (*gc) return cmd_gradcheck(ga);
  } catch (const CheckpointError& e) {
    spdlog::error("{}", e.what());
    return 4;
  } catch (const NumericalError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ParseError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const FormatError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const DecodeError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const CorruptionError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}
