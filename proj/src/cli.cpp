#include "ckd/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "ckd/batch_stream.hpp"
#include "ckd/checkpoint.hpp"
#include "ckd/ensemble.hpp"
#include "ckd/error.hpp"
#include "ckd/image.hpp"
#include "ckd/lime.hpp"
#include "ckd/metrics.hpp"
#include "ckd/plot.hpp"
#include "ckd/trainer.hpp"

namespace ckd::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kEnsemble = "ensemble";

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::string> variant;
  std::optional<std::size_t> input_size;
  std::optional<std::size_t> epochs;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config, "Run config JSON file");
  cmd->add_option("--seed", flags.seed, "Seed overriding the config");
  cmd->add_option("--output-dir", flags.output_dir, "Artifact root overriding the config");
  cmd->add_option("--variant", flags.variant, "full_pretrained or tiny_random for every backbone");
  cmd->add_option("--input-size", flags.input_size, "Square input side overriding the config");
  cmd->add_option("--epochs", flags.epochs, "Epoch budget overriding the config");
}

RunConfig effective_config(const CommonFlags& flags) {
  RunConfig cfg = flags.config.empty() ? RunConfig::defaults() : load_run_config(flags.config);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.output_dir) cfg.output_dir = *flags.output_dir;
  if (flags.variant) apply_variant(cfg, parse_variant(*flags.variant));
  if (flags.input_size) apply_input_size(cfg, {*flags.input_size, *flags.input_size});
  if (flags.epochs) cfg.training.epochs = *flags.epochs;
  cfg.training.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

fs::path model_dir(const RunConfig& cfg, const std::string& name) { return cfg.output_dir / name; }
fs::path best_checkpoint(const RunConfig& cfg, const std::string& name) {
  return model_dir(cfg, name) / "checkpoints" / "best.ckpt";
}

bool is_model_name(const RunConfig& cfg, const std::string& name) {
  const auto names = model_names(cfg);
  return std::find(names.begin(), names.end(), name) != names.end();
}

struct Splits {
  Manifest train;
  Manifest test;
  LabelCodec codec;
};

Splits load_splits(const RunConfig& cfg) {
  const auto path = cfg.output_dir / "manifest.csv";
  if (!fs::exists(path)) {
    throw Error(ErrorKind::MissingPrerequisite, path.string() + " not found; run 'prepare' first");
  }
  Manifest manifest = read_manifest(path);
  Splits s{manifest.subset(Split::Train), manifest.subset(Split::Test), manifest.codec()};
  if (s.train.records.empty() || s.test.records.empty()) {
    throw Error(ErrorKind::MissingPrerequisite, path.string() + " has no train/test split");
  }
  return s;
}

std::uint64_t train_stream_seed(const RunConfig& cfg) { return derive_seed({cfg.seed, 0x7a1u}); }

ManifestStream eval_stream(const RunConfig& cfg, const Manifest& m, const LabelCodec& codec) {
  return ManifestStream(m, codec, cfg.augmentation, cfg.training.batch_size, StreamMode::Evaluate, false, 0);
}

// ------------------------------------------------------------------ prepare

void cmd_prepare(const RunConfig& cfg, bool strict, std::size_t dump_count, const std::string& dump_dir,
                 std::ostream& out) {
  if (cfg.dataset_root.empty()) throw Error(ErrorKind::InvalidConfig, "dataset_root is not set (use --root)");
  auto scan = scan_dataset(cfg.dataset_root, ScanOptions{strict});
  auto [train, test] = stratified_split(scan.manifest, cfg.train_fraction, cfg.seed);
  Manifest merged = merge_manifests(train, test);
  merged.seed = cfg.seed;
  fs::create_directories(cfg.output_dir);
  write_manifest(merged, cfg.output_dir / "manifest.csv");
  write_scan_errors(scan.issues, cfg.output_dir / "scan_errors.txt");
  Json counts = Json::object();
  for (const auto& name : scan.codec.classes()) {
    counts[name] = Json{{"train", train.class_counts.count(name) ? train.class_counts.at(name) : 0},
                        {"test", test.class_counts.count(name) ? test.class_counts.at(name) : 0}};
  }
  write_json(Json{{"stratified", true},
                  {"train_fraction", cfg.train_fraction},
                  {"rounding", "nearest_ties_to_even"},
                  {"seed", cfg.seed},
                  {"classes", scan.codec.classes()},
                  {"counts", counts}},
             cfg.output_dir / "split_meta.json");
  write_json(to_json(cfg), cfg.output_dir / "config.json");
  out << "prepared " << merged.size() << " records (" << train.size() << " train, " << test.size()
      << " test, " << scan.issues.size() << " excluded)\n";

  if (dump_count > 0) {
    ManifestStream stream(train, scan.codec, cfg.augmentation, 1, StreamMode::Train, true, train_stream_seed(cfg));
    const std::size_t n = std::min(dump_count, train.size());
    for (std::size_t i = 0; i < n; ++i) {
      char name[48];
      std::snprintf(name, sizeof(name), "augmented_%03zu.png", i);
      save_png(stream.sample(0, i), fs::path(dump_dir) / name);
    }
    out << "wrote " << n << " augmented samples to " << dump_dir << "\n";
  }
}

// -------------------------------------------------------------------- train

void write_history(const TrainingHistory& history, const fs::path& dir) {
  write_json(to_json(history), dir / "history.json");
}

void cmd_train_backbone(const RunConfig& cfg, BackboneFamily family, std::ostream& out) {
  const BackboneSpec* spec = cfg.backbone(family);
  if (!spec) throw Error(ErrorKind::InvalidConfig, std::string(to_string(family)) + " is not configured");
  const Splits splits = load_splits(cfg);
  const std::string name(to_string(family));
  const fs::path dir = model_dir(cfg, name);

  ManifestStream train_stream(splits.train, splits.codec, cfg.augmentation, cfg.training.batch_size,
                              StreamMode::Train, true, train_stream_seed(cfg));
  ManifestStream val_stream = eval_stream(cfg, splits.test, splits.codec);
  auto model = attach_head(build_backbone(*spec, {cfg.weights_dir, cfg.seed}), splits.codec.num_classes(), cfg.seed,
                           cfg.freeze_policy);

  TrainCallbacks callbacks;
  callbacks.log = &out;
  callbacks.on_checkpoint = [&](const std::string& tag, std::size_t) {
    save_classifier(*model, splits.codec, dir / "checkpoints" / (tag + ".ckpt"));
  };
  out << "training " << name << " (" << to_string(spec->variant) << ", " << train_stream.num_samples()
      << " train / " << val_stream.num_samples() << " validation samples)\n";
  const auto history = train(*model, train_stream, val_stream, cfg.training, callbacks);
  write_history(history, dir);
  out << name << ": best_epoch=" << history.best_epoch << " stopped_early=" << (history.stopped_early ? 1 : 0)
      << "\n";
}

void cmd_train_ensemble(const RunConfig& cfg, std::ostream& out) {
  const Splits splits = load_splits(cfg);
  std::vector<std::string> missing;
  for (const auto& b : cfg.ensemble.branches) {
    const auto path = best_checkpoint(cfg, std::string(to_string(b.family)));
    if (!fs::exists(path)) missing.push_back(path.string());
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += "\n  " + m;
    throw Error(ErrorKind::MissingPrerequisite, "ensemble needs trained branch checkpoints:" + list);
  }

  std::vector<std::unique_ptr<FeatureExtractor>> branches;
  std::vector<BranchReference> refs;
  for (const auto& b : cfg.ensemble.branches) {
    const std::string name(to_string(b.family));
    const auto path = best_checkpoint(cfg, name);
    auto loaded = load_classifier(path);
    if (!(loaded.codec == splits.codec)) {
      throw Error(ErrorKind::InvalidConfig, name + " checkpoint was trained on different classes");
    }
    branches.push_back(loaded.model->release_extractor());
    refs.push_back({name, fs::relative(path, cfg.output_dir), sha256_file(path)});
  }
  EnsembleSpec spec = cfg.ensemble;
  spec.num_classes = splits.codec.num_classes();
  auto model = build_ensemble(std::move(branches), spec, cfg.seed);

  const fs::path dir = model_dir(cfg, kEnsemble);
  ManifestStream train_stream(splits.train, splits.codec, cfg.augmentation, cfg.training.batch_size,
                              StreamMode::Train, true, train_stream_seed(cfg));
  ManifestStream val_stream = eval_stream(cfg, splits.test, splits.codec);
  TrainCallbacks callbacks;
  callbacks.log = &out;
  callbacks.on_checkpoint = [&](const std::string& tag, std::size_t) {
    save_ensemble(*model, splits.codec, refs, dir / "checkpoints" / (tag + ".ckpt"));
  };
  out << "training ensemble over " << model->num_branches() << " branches (fused_dim "
      << model->spec().fused_dim() << ")\n";
  const auto history = train_ensemble(*model, train_stream, val_stream, cfg.training, callbacks);
  write_history(history, dir);
  write_json(ensemble_topology(*model, refs), dir / "ensemble.json");
  out << "ensemble: best_epoch=" << history.best_epoch << " stopped_early=" << (history.stopped_early ? 1 : 0)
      << "\n";
}

// ----------------------------------------------------------------- evaluate

void write_comparison(const RunConfig& cfg) { write_text(cfg.output_dir / "comparison.csv", comparison_csv(cfg)); }

void cmd_evaluate(const RunConfig& cfg, const std::string& selector, bool replot, std::ostream& out) {
  std::vector<std::string> targets;
  if (selector == "all") {
    targets = model_names(cfg);
  } else if (is_model_name(cfg, selector)) {
    targets = {selector};
  } else {
    throw Error(ErrorKind::Usage, "unknown model '" + selector + "'");
  }

  if (replot) {
    for (const auto& name : targets) {
      const auto report_path = model_dir(cfg, name) / "report.json";
      if (!fs::exists(report_path)) {
        throw Error(ErrorKind::MissingPrerequisite, report_path.string() + " not found; evaluate first");
      }
      const auto written = render_plots(report_from_json(read_json(report_path)), model_dir(cfg, name) / "plots");
      out << name << ": replotted " << written.size() << " figures\n";
    }
    return;
  }

  const Splits splits = load_splits(cfg);
  for (const auto& name : targets) {
    const auto ckpt = best_checkpoint(cfg, name);
    if (!fs::exists(ckpt)) throw Error(ErrorKind::MissingCheckpoint, "no checkpoint at " + ckpt.string());
  }
  for (const auto& name : targets) {
    auto loaded = load_model(best_checkpoint(cfg, name));
    ManifestStream stream = eval_stream(cfg, splits.test, loaded.codec);
    const auto report = evaluate(*loaded.model, stream, loaded.codec);
    write_report_files(report, model_dir(cfg, name));
    render_plots(report, model_dir(cfg, name) / "plots");
    char line[160];
    std::snprintf(line, sizeof(line), "%s: accuracy=%.4f macro_precision=%.4f macro_recall=%.4f macro_f1=%.4f",
                  name.c_str(), report.accuracy, report.macro.precision, report.macro.recall, report.macro.f1);
    out << line << "\n";
    for (const auto& w : report.warnings) out << "  warning: " << w << "\n";
  }
  write_comparison(cfg);
}

// ------------------------------------------------------------------ explain

std::size_t resolve_class(const std::string& text, const LabelCodec& codec) {
  for (std::size_t i = 0; i < codec.num_classes(); ++i) {
    if (codec.decode(i) == text) return i;
  }
  std::size_t index = 0;
  std::size_t consumed = 0;
  try {
    index = std::stoul(text, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed == 0 || consumed != text.size() || index >= codec.num_classes()) {
    throw Error(ErrorKind::Usage, "--class " + text + " is not one of the " + std::to_string(codec.num_classes()) +
                                      " classes");
  }
  return index;
}

void cmd_explain(const RunConfig& cfg, const std::string& image_path, const std::string& selector,
                 const std::string& class_text, std::ostream& out) {
  fs::path ckpt;
  std::string name;
  if (is_model_name(cfg, selector)) {
    ckpt = best_checkpoint(cfg, selector);
    name = selector;
  } else {
    ckpt = selector;
    name = ckpt.stem().string();
  }
  if (!fs::exists(ckpt)) throw Error(ErrorKind::MissingCheckpoint, "no checkpoint at " + ckpt.string());
  auto loaded = load_model(ckpt);
  const auto& model = *loaded.model;

  Tensor image = load_and_resize(image_path, model.input_size());
  for (auto& v : image.values()) v *= cfg.augmentation.rescale;
  const Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  const Tensor probs = model.predict_proba(batch);
  std::size_t predicted = 0;
  for (std::size_t c = 1; c < probs.dim(1); ++c) {
    if (probs.at(0, c) > probs.at(0, predicted)) predicted = c;
  }
  const std::size_t target = class_text.empty() ? predicted : resolve_class(class_text, loaded.codec);

  SuperpixelMap spmap;
  const auto result = explain([&](const Tensor& b) { return model.predict_proba(b); }, image, target, cfg.lime, &spmap);

  const fs::path dir = cfg.output_dir / name / "explanations" / fs::path(image_path).stem();
  Json probabilities = Json::object();
  for (std::size_t c = 0; c < probs.dim(1); ++c) probabilities[loaded.codec.decode(c)] = probs.at(0, c);
  Json doc = to_json(result);
  doc["target_class_name"] = loaded.codec.decode(target);
  doc["predicted_class"] = loaded.codec.decode(predicted);
  doc["probabilities"] = probabilities;
  doc["image"] = fs::path(image_path).filename().generic_string();
  doc["model"] = name;
  doc["config"] = to_json(cfg.lime);
  write_json(doc, dir / "explanation.json");
  save_png(render_overlay(image, spmap, result, cfg.lime.top_k), dir / "overlay.png");

  char line[200];
  std::snprintf(line, sizeof(line), "%s: class=%s segments=%zu r2=%.4f%s", name.c_str(),
                loaded.codec.decode(target).c_str(), result.n_segments, result.local_fidelity_r2,
                result.low_fidelity ? " (low fidelity)" : "");
  out << line << "\n";
}

// ------------------------------------------------------------------ fixture

void cmd_fixture(const std::string& dir, std::size_t per_class, std::size_t size, std::uint64_t seed,
                 std::ostream& out) {
  write_fixture(dir, per_class, size, seed);
  out << "wrote " << 4 * per_class << " fixture images to " << dir << "\n";
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"CT kidney classification pipeline"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* prepare = app.add_subcommand("prepare", "Scan the dataset and write the split manifest");
  add_common(prepare, flags);
  std::string root;
  bool strict = false;
  std::vector<std::string> dump;
  prepare->add_option("--root", root, "Dataset root overriding the config");
  prepare->add_flag("--strict", strict, "Abort on the first unreadable image");
  prepare->add_option("--dump-augmented", dump, "N DIR: write N augmented training samples as PNG")
      ->expected(2);

  auto* fixture = app.add_subcommand("fixture", "Write the synthetic 4-class coloured-noise dataset");
  add_common(fixture, flags);
  std::string fixture_dir;
  std::size_t per_class = 10, fixture_size = 32;
  fixture->add_option("dir", fixture_dir, "Destination directory")->required();
  fixture->add_option("--per-class", per_class, "Images per class");
  fixture->add_option("--size", fixture_size, "Image side in pixels");

  auto* train_cmd = app.add_subcommand("train", "Train one backbone or the ensemble");
  add_common(train_cmd, flags);
  std::string model_selector;
  train_cmd->add_option("--model", model_selector, "Backbone family or 'ensemble'")->required();

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate checkpoints on the test split");
  add_common(evaluate_cmd, flags);
  std::string eval_selector = "all";
  bool replot = false;
  evaluate_cmd->add_option("--model", eval_selector, "Model name or 'all'");
  evaluate_cmd->add_flag("--replot", replot, "Re-render plots from report.json only");

  auto* explain_cmd = app.add_subcommand("explain", "LIME explanation for one image");
  add_common(explain_cmd, flags);
  std::string image_path, explain_model = kEnsemble, class_text;
  explain_cmd->add_option("--image", image_path, "Image to explain")->required();
  explain_cmd->add_option("--model", explain_model, "Model name or checkpoint path");
  explain_cmd->add_option("--class", class_text, "Target class name or index (default: prediction)");

  auto* report_cmd = app.add_subcommand("report", "Rebuild comparison.csv from the report files");
  add_common(report_cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code_for(ErrorKind::Usage);
  }

  if (fixture->parsed()) {
    cmd_fixture(fixture_dir, per_class, fixture_size, flags.seed.value_or(0), out);
    return 0;
  }
  RunConfig cfg = effective_config(flags);
  if (prepare->parsed()) {
    if (!root.empty()) cfg.dataset_root = root;
    std::size_t dump_count = 0;
    if (!dump.empty()) {
      try {
        dump_count = std::stoul(dump[0]);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Usage, "--dump-augmented expects N DIR");
      }
    }
    cmd_prepare(cfg, strict, dump_count, dump.size() == 2 ? dump[1] : std::string(), out);
  } else if (train_cmd->parsed()) {
    write_json(to_json(cfg), cfg.output_dir / "config.json");
    if (model_selector == kEnsemble) {
      cmd_train_ensemble(cfg, out);
    } else {
      BackboneFamily family;
      try {
        family = parse_family(model_selector);
      } catch (const Error&) {
        throw Error(ErrorKind::Usage, "unknown model '" + model_selector + "'");
      }
      cmd_train_backbone(cfg, family, out);
    }
  } else if (evaluate_cmd->parsed()) {
    cmd_evaluate(cfg, eval_selector, replot, out);
  } else if (explain_cmd->parsed()) {
    cmd_explain(cfg, image_path, explain_model, class_text, out);
  } else if (report_cmd->parsed()) {
    write_comparison(cfg);
    out << comparison_csv(cfg);
  }
  return 0;
}

}  // namespace

void write_fixture(const fs::path& root, std::size_t per_class, std::size_t size, std::uint64_t seed) {
  static const std::array<std::pair<const char*, std::array<double, 3>>, 4> kClasses{{
      {"Cyst", {200, 60, 60}},
      {"Normal", {60, 200, 60}},
      {"Stone", {60, 60, 200}},
      {"Tumor", {200, 200, 60}},
  }};
  if (size < 1 || per_class < 1) throw Error(ErrorKind::Usage, "fixture needs size and per-class count >= 1");
  for (std::size_t k = 0; k < kClasses.size(); ++k) {
    const auto& [name, colour] = kClasses[k];
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(derive_seed({seed, 0xf1c7u, k, i}));
      Tensor img({size, size, 3});
      for (std::size_t p = 0; p < size * size; ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
          img[p * 3 + c] = std::clamp(colour[c] + rng.uniform(-50.0, 50.0), 0.0, 255.0);
        }
      }
      char file[64];
      std::snprintf(file, sizeof(file), "%s_%03zu.png", name, i);
      save_png_raw(img, root / name / file);
    }
  }
}

LoadedModel load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw Error(ErrorKind::MissingCheckpoint, "no checkpoint at " + checkpoint.string());
  const auto kind = read_checkpoint(checkpoint).meta.value("kind", "");
  LoadedModel out;
  out.kind = kind;
  if (kind == "ensemble") {
    auto loaded = load_ensemble(checkpoint);
    out.model = std::move(loaded.model);
    out.codec = std::move(loaded.codec);
  } else {
    auto loaded = load_classifier(checkpoint);
    out.model = std::move(loaded.model);
    out.codec = std::move(loaded.codec);
  }
  return out;
}

std::vector<std::string> model_names(const RunConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& b : cfg.backbones) names.emplace_back(to_string(b.family));
  names.emplace_back(kEnsemble);
  return names;
}

std::string comparison_csv(const RunConfig& cfg) {
  std::string csv = "model,macro_precision,macro_recall,macro_f1,macro_auc,accuracy,report_sha256\n";
  for (const auto& name : model_names(cfg)) {
    const auto path = model_dir(cfg, name) / "report.json";
    if (!fs::exists(path)) continue;
    const Json report = read_json(path);
    const auto& macro = report.at("macro");
    auto num = [](const Json& v) {
      if (v.is_null()) return std::string();
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", v.get<double>());
      return std::string(buf);
    };
    csv += name + "," + num(macro.at("precision")) + "," + num(macro.at("recall")) + "," + num(macro.at("f1")) +
           "," + num(macro.at("auc")) + "," + num(report.at("accuracy")) + "," + sha256_file(path) + "\n";
  }
  return csv;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(argc, argv, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"ckd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ckd::cli
