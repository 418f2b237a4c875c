#include "lesion/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "lesion/data.hpp"
#include "lesion/gradcheck_suite.hpp"
#include "lesion/metrics.hpp"
#include "lesion/models.hpp"
#include "lesion/rng.hpp"
#include "lesion/training.hpp"

namespace lesion {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kInitTag = 0x1417;

std::string percent(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * rate);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string pad_left(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::IoError, "write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::FileNotFound, "config file not found: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Usage, "config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

// Options of one subcommand. Each is settable by flag or by the same key in a
// --config JSON object; flags win, and the merged values form the resolved
// config written next to the outputs.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with option values (flags take precedence)");
  }

  template <typename T>
  CLI::Option* add(const std::string& key, T& target, const std::string& help) {
    CLI::Option* opt = app_->add_option("--" + key, target, help)->capture_default_str();
    track(key, opt, target);
    return opt;
  }

  CLI::Option* flag(const std::string& names, const std::string& key, bool& target, const std::string& help) {
    CLI::Option* opt = app_->add_flag(names, target, help);
    track(key, opt, target);
    return opt;
  }

  void merge_config_file() {
    if (config_path_.empty()) return;
    const json j = read_json_file(config_path_);
    if (!j.is_object()) fail(ErrorKind::Usage, "config file must hold a JSON object");
    for (const auto& item : j.items()) {
      auto it = std::find_if(fields_.begin(), fields_.end(), [&](const Field& f) { return f.key == item.key(); });
      if (it == fields_.end()) fail(ErrorKind::Usage, "unknown config key '" + item.key() + "'");
      if (it->option->count() > 0) continue;
      try {
        it->assign(item.value());
      } catch (const json::exception&) {
        fail(ErrorKind::Usage, "config key '" + item.key() + "' has the wrong type");
      }
    }
  }

  json resolved() const {
    json j = json::object();
    for (const auto& f : fields_) j[f.key] = f.value();
    return j;
  }

 private:
  struct Field {
    std::string key;
    CLI::Option* option;
    std::function<void(const json&)> assign;
    std::function<json()> value;
  };

  template <typename T>
  void track(const std::string& key, CLI::Option* opt, T& target) {
    fields_.push_back({key, opt, [&target](const json& j) { target = j.get<T>(); }, [&target] { return json(target); }});
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<Field> fields_;
};

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) fail(ErrorKind::Usage, "--" + flag + " is required");
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t classes = 4;
  std::size_t per_class = 16;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, const json& resolved, std::ostream& out) {
  require(a.out, "out");
  if (a.classes < 2) fail(ErrorKind::Usage, "--classes must be at least 2");
  if (a.per_class < 3) fail(ErrorKind::Usage, "--per-class must be at least 3");
  if (a.size < 1) fail(ErrorKind::Usage, "--size must be at least 1");
  ensure_dir(a.out);
  const SynthResult r = synth_dataset(a.classes, a.per_class, a.size, a.seed, a.out);
  write_text(fs::path(a.out) / "synth_config.json", resolved.dump(2) + "\n");
  out << "wrote " << r.manifest.entries.size() << " images (" << a.classes << " classes x " << a.per_class << ", "
      << a.size << "x" << a.size << ") to " << a.out << "\n";
  out << "manifest: " << (fs::path(a.out) / "manifest.json").string() << "\n";
  out << "nearest-centroid accuracy on a fresh draw: " << percent(r.centroid_accuracy) << "%\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string root;
  std::size_t cap = 130;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_prepare(const PrepareArgs& a, const json& resolved, std::ostream& out) {
  require(a.root, "root");
  require(a.out, "out");
  if (a.cap < 1) fail(ErrorKind::Usage, "--cap must be at least 1");
  DatasetManifest m = split(balance(scan(a.root), a.cap, a.seed), {}, a.seed);
  const fs::path out_file = fs::absolute(a.out);
  ensure_dir(out_file.parent_path());
  const fs::path rel = fs::absolute(a.root).lexically_normal().lexically_relative(out_file.parent_path());
  m.root = rel.empty() ? fs::absolute(a.root).lexically_normal().string() : rel.string();
  save_manifest(out_file, m);
  write_text(out_file.parent_path() / (out_file.stem().string() + ".prepare_config.json"), resolved.dump(2) + "\n");

  std::size_t width = 5;
  for (const auto& c : m.classes) width = std::max(width, c.size());
  const auto total = m.class_counts();
  const auto tr = m.class_counts(Split::Train), va = m.class_counts(Split::Val), te = m.class_counts(Split::Test);
  out << pad("class", width) << "  total  train/val/test\n";
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    out << pad(m.classes[c], width) << "  " << pad_left(std::to_string(total[c]), 5) << "  " << tr[c] << "/" << va[c]
        << "/" << te[c] << "\n";
  }
  out << "wrote " << a.out << " (" << m.entries.size() << " images, " << m.classes.size() << " classes)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string model = "vit-cbam";
  double lr = 0.001;
  std::size_t batch = 8;
  std::size_t epochs = 40;
  std::uint64_t seed = 0;
  std::string out;
  std::string optimizer = "adam";
  std::size_t patience = 0;
  bool augment = true;
  std::size_t image_size = 32;
  std::string model_config;
  bool record_time = false;
  bool resume = false;
  bool quiet = false;
};

void check_variant(const std::string& variant) {
  const auto& valid = model_variants();
  if (std::find(valid.begin(), valid.end(), variant) == valid.end()) {
    fail(ErrorKind::Usage, "unknown model '" + variant + "'; valid variants: " + join(valid, ", "));
  }
}

int cmd_train(const TrainArgs& a, const json& resolved, std::ostream& out) {
  require(a.manifest, "manifest");
  require(a.out, "out");
  check_variant(a.model);
  if (!(a.lr > 0.0)) fail(ErrorKind::Usage, "--lr must be positive");
  if (a.batch < 1) fail(ErrorKind::Usage, "--batch must be at least 1");
  if (a.epochs < 1) fail(ErrorKind::Usage, "--epochs must be at least 1");
  if (a.image_size < 1) fail(ErrorKind::Usage, "--image-size must be at least 1");
  if (a.optimizer != "adam" && a.optimizer != "sgd") fail(ErrorKind::Usage, "--optimizer must be adam or sgd");

  const DatasetManifest m = load_manifest(a.manifest);
  json model_cfg = default_model_config(a.model, a.image_size, m.num_classes());
  if (!a.model_config.empty()) {
    json overrides = read_json_file(a.model_config);
    if (!overrides.is_object()) fail(ErrorKind::Usage, "model config must be a JSON object");
    overrides.erase("variant");
    model_cfg.merge_patch(overrides);
  }
  Rng init = Rng::derive(a.seed, {kInitTag});
  std::unique_ptr<Model> model = make_model(model_cfg, init);
  if (model->num_classes() != m.num_classes()) {
    fail(ErrorKind::Usage, "model has " + std::to_string(model->num_classes()) + " classes, manifest has " +
                               std::to_string(m.num_classes()));
  }

  TrainConfig c;
  c.learning_rate = a.lr;
  c.batch_size = a.batch;
  c.epochs = a.epochs;
  c.optimizer = parse_optimizer(a.optimizer);
  c.seed = a.seed;
  if (a.patience > 0) c.early_stop_patience = a.patience;
  c.augment = a.augment;
  c.record_time = a.record_time;
  c.validate();

  const LabeledImages train = load_split(a.manifest, m, Split::Train, model->image_size());
  const LabeledImages val = load_split(a.manifest, m, Split::Val, model->image_size());
  const fs::path dir(a.out);
  ensure_dir(dir);
  write_text(dir / "train_config.json",
             json{{"options", resolved}, {"model", model->config_json()}, {"training", to_json(c)}}.dump(2) + "\n");

  FitOptions options;
  options.out_dir = dir;
  if (a.resume) options.resume = load_checkpoint(dir / kLastCheckpointFile);
  options.on_epoch = [&](const EpochRecord& r) {
    if (a.quiet && r.epoch != c.epochs) return;
    out << "epoch " << r.epoch << "/" << c.epochs << "  train_loss " << fixed(r.train_loss, 4) << "  train_acc "
        << percent(r.train_acc) << "  val_loss " << fixed(r.val_loss, 4) << "  val_acc " << percent(r.val_acc) << "\n";
  };
  out << "training " << a.model << " (" << count_scalars(model->parameters()) << " parameters) on " << train.images.size()
      << " images, validating on " << val.images.size() << "\n";
  const FitResult r = fit(*model, train, val, c, options);
  const EpochRecord& last = r.log.epochs.back();
  out << "final train_acc " << percent(last.train_acc) << "  val_acc " << percent(last.val_acc) << "  best epoch "
      << (r.log.best_epoch ? std::to_string(*r.log.best_epoch) : "-") << (r.log.stopped_early ? " (stopped early)" : "")
      << "\n";
  out << "outputs in " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string manifest;
  std::string checkpoint;
  std::string split = "test";
  std::string out;
};

std::string file_safe(const std::string& name) {
  std::string s;
  for (char ch : name) s += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.') ? ch : '_';
  return s;
}

int cmd_eval(const EvalArgs& a, const json& resolved, std::ostream& out) {
  require(a.manifest, "manifest");
  require(a.checkpoint, "checkpoint");
  require(a.out, "out");
  if (a.split != "train" && a.split != "val" && a.split != "test") {
    fail(ErrorKind::Usage, "--split must be train, val or test");
  }
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  const std::unique_ptr<Model> model = restore_model(cp);
  const DatasetManifest m = load_manifest(a.manifest);
  if (model->num_classes() != m.num_classes()) {
    fail(ErrorKind::Usage, "checkpoint has " + std::to_string(model->num_classes()) + " classes, manifest has " +
                               std::to_string(m.num_classes()));
  }
  const LabeledImages data = load_split(a.manifest, m, parse_split(a.split), model->image_size());
  if (data.images.empty()) fail(ErrorKind::EmptyDataset, "split '" + a.split + "' is empty");

  const Tensor probs = predict_proba(*model, data.images);
  const ConfusionMatrix cm = confusion(argmax_rows(probs), data.labels, m.num_classes(), m.classes);
  const EvalReport report = macro_report(cm, probs, data.labels);

  const fs::path dir(a.out);
  ensure_dir(dir);
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  write_text(dir / "confusion.csv", confusion_csv(cm));
  for (const auto& c : report.per_class) write_text(dir / ("roc_" + file_safe(c.name) + ".csv"), roc_csv(c.roc));
  write_text(dir / "eval_config.json", resolved.dump(2) + "\n");

  const std::string variant = cp.header.at("model").value("variant", std::string("model"));
  out << pad("model", 10) << "  split  samples  accuracy  precision  recall     f1  specificity     auc\n";
  out << pad(variant, 10) << "  " << pad(a.split, 5) << "  " << pad_left(std::to_string(report.samples), 7) << "  "
      << pad_left(percent(report.accuracy), 8) << "  " << pad_left(percent(report.macro.precision), 9) << "  "
      << pad_left(percent(report.macro.recall), 6) << "  " << pad_left(percent(report.macro.f1), 5) << "  "
      << pad_left(percent(report.macro.specificity), 11) << "  " << pad_left(percent(report.macro.auc), 6) << "\n";
  out << "(macro averages, percent; report in " << (dir / "report.json").string() << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string model = "vit-cbam";
  std::uint64_t seed = 0;
  std::size_t draws = 20;
  std::size_t model_draws = 10;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<std::string> variants;
  if (a.model == "all") {
    variants = model_variants();
  } else {
    check_variant(a.model);
    variants = {a.model};
  }
  if (a.draws < 1 || a.model_draws < 1) fail(ErrorKind::Usage, "draw counts must be at least 1");
  std::optional<testing::ScopedBackwardFault> fault;
  if (!a.inject_fault.empty()) fault.emplace(a.inject_fault);

  bool ok = true;
  auto line = [&](const std::string& kind, const CheckOutcome& o) {
    ok = ok && o.passed();
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", o.max_relative_error);
    out << pad(kind, 6) << "  " << pad(o.name, 16) << "  " << err << "  < " << o.tolerance << "  "
        << (o.passed() ? "PASS" : "FAIL");
    if (!o.passed()) out << "  worst " << o.worst;
    out << "\n";
  };
  out << "kind    check             max rel err  tolerance\n";
  for (const auto& o : check_all_ops(a.seed, a.draws)) line("op", o);
  for (const auto& v : variants) line("model", check_model(v, a.seed, a.model_draws));
  out << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFiniteLoss:
      return kExitFailure;
    default:
      return kExitUsage;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-guided skin-lesion classification toolkit"};
  app.name("lesion");
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a synthetic directory-per-class PPM dataset");
  Options synth_opts(synth_cmd);
  synth_opts.add("classes", synth.classes, "Number of classes (>= 2)");
  synth_opts.add("per-class", synth.per_class, "Images per class (>= 3)");
  synth_opts.add("size", synth.size, "Image side length in pixels");
  synth_opts.add("seed", synth.seed, "Random seed");
  synth_opts.add("out", synth.out, "Output directory");

  PrepareArgs prep;
  CLI::App* prep_cmd = app.add_subcommand("prepare", "Scan, cap and split a dataset into a manifest");
  Options prep_opts(prep_cmd);
  prep_opts.add("root", prep.root, "Directory with one subdirectory of .ppm images per class");
  prep_opts.add("cap", prep.cap, "Maximum images kept per class");
  prep_opts.add("seed", prep.seed, "Random seed for capping and splitting");
  prep_opts.add("out", prep.out, "Manifest file to write");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a prepared manifest");
  Options train_opts(train_cmd);
  train_opts.add("manifest", train.manifest, "Manifest written by prepare or synth");
  train_opts.add("model", train.model, "Variant: " + join(model_variants(), ", "));
  train_opts.add("lr", train.lr, "Learning rate");
  train_opts.add("batch", train.batch, "Batch size");
  train_opts.add("epochs", train.epochs, "Number of epochs");
  train_opts.add("seed", train.seed, "Random seed for initialization, batching, augmentation and dropout");
  train_opts.add("out", train.out, "Output directory");
  train_opts.add("optimizer", train.optimizer, "adam or sgd");
  train_opts.add("patience", train.patience, "Early-stopping patience in epochs (0 disables)");
  train_opts.flag("--augment,!--no-augment", "augment", train.augment, "Geometric augmentation of training images");
  train_opts.add("image-size", train.image_size, "Side length images are resized to");
  train_opts.add("model-config", train.model_config, "JSON file overriding architecture fields");
  train_opts.flag("--record-time", "record-time", train.record_time, "Log wall time per epoch (breaks byte identity)");
  train_opts.flag("--resume", "resume", train.resume, "Continue from checkpoint_last.atnc in --out");
  train_opts.flag("--quiet", "quiet", train.quiet, "Print only the final epoch");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  Options eval_opts(eval_cmd);
  eval_opts.add("manifest", eval.manifest, "Manifest file");
  eval_opts.add("checkpoint", eval.checkpoint, "Checkpoint file");
  eval_opts.add("split", eval.split, "train, val or test");
  eval_opts.add("out", eval.out, "Output directory");

  GradcheckArgs gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and a tiny model");
  Options gc_opts(gc_cmd);
  gc_opts.add("model", gc.model, "Variant to check, or all");
  gc_opts.add("seed", gc.seed, "Random seed");
  gc_opts.add("draws", gc.draws, "Random draws per op");
  gc_opts.add("model-draws", gc.model_draws, "Random draws for the model check");
  gc_cmd->add_option("--inject-fault", gc.inject_fault, "Corrupt the backward rule of an op")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) {
      synth_opts.merge_config_file();
      return cmd_synth(synth, synth_opts.resolved(), out);
    }
    if (*prep_cmd) {
      prep_opts.merge_config_file();
      return cmd_prepare(prep, prep_opts.resolved(), out);
    }
    if (*train_cmd) {
      train_opts.merge_config_file();
      return cmd_train(train, train_opts.resolved(), out);
    }
    if (*eval_cmd) {
      eval_opts.merge_config_file();
      return cmd_eval(eval, eval_opts.resolved(), out);
    }
    gc_opts.merge_config_file();
    return cmd_gradcheck(gc, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace lesion
