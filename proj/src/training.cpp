#include "lesion/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "lesion/error.hpp"
#include "lesion/ops.hpp"
#include "lesion/rng.hpp"

namespace lesion {

namespace {

constexpr std::uint64_t kEpochTag = 0xe90c;

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::IoError, "write failed: " + path.string());
}

nlohmann::json augment_to_json(const AugmentParams& p) {
  return {{"rotation_max_degrees", p.rotation_max_degrees},
          {"width_shift_frac", p.width_shift_frac},
          {"height_shift_frac", p.height_shift_frac},
          {"zoom_min", p.zoom_min},
          {"zoom_max", p.zoom_max},
          {"shear_max_degrees", p.shear_max_degrees},
          {"hflip", p.hflip},
          {"vflip", p.vflip}};
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* what) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok) fail(ErrorKind::InvalidConfig, std::string("unknown ") + what + " key: " + item.key());
  }
}

AugmentParams augment_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"rotation_max_degrees", "width_shift_frac", "height_shift_frac", "zoom_min", "zoom_max",
                  "shear_max_degrees", "hflip", "vflip"},
                 "augmentation");
  AugmentParams p;
  read_key(j, "rotation_max_degrees", p.rotation_max_degrees);
  read_key(j, "width_shift_frac", p.width_shift_frac);
  read_key(j, "height_shift_frac", p.height_shift_frac);
  read_key(j, "zoom_min", p.zoom_min);
  read_key(j, "zoom_max", p.zoom_max);
  read_key(j, "shear_max_degrees", p.shear_max_degrees);
  read_key(j, "hflip", p.hflip);
  read_key(j, "vflip", p.vflip);
  return p;
}

std::vector<Tensor> tensors_of(const ParameterList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void check_pairs(std::span<const Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    fail(ErrorKind::ShapeMismatch, "optimizer got " + std::to_string(params.size()) + " parameters and " +
                                       std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      fail(ErrorKind::ShapeMismatch, "gradient shape " + to_string(grads[i].shape()) + " does not match parameter " +
                                         to_string(params[i].shape()));
    }
  }
}

void check_labels(const LabeledImages& data, std::size_t classes) {
  if (data.images.size() != data.labels.size()) fail(ErrorKind::ShapeMismatch, "images and labels differ in count");
  for (int l : data.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      fail(ErrorKind::OutOfRangeClass, "label " + std::to_string(l) + " outside [0," + std::to_string(classes) + ")");
    }
  }
}

// Everything needed to continue a run after its last completed epoch.
struct Progress {
  std::size_t epoch = 0;
  AdamState adam;
  TrainLog log;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  Checkpoint best;
};

Checkpoint progress_checkpoint(const Model& model, const TrainConfig& config, const Progress& p) {
  Checkpoint cp = model_checkpoint(model);
  const std::size_t count = cp.tensors.size();
  const bool moments = !p.adam.m.empty();
  cp.header["training"] = {{"epoch", p.epoch},
                           {"config", to_json(config)},
                           {"log", p.log.to_json()},
                           {"best_loss", p.best_loss},
                           {"epochs_since_best", p.since_best},
                           {"adam_step", p.adam.step},
                           {"parameter_count", count},
                           {"has_moments", moments}};
  if (moments) {
    for (const auto& t : p.adam.m) cp.tensors.push_back(t.detach());
    for (const auto& t : p.adam.v) cp.tensors.push_back(t.detach());
  }
  for (const auto& t : p.best.tensors) cp.tensors.push_back(t.detach());
  return cp;
}

Progress restore_progress(const Model& model, const Checkpoint& cp) {
  if (!cp.header.contains("training")) fail(ErrorKind::MalformedHeader, "checkpoint has no training state to resume");
  if (cp.header.at("model") != model.config_json()) {
    fail(ErrorKind::InvalidConfig, "resume checkpoint was written for a different model config");
  }
  const auto& h = cp.header.at("training");
  Progress p;
  try {
    p.epoch = h.at("epoch").get<std::size_t>();
    p.log = TrainLog::from_json(h.at("log"));
    p.best_loss = h.at("best_loss").get<double>();
    p.since_best = h.at("epochs_since_best").get<std::size_t>();
    p.adam.step = h.at("adam_step").get<std::size_t>();
    const auto count = h.at("parameter_count").get<std::size_t>();
    const bool moments = h.at("has_moments").get<bool>();
    const std::size_t expected = count * (moments ? 4 : 2);
    if (cp.tensors.size() != expected) fail(ErrorKind::MalformedHeader, "resume checkpoint tensor count mismatch");
    load_parameters(model, std::span(cp.tensors).first(count));
    std::size_t at = count;
    if (moments) {
      p.adam.m.assign(cp.tensors.begin() + at, cp.tensors.begin() + at + count);
      at += count;
      p.adam.v.assign(cp.tensors.begin() + at, cp.tensors.begin() + at + count);
      at += count;
    }
    p.best.header["model"] = cp.header.at("model");
    if (p.log.best_epoch) p.best.header["epoch"] = *p.log.best_epoch;
    p.best.tensors.assign(cp.tensors.begin() + at, cp.tensors.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("bad training state: ") + e.what());
  }
  return p;
}

}  // namespace

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  fail(ErrorKind::InvalidConfig, "unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::InvalidConfig, "learning rate must be finite and non-negative");
  }
  if (batch_size < 1) fail(ErrorKind::InvalidConfig, "batch size must be at least 1");
  if (epochs < 1) fail(ErrorKind::InvalidConfig, "epochs must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorKind::InvalidConfig, "Adam betas must lie in [0,1)");
  }
  if (!(adam_eps > 0.0)) fail(ErrorKind::InvalidConfig, "Adam eps must be positive");
  if (early_stop_patience && *early_stop_patience < 1) fail(ErrorKind::InvalidConfig, "patience must be at least 1");
  augment_params.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"learning_rate", c.learning_rate},
                      {"batch_size", c.batch_size},
                      {"epochs", c.epochs},
                      {"optimizer", to_string(c.optimizer)},
                      {"beta1", c.beta1},
                      {"beta2", c.beta2},
                      {"adam_eps", c.adam_eps},
                      {"seed", c.seed},
                      {"augment", c.augment},
                      {"augmentation", augment_to_json(c.augment_params)},
                      {"record_time", c.record_time}};
  j["early_stop_patience"] = c.early_stop_patience ? nlohmann::json(*c.early_stop_patience) : nlohmann::json();
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::InvalidConfig, "training config must be a JSON object");
  reject_unknown(j,
                 {"learning_rate", "batch_size", "epochs", "optimizer", "beta1", "beta2", "adam_eps", "seed", "augment",
                  "augmentation", "record_time", "early_stop_patience"},
                 "training");
  TrainConfig c;
  try {
    read_key(j, "learning_rate", c.learning_rate);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "epochs", c.epochs);
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    read_key(j, "beta1", c.beta1);
    read_key(j, "beta2", c.beta2);
    read_key(j, "adam_eps", c.adam_eps);
    read_key(j, "seed", c.seed);
    read_key(j, "augment", c.augment);
    read_key(j, "record_time", c.record_time);
    if (j.contains("augmentation")) c.augment_params = augment_from_json(j.at("augmentation"));
    if (j.contains("early_stop_patience") && !j.at("early_stop_patience").is_null()) {
      c.early_stop_patience = j.at("early_stop_patience").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("bad training config: ") + e.what());
  }
  return c;
}

std::string TrainLog::csv() const {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
  for (const auto& r : epochs) {
    out += std::to_string(r.epoch) + "," + format_number(r.train_loss) + "," + format_number(r.train_acc) + "," +
           format_number(r.val_loss) + "," + format_number(r.val_acc) + "," + format_number(r.seconds) + "\n";
  }
  return out;
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : epochs) {
    rows.push_back({{"epoch", r.epoch},
                    {"train_loss", r.train_loss},
                    {"train_acc", r.train_acc},
                    {"val_loss", r.val_loss},
                    {"val_acc", r.val_acc},
                    {"seconds", r.seconds}});
  }
  return {{"epochs", rows},
          {"best_epoch", best_epoch ? nlohmann::json(*best_epoch) : nlohmann::json()},
          {"stopped_early", stopped_early}};
}

TrainLog TrainLog::from_json(const nlohmann::json& j) {
  TrainLog log;
  for (const auto& r : j.at("epochs")) {
    log.epochs.push_back({r.at("epoch").get<std::size_t>(), r.at("train_loss").get<double>(),
                          r.at("train_acc").get<double>(), r.at("val_loss").get<double>(),
                          r.at("val_acc").get<double>(), r.at("seconds").get<double>()});
  }
  if (!j.at("best_epoch").is_null()) log.best_epoch = j.at("best_epoch").get<std::size_t>();
  log.stopped_early = j.at("stopped_early").get<bool>();
  return log;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::size_t epoch,
                                                   std::uint64_t seed) {
  if (n == 0) fail(ErrorKind::EmptyDataset, "training split is empty");
  if (batch_size < 1) fail(ErrorKind::InvalidConfig, "batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed ^ static_cast<std::uint64_t>(epoch));
  rng.shuffle(std::span(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    batches.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
  }
  return batches;
}

void sgd_step(std::span<const Tensor> params, std::span<const Tensor> grads, double lr) {
  check_pairs(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    auto d = p.mutable_data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * g[k];
  }
}

void adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  check_pairs(params, grads);
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.shape()));
      state.v.push_back(Tensor::zeros(p.shape()));
    }
  }
  if (state.m.size() != params.size()) fail(ErrorKind::ShapeMismatch, "Adam state does not match parameter list");
  state.step += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i].shape()) fail(ErrorKind::ShapeMismatch, "Adam moment shape mismatch");
    Tensor p = params[i];
    auto d = p.mutable_data();
    auto g = grads[i].data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    for (std::size_t k = 0; k < d.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      d[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

std::vector<Tensor> gradients(std::span<const Tensor> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    Tensor g = Tensor::zeros(p.shape());
    if (p.has_grad()) {
      auto src = p.grad();
      std::copy(src.begin(), src.end(), g.mutable_data().begin());
    }
    out.push_back(g);
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) fail(ErrorKind::ShapeMismatch, "argmax_rows expects [N,K], got " + to_string(scores.shape()));
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < k; ++j) {
      if (scores[i * k + j] > scores[i * k + static_cast<std::size_t>(out[i])]) out[i] = static_cast<int>(j);
    }
  }
  return out;
}

namespace {

Tensor inference_logits(const Model& model, std::span<const Image> images) {
  NoGradGuard guard;
  Rng unused(0);
  std::vector<Tensor> rows;
  rows.reserve(images.size());
  for (const auto& img : images) rows.push_back(model.forward(img.pixels, unused, false));
  return stack(rows);
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return correct;
}

}  // namespace

LossAccuracy evaluate(const Model& model, const LabeledImages& data) {
  check_labels(data, model.num_classes());
  if (data.images.empty()) return {};
  const Tensor logits = inference_logits(model, data.images);
  NoGradGuard guard;
  const double loss = cross_entropy(logits, data.labels).item();
  return {loss, static_cast<double>(count_correct(logits, data.labels)) / static_cast<double>(data.images.size())};
}

Tensor predict_proba(const Model& model, std::span<const Image> images) {
  if (images.empty()) return Tensor::zeros({0, model.num_classes()});
  const Tensor logits = inference_logits(model, images);
  NoGradGuard guard;
  return softmax(logits, 1);
}

FitResult fit(Model& model, const LabeledImages& train, const LabeledImages& val, const TrainConfig& config,
              const FitOptions& options) {
  config.validate();
  if (train.images.empty()) fail(ErrorKind::EmptyDataset, "training split is empty");
  check_labels(train, model.num_classes());
  check_labels(val, model.num_classes());
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  const ParameterList named = model.parameters();
  const std::vector<Tensor> params = tensors_of(named);
  Progress progress = options.resume ? restore_progress(model, *options.resume) : Progress{};
  if (config.optimizer == OptimizerKind::Sgd) progress.adam = {};

  for (std::size_t epoch = progress.epoch + 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    Rng rng = Rng::derive(config.seed, {kEpochTag, epoch});
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& batch : make_batches(train.images.size(), config.batch_size, epoch, config.seed)) {
      for (const auto& p : params) p.node()->grad.clear();
      std::vector<Tensor> rows;
      std::vector<int> labels;
      rows.reserve(batch.size());
      for (std::size_t i : batch) {
        const Image& img = train.images[i];
        const Tensor input = config.augment ? augment(img, config.augment_params, rng).pixels : img.pixels;
        rows.push_back(model.forward(input, rng, true));
        labels.push_back(train.labels[i]);
      }
      const Tensor logits = stack(rows);
      const Tensor loss = cross_entropy(logits, labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        fail(ErrorKind::NonFiniteLoss, "non-finite training loss at epoch " + std::to_string(epoch));
      }
      loss.backward();
      const auto grads = gradients(params);
      if (config.optimizer == OptimizerKind::Adam) {
        adam_step(params, grads, progress.adam, config.learning_rate, config.beta1, config.beta2, config.adam_eps);
      } else {
        sgd_step(params, grads, config.learning_rate);
      }
      loss_sum += value * static_cast<double>(batch.size());
      correct += count_correct(logits, labels);
    }
    for (const auto& p : params) p.node()->grad.clear();

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train.images.size());
    record.train_acc = static_cast<double>(correct) / static_cast<double>(train.images.size());
    const LossAccuracy v = evaluate(model, val);
    record.val_loss = v.loss;
    record.val_acc = v.accuracy;
    if (!std::isfinite(record.val_loss)) {
      fail(ErrorKind::NonFiniteLoss, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    if (config.record_time) {
      record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    progress.log.epochs.push_back(record);
    progress.epoch = epoch;

    const double criterion = val.images.empty() ? record.train_loss : record.val_loss;
    if (criterion < progress.best_loss) {
      progress.best_loss = criterion;
      progress.since_best = 0;
      progress.log.best_epoch = epoch;
      progress.best = model_checkpoint(model);
      progress.best.header["epoch"] = epoch;
    } else {
      progress.since_best += 1;
    }
    const bool stop = config.early_stop_patience && progress.since_best >= *config.early_stop_patience &&
                      epoch < config.epochs;
    progress.log.stopped_early = stop;

    if (options.out_dir) {
      const auto& dir = *options.out_dir;
      write_text(dir / kTrainLogCsvFile, progress.log.csv());
      write_text(dir / kTrainLogJsonFile, progress.log.to_json().dump(2) + "\n");
      save_checkpoint(dir / kBestCheckpointFile, progress.best);
      save_checkpoint(dir / kLastCheckpointFile, progress_checkpoint(model, config, progress));
    }
    if (options.on_epoch) options.on_epoch(record);
    if (stop) break;
  }

  FitResult result;
  result.log = progress.log;
  result.best = progress.best;
  result.last = progress_checkpoint(model, config, progress);
  return result;
}

}  // namespace lesion
