#include "lesion/models.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "lesion/error.hpp"
#include "lesion/fixture.hpp"
#include "lesion/ops.hpp"
#include "lesion/rng.hpp"

namespace lesion {

namespace {

Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng).set_requires_grad();
}

Tensor init_zeros(Shape shape) { return Tensor::zeros(std::move(shape)).set_requires_grad(); }
Tensor init_ones(Shape shape) { return Tensor::ones(std::move(shape)).set_requires_grad(); }

EcaModule make_eca(std::size_t channels, const AttentionSettings& s, Rng& rng) {
  return EcaModule(channels, rng, EcaOptions{s.eca_gamma, s.eca_b, std::nullopt});
}

CbamModule make_cbam(std::size_t channels, const AttentionSettings& s, Rng& rng) {
  return CbamModule(channels, rng, CbamOptions{s.cbam_reduction, HiddenActivation::Relu});
}

std::size_t attention_param_count(AttentionVariant v, std::size_t channels, const AttentionSettings& s) {
  switch (v) {
    case AttentionVariant::None: return 0;
    case AttentionVariant::Eca: return eca_kernel_size(static_cast<std::int64_t>(channels), s.eca_gamma, s.eca_b);
    case AttentionVariant::Cbam: return CbamModule::parameter_count(channels, s.cbam_reduction);
  }
  return 0;
}

}  // namespace

std::string_view to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::None: return "none";
    case AttentionVariant::Eca: return "eca";
    case AttentionVariant::Cbam: return "cbam";
  }
  return "none";
}

AttentionVariant parse_attention_variant(std::string_view name) {
  if (name == "none") return AttentionVariant::None;
  if (name == "eca") return AttentionVariant::Eca;
  if (name == "cbam") return AttentionVariant::Cbam;
  fail(ErrorKind::InvalidConfig, "unknown attention variant '" + std::string(name) + "' (expected none|eca|cbam)");
}

// ---------------------------------------------------------------------------
// ViT building blocks
// ---------------------------------------------------------------------------

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    fail(ErrorKind::InvalidConfig, "image_size must be a positive multiple of patch_size");
  }
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
    fail(ErrorKind::InvalidConfig, "embed_dim must be a positive multiple of num_heads");
  }
  if (depth == 0) fail(ErrorKind::InvalidConfig, "depth must be >= 1");
  if (mlp_hidden == 0) fail(ErrorKind::InvalidConfig, "mlp_hidden must be >= 1");
  if (num_classes < 2) fail(ErrorKind::InvalidConfig, "num_classes must be >= 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail(ErrorKind::InvalidConfig, "dropout_rate must be in [0,1)");
}

ParameterList EncoderLayer::parameters() const {
  return {{"ln1_gain", ln1_gain}, {"ln1_shift", ln1_shift}, {"wq", wq},         {"wk", wk},
          {"wv", wv},             {"wo", wo},               {"ln2_gain", ln2_gain}, {"ln2_shift", ln2_shift},
          {"mlp_w1", mlp_w1},     {"mlp_b1", mlp_b1},       {"mlp_w2", mlp_w2},   {"mlp_b2", mlp_b2}};
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.dim(0) != 3) fail(ErrorKind::ShapeMismatch, "patchify expects [3,H,W], got " + to_string(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    fail(ErrorKind::ShapeMismatch, "image " + to_string(image.shape()) + " is not divisible into " + std::to_string(patch) + "-pixel patches");
  }
  const std::size_t gh = h / patch, gw = w / patch;
  std::vector<std::size_t> index;
  index.reserve(image.size());
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x) index.push_back((c * h + py * patch + y) * w + px * patch + x);
  return gather(image, std::move(index), {gh * gw, 3 * patch * patch});
}

Tensor embed(const Tensor& patches, const Tensor& projection, const Tensor& positional) {
  Tensor projected = matmul(patches, projection);
  if (projected.shape() != positional.shape()) {
    fail(ErrorKind::ShapeMismatch, "positional table " + to_string(positional.shape()) + " vs embeddings " + to_string(projected.shape()));
  }
  return add(projected, positional);
}

Tensor msa(const Tensor& seq, const EncoderLayer& layer, std::size_t heads, Tensor* weights_out) {
  if (seq.rank() != 2) fail(ErrorKind::ShapeMismatch, "msa expects [T,D]");
  const std::size_t t = seq.dim(0), d = seq.dim(1);
  if (heads == 0 || d % heads != 0) fail(ErrorKind::ShapeMismatch, "embed dim not divisible by head count");
  const std::size_t dh = d / heads;
  auto split_heads = [&](const Tensor& x) { return permute(reshape(x, {t, heads, dh}), {1, 0, 2}); };
  Tensor q = split_heads(matmul(seq, layer.wq));
  Tensor k = split_heads(matmul(seq, layer.wk));
  Tensor v = split_heads(matmul(seq, layer.wv));
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor weights = softmax(scores, 2);
  if (weights_out) *weights_out = weights;
  Tensor context = reshape(permute(matmul(weights, v), {1, 0, 2}), {t, d});
  return matmul(context, layer.wo);
}

Tensor encoder_layer(const Tensor& seq, const EncoderLayer& layer, std::size_t heads, double dropout_rate, Rng& rng,
                     bool training) {
  Tensor x = add(seq, msa(layer_norm(seq, layer.ln1_gain, layer.ln1_shift), layer, heads));
  Tensor hidden = dropout(gelu(linear(layer_norm(x, layer.ln2_gain, layer.ln2_shift), layer.mlp_w1, layer.mlp_b1)),
                          dropout_rate, rng, training);
  return add(x, linear(hidden, layer.mlp_w2, layer.mlp_b2));
}

Tensor encoder_forward(const Tensor& seq, std::span<const EncoderLayer> layers, std::size_t heads, double dropout_rate,
                       Rng& rng, bool training) {
  Tensor x = seq;
  for (const EncoderLayer& layer : layers) x = encoder_layer(x, layer, heads, dropout_rate, rng, training);
  return x;
}

Tensor tokens_to_grid(const Tensor& tokens) {
  if (tokens.rank() != 2) fail(ErrorKind::ShapeMismatch, "tokens_to_grid expects [T,D]");
  const std::size_t t = tokens.dim(0), d = tokens.dim(1);
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t))));
  if (g * g != t) fail(ErrorKind::ShapeMismatch, "token count " + std::to_string(t) + " is not a perfect square");
  return reshape(transpose(tokens), {d, g, g});
}

VisionTransformer::VisionTransformer(ViTConfig config, Rng& init_rng) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.embed_dim, p = config_.patch_dim(), hdim = config_.mlp_hidden;
  patch_projection_ = init_weight({p, d}, p, init_rng);
  positional_ = init_weight({config_.tokens(), d}, d, init_rng);
  for (std::size_t l = 0; l < config_.depth; ++l) {
    EncoderLayer layer;
    layer.ln1_gain = init_ones({d});
    layer.ln1_shift = init_zeros({d});
    layer.wq = init_weight({d, d}, d, init_rng);
    layer.wk = init_weight({d, d}, d, init_rng);
    layer.wv = init_weight({d, d}, d, init_rng);
    layer.wo = init_weight({d, d}, d, init_rng);
    layer.ln2_gain = init_ones({d});
    layer.ln2_shift = init_zeros({d});
    layer.mlp_w1 = init_weight({d, hdim}, d, init_rng);
    layer.mlp_b1 = init_zeros({hdim});
    layer.mlp_w2 = init_weight({hdim, d}, hdim, init_rng);
    layer.mlp_b2 = init_zeros({d});
    layers_.push_back(std::move(layer));
  }
  head_w1_ = init_weight({d, d}, d, init_rng);
  head_b1_ = init_zeros({d});
  head_w2_ = init_weight({d, config_.num_classes}, d, init_rng);
  head_b2_ = init_zeros({config_.num_classes});
  if (config_.attention == AttentionVariant::Cbam) cbam_.emplace(make_cbam(d, config_.attention_settings, init_rng));
  if (config_.attention == AttentionVariant::Eca) eca_.emplace(make_eca(d, config_.attention_settings, init_rng));
}

Tensor VisionTransformer::encode(const Tensor& image, Rng& rng, bool training) const {
  if (image.shape() != Shape{3, config_.image_size, config_.image_size}) {
    fail(ErrorKind::ShapeMismatch, "ViT expects [3," + std::to_string(config_.image_size) + "," +
                                       std::to_string(config_.image_size) + "], got " + to_string(image.shape()));
  }
  Tensor tokens = embed(patchify(image, config_.patch_size), patch_projection_, positional_);
  return encoder_forward(tokens, layers_, config_.num_heads, config_.dropout_rate, rng, training);
}

Tensor VisionTransformer::pool(const Tensor& tokens) const {
  if (!cbam_ && !eca_) return mean(tokens, 0);
  Tensor grid = tokens_to_grid(tokens);
  Tensor refined = cbam_ ? cbam_->forward(grid) : eca_->forward(grid);
  return reshape(global_pool(refined, PoolMode::Avg), {config_.embed_dim});
}

Tensor VisionTransformer::head(const Tensor& features) const {
  return linear(gelu(linear(features, head_w1_, head_b1_)), head_w2_, head_b2_);
}

Tensor VisionTransformer::forward(const Tensor& image, Rng& rng, bool training) const {
  return head(pool(encode(image, rng, training)));
}

ParameterList VisionTransformer::parameters() const {
  ParameterList out{{"patch_projection", patch_projection_}, {"positional", positional_}};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    append_prefixed(out, "layer" + std::to_string(l) + ".", layers_[l].parameters());
  }
  out.push_back({"head_w1", head_w1_});
  out.push_back({"head_b1", head_b1_});
  out.push_back({"head_w2", head_w2_});
  out.push_back({"head_b2", head_b2_});
  if (cbam_) append_prefixed(out, "cbam.", cbam_->parameters());
  if (eca_) append_prefixed(out, "eca.", eca_->parameters());
  return out;
}

std::size_t param_count(const ViTConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim, h = c.mlp_hidden;
  const std::size_t per_layer = 4 * d * d + 4 * d + d * h + h + h * d + d;
  return c.patch_dim() * d + c.tokens() * d + c.depth * per_layer + d * d + d + d * c.num_classes + c.num_classes +
         attention_param_count(c.attention, d, c.attention_settings);
}

// ---------------------------------------------------------------------------
// Tiny CNN
// ---------------------------------------------------------------------------

void TinyCnnConfig::validate() const {
  if (widths.empty()) fail(ErrorKind::InvalidConfig, "TinyCnn needs at least one stage");
  for (std::size_t w : widths) {
    if (w == 0) fail(ErrorKind::InvalidConfig, "TinyCnn stage widths must be >= 1");
  }
  if (!stage_attention.empty() && stage_attention.size() != widths.size()) {
    fail(ErrorKind::InvalidConfig, "stage_attention must list one variant per stage");
  }
  if (num_classes < 2) fail(ErrorKind::InvalidConfig, "num_classes must be >= 2");
  std::size_t side = image_size;
  for (std::size_t s = 0; s < widths.size(); ++s) {
    if (side < 2) fail(ErrorKind::InvalidConfig, "image_size " + std::to_string(image_size) + " does not survive " + std::to_string(widths.size()) + " stages");
    side /= 2;
  }
}

TinyCnn::TinyCnn(TinyCnnConfig config, Rng& init_rng) : config_(std::move(config)) {
  config_.validate();
  std::size_t in = 3;
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    const std::size_t out = config_.widths[s];
    CnnStage stage;
    stage.kernel = init_weight({out, in, 3, 3}, in * 9, init_rng);
    stage.bias = init_zeros({out});
    if (config_.attention_at(s) == AttentionVariant::Eca) stage.eca.emplace(make_eca(out, config_.attention_settings, init_rng));
    if (config_.attention_at(s) == AttentionVariant::Cbam) stage.cbam.emplace(make_cbam(out, config_.attention_settings, init_rng));
    stages_.push_back(std::move(stage));
    in = out;
  }
  classifier_w_ = init_weight({in, config_.num_classes}, in, init_rng);
  classifier_b_ = init_zeros({config_.num_classes});
}

Tensor TinyCnn::features(const Tensor& image) const {
  if (image.shape() != Shape{3, config_.image_size, config_.image_size}) {
    fail(ErrorKind::ShapeMismatch, "TinyCnn expects [3," + std::to_string(config_.image_size) + "," +
                                       std::to_string(config_.image_size) + "], got " + to_string(image.shape()));
  }
  Tensor x = image;
  for (const CnnStage& stage : stages_) {
    x = relu(conv2d(x, stage.kernel, stage.bias, 1, 1));
    if (stage.eca) x = stage.eca->forward(x);
    if (stage.cbam) x = stage.cbam->forward(x);
    x = avg_pool2(x);
  }
  return reshape(global_pool(x, PoolMode::Avg), {x.dim(0)});
}

Tensor TinyCnn::forward(const Tensor& image, Rng&, bool) const {
  return linear(features(image), classifier_w_, classifier_b_);
}

ParameterList TinyCnn::parameters() const {
  ParameterList out;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string prefix = "stage" + std::to_string(s) + ".";
    out.push_back({prefix + "kernel", stages_[s].kernel});
    out.push_back({prefix + "bias", stages_[s].bias});
    if (stages_[s].eca) append_prefixed(out, prefix + "eca.", stages_[s].eca->parameters());
    if (stages_[s].cbam) append_prefixed(out, prefix + "cbam.", stages_[s].cbam->parameters());
  }
  out.push_back({"classifier_w", classifier_w_});
  out.push_back({"classifier_b", classifier_b_});
  return out;
}

std::size_t param_count(const TinyCnnConfig& c) {
  c.validate();
  std::size_t total = 0, in = 3;
  for (std::size_t s = 0; s < c.widths.size(); ++s) {
    const std::size_t out = c.widths[s];
    total += out * in * 9 + out + attention_param_count(c.attention_at(s), out, c.attention_settings);
    in = out;
  }
  return total + in * c.num_classes + c.num_classes;
}

// ---------------------------------------------------------------------------
// Variants and JSON configs
// ---------------------------------------------------------------------------

namespace {

struct VariantName {
  std::string arch;
  AttentionVariant attention;
};

VariantName split_variant(std::string_view variant) {
  for (const std::string arch : {"vit", "cnn"}) {
    if (variant == arch) return {arch, AttentionVariant::None};
    if (variant.starts_with(arch + "-")) return {arch, parse_attention_variant(variant.substr(arch.size() + 1))};
  }
  fail(ErrorKind::InvalidConfig, "unknown model variant '" + std::string(variant) + "'");
}

AttentionSettings settings_from_json(const nlohmann::json& j) {
  AttentionSettings s;
  s.cbam_reduction = j.value("cbam_reduction", s.cbam_reduction);
  s.eca_gamma = j.value("eca_gamma", s.eca_gamma);
  s.eca_b = j.value("eca_b", s.eca_b);
  return s;
}

void settings_to_json(nlohmann::json& j, const AttentionSettings& s) {
  j["cbam_reduction"] = s.cbam_reduction;
  j["eca_gamma"] = s.eca_gamma;
  j["eca_b"] = s.eca_b;
}

nlohmann::json to_json(const ViTConfig& c) {
  nlohmann::json j;
  j["variant"] = c.attention == AttentionVariant::None ? std::string("vit") : "vit-" + std::string(to_string(c.attention));
  j["image_size"] = c.image_size;
  j["patch_size"] = c.patch_size;
  j["embed_dim"] = c.embed_dim;
  j["depth"] = c.depth;
  j["num_heads"] = c.num_heads;
  j["mlp_hidden"] = c.mlp_hidden;
  j["num_classes"] = c.num_classes;
  j["dropout_rate"] = c.dropout_rate;
  settings_to_json(j, c.attention_settings);
  return j;
}

nlohmann::json to_json(const TinyCnnConfig& c) {
  nlohmann::json j;
  AttentionVariant uniform = c.attention_at(0);
  for (std::size_t s = 1; s < c.widths.size(); ++s) {
    if (c.attention_at(s) != uniform) uniform = AttentionVariant::None;
  }
  j["variant"] = uniform == AttentionVariant::None ? std::string("cnn") : "cnn-" + std::string(to_string(uniform));
  j["image_size"] = c.image_size;
  j["widths"] = c.widths;
  std::vector<std::string> stages;
  for (std::size_t s = 0; s < c.widths.size(); ++s) stages.emplace_back(to_string(c.attention_at(s)));
  j["stage_attention"] = stages;
  j["num_classes"] = c.num_classes;
  settings_to_json(j, c.attention_settings);
  return j;
}

class VitModel final : public Model {
 public:
  VitModel(ViTConfig c, Rng& rng) : net_(std::move(c), rng) {}
  Tensor forward(const Tensor& image, Rng& rng, bool training) const override { return net_.forward(image, rng, training); }
  ParameterList parameters() const override { return net_.parameters(); }
  nlohmann::json config_json() const override { return to_json(net_.config()); }
  std::size_t image_size() const override { return net_.config().image_size; }
  std::size_t num_classes() const override { return net_.config().num_classes; }

 private:
  VisionTransformer net_;
};

class CnnModel final : public Model {
 public:
  CnnModel(TinyCnnConfig c, Rng& rng) : net_(std::move(c), rng) {}
  Tensor forward(const Tensor& image, Rng& rng, bool training) const override { return net_.forward(image, rng, training); }
  ParameterList parameters() const override { return net_.parameters(); }
  nlohmann::json config_json() const override { return to_json(net_.config()); }
  std::size_t image_size() const override { return net_.config().image_size; }
  std::size_t num_classes() const override { return net_.config().num_classes; }

 private:
  TinyCnn net_;
};

}  // namespace

const std::vector<std::string>& model_variants() {
  static const std::vector<std::string> names{"vit", "vit-eca", "vit-cbam", "cnn", "cnn-eca", "cnn-cbam"};
  return names;
}

ViTConfig vit_config_from_json(const nlohmann::json& j) {
  const VariantName v = split_variant(j.at("variant").get<std::string>());
  if (v.arch != "vit") fail(ErrorKind::InvalidConfig, "not a ViT variant");
  ViTConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.depth = j.value("depth", c.depth);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.attention = v.attention;
  c.attention_settings = settings_from_json(j);
  c.validate();
  return c;
}

TinyCnnConfig cnn_config_from_json(const nlohmann::json& j) {
  const VariantName v = split_variant(j.at("variant").get<std::string>());
  if (v.arch != "cnn") fail(ErrorKind::InvalidConfig, "not a CNN variant");
  TinyCnnConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.widths = j.value("widths", c.widths);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.attention_settings = settings_from_json(j);
  if (j.contains("stage_attention")) {
    for (const auto& s : j.at("stage_attention")) c.stage_attention.push_back(parse_attention_variant(s.get<std::string>()));
  } else {
    c.stage_attention.assign(c.widths.size(), v.attention);
  }
  c.validate();
  return c;
}

nlohmann::json default_model_config(std::string_view variant, std::size_t image_size, std::size_t num_classes) {
  const VariantName v = split_variant(variant);
  if (v.arch == "vit") {
    ViTConfig c;
    c.image_size = image_size;
    c.patch_size = image_size % 4 == 0 ? image_size / 4 : image_size;
    c.num_classes = num_classes;
    c.attention = v.attention;
    return to_json(c);
  }
  TinyCnnConfig c;
  c.image_size = image_size;
  c.num_classes = num_classes;
  c.stage_attention.assign(c.widths.size(), v.attention);
  return to_json(c);
}

std::unique_ptr<Model> make_model(const nlohmann::json& config, Rng& init_rng) {
  try {
    const VariantName v = split_variant(config.at("variant").get<std::string>());
    if (v.arch == "vit") return std::make_unique<VitModel>(vit_config_from_json(config), init_rng);
    return std::make_unique<CnnModel>(cnn_config_from_json(config), init_rng);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("bad model config: ") + e.what());
  }
}

std::size_t param_count(const nlohmann::json& config) {
  const VariantName v = split_variant(config.at("variant").get<std::string>());
  return v.arch == "vit" ? param_count(vit_config_from_json(config)) : param_count(cnn_config_from_json(config));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  out.write("ATNC", 4);
  io::write_u32(out, kCheckpointVersion);
  const std::string header = checkpoint.header.dump();
  io::write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  io::write_u32(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const Tensor& t : checkpoint.tensors) write_tensor(out, t);
  if (!out) fail(ErrorKind::IoError, "checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  io::expect_magic(in, "ATNC");
  const std::uint32_t version = io::read_u32(in);
  if (version != kCheckpointVersion) fail(ErrorKind::MalformedHeader, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t length = io::read_u32(in);
  std::string header(length, '\0');
  in.read(header.data(), length);
  if (in.gcount() != static_cast<std::streamsize>(length)) fail(ErrorKind::TruncatedPayload, "checkpoint header cut short");
  Checkpoint cp;
  try {
    cp.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("checkpoint header is not JSON: ") + e.what());
  }
  const std::uint32_t count = io::read_u32(in);
  cp.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) cp.tensors.push_back(read_tensor(in));
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::FileNotFound, "checkpoint not found: " + path.string());
  return read_checkpoint(in);
}

Checkpoint model_checkpoint(const Model& model) {
  Checkpoint cp;
  cp.header["model"] = model.config_json();
  for (const auto& p : model.parameters()) cp.tensors.push_back(p.tensor.detach());
  return cp;
}

void load_parameters(const Model& model, std::span<const Tensor> tensors) {
  ParameterList params = model.parameters();
  if (tensors.size() < params.size()) fail(ErrorKind::MalformedHeader, "checkpoint holds too few tensors");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& src = tensors[i];
    if (src.shape() != params[i].tensor.shape()) {
      fail(ErrorKind::ShapeMismatch, "checkpoint tensor for " + params[i].name + " has shape " + to_string(src.shape()));
    }
    auto dst = params[i].tensor.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

std::unique_ptr<Model> restore_model(const Checkpoint& checkpoint) {
  if (!checkpoint.header.contains("model")) fail(ErrorKind::MalformedHeader, "checkpoint header has no model config");
  Rng unused(0);
  auto model = make_model(checkpoint.header.at("model"), unused);
  load_parameters(*model, checkpoint.tensors);
  return model;
}

}  // namespace lesion
