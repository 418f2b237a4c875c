#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "lesion/attention.hpp"
#include "lesion/parameter.hpp"
#include "lesion/tensor.hpp"

namespace lesion {

class Rng;

enum class AttentionVariant { None, Eca, Cbam };

std::string_view to_string(AttentionVariant v);
AttentionVariant parse_attention_variant(std::string_view name);

struct AttentionSettings {
  std::size_t cbam_reduction = 16;
  int eca_gamma = 2;
  int eca_b = 1;
};

// ---------------------------------------------------------------------------
// Vision transformer
// ---------------------------------------------------------------------------

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 16;
  std::size_t depth = 2;
  std::size_t num_heads = 2;
  std::size_t mlp_hidden = 32;
  std::size_t num_classes = 4;
  double dropout_rate = 0.0;
  AttentionVariant attention = AttentionVariant::None;
  AttentionSettings attention_settings;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  void validate() const;
};

struct EncoderLayer {
  Tensor ln1_gain, ln1_shift;
  Tensor wq, wk, wv, wo;  // [D, D], no bias
  Tensor ln2_gain, ln2_shift;
  Tensor mlp_w1, mlp_b1;  // [D, H], [H]
  Tensor mlp_w2, mlp_b2;  // [H, D], [D]

  ParameterList parameters() const;
};

/// [3,H,W] -> [T, 3*P*P]. Patches row-major from the top-left; inside a patch
/// values are channel-major, then row-major pixels.
Tensor patchify(const Tensor& image, std::size_t patch);

/// patches[T,3P^2] * projection[3P^2,D] + positional[T,D]
Tensor embed(const Tensor& patches, const Tensor& projection, const Tensor& positional);

/// Multi-head self-attention over seq[T,D]; per-head dim D/h, scores scaled by
/// 1/sqrt(D/h). `weights_out`, when given, receives the [h,T,T] attention rows.
Tensor msa(const Tensor& seq, const EncoderLayer& layer, std::size_t heads, Tensor* weights_out = nullptr);

/// Pre-LN layer: x + msa(ln1(x)), then x + mlp(ln2(x)) with
/// mlp = linear -> GELU -> dropout -> linear.
Tensor encoder_layer(const Tensor& seq, const EncoderLayer& layer, std::size_t heads, double dropout_rate, Rng& rng,
                     bool training);
Tensor encoder_forward(const Tensor& seq, std::span<const EncoderLayer> layers, std::size_t heads, double dropout_rate,
                       Rng& rng, bool training);

/// Token sequence [T,D] -> feature grid [D,g,g]; token t sits at (t / g, t % g).
Tensor tokens_to_grid(const Tensor& tokens);

class VisionTransformer {
 public:
  VisionTransformer(ViTConfig config, Rng& init_rng);

  /// Logits [K]. With an attention variant, encoder tokens are laid out as a
  /// D x g x g grid, refined by ECA/CBAM and average-pooled; otherwise tokens
  /// are mean-pooled directly.
  Tensor forward(const Tensor& image, Rng& rng, bool training) const;

  Tensor encode(const Tensor& image, Rng& rng, bool training) const;  // [T,D]
  Tensor pool(const Tensor& tokens) const;                            // [D]
  Tensor head(const Tensor& features) const;                          // [D] -> [K]

  const ViTConfig& config() const { return config_; }
  Tensor& patch_projection() { return patch_projection_; }
  Tensor& positional() { return positional_; }
  std::vector<EncoderLayer>& layers() { return layers_; }
  const std::vector<EncoderLayer>& layers() const { return layers_; }
  Tensor& head_w1() { return head_w1_; }
  Tensor& head_b1() { return head_b1_; }
  Tensor& head_w2() { return head_w2_; }
  Tensor& head_b2() { return head_b2_; }
  CbamModule* cbam() { return cbam_ ? &*cbam_ : nullptr; }
  EcaModule* eca() { return eca_ ? &*eca_ : nullptr; }

  ParameterList parameters() const;

 private:
  ViTConfig config_;
  Tensor patch_projection_;  // [3P^2, D]
  Tensor positional_;        // [T, D]
  std::vector<EncoderLayer> layers_;
  Tensor head_w1_, head_b1_;  // [D, D], [D]
  Tensor head_w2_, head_b2_;  // [D, K], [K]
  std::optional<CbamModule> cbam_;
  std::optional<EcaModule> eca_;
};

// ---------------------------------------------------------------------------
// Tiny CNN baseline
// ---------------------------------------------------------------------------

struct TinyCnnConfig {
  std::size_t image_size = 32;
  std::vector<std::size_t> widths{8, 16, 32};
  std::vector<AttentionVariant> stage_attention;  // empty or one per stage
  std::size_t num_classes = 4;
  AttentionSettings attention_settings;

  AttentionVariant attention_at(std::size_t stage) const {
    return stage_attention.empty() ? AttentionVariant::None : stage_attention[stage];
  }
  void validate() const;
};

struct CnnStage {
  Tensor kernel;  // [w_out, w_in, 3, 3]
  Tensor bias;    // [w_out]
  std::optional<EcaModule> eca;
  std::optional<CbamModule> cbam;
};

/// Per stage: conv3x3 -> relu -> optional attention -> 2x2 average downsample.
/// Then global average pool and a linear classifier.
class TinyCnn {
 public:
  TinyCnn(TinyCnnConfig config, Rng& init_rng);

  Tensor forward(const Tensor& image, Rng& rng, bool training) const;
  /// Pooled feature vector [w_last] before the classifier.
  Tensor features(const Tensor& image) const;

  const TinyCnnConfig& config() const { return config_; }
  std::vector<CnnStage>& stages() { return stages_; }
  Tensor& classifier_weight() { return classifier_w_; }
  Tensor& classifier_bias() { return classifier_b_; }
  ParameterList parameters() const;

 private:
  TinyCnnConfig config_;
  std::vector<CnnStage> stages_;
  Tensor classifier_w_, classifier_b_;
};

// ---------------------------------------------------------------------------
// Variant-level interface
// ---------------------------------------------------------------------------

/// The six trainable variants: vit, vit-eca, vit-cbam, cnn, cnn-eca, cnn-cbam.
const std::vector<std::string>& model_variants();

class Model {
 public:
  virtual ~Model() = default;
  virtual Tensor forward(const Tensor& image, Rng& rng, bool training) const = 0;
  virtual ParameterList parameters() const = 0;
  virtual nlohmann::json config_json() const = 0;
  virtual std::size_t image_size() const = 0;
  virtual std::size_t num_classes() const = 0;
};

/// Builds a model from its JSON config ({"variant": ..., architecture fields}).
std::unique_ptr<Model> make_model(const nlohmann::json& config, Rng& init_rng);

/// Default toy configuration for a variant name.
nlohmann::json default_model_config(std::string_view variant, std::size_t image_size, std::size_t num_classes);

ViTConfig vit_config_from_json(const nlohmann::json& config);
TinyCnnConfig cnn_config_from_json(const nlohmann::json& config);

/// Exact trainable-scalar count derived from the config alone.
std::size_t param_count(const ViTConfig& config);
std::size_t param_count(const TinyCnnConfig& config);
std::size_t param_count(const nlohmann::json& config);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// Layout: "ATNC", u32 format version, u32 header byte length, canonical JSON
// header (sorted keys) holding the model config under "model", u32 tensor
// count, then each tensor in the ATNT fixture format. Model parameters come
// first in declaration order; any optimizer state follows them.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json header;
  std::vector<Tensor> tensors;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Checkpoint holding only the model config and parameters.
Checkpoint model_checkpoint(const Model& model);
/// Copies the leading tensors into the model's parameters, in declaration order.
void load_parameters(const Model& model, std::span<const Tensor> tensors);
/// Rebuilds the model described by a checkpoint and copies its parameters in.
std::unique_ptr<Model> restore_model(const Checkpoint& checkpoint);

}  // namespace lesion
