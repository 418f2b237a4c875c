#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "lesion/parameter.hpp"
#include "lesion/tensor.hpp"

namespace lesion {

class Rng;

/// ECA kernel size: t = floor(|log2(C)/gamma + b/gamma|), bumped to the next odd
/// number, never below 1.
std::size_t eca_kernel_size(std::int64_t channels, int gamma = 2, int b = 1);

struct EcaOptions {
  int gamma = 2;
  int b = 1;
  std::optional<std::size_t> kernel_size;  // overrides the rule when set
};

/// Efficient channel attention over a C x H x W map: global average pool, a
/// shared k-tap 1D convolution across channels (no bias), sigmoid gate.
class EcaModule {
 public:
  EcaModule(std::size_t channels, Rng& rng, EcaOptions options = {});

  Tensor forward(const Tensor& features) const;
  /// Per-channel gate a in (0,1), shaped [C,1,1].
  Tensor channel_gate(const Tensor& features) const;

  std::size_t channels() const { return channels_; }
  std::size_t kernel_size() const { return kernel_.size(); }
  Tensor& kernel() { return kernel_; }
  const Tensor& kernel() const { return kernel_; }
  ParameterList parameters() const { return {{"kernel", kernel_}}; }

 private:
  std::size_t channels_;
  Tensor kernel_;
};

enum class HiddenActivation { Relu, Identity };

struct CbamOptions {
  std::size_t reduction_ratio = 16;
  HiddenActivation hidden_activation = HiddenActivation::Relu;
};

struct AttentionMaps {
  Tensor channel;  // Mc, [C,1,1]
  Tensor spatial;  // Ms, [1,H,W]
};

/// Convolutional block attention: channel gate Mc from a shared two-layer MLP
/// over avg- and max-pooled descriptors, then a spatial gate Ms from a 7x7
/// convolution over the [avg; max] channel-pooled maps.
///
///   F'  = Mc(F)  * F
///   F'' = Ms(F') * F'
class CbamModule {
 public:
  static constexpr std::size_t kSpatialKernel = 7;

  CbamModule(std::size_t channels, Rng& rng, CbamOptions options = {});

  Tensor channel_attention(const Tensor& features) const;
  Tensor spatial_attention(const Tensor& features) const;
  Tensor forward(const Tensor& features) const;

  struct Output {
    Tensor refined;
    AttentionMaps maps;
  };
  Output forward_with_maps(const Tensor& features) const;

  std::size_t channels() const { return channels_; }
  std::size_t hidden_width() const { return w0_.dim(1); }
  const CbamOptions& options() const { return options_; }

  Tensor& w0() { return w0_; }
  Tensor& w1() { return w1_; }
  Tensor& spatial_kernel() { return spatial_kernel_; }
  Tensor& spatial_bias() { return spatial_bias_; }
  ParameterList parameters() const;

  /// 2*C*max(1, C/r) + 2*7*7 + 1
  static std::size_t parameter_count(std::size_t channels, std::size_t reduction_ratio);

 private:
  Tensor shared_mlp(const Tensor& descriptor) const;
  void check_input(const Tensor& features) const;

  std::size_t channels_;
  CbamOptions options_;
  Tensor w0_;              // [C, hidden]
  Tensor w1_;              // [hidden, C]
  Tensor spatial_kernel_;  // [1, 2, 7, 7]
  Tensor spatial_bias_;    // [1]
};

}  // namespace lesion
