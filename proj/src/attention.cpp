#include "lesion/attention.hpp"

#include <algorithm>
#include <cmath>

#include "lesion/error.hpp"
#include "lesion/ops.hpp"
#include "lesion/rng.hpp"

namespace lesion {

namespace {

Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng).set_requires_grad();
}

}  // namespace

std::size_t eca_kernel_size(std::int64_t channels, int gamma, int b) {
  if (channels < 1) fail(ErrorKind::InvalidConfig, "ECA needs at least one channel");
  if (gamma < 1) fail(ErrorKind::InvalidConfig, "ECA gamma must be positive");
  const double t = std::floor(std::abs(std::log2(static_cast<double>(channels)) / gamma + static_cast<double>(b) / gamma));
  auto k = static_cast<std::size_t>(t);
  if (k % 2 == 0) ++k;
  return std::max<std::size_t>(k, 1);
}

EcaModule::EcaModule(std::size_t channels, Rng& rng, EcaOptions options) : channels_(channels) {
  const std::size_t k = options.kernel_size.value_or(eca_kernel_size(static_cast<std::int64_t>(channels), options.gamma, options.b));
  if (k < 1 || k % 2 == 0) fail(ErrorKind::InvalidConfig, "ECA kernel size must be odd and >= 1");
  kernel_ = init_weight({k}, k, rng);
}

Tensor EcaModule::channel_gate(const Tensor& features) const {
  if (features.rank() != 3 || features.dim(0) != channels_) {
    fail(ErrorKind::ShapeMismatch, "ECA expects [" + std::to_string(channels_) + ",H,W], got " + to_string(features.shape()));
  }
  Tensor pooled = reshape(global_pool(features, PoolMode::Avg), {channels_});
  return reshape(sigmoid(conv1d(pooled, kernel_)), {channels_, 1, 1});
}

Tensor EcaModule::forward(const Tensor& features) const { return mul(features, channel_gate(features)); }

CbamModule::CbamModule(std::size_t channels, Rng& rng, CbamOptions options) : channels_(channels), options_(options) {
  if (channels < 1) fail(ErrorKind::InvalidConfig, "CBAM needs at least one channel");
  if (options.reduction_ratio < 1) fail(ErrorKind::InvalidConfig, "CBAM reduction ratio must be >= 1");
  const std::size_t hidden = std::max<std::size_t>(1, channels / options.reduction_ratio);
  w0_ = init_weight({channels, hidden}, channels, rng);
  w1_ = init_weight({hidden, channels}, hidden, rng);
  spatial_kernel_ = init_weight({1, 2, kSpatialKernel, kSpatialKernel}, 2 * kSpatialKernel * kSpatialKernel, rng);
  spatial_bias_ = Tensor::zeros({1}).set_requires_grad();
}

std::size_t CbamModule::parameter_count(std::size_t channels, std::size_t reduction_ratio) {
  const std::size_t hidden = std::max<std::size_t>(1, channels / reduction_ratio);
  return 2 * channels * hidden + 2 * kSpatialKernel * kSpatialKernel + 1;
}

ParameterList CbamModule::parameters() const {
  return {{"w0", w0_}, {"w1", w1_}, {"spatial_kernel", spatial_kernel_}, {"spatial_bias", spatial_bias_}};
}

void CbamModule::check_input(const Tensor& features) const {
  if (features.rank() != 3 || features.dim(0) != channels_) {
    fail(ErrorKind::ShapeMismatch, "CBAM expects [" + std::to_string(channels_) + ",H,W], got " + to_string(features.shape()));
  }
}

Tensor CbamModule::shared_mlp(const Tensor& descriptor) const {
  Tensor hidden = matmul(reshape(descriptor, {1, channels_}), w0_);
  if (options_.hidden_activation == HiddenActivation::Relu) hidden = relu(hidden);
  return matmul(hidden, w1_);
}

Tensor CbamModule::channel_attention(const Tensor& features) const {
  check_input(features);
  Tensor from_avg = shared_mlp(global_pool(features, PoolMode::Avg));
  Tensor from_max = shared_mlp(global_pool(features, PoolMode::Max));
  return reshape(sigmoid(add(from_avg, from_max)), {channels_, 1, 1});
}

Tensor CbamModule::spatial_attention(const Tensor& features) const {
  check_input(features);
  Tensor pooled = concat({channel_pool(features, PoolMode::Avg), channel_pool(features, PoolMode::Max)}, 0);
  return sigmoid(conv2d(pooled, spatial_kernel_, spatial_bias_, kSpatialKernel / 2, 1));
}

CbamModule::Output CbamModule::forward_with_maps(const Tensor& features) const {
  Tensor mc = channel_attention(features);
  Tensor refined = mul(mc, features);
  Tensor ms = spatial_attention(refined);
  return {mul(ms, refined), {mc, ms}};
}

Tensor CbamModule::forward(const Tensor& features) const { return forward_with_maps(features).refined; }

}  // namespace lesion
