#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lesion/tensor.hpp"

namespace lesion {

class Rng;

enum class PoolMode { Avg, Max };

// Elementwise with trailing-aligned broadcasting; gradients sum-reduce over
// broadcast axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Shape broadcast_shape(const Shape& a, const Shape& b);

/// [..,M,K] x [..,K,N] -> [..,M,N], leading batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[..,Din] * weight[Din,Dout] + bias[Dout]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& x);  // swaps the last two axes
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor stack(const std::vector<Tensor>& parts);  // new leading axis

/// out[i] = x[index[i]] reshaped to `shape`; backward scatter-adds.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape shape);

Tensor sum(const Tensor& x);  // -> [1]
Tensor sum(const Tensor& x, std::size_t axis);   // drops the axis (rank-1 input -> [1])
Tensor mean(const Tensor& x, std::size_t axis);  // drops the axis (rank-1 input -> [1])

/// Cross-correlation of input[Cin,H,W] with kernel[Cout,Cin,kh,kw], zero padding.
/// `bias` is [Cout] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t padding,
              std::size_t stride);

/// Same-length 1D convolution of a channel vector ([C] or [1,C]) with a shared
/// odd-length kernel[k], zero padding k/2.
Tensor conv1d(const Tensor& input, const Tensor& kernel);

/// [C,H,W] -> [C,1,1]. Max routes gradient to the first maximum in row-major order.
Tensor global_pool(const Tensor& input, PoolMode mode);
/// [C,H,W] -> [1,H,W], same tie rule across channels.
Tensor channel_pool(const Tensor& input, PoolMode mode);
/// 2x2 average pooling with stride 2 over [C,H,W]; odd trailing rows/cols dropped.
Tensor avg_pool2(const Tensor& input);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
/// Exact x * Phi(x) with Phi the standard normal CDF.
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

/// Normalizes the last axis (population variance) then applies gain/shift[D].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

/// Mean over rows of -log softmax(logits[N,K])[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace lesion
