#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tofdetect/rng.hpp"
#include "tofdetect/tensor.hpp"

// Forward and analytic backward kernels for every layer the network uses.
// All kernels are templated on the scalar type and instantiated for float
// and double.

namespace tofd {

/// Output spatial size of a same-padded convolution.
inline int conv_out_dim(int in, int stride) noexcept { return (in - 1) / stride + 1; }

/// Weights (out_c, in_c, kd, kh, kw) with odd kernel sides; bias may be empty.
template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias, int stride);

template <class T>
struct ConvGrads {
    Tensor<T> input;
    Tensor<T> weights;
    std::vector<T> bias;  // empty when the layer has no bias
};

template <class T>
ConvGrads<T> conv3d_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out, int stride,
                             bool has_bias);

template <class T>
Tensor<T> upsample_repeat_forward(const Tensor<T>& input, int factor);
template <class T>
Tensor<T> upsample_repeat_backward(const Tensor<T>& grad_out, int factor);

/// x >= 0 -> x, x < 0 -> slope * x. Gradient at exactly 0 is 1.
template <class T>
Tensor<T> leaky_relu_forward(const Tensor<T>& input, T slope);
template <class T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out, T slope);

template <class T>
struct InstanceNormCache {
    Tensor<T> normalized;       // (x - mean) / sqrt(var + eps)
    std::vector<T> inv_std;     // per (sample, channel)
};

template <class T>
Tensor<T> instance_norm_forward(const Tensor<T>& input, std::span<const T> gamma, std::span<const T> beta, T eps,
                                InstanceNormCache<T>* cache = nullptr);

template <class T>
struct InstanceNormGrads {
    Tensor<T> input;
    std::vector<T> gamma;
    std::vector<T> beta;
};

template <class T>
InstanceNormGrads<T> instance_norm_backward(const InstanceNormCache<T>& cache, std::span<const T> gamma,
                                            const Tensor<T>& grad_out);

/// Inverted dropout. `keep_scale` receives the per-element factor (0 or 1/(1-p)).
template <class T>
Tensor<T> dropout_forward(const Tensor<T>& input, double p_drop, Rng& rng, bool training,
                          std::vector<T>* keep_scale = nullptr);

/// Per (sample, channel) maximum; ties resolve to the first voxel in scan order.
template <class T>
Tensor<T> global_max_pool_forward(const Tensor<T>& input, std::vector<std::size_t>* argmax = nullptr);
template <class T>
Tensor<T> global_max_pool_backward(const Shape5& input_shape, const std::vector<std::size_t>& argmax,
                                   const Tensor<T>& grad_out);

/// input (n, c_in, 1, 1, 1), weights (c_out, c_in, 1, 1, 1), bias c_out.
template <class T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights, std::span<const T> bias);

template <class T>
struct DenseGrads {
    Tensor<T> input;
    Tensor<T> weights;
    std::vector<T> bias;
};

template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out);

template <class T>
Tensor<T> sigmoid_forward(const Tensor<T>& input);
template <class T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

/// Softmax over the channel axis, independently per voxel.
template <class T>
Tensor<T> softmax_channels_forward(const Tensor<T>& input);
template <class T>
Tensor<T> softmax_channels_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

/// x (n, c, d, h, w) scaled by gates (n, c, 1, 1, 1).
template <class T>
Tensor<T> scale_channels_forward(const Tensor<T>& input, const Tensor<T>& gates);

/// Concatenation along channels.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Glorot/Xavier uniform on [-L, L], L = sqrt(6 / (fan_in + fan_out)), with
/// fan_in = in_c * kernel volume and fan_out = out_c * kernel volume.
template <class T>
Tensor<T> glorot_uniform(const Shape5& shape, Rng& rng);
double glorot_limit(const Shape5& shape);

}  // namespace tofd
