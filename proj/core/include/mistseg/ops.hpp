#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mistseg/tensor.hpp"

// Differentiable operations over Tensor. Image tensors are NCHW. Binary
// elementwise ops accept identical shapes, or a single-element operand that
// is broadcast against the other.

namespace mistseg {

// elementwise binary
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
Tensor operator-(double c, const Tensor& a);
Tensor operator-(const Tensor& a);

// elementwise unary
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Gradient passes where lo < x < hi and is zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

// reductions
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over one axis; the axis is removed from the result.
Tensor sum_dim(const Tensor& x, std::size_t axis);
Tensor mean_dim(const Tensor& x, std::size_t axis);

// structural
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
/// Rows [begin, end) along axis 0.
Tensor slice(const Tensor& x, std::size_t begin, std::size_t end);
/// out[i] = x[index[i]] along axis 0.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

// linear algebra and layers
Tensor matmul(const Tensor& a, const Tensor& b);
/// x: N x D, weight: D x E, bias: E.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Cross-correlation. input N x C x H x W, kernel O x C x K x K, bias O (optional).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const std::optional<Tensor>& bias,
              std::size_t stride = 1, std::size_t padding = 0);

/// Half-pixel bilinear resampling (corners not aligned), NCHW.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor upsample2x(const Tensor& x);
/// Average pooling with zero padding counted in the divisor.
Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding = 0);
/// N x C x H x W -> N x C.
Tensor global_avg_pool(const Tensor& x);
/// N x L -> N x L x H x W, each channel constant.
Tensor tile_spatial(const Tensor& z, std::size_t h, std::size_t w);
/// Per-sample, per-channel normalization followed by a learned affine map.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace mistseg
