#pragma once

#include <span>

#include "transtailor/tensor.hpp"

namespace transtailor::ops {

// Cross-correlation. input [N,Cin,H,W], weight [Cout,Cin,Kh,Kw], bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding);

Tensor relu(const Tensor& x);

// Window max over [N,C,H,W], no padding, floor output extent.
Tensor max_pool2d(const Tensor& x, int kernel, int stride);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// x [N,in], weight [out,in], bias [out] -> [N,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Mean softmax cross-entropy over the batch; logits [N,K], labels in [0,K).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Multiplies channel c of x [N,C,H,W] by scale[c]; scale has shape [C].
Tensor channel_scale(const Tensor& x, const Tensor& scale);

// Sum of all elements, as a [1] tensor.
Tensor sum(const Tensor& x);

// x * factor for a constant factor.
Tensor scale(const Tensor& x, float factor);

}  // namespace transtailor::ops
