#pragma once

#include "stonefuse/tensor.hpp"

namespace stonefuse {

struct LinearParams {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
};

/// x [N, in] -> x*w + b, bias broadcast over rows.
inline Tensor linear(const Tensor& x, const LinearParams& p) { return add(matmul(x, p.w), p.b); }

struct ConvParams {
    Tensor kernel;
    Tensor bias;  // [C_out]
};

/// conv3d plus channel bias.
inline Tensor conv3d_bias(const Tensor& x, const ConvParams& p, std::size_t stride,
                          std::size_t padding) {
    Tensor y = conv3d(x, p.kernel, stride, padding);
    return add(y, reshape(p.bias, {p.bias.size(), 1, 1, 1}));
}

/// conv_transpose3d plus channel bias.
inline Tensor conv_transpose3d_bias(const Tensor& x, const ConvParams& p, std::size_t stride,
                                    std::size_t padding = 0) {
    Tensor y = conv_transpose3d(x, p.kernel, stride, padding);
    return add(y, reshape(p.bias, {p.bias.size(), 1, 1, 1}));
}

}  // namespace stonefuse
