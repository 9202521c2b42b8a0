#pragma once

#include "biskip/tensor.hpp"

// Raw CHW convolution kernels. The autograd ops and the critic's explicit
// double-backward both sit on top of these three primitives, which are closed
// under differentiation:
//   d conv / d input   = conv2d_backward_input  (a transposed convolution)
//   d conv / d weight  = conv2d_backward_weight (a correlation)
namespace biskip::kernels {

struct ConvGeometry {
    int kernel = 3;
    int stride = 1;
    int pad = 1;
};

int conv_out_size(int in, const ConvGeometry& g);

// weight: [out][in][k][k]; bias may be null.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvGeometry& g);

// Adjoint of conv2d with respect to the input, scattered into `input_shape`.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvGeometry& g);

// Gradient of <grad_out, conv2d(input, W)> with respect to W.
Tensor conv2d_backward_weight(const Tensor& input, const Tensor& grad_out, const ConvGeometry& g);

// Per-channel spatial sum, the bias gradient.
Tensor channel_sums(const Tensor& grad_out);

// Transposed convolution; weight is [in][out][k][k].
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvGeometry& g,
                        int output_pad);
int conv_transpose_out_size(int in, const ConvGeometry& g, int output_pad);

void add_channel_bias(Tensor& out, const Tensor& bias);

}  // namespace biskip::kernels
