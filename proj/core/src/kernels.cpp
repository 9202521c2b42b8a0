#include "biskip/kernels.hpp"

#include <Eigen/Core>

#include "biskip/errors.hpp"

namespace biskip::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

// col[(c*k + ky)*k + kx][oy*wo + ox] = input[c][oy*s - p + ky][ox*s - p + kx]
void im2col(const Tensor& input, const ConvGeometry& g, int ho, int wo, std::vector<double>& col) {
    const int c_in = input.channels();
    const int h = input.height();
    const int w = input.width();
    const int k = g.kernel;
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    col.assign(static_cast<std::size_t>(c_in) * k * k * cols, 0.0);
    const double* src = input.data();
    for (int c = 0; c < c_in; ++c) {
        const double* plane = src + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* line = plane + static_cast<std::size_t>(iy) * w;
                    double* dst = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < w) dst[ox] = line[ix];
                    }
                }
            }
        }
    }
}

void col2im(const std::vector<double>& col, const ConvGeometry& g, int ho, int wo, Tensor& input) {
    const int c_in = input.channels();
    const int h = input.height();
    const int w = input.width();
    const int k = g.kernel;
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    double* dst = input.data();
    for (int c = 0; c < c_in; ++c) {
        double* plane = dst + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    double* line = plane + static_cast<std::size_t>(iy) * w;
                    const double* src = row + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < w) line[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void check_conv_operands(const Tensor& input, const Tensor& weight, const ConvGeometry& g) {
    if (input.rank() != 3) throw ShapeMismatch("conv2d expects a CHW input, got " + shape_to_string(input.shape()));
    if (weight.rank() != 4 || weight.dim(2) != g.kernel || weight.dim(3) != g.kernel) {
        throw ShapeMismatch("conv2d weight " + shape_to_string(weight.shape()) + " does not match kernel " +
                            std::to_string(g.kernel));
    }
    if (weight.dim(1) != input.channels()) {
        throw ShapeMismatch("conv2d weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                            std::to_string(input.channels()));
    }
}

}  // namespace

int conv_out_size(int in, const ConvGeometry& g) {
    const int span = in + 2 * g.pad - g.kernel;
    if (span < 0) {
        throw DimensionError("input extent " + std::to_string(in) + " too small for kernel " +
                             std::to_string(g.kernel));
    }
    return span / g.stride + 1;
}

int conv_transpose_out_size(int in, const ConvGeometry& g, int output_pad) {
    return (in - 1) * g.stride - 2 * g.pad + g.kernel + output_pad;
}

void add_channel_bias(Tensor& out, const Tensor& bias) {
    const int c_out = out.channels();
    const std::size_t plane = static_cast<std::size_t>(out.height()) * out.width();
    double* dst = out.data();
    for (int c = 0; c < c_out; ++c) {
        const double b = bias[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < plane; ++i) dst[c * plane + i] += b;
    }
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvGeometry& g) {
    check_conv_operands(input, weight, g);
    const int c_out = weight.dim(0);
    const int ho = conv_out_size(input.height(), g);
    const int wo = conv_out_size(input.width(), g);
    const int patch = input.channels() * g.kernel * g.kernel;
    const int cols = ho * wo;

    Tensor out({c_out, ho, wo});
    ConstMapMatrix w(weight.data(), c_out, patch);
    MapMatrix o(out.data(), c_out, cols);
    if (is_pointwise(g)) {
        o.noalias() = w * ConstMapMatrix(input.data(), patch, cols);
    } else {
        std::vector<double> col;
        im2col(input, g, ho, wo, col);
        o.noalias() = w * ConstMapMatrix(col.data(), patch, cols);
    }
    if (bias) add_channel_bias(out, *bias);
    return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvGeometry& g) {
    const int c_out = weight.dim(0);
    const int c_in = weight.dim(1);
    if (grad_out.channels() != c_out || input_shape.at(0) != c_in) {
        throw ShapeMismatch("conv2d_backward_input channel mismatch");
    }
    const int ho = grad_out.height();
    const int wo = grad_out.width();
    const int patch = c_in * g.kernel * g.kernel;
    const int cols = ho * wo;

    Tensor grad_in(input_shape);
    ConstMapMatrix w(weight.data(), c_out, patch);
    ConstMapMatrix go(grad_out.data(), c_out, cols);
    if (is_pointwise(g)) {
        MapMatrix(grad_in.data(), patch, cols).noalias() = w.transpose() * go;
    } else {
        std::vector<double> col(static_cast<std::size_t>(patch) * cols);
        MapMatrix(col.data(), patch, cols).noalias() = w.transpose() * go;
        col2im(col, g, ho, wo, grad_in);
    }
    return grad_in;
}

Tensor conv2d_backward_weight(const Tensor& input, const Tensor& grad_out, const ConvGeometry& g) {
    const int c_out = grad_out.channels();
    const int c_in = input.channels();
    const int ho = grad_out.height();
    const int wo = grad_out.width();
    const int patch = c_in * g.kernel * g.kernel;
    const int cols = ho * wo;

    Tensor grad_w({c_out, c_in, g.kernel, g.kernel});
    MapMatrix gw(grad_w.data(), c_out, patch);
    ConstMapMatrix go(grad_out.data(), c_out, cols);
    if (is_pointwise(g)) {
        gw.noalias() = go * ConstMapMatrix(input.data(), patch, cols).transpose();
    } else {
        std::vector<double> col;
        im2col(input, g, ho, wo, col);
        gw.noalias() = go * ConstMapMatrix(col.data(), patch, cols).transpose();
    }
    return grad_w;
}

Tensor channel_sums(const Tensor& grad_out) {
    const int c = grad_out.channels();
    const std::size_t plane = static_cast<std::size_t>(grad_out.height()) * grad_out.width();
    Tensor out({c});
    const double* src = grad_out.data();
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += src[ch * plane + i];
        out[static_cast<std::size_t>(ch)] = s;
    }
    return out;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvGeometry& g,
                        int output_pad) {
    if (input.rank() != 3 || weight.rank() != 4 || weight.dim(0) != input.channels()) {
        throw ShapeMismatch("conv_transpose2d operand mismatch: input " + shape_to_string(input.shape()) +
                            ", weight " + shape_to_string(weight.shape()));
    }
    const Shape out_shape{weight.dim(1), conv_transpose_out_size(input.height(), g, output_pad),
                          conv_transpose_out_size(input.width(), g, output_pad)};
    Tensor out = conv2d_backward_input(input, weight, out_shape, g);
    if (bias) add_channel_bias(out, *bias);
    return out;
}

}  // namespace biskip::kernels
