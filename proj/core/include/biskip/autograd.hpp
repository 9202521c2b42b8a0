#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "biskip/kernels.hpp"
#include "biskip/tensor.hpp"

// Minimal reverse-mode tape. Every op returns a Var whose node remembers its
// inputs and a closure that pushes the output gradient back into them. Graphs
// are rebuilt on every forward pass; parameters are long-lived leaf nodes.
namespace biskip::ag {

struct Node {
    Tensor value;
    Tensor grad;  // empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(const Tensor& grad_out)> backward;

    void accumulate(const Tensor& g);
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    double item() const { return node_->value[0]; }
    void zero_grad() { node_->grad = Tensor(); }

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);
Var scalar(double v);

// Graph recording is on by default; the guard disables it for the current
// thread (inference, loss evaluation for logging).
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Propagates from a scalar root (seed 1) or from a root with a given seed gradient.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

// --- ops ------------------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var* bias, const kernels::ConvGeometry& g);
Var conv_transpose2d(const Var& x, const Var& weight, const Var* bias, const kernels::ConvGeometry& g,
                     int output_pad);
Var avg_pool2(const Var& x);
Var max_pool2(const Var& x);
// Per-channel normalization over the spatial extent of one CHW sample.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var concat_channels(std::span<const Var> parts);
Var clamp(const Var& x, double lo, double hi);
// Pointwise affine map a*x + b (range conversions, input normalization).
Var affine(const Var& x, double a, double b);
// Per-channel affine map scales[c]*x + shifts[c].
Var channel_affine(const Var& x, std::span<const double> scales, std::span<const double> shifts);

// Scalar reductions (shape [1]).
Var mean_abs_diff(const Var& a, const Var& b);
Var mean_sq_diff(const Var& a, const Var& b);
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);
// A scalar computed outside the tape, e.g. a critic score, whose gradient
// with respect to x is already known.
Var external_scalar(const Var& x, double value, Tensor grad_wrt_x);

}  // namespace biskip::ag
