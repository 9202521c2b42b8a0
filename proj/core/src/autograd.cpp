#include "biskip/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "biskip/errors.hpp"

namespace biskip::ag {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

Var make_leaf(Tensor value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
}

// Builds a result node; the backward closure is only kept when some input
// needs a gradient and recording is enabled.
Var make_result(Tensor value, std::vector<NodePtr> inputs, std::function<void(const Tensor&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || in->requires_grad;
    }
    if (needs) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(fn);
    }
    return Var(std::move(node));
}

void push(const NodePtr& node, const Tensor& g) {
    if (node->requires_grad) node->accumulate(g);
}

}  // namespace

void Node::accumulate(const Tensor& g) {
    if (grad.empty()) {
        grad = g;
    } else {
        grad += g;
    }
}

Var constant(Tensor value) { return make_leaf(std::move(value), false); }
Var parameter(Tensor value) { return make_leaf(std::move(value), true); }
Var scalar(double v) { return constant(Tensor({1}, v)); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
    if (root.value().size() != 1) throw ShapeMismatch("backward() without seed needs a scalar root");
    backward(root, Tensor(root.shape(), 1.0));
}

void backward(const Var& root, const Tensor& seed) {
    require_same_shape(root.value(), seed, "backward seed");
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(node->grad);
    }
}

// --- convolution ------------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var* bias, const kernels::ConvGeometry& g) {
    Tensor out = kernels::conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, g);
    std::vector<NodePtr> inputs{x.node(), weight.node()};
    NodePtr bnode = bias ? bias->node() : nullptr;
    if (bnode) inputs.push_back(bnode);
    NodePtr xn = x.node();
    NodePtr wn = weight.node();
    return make_result(std::move(out), std::move(inputs), [xn, wn, bnode, g](const Tensor& go) {
        if (xn->requires_grad) xn->accumulate(kernels::conv2d_backward_input(go, wn->value, xn->value.shape(), g));
        if (wn->requires_grad) wn->accumulate(kernels::conv2d_backward_weight(xn->value, go, g));
        if (bnode && bnode->requires_grad) bnode->accumulate(kernels::channel_sums(go));
    });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var* bias, const kernels::ConvGeometry& g,
                     int output_pad) {
    Tensor out = kernels::conv_transpose2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, g, output_pad);
    std::vector<NodePtr> inputs{x.node(), weight.node()};
    NodePtr bnode = bias ? bias->node() : nullptr;
    if (bnode) inputs.push_back(bnode);
    NodePtr xn = x.node();
    NodePtr wn = weight.node();
    return make_result(std::move(out), std::move(inputs), [xn, wn, bnode, g](const Tensor& go) {
        if (xn->requires_grad) xn->accumulate(kernels::conv2d(go, wn->value, nullptr, g));
        if (wn->requires_grad) wn->accumulate(kernels::conv2d_backward_weight(go, xn->value, g));
        if (bnode && bnode->requires_grad) bnode->accumulate(kernels::channel_sums(go));
    });
}

// --- pooling ----------------------------------------------------------------

Var avg_pool2(const Var& x) {
    const Tensor& in = x.value();
    const int c = in.channels(), h = in.height(), w = in.width();
    if (h % 2 || w % 2) throw DimensionError("avg_pool2 needs even spatial dims, got " + shape_to_string(in.shape()));
    Tensor out({c, h / 2, w / 2});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx)
                out.at(ch, y, xx) = 0.25 * (in.at(ch, 2 * y, 2 * xx) + in.at(ch, 2 * y, 2 * xx + 1) +
                                            in.at(ch, 2 * y + 1, 2 * xx) + in.at(ch, 2 * y + 1, 2 * xx + 1));
    NodePtr xn = x.node();
    return make_result(std::move(out), {xn}, [xn](const Tensor& go) {
        Tensor gi(xn->value.shape());
        for (int ch = 0; ch < gi.channels(); ++ch)
            for (int y = 0; y < gi.height(); ++y)
                for (int xx = 0; xx < gi.width(); ++xx) gi.at(ch, y, xx) = 0.25 * go.at(ch, y / 2, xx / 2);
        xn->accumulate(gi);
    });
}

Var max_pool2(const Var& x) {
    const Tensor& in = x.value();
    const int c = in.channels(), h = in.height(), w = in.width();
    if (h % 2 || w % 2) throw DimensionError("max_pool2 needs even spatial dims, got " + shape_to_string(in.shape()));
    Tensor out({c, h / 2, w / 2});
    std::vector<std::size_t> argmax(out.size());
    std::size_t k = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx, ++k) {
                std::size_t best = (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * xx;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (static_cast<std::size_t>(ch) * h + 2 * y + dy) * w + 2 * xx + dx;
                        if (in[idx] > in[best]) best = idx;
                    }
                argmax[k] = best;
                out[k] = in[best];
            }
    NodePtr xn = x.node();
    return make_result(std::move(out), {xn}, [xn, argmax = std::move(argmax)](const Tensor& go) {
        Tensor gi(xn->value.shape());
        for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += go[i];
        xn->accumulate(gi);
    });
}

// --- normalization ----------------------------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& in = x.value();
    const int c = in.channels();
    const std::size_t n = static_cast<std::size_t>(in.height()) * in.width();
    Tensor xhat(in.shape());
    Tensor out(in.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        const double* src = in.data() + ch * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += src[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[ch] = is;
        const double gm = gamma.value()[ch];
        const double bt = beta.value()[ch];
        for (std::size_t i = 0; i < n; ++i) {
            const double h = (src[i] - mean) * is;
            xhat[ch * n + i] = h;
            out[ch * n + i] = gm * h + bt;
        }
    }
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    return make_result(std::move(out), {xn, gn, bn},
                       [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c](const Tensor& go) {
                           Tensor gx(xn->value.shape());
                           Tensor gg({c});
                           Tensor gb({c});
                           for (int ch = 0; ch < c; ++ch) {
                               const double* dy = go.data() + ch * n;
                               const double* h = xhat.data() + ch * n;
                               double sum_dy = 0.0, sum_dy_h = 0.0;
                               for (std::size_t i = 0; i < n; ++i) {
                                   sum_dy += dy[i];
                                   sum_dy_h += dy[i] * h[i];
                               }
                               gg[ch] = sum_dy_h;
                               gb[ch] = sum_dy;
                               const double gm = gn->value[ch];
                               const double scale = gm * inv_std[ch];
                               const double mean_dy = sum_dy / static_cast<double>(n);
                               const double mean_dy_h = sum_dy_h / static_cast<double>(n);
                               double* dx = gx.data() + ch * n;
                               for (std::size_t i = 0; i < n; ++i) dx[i] = scale * (dy[i] - mean_dy - h[i] * mean_dy_h);
                           }
                           push(xn, gx);
                           push(gn, gg);
                           push(bn, gb);
                       });
}

// --- pointwise --------------------------------------------------------------

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

Var leaky_relu(const Var& x, double slope) {
    Tensor out = x.value();
    for (double& v : out.values()) {
        if (v <= 0.0) v *= slope;
    }
    NodePtr xn = x.node();
    return make_result(std::move(out), {xn}, [xn, slope](const Tensor& go) {
        Tensor gi = go;
        const Tensor& in = xn->value;
        for (std::size_t i = 0; i < gi.size(); ++i) {
            if (in[i] <= 0.0) gi[i] *= slope;
        }
        xn->accumulate(gi);
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    NodePtr an = a.node(), bn = b.node();
    return make_result(std::move(out), {an, bn}, [an, bn](const Tensor& go) {
        push(an, go);
        push(bn, go);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    NodePtr an = a.node(), bn = b.node();
    return make_result(std::move(out), {an, bn}, [an, bn](const Tensor& go) {
        push(an, go);
        if (bn->requires_grad) {
            Tensor neg = go;
            neg *= -1.0;
            bn->accumulate(neg);
        }
    });
}

Var scale(const Var& a, double s) { return affine(a, s, 0.0); }

Var affine(const Var& x, double a, double b) {
    Tensor out = x.value();
    for (double& v : out.values()) v = a * v + b;
    NodePtr xn = x.node();
    return make_result(std::move(out), {xn}, [xn, a](const Tensor& go) {
        Tensor gi = go;
        gi *= a;
        xn->accumulate(gi);
    });
}

Var channel_affine(const Var& x, std::span<const double> scales, std::span<const double> shifts) {
    const int c = x.value().channels();
    if (static_cast<int>(scales.size()) != c || static_cast<int>(shifts.size()) != c) {
        throw ShapeMismatch("channel_affine: expected " + std::to_string(c) + " coefficients");
    }
    const std::size_t plane = static_cast<std::size_t>(x.value().height()) * x.value().width();
    Tensor out = x.value();
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = scales[ch] * out[ch * plane + i] + shifts[ch];
    NodePtr xn = x.node();
    std::vector<double> s(scales.begin(), scales.end());
    return make_result(std::move(out), {xn}, [xn, s, plane](const Tensor& go) {
        Tensor gi = go;
        for (std::size_t ch = 0; ch < s.size(); ++ch)
            for (std::size_t i = 0; i < plane; ++i) gi[ch * plane + i] *= s[ch];
        xn->accumulate(gi);
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeMismatch("concat_channels of nothing");
    const int h = parts[0].value().height();
    const int w = parts[0].value().width();
    int c = 0;
    for (const Var& p : parts) {
        if (p.value().height() != h || p.value().width() != w) {
            throw ShapeMismatch("concat_channels spatial mismatch: " + shape_to_string(p.shape()) + " vs " +
                                shape_to_string(parts[0].shape()));
        }
        c += p.value().channels();
    }
    Tensor out({c, h, w});
    std::vector<NodePtr> inputs;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
        offsets.push_back(off);
        off += p.value().size();
        inputs.push_back(p.node());
    }
    auto nodes = inputs;
    return make_result(std::move(out), std::move(inputs), [nodes, offsets](const Tensor& go) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (!nodes[i]->requires_grad) continue;
            Tensor gi(nodes[i]->value.shape());
            std::copy(go.data() + offsets[i], go.data() + offsets[i] + gi.size(), gi.data());
            nodes[i]->accumulate(gi);
        }
    });
}

Var clamp(const Var& x, double lo, double hi) {
    Tensor out = x.value();
    for (double& v : out.values()) v = std::min(hi, std::max(lo, v));
    NodePtr xn = x.node();
    return make_result(std::move(out), {xn}, [xn, lo, hi](const Tensor& go) {
        Tensor gi = go;
        const Tensor& in = xn->value;
        for (std::size_t i = 0; i < gi.size(); ++i) {
            if (in[i] < lo || in[i] > hi) gi[i] = 0.0;
        }
        xn->accumulate(gi);
    });
}

// --- reductions -------------------------------------------------------------

Var mean_abs_diff(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mean_abs_diff");
    const std::size_t n = a.value().size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(a.value()[i] - b.value()[i]);
    NodePtr an = a.node(), bn = b.node();
    return make_result(Tensor({1}, s / static_cast<double>(n)), {an, bn}, [an, bn, n](const Tensor& go) {
        const double k = go[0] / static_cast<double>(n);
        Tensor ga(an->value.shape());
        for (std::size_t i = 0; i < n; ++i) {
            const double d = an->value[i] - bn->value[i];
            ga[i] = d > 0.0 ? k : (d < 0.0 ? -k : 0.0);
        }
        if (bn->requires_grad) {
            Tensor gb = ga;
            gb *= -1.0;
            bn->accumulate(gb);
        }
        push(an, ga);
    });
}

Var mean_sq_diff(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mean_sq_diff");
    const std::size_t n = a.value().size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result(Tensor({1}, s / static_cast<double>(n)), {an, bn}, [an, bn, n](const Tensor& go) {
        const double k = 2.0 * go[0] / static_cast<double>(n);
        Tensor ga(an->value.shape());
        for (std::size_t i = 0; i < n; ++i) ga[i] = k * (an->value[i] - bn->value[i]);
        if (bn->requires_grad) {
            Tensor gb = ga;
            gb *= -1.0;
            bn->accumulate(gb);
        }
        push(an, ga);
    });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
    if (scalars.size() != weights.size()) throw ShapeMismatch("weighted_sum: length mismatch");
    double s = 0.0;
    std::vector<NodePtr> inputs;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].value().size() != 1) throw ShapeMismatch("weighted_sum expects scalars");
        s += weights[i] * scalars[i].item();
        inputs.push_back(scalars[i].node());
    }
    std::vector<double> w(weights.begin(), weights.end());
    auto nodes = inputs;
    return make_result(Tensor({1}, s), std::move(inputs), [nodes, w](const Tensor& go) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (w[i] != 0.0) push(nodes[i], Tensor({1}, w[i] * go[0]));
        }
    });
}

Var external_scalar(const Var& x, double value, Tensor grad_wrt_x) {
    require_same_shape(x.value(), grad_wrt_x, "external_scalar gradient");
    NodePtr xn = x.node();
    return make_result(Tensor({1}, value), {xn}, [xn, g = std::move(grad_wrt_x)](const Tensor& go) {
        Tensor gi = g;
        gi *= go[0];
        xn->accumulate(gi);
    });
}

}  // namespace biskip::ag
