#include "biskip/model.hpp"

#include <cmath>

#include "biskip/errors.hpp"

namespace biskip {

std::string_view to_string(ModelVariant v) {
    switch (v) {
        case ModelVariant::S: return "S";
        case ModelVariant::BS_cR: return "BS-cR";
        case ModelVariant::BS_wo_R: return "BS-w/o-R";
        case ModelVariant::BS: return "BS";
    }
    return "?";
}

ModelVariant parse_variant(std::string_view text) {
    if (text == "S") return ModelVariant::S;
    if (text == "BS") return ModelVariant::BS;
    if (text == "BS-cR" || text == "BS_cR") return ModelVariant::BS_cR;
    if (text == "BS-w/o-R" || text == "BS_wo_R" || text == "BS-wo-R") return ModelVariant::BS_wo_R;
    throw SpecError("unknown model variant '" + std::string(text) + "'");
}

void GeneratorSpec::validate() const {
    if (n_scales < 1 || n_scales > 12) throw SpecError("n_scales must be in [1, 12]");
    if (static_cast<int>(channels_path.size()) != n_scales || static_cast<int>(channels_skip.size()) != n_scales) {
        throw SpecError("channels_path and channels_skip must both have n_scales = " + std::to_string(n_scales) +
                        " entries (got " + std::to_string(channels_path.size()) + " and " +
                        std::to_string(channels_skip.size()) + ")");
    }
    for (int c : channels_path) {
        if (c <= 0) throw SpecError("channels_path entries must be positive");
    }
    for (int c : channels_skip) {
        if (c <= 0) throw SpecError("channels_skip entries must be positive");
    }
    if (resblocks_per_scale < 0) throw SpecError("resblocks_per_scale must be >= 0");
    if (image_channels <= 0) throw SpecError("image_channels must be positive");
}

// --- Generator --------------------------------------------------------------

Generator::Conv Generator::make_conv(const std::string& name, int in, int out, int kernel, int stride, Rng& rng) {
    Tensor w({out, in, kernel, kernel});
    const double a = xavier_bound(w.shape());
    for (double& v : w.values()) v = rng.uniform(-a, a);
    Conv c;
    c.weight = params_.add(name + ".weight", std::move(w));
    c.bias = params_.add(name + ".bias", Tensor({out}));
    c.geometry = {kernel, stride, kernel / 2};
    return c;
}

Generator::Conv Generator::make_conv_transpose(const std::string& name, int in, int out, int kernel, Rng& rng) {
    Tensor w({in, out, kernel, kernel});
    const double a = xavier_bound(w.shape());
    for (double& v : w.values()) v = rng.uniform(-a, a);
    Conv c;
    c.weight = params_.add(name + ".weight", std::move(w));
    c.bias = params_.add(name + ".bias", Tensor({out}));
    c.geometry = {kernel, 2, kernel / 2};
    return c;
}

Generator::Norm Generator::make_norm(const std::string& name, int channels) {
    return {params_.add(name + ".gamma", Tensor({channels}, 1.0)), params_.add(name + ".beta", Tensor({channels}))};
}

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    spec_.validate();
    Rng rng(seed);
    const int n = spec_.n_scales;
    const auto& P = spec_.channels_path;
    const auto& K = spec_.channels_skip;

    int in = spec_.image_channels;
    for (int i = 0; i < n; ++i) {
        const std::string pre = "enc" + std::to_string(i);
        EncoderScale e;
        e.down_conv = make_conv(pre + ".down.conv5", in, P[i], 5, 2, rng);
        e.down_proj = make_conv(pre + ".down.proj1", in, P[i], 1, 1, rng);
        e.down_norm = make_norm(pre + ".down.norm", P[i]);
        e.body = make_conv(pre + ".conv3", P[i], P[i], 3, 1, rng);
        e.body_norm = make_norm(pre + ".conv3.norm", P[i]);
        if (spec_.has_resblocks()) {
            for (int r = 0; r < spec_.resblocks_per_scale; ++r) {
                const std::string rp = pre + ".res" + std::to_string(r);
                ResBlock rb;
                rb.conv1 = make_conv(rp + ".conv1", P[i], P[i], 3, 1, rng);
                rb.norm1 = make_norm(rp + ".norm1", P[i]);
                if (spec_.variant == ModelVariant::BS) {
                    rb.conv2 = make_conv(rp + ".conv2", P[i], P[i], 3, 1, rng);
                    rb.norm2 = make_norm(rp + ".norm2", P[i]);
                }
                e.resblocks.push_back(std::move(rb));
            }
        }
        e.shallow = make_conv(pre + ".skip.shallow", P[i], K[i], 1, 1, rng);
        if (spec_.has_deep_skip()) e.deep = make_conv(pre + ".skip.deep", P[i], K[i], 3, 1, rng);
        encoder_.push_back(std::move(e));
        in = P[i];
    }

    decoder_.resize(static_cast<std::size_t>(n));
    for (int i = n - 1; i >= 0; --i) {
        const std::string pre = "dec" + std::to_string(i);
        const int skip_in = K[i] * (spec_.has_deep_skip() ? 2 : 1);
        const int d_in = P[i];  // bottleneck width at the deepest scale, else the up-conv of scale i+1
        const int up_out = i > 0 ? P[i - 1] : P[0];
        DecoderScale d;
        d.merge = make_conv(pre + ".conv3", d_in + skip_in, P[i], 3, 1, rng);
        d.merge_norm = make_norm(pre + ".conv3.norm", P[i]);
        d.mix = make_conv(pre + ".conv1", P[i], P[i], 1, 1, rng);
        d.mix_norm = make_norm(pre + ".conv1.norm", P[i]);
        d.up = make_conv_transpose(pre + ".up", P[i], up_out, 5, rng);
        d.up_norm = make_norm(pre + ".up.norm", up_out);
        decoder_[static_cast<std::size_t>(i)] = std::move(d);
    }
    output_ = make_conv("out.conv1", P[0], spec_.image_channels, 1, 1, rng);
}

ag::Var Generator::apply(const Conv& c, const ag::Var& x) { return ag::conv2d(x, c.weight, &c.bias, c.geometry); }

ag::Var Generator::apply_up(const Conv& c, const ag::Var& x) {
    return ag::conv_transpose2d(x, c.weight, &c.bias, c.geometry, 1);
}

ag::Var Generator::apply(const Norm& n, const ag::Var& x) { return ag::batch_norm(x, n.gamma, n.beta); }

void Generator::check_input(const Tensor& x) const {
    if (x.rank() != 3 || x.channels() != spec_.image_channels) {
        throw ShapeMismatch("generator expects a " + std::to_string(spec_.image_channels) + "xHxW input, got " +
                            shape_to_string(x.shape()));
    }
    const int div = spec_.size_divisor();
    if (x.height() <= 0 || x.width() <= 0 || x.height() % div != 0 || x.width() % div != 0) {
        throw DimensionError("generator input " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                             " is not divisible by " + std::to_string(div));
    }
}

ag::Var Generator::residual(const ag::Var& x) const {
    check_input(x.value());
    const int n = spec_.n_scales;
    std::vector<ag::Var> shallow(static_cast<std::size_t>(n));
    std::vector<ag::Var> deep(static_cast<std::size_t>(n));

    ag::Var a = x;
    for (int i = 0; i < n; ++i) {
        const EncoderScale& e = encoder_[static_cast<std::size_t>(i)];
        ag::Var down = ag::add(apply(e.down_conv, a), apply(e.down_proj, ag::avg_pool2(a)));
        ag::Var f = ag::relu(apply(e.down_norm, down));
        ag::Var r = ag::relu(apply(e.body_norm, apply(e.body, f)));
        for (const ResBlock& rb : e.resblocks) {
            ag::Var body = apply(rb.norm1, apply(rb.conv1, r));
            if (rb.conv2) body = apply(*rb.norm2, apply(*rb.conv2, ag::relu(body)));
            r = ag::add(r, body);
        }
        shallow[static_cast<std::size_t>(i)] = apply(e.shallow, f);
        if (e.deep) deep[static_cast<std::size_t>(i)] = apply(*e.deep, r);
        a = r;
    }

    ag::Var d = a;
    for (int i = n - 1; i >= 0; --i) {
        const DecoderScale& dec = decoder_[static_cast<std::size_t>(i)];
        std::vector<ag::Var> parts{d, shallow[static_cast<std::size_t>(i)]};
        if (deep[static_cast<std::size_t>(i)]) parts.push_back(deep[static_cast<std::size_t>(i)]);
        ag::Var m = ag::relu(apply(dec.merge_norm, apply(dec.merge, ag::concat_channels(parts))));
        m = ag::relu(apply(dec.mix_norm, apply(dec.mix, m)));
        d = ag::relu(apply(dec.up_norm, apply_up(dec.up, m)));
    }
    return apply(output_, d);
}

ag::Var Generator::forward(const ag::Var& x) const { return ag::clamp(ag::add(x, residual(x)), -1.0, 1.0); }

Tensor Generator::forward(const Tensor& x) const {
    ag::NoGradGuard guard;
    return forward(ag::constant(x)).value();
}

void Generator::zero_residual_output() {
    output_.weight.mutable_value().fill(0.0);
    output_.bias.mutable_value().fill(0.0);
}

Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed) { return Generator(spec, seed); }

// --- Critic -----------------------------------------------------------------

std::vector<CriticLayerSpec> default_critic_layers(int image_channels) {
    return {
        {image_channels, 64, 4, 2, 1, true},
        {64, 128, 4, 2, 1, true},
        {128, 256, 4, 2, 1, true},
        {256, 512, 3, 1, 1, true},
        {512, 1, 3, 1, 1, false},
    };
}

Critic::Critic(std::vector<CriticLayerSpec> layers, std::uint64_t seed, double slope)
    : layers_(std::move(layers)), slope_(slope), seed_(seed) {
    if (layers_.empty()) throw SpecError("critic needs at least one layer");
    Rng rng(seed);
    int prev = layers_.front().in_channels;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& s = layers_[l];
        if (s.in_channels != prev) throw SpecError("critic layer " + std::to_string(l) + " channel mismatch");
        prev = s.out_channels;
        Tensor w({s.out_channels, s.in_channels, s.kernel, s.kernel});
        const double a = xavier_bound(w.shape());
        for (double& v : w.values()) v = rng.uniform(-a, a);
        params_.add("critic" + std::to_string(l) + ".weight", std::move(w));
        params_.add("critic" + std::to_string(l) + ".bias", Tensor({s.out_channels}));
    }
    if (layers_.back().out_channels != 1) throw SpecError("critic must end in a single channel");
}

Critic Critic::linear(const Tensor& w, double bias) {
    if (w.rank() != 3 || w.height() != w.width()) throw SpecError("linear critic weight must be [C][K][K]");
    Critic c;
    c.layers_ = {{w.channels(), 1, w.height(), 1, 0, false}};
    Tensor weight({1, w.channels(), w.height(), w.width()}, w.storage());
    c.params_.add("critic0.weight", std::move(weight));
    c.params_.add("critic0.bias", Tensor({1}, bias));
    return c;
}

Critic::Pass Critic::forward(const Tensor& x) const {
    if (x.rank() != 3 || x.channels() != layers_.front().in_channels) {
        throw ShapeMismatch("critic input " + shape_to_string(x.shape()));
    }
    Pass pass;
    Tensor h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& s = layers_[l];
        const Tensor& w = params_[2 * l].var.value();
        const Tensor& b = params_[2 * l + 1].var.value();
        Tensor z = kernels::conv2d(h, w, &b, {s.kernel, s.stride, s.pad});
        pass.inputs.push_back(std::move(h));
        h = z;
        if (s.activation) {
            for (double& v : h.values()) {
                if (v <= 0.0) v *= slope_;
            }
        }
        pass.pre.push_back(std::move(z));
    }
    pass.score = h.sum() / static_cast<double>(h.size());
    return pass;
}

// Walks dD/dh back through the chain. If `upstream_per_layer` is given, it
// receives e_l = act'(z_l) * dD/dh_l for every layer.
Tensor Critic::input_gradient(const Pass& pass, std::vector<Tensor>* upstream_per_layer) const {
    const std::size_t L = layers_.size();
    if (upstream_per_layer) upstream_per_layer->assign(L, Tensor());
    Tensor delta(pass.pre.back().shape(), 1.0 / static_cast<double>(pass.pre.back().size()));
    for (std::size_t l = L; l-- > 0;) {
        const auto& s = layers_[l];
        if (s.activation) {
            const Tensor& z = pass.pre[l];
            for (std::size_t i = 0; i < delta.size(); ++i) {
                if (z[i] <= 0.0) delta[i] *= slope_;
            }
        }
        Tensor next = kernels::conv2d_backward_input(delta, params_[2 * l].var.value(), pass.inputs[l].shape(),
                                                     {s.kernel, s.stride, s.pad});
        if (upstream_per_layer) (*upstream_per_layer)[l] = std::move(delta);
        delta = std::move(next);
    }
    return delta;
}

Tensor Critic::backward(const Pass& pass, double param_scale) {
    std::vector<Tensor> e;
    Tensor gx = input_gradient(pass, param_scale != 0.0 ? &e : nullptr);
    if (param_scale != 0.0) {
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& s = layers_[l];
            Tensor gw = kernels::conv2d_backward_weight(pass.inputs[l], e[l], {s.kernel, s.stride, s.pad});
            Tensor gb = kernels::channel_sums(e[l]);
            gw *= param_scale;
            gb *= param_scale;
            params_[2 * l].var.node()->accumulate(gw);
            params_[2 * l + 1].var.node()->accumulate(gb);
        }
    }
    return gx;
}

Critic::PenaltyTerm Critic::penalty(const Tensor& x) const {
    const Pass pass = forward(x);
    const Tensor g = input_gradient(pass, nullptr);
    double sq = 0.0;
    for (double v : g.values()) sq += v * v;
    PenaltyTerm t;
    t.grad_norm = std::sqrt(sq);
    t.value = (t.grad_norm - 1.0) * (t.grad_norm - 1.0);
    return t;
}

Critic::PenaltyTerm Critic::penalty(const Tensor& x, double param_scale) {
    const Pass pass = forward(x);
    std::vector<Tensor> e;
    const Tensor g = input_gradient(pass, &e);
    double sq = 0.0;
    for (double v : g.values()) sq += v * v;
    PenaltyTerm t;
    t.grad_norm = std::sqrt(sq);
    t.value = (t.grad_norm - 1.0) * (t.grad_norm - 1.0);
    if (param_scale == 0.0 || t.grad_norm == 0.0) return t;

    // g = B_1(m_1 * B_2(m_2 * ... )) with B_l the transposed conv of layer l.
    // Push the adjoint of g forward through the same chain: at layer l the
    // weight receives corr(adjoint_{l-1}, e_l) and the adjoint advances via
    // the plain (bias-free) convolution and the activation mask.
    Tensor adjoint = g;
    adjoint *= param_scale * 2.0 * (t.grad_norm - 1.0) / t.grad_norm;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& s = layers_[l];
        const kernels::ConvGeometry geo{s.kernel, s.stride, s.pad};
        params_[2 * l].var.node()->accumulate(kernels::conv2d_backward_weight(adjoint, e[l], geo));
        if (l + 1 == layers_.size()) break;
        Tensor next = kernels::conv2d(adjoint, params_[2 * l].var.value(), nullptr, geo);
        if (s.activation) {
            const Tensor& z = pass.pre[l];
            for (std::size_t i = 0; i < next.size(); ++i) {
                if (z[i] <= 0.0) next[i] *= slope_;
            }
        }
        adjoint = std::move(next);
    }
    return t;
}

ag::Var Critic::score(const ag::Var& x) const {
    const Pass pass = forward(x.value());
    if (!ag::grad_enabled() || !x.requires_grad()) return ag::scalar(pass.score);
    return ag::external_scalar(x, pass.score, input_gradient(pass, nullptr));
}

Critic build_critic(std::uint64_t seed, int image_channels) {
    return Critic(default_critic_layers(image_channels), seed);
}

std::size_t count_parameters(const Generator& g) { return g.parameters().scalar_count(); }
std::size_t count_parameters(const Critic& d) { return d.parameters().scalar_count(); }

}  // namespace biskip
