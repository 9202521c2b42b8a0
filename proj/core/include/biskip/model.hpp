#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biskip/autograd.hpp"
#include "biskip/parameters.hpp"
#include "biskip/random.hpp"

namespace biskip {

// S: plain skip network. BS_cR: single-conv Res-Blocks. BS_wo_R: no
// Res-Blocks but keeps the deep skip tap. BS: full Bi-Skip.
enum class ModelVariant { S, BS_cR, BS_wo_R, BS };

std::string_view to_string(ModelVariant v);
// Accepts "S", "BS", "BS-cR"/"BS_cR", "BS-w/o-R"/"BS_wo_R"/"BS-wo-R".
ModelVariant parse_variant(std::string_view text);

struct GeneratorSpec {
    int n_scales = 5;
    std::vector<int> channels_path{32, 64, 128, 128, 128};
    std::vector<int> channels_skip{16, 32, 64, 64, 64};
    int resblocks_per_scale = 3;
    int image_channels = 3;
    ModelVariant variant = ModelVariant::BS;

    void validate() const;
    int size_divisor() const { return 1 << n_scales; }
    bool has_resblocks() const { return variant == ModelVariant::BS || variant == ModelVariant::BS_cR; }
    bool has_deep_skip() const { return variant != ModelVariant::S; }
};

// Encoder-decoder generator with shallow (1x1) and deep (3x3) skip taps per
// scale and a global residual: out = clamp(x + residual(x), -1, 1).
//
// Encoder scale i, input a at H/2^i:
//   f = relu(bn(proj1x1(avgpool2(a)) + conv5x5_s2(a)))        first layer
//   r = resblocks(relu(bn(conv3x3(f))))
//   shallow = conv1x1(f), deep = conv3x3(r)                    (no norm)
// Decoder scale i (deepest first), input d at H/2^(i+1):
//   u = relu(bn(convT5x5_s2(relu(bn(conv1x1(relu(bn(conv3x3(cat(d, shallow, deep))))))))))
// and the full-resolution output of scale 0 goes through a final 1x1 conv
// (no norm) to the image channels.
class Generator {
public:
    Generator(GeneratorSpec spec, std::uint64_t seed);

    const GeneratorSpec& spec() const noexcept { return spec_; }
    std::uint64_t seed() const noexcept { return seed_; }
    ParameterSet& parameters() noexcept { return params_; }
    const ParameterSet& parameters() const noexcept { return params_; }

    // Recorded forward pass. x is CHW with H, W divisible by 2^n_scales.
    ag::Var forward(const ag::Var& x) const;
    // Residual branch only (before the global add and clamp).
    ag::Var residual(const ag::Var& x) const;
    // Inference without graph recording.
    Tensor forward(const Tensor& x) const;

    // Zeroes the output layer so the generator becomes the identity on [-1,1].
    void zero_residual_output();

    void check_input(const Tensor& x) const;

private:
    struct Conv {
        ag::Var weight;
        ag::Var bias;
        kernels::ConvGeometry geometry;
    };
    struct Norm {
        ag::Var gamma;
        ag::Var beta;
    };
    struct ResBlock {
        Conv conv1;
        Norm norm1;
        std::optional<Conv> conv2;
        std::optional<Norm> norm2;
    };
    struct EncoderScale {
        Conv down_conv;
        Conv down_proj;
        Norm down_norm;
        Conv body;
        Norm body_norm;
        std::vector<ResBlock> resblocks;
        Conv shallow;
        std::optional<Conv> deep;
    };
    struct DecoderScale {
        Conv merge;
        Norm merge_norm;
        Conv mix;
        Norm mix_norm;
        Conv up;
        Norm up_norm;
    };

    Conv make_conv(const std::string& name, int in, int out, int kernel, int stride, Rng& rng);
    Conv make_conv_transpose(const std::string& name, int in, int out, int kernel, Rng& rng);
    Norm make_norm(const std::string& name, int channels);

    static ag::Var apply(const Conv& c, const ag::Var& x);
    static ag::Var apply_up(const Conv& c, const ag::Var& x);
    static ag::Var apply(const Norm& n, const ag::Var& x);

    GeneratorSpec spec_;
    std::uint64_t seed_;
    ParameterSet params_;
    std::vector<EncoderScale> encoder_;
    std::vector<DecoderScale> decoder_;
    Conv output_;
};

Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed);

struct CriticLayerSpec {
    int in_channels;
    int out_channels;
    int kernel;
    int stride;
    int pad;
    bool activation;  // LeakyReLU after the conv
};

// WGAN critic: a chain of convolutions with LeakyReLU between them, reduced
// to one unbounded score by a global mean. Because the network is piecewise
// linear in its input, the parameter gradient of the gradient penalty has a
// closed form (see penalty()).
class Critic {
public:
    Critic(std::vector<CriticLayerSpec> layers, std::uint64_t seed, double slope = 0.2);

    // D(x) = <w, x> + bias for a single-channel-stack image the size of `w`
    // ([C][K][K]); useful as an analytic test critic.
    static Critic linear(const Tensor& w, double bias = 0.0);

    struct Pass {
        std::vector<Tensor> inputs;  // h_{l-1}
        std::vector<Tensor> pre;     // z_l
        double score = 0.0;
    };

    Pass forward(const Tensor& x) const;
    double score(const Tensor& x) const { return forward(x).score; }

    // Returns dD/dx. When `param_scale` is non-zero, also accumulates
    // param_scale * dD/dtheta into the parameter gradients.
    Tensor backward(const Pass& pass, double param_scale);

    struct PenaltyTerm {
        double grad_norm = 0.0;
        double value = 0.0;  // (||dD/dx|| - 1)^2
    };
    // Evaluates (||grad_x D(x)|| - 1)^2 at x. With non-zero `param_scale`,
    // accumulates param_scale * d/dtheta of that value (exact double backward
    // through the chain; bias gradients vanish almost everywhere).
    PenaltyTerm penalty(const Tensor& x, double param_scale);
    PenaltyTerm penalty(const Tensor& x) const;

    // Score as a tape node, so generator losses can backpropagate through D.
    ag::Var score(const ag::Var& x) const;

    ParameterSet& parameters() noexcept { return params_; }
    const ParameterSet& parameters() const noexcept { return params_; }
    const std::vector<CriticLayerSpec>& layers() const noexcept { return layers_; }
    double slope() const noexcept { return slope_; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    Critic() = default;
    Tensor input_gradient(const Pass& pass, std::vector<Tensor>* upstream_per_layer) const;

    std::vector<CriticLayerSpec> layers_;
    double slope_ = 0.2;
    std::uint64_t seed_ = 0;
    ParameterSet params_;
};

// Default critic: 64 -> 128 -> 256 -> 512 -> 1 channels.
std::vector<CriticLayerSpec> default_critic_layers(int image_channels = 3);
Critic build_critic(std::uint64_t seed, int image_channels = 3);

std::size_t count_parameters(const Generator& g);
std::size_t count_parameters(const Critic& d);

}  // namespace biskip
