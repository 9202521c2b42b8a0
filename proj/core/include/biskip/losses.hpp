#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "biskip/autograd.hpp"
#include "biskip/model.hpp"
#include "biskip/parameters.hpp"

namespace biskip {

struct LossWeights {
    double gamma1 = 100.0;  // pixel term
    double gamma2 = 0.1;    // perceptual term
    double beta = 10.0;     // gradient penalty

    void validate() const;
};

// Which pixel norm the content loss uses ("1" or "2" in scheme strings) and
// whether the perceptual term is on ("P").
enum class PixelNorm { L1, L2, None };

struct ContentTerms {
    PixelNorm pixel = PixelNorm::L1;
    bool perceptual = true;
};

struct LossBreakdown {
    double pixel = 0.0;
    double perceptual = 0.0;
    double content = 0.0;
    double adversarial = 0.0;
    double penalty = 0.0;
    double total = 0.0;
    std::vector<double> per_sample_bilevel;
};

enum class PerceptualBackend { pretrained_vgg19, seeded_random_cnn };

std::string_view to_string(PerceptualBackend b);
PerceptualBackend parse_perceptual_backend(std::string_view text);

// Fixed feature network F for the perceptual term. Its parameters never
// receive optimizer updates.
class PerceptualExtractor {
public:
    // Three stride-2 3x3 convolutions with ReLU (3 -> 16 -> 32 -> 32).
    static PerceptualExtractor seeded_random_cnn(std::uint64_t seed, int image_channels = 3);
    // VGG19 blocks 1-3, tapped after relu3_4. Weights come from an archive
    // holding vgg19.conv{b}_{i}.weight/.bias arrays in the checkpoint format.
    static PerceptualExtractor pretrained_vgg19(const std::filesystem::path& weights);
    // Same topology with Xavier weights; for shape tests without a weight file.
    static PerceptualExtractor vgg19_untrained(std::uint64_t seed);

    PerceptualBackend backend() const noexcept { return backend_; }
    const std::string& layer_tag() const noexcept { return layer_tag_; }
    std::uint64_t seed() const noexcept { return seed_; }

    // x in [-1,1], CHW. Returns the C2xH2xW2 feature map.
    ag::Var features(const ag::Var& x) const;
    Tensor features(const Tensor& x) const;

    ParameterSet& parameters() noexcept { return params_; }
    const ParameterSet& parameters() const noexcept { return params_; }

private:
    struct Layer {
        ag::Var weight;
        ag::Var bias;
        kernels::ConvGeometry geometry;
        bool pool_before = false;
    };

    PerceptualBackend backend_ = PerceptualBackend::seeded_random_cnn;
    std::string layer_tag_;
    std::uint64_t seed_ = 0;
    ParameterSet params_;
    std::vector<Layer> layers_;
};

// ||x - y||_1 / (c*h*w)
double pixel_loss(const Tensor& x, const Tensor& y);
ag::Var pixel_loss(const ag::Var& x, const ag::Var& y);
// ||x - y||_2^2 / (c*h*w), the "2" scheme variant.
double pixel_loss_l2(const Tensor& x, const Tensor& y);
ag::Var pixel_loss_l2(const ag::Var& x, const ag::Var& y);

// ||F(x) - F(y)||_2^2 / (c2*h2*w2)
double perceptual_loss(const PerceptualExtractor& f, const Tensor& x, const Tensor& y);
ag::Var perceptual_loss(const PerceptualExtractor& f, const ag::Var& x, const ag::Var& y);

struct BilevelTerms {
    ag::Var pixel;       // unweighted pixel distance (zero when disabled)
    ag::Var perceptual;  // unweighted feature distance (zero when disabled)
    ag::Var total;       // gamma1 * pixel + gamma2 * perceptual
};

// The per-sample loss l_i that also drives the self-paced weights.
double bilevel_loss(const PerceptualExtractor& f, const Tensor& x, const Tensor& y, const LossWeights& w,
                    ContentTerms terms = {});
BilevelTerms bilevel_terms(const PerceptualExtractor& f, const ag::Var& x, const ag::Var& y, const LossWeights& w,
                           ContentTerms terms = {});

// sum_i v_i * bilevel_loss(sharp_i, restored_i)
double content_loss(std::span<const Tensor> sharp, std::span<const Tensor> restored, std::span<const double> v,
                    const PerceptualExtractor& f, const LossWeights& w, ContentTerms terms = {});

// mean_i v_i D(real_i) - mean_i v_i D(fake_i). v weights the per-sample
// score; the critic never sees it.
double adversarial_loss(const Critic& d, std::span<const Tensor> reals, std::span<const Tensor> fakes,
                        std::span<const double> v);

// alpha_i ~ U[0,1] for the interpolates alpha*x + (1-alpha)*x_tilde.
std::vector<double> penalty_alphas(std::uint64_t seed, std::size_t n);
Tensor interpolate(const Tensor& real, const Tensor& fake, double alpha);

// beta * mean_i v_i (||grad D(x_hat_i)|| - 1)^2; with weighted = false the
// v_i factor is dropped.
double gradient_penalty(const Critic& d, std::span<const Tensor> reals, std::span<const Tensor> fakes,
                        std::span<const double> v, double beta, std::uint64_t seed, bool weighted = true);

// adv + cont / n
double total_loss(double adversarial, double content, std::size_t n);

// Throws ArgumentError unless every v_i lies in [0, 1].
void check_weights(std::span<const double> v);

}  // namespace biskip
