#include "biskip/losses.hpp"

#include <cmath>

#include "biskip/archive.hpp"
#include "biskip/errors.hpp"
#include "biskip/random.hpp"

namespace biskip {

void LossWeights::validate() const {
    for (double x : {gamma1, gamma2, beta}) {
        if (!std::isfinite(x) || x < 0.0) throw SpecError("loss weights must be finite and >= 0");
    }
}

std::string_view to_string(PerceptualBackend b) {
    return b == PerceptualBackend::pretrained_vgg19 ? "pretrained_vgg19" : "seeded_random_cnn";
}

PerceptualBackend parse_perceptual_backend(std::string_view text) {
    if (text == "pretrained_vgg19") return PerceptualBackend::pretrained_vgg19;
    if (text == "seeded_random_cnn") return PerceptualBackend::seeded_random_cnn;
    throw SpecError("unknown perceptual backend '" + std::string(text) + "'");
}

// --- extractor --------------------------------------------------------------

PerceptualExtractor PerceptualExtractor::seeded_random_cnn(std::uint64_t seed, int image_channels) {
    PerceptualExtractor f;
    f.backend_ = PerceptualBackend::seeded_random_cnn;
    f.layer_tag_ = "relu3";
    f.seed_ = seed;
    Rng rng(seed);
    const int widths[] = {image_channels, 16, 32, 32};
    for (int l = 0; l < 3; ++l) {
        Tensor w({widths[l + 1], widths[l], 3, 3});
        const double a = xavier_bound(w.shape());
        for (double& v : w.values()) v = rng.uniform(-a, a);
        Layer layer;
        layer.weight = f.params_.add("random_cnn.conv" + std::to_string(l + 1) + ".weight", std::move(w));
        layer.bias = f.params_.add("random_cnn.conv" + std::to_string(l + 1) + ".bias", Tensor({widths[l + 1]}));
        layer.geometry = {3, 2, 1};
        f.layers_.push_back(layer);
    }
    f.params_.freeze();
    return f;
}

namespace {

struct VggConv {
    const char* name;
    int in;
    int out;
    bool pool_before;
};

constexpr VggConv kVggBlocks[] = {
    {"conv1_1", 3, 64, false},    {"conv1_2", 64, 64, false},   {"conv2_1", 64, 128, true},
    {"conv2_2", 128, 128, false}, {"conv3_1", 128, 256, true},  {"conv3_2", 256, 256, false},
    {"conv3_3", 256, 256, false}, {"conv3_4", 256, 256, false},
};

// ImageNet statistics for inputs scaled to [0,1].
constexpr double kVggMean[] = {0.485, 0.456, 0.406};
constexpr double kVggStd[] = {0.229, 0.224, 0.225};

}  // namespace

PerceptualExtractor PerceptualExtractor::vgg19_untrained(std::uint64_t seed) {
    PerceptualExtractor f;
    f.backend_ = PerceptualBackend::pretrained_vgg19;
    f.layer_tag_ = "relu3_4";
    f.seed_ = seed;
    Rng rng(seed);
    for (const auto& c : kVggBlocks) {
        Tensor w({c.out, c.in, 3, 3});
        const double a = xavier_bound(w.shape());
        for (double& v : w.values()) v = rng.uniform(-a, a);
        Layer layer;
        layer.weight = f.params_.add(std::string("vgg19.") + c.name + ".weight", std::move(w));
        layer.bias = f.params_.add(std::string("vgg19.") + c.name + ".bias", Tensor({c.out}));
        layer.geometry = {3, 1, 1};
        layer.pool_before = c.pool_before;
        f.layers_.push_back(layer);
    }
    f.params_.freeze();
    return f;
}

PerceptualExtractor PerceptualExtractor::pretrained_vgg19(const std::filesystem::path& weights) {
    PerceptualExtractor f = vgg19_untrained(0);
    const Archive archive = read_archive(weights);
    for (auto& p : f.params_) {
        const Tensor& src = archive.at(p.name);
        if (src.shape() != p.var.value().shape()) {
            throw DataError("VGG19 weight '" + p.name + "' has shape " + shape_to_string(src.shape()) + ", expected " +
                            shape_to_string(p.var.value().shape()));
        }
        p.var.mutable_value() = src;
    }
    f.params_.freeze();
    return f;
}

ag::Var PerceptualExtractor::features(const ag::Var& x) const {
    ag::Var h = x;
    if (backend_ == PerceptualBackend::pretrained_vgg19) {
        if (x.value().channels() != 3) throw ShapeMismatch("VGG19 features need a 3-channel input");
        double scales[3], shifts[3];
        for (int c = 0; c < 3; ++c) {
            scales[c] = 0.5 / kVggStd[c];
            shifts[c] = (0.5 - kVggMean[c]) / kVggStd[c];
        }
        h = ag::channel_affine(h, scales, shifts);
    }
    for (const Layer& l : layers_) {
        if (l.pool_before) h = ag::max_pool2(h);
        h = ag::relu(ag::conv2d(h, l.weight, &l.bias, l.geometry));
    }
    return h;
}

Tensor PerceptualExtractor::features(const Tensor& x) const {
    ag::NoGradGuard guard;
    return features(ag::constant(x)).value();
}

// --- content terms ----------------------------------------------------------

double pixel_loss(const Tensor& x, const Tensor& y) {
    ag::NoGradGuard guard;
    return pixel_loss(ag::constant(x), ag::constant(y)).item();
}

ag::Var pixel_loss(const ag::Var& x, const ag::Var& y) { return ag::mean_abs_diff(x, y); }

double pixel_loss_l2(const Tensor& x, const Tensor& y) {
    ag::NoGradGuard guard;
    return pixel_loss_l2(ag::constant(x), ag::constant(y)).item();
}

ag::Var pixel_loss_l2(const ag::Var& x, const ag::Var& y) { return ag::mean_sq_diff(x, y); }

double perceptual_loss(const PerceptualExtractor& f, const Tensor& x, const Tensor& y) {
    ag::NoGradGuard guard;
    return perceptual_loss(f, ag::constant(x), ag::constant(y)).item();
}

ag::Var perceptual_loss(const PerceptualExtractor& f, const ag::Var& x, const ag::Var& y) {
    require_same_shape(x.value(), y.value(), "perceptual_loss");
    return ag::mean_sq_diff(f.features(x), f.features(y));
}

BilevelTerms bilevel_terms(const PerceptualExtractor& f, const ag::Var& x, const ag::Var& y, const LossWeights& w,
                           ContentTerms terms) {
    require_same_shape(x.value(), y.value(), "bilevel_loss");
    BilevelTerms out;
    switch (terms.pixel) {
        case PixelNorm::L1: out.pixel = pixel_loss(x, y); break;
        case PixelNorm::L2: out.pixel = pixel_loss_l2(x, y); break;
        case PixelNorm::None: out.pixel = ag::scalar(0.0); break;
    }
    out.perceptual = terms.perceptual ? perceptual_loss(f, x, y) : ag::scalar(0.0);
    const ag::Var parts[] = {out.pixel, out.perceptual};
    const double weights[] = {w.gamma1, w.gamma2};
    out.total = ag::weighted_sum(parts, weights);
    return out;
}

double bilevel_loss(const PerceptualExtractor& f, const Tensor& x, const Tensor& y, const LossWeights& w,
                    ContentTerms terms) {
    ag::NoGradGuard guard;
    return bilevel_terms(f, ag::constant(x), ag::constant(y), w, terms).total.item();
}

void check_weights(std::span<const double> v) {
    for (double x : v) {
        if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError("self-paced weight " + std::to_string(x) + " outside [0,1]");
    }
}

namespace {
void check_lengths(std::size_t a, std::size_t b, std::size_t c, const char* what) {
    if (a != b || a != c) {
        throw ShapeMismatch(std::string(what) + ": length mismatch (" + std::to_string(a) + ", " + std::to_string(b) +
                            ", " + std::to_string(c) + ")");
    }
}
}  // namespace

double content_loss(std::span<const Tensor> sharp, std::span<const Tensor> restored, std::span<const double> v,
                    const PerceptualExtractor& f, const LossWeights& w, ContentTerms terms) {
    check_lengths(sharp.size(), restored.size(), v.size(), "content_loss");
    check_weights(v);
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == 0.0) continue;
        total += v[i] * bilevel_loss(f, sharp[i], restored[i], w, terms);
    }
    return total;
}

// --- adversarial terms ------------------------------------------------------

double adversarial_loss(const Critic& d, std::span<const Tensor> reals, std::span<const Tensor> fakes,
                        std::span<const double> v) {
    check_lengths(reals.size(), fakes.size(), v.size(), "adversarial_loss");
    check_weights(v);
    if (v.empty()) return 0.0;
    double real = 0.0, fake = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] == 0.0) continue;
        real += v[i] * d.score(reals[i]);
        fake += v[i] * d.score(fakes[i]);
    }
    const double n = static_cast<double>(v.size());
    return real / n - fake / n;
}

std::vector<double> penalty_alphas(std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    std::vector<double> a(n);
    for (double& x : a) x = rng.uniform();
    return a;
}

Tensor interpolate(const Tensor& real, const Tensor& fake, double alpha) {
    require_same_shape(real, fake, "interpolate");
    Tensor out(real.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * real[i] + (1.0 - alpha) * fake[i];
    return out;
}

double gradient_penalty(const Critic& d, std::span<const Tensor> reals, std::span<const Tensor> fakes,
                        std::span<const double> v, double beta, std::uint64_t seed, bool weighted) {
    check_lengths(reals.size(), fakes.size(), v.size(), "gradient_penalty");
    check_weights(v);
    if (!(beta >= 0.0)) throw ArgumentError("gradient penalty weight must be >= 0");
    if (v.empty() || beta == 0.0) return 0.0;
    const std::vector<double> alphas = penalty_alphas(seed, v.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double wi = weighted ? v[i] : 1.0;
        if (wi == 0.0) continue;
        acc += wi * d.penalty(interpolate(reals[i], fakes[i], alphas[i])).value;
    }
    return beta * acc / static_cast<double>(v.size());
}

double total_loss(double adversarial, double content, std::size_t n) {
    if (n == 0) throw ArgumentError("total_loss: sample count must be >= 1");
    return adversarial + content / static_cast<double>(n);
}

}  // namespace biskip
