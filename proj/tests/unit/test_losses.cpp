#include <gtest/gtest.h>

#include <cmath>

#include "biskip/archive.hpp"
#include "biskip/errors.hpp"
#include "biskip/losses.hpp"
#include "support.hpp"

using namespace biskip;
using testing_support::random_tensor;
using testing_support::rel_err;

namespace {

// Direct-loop features for a chain of 3x3 convs with ReLU (and 2x2 max pools
// where flagged), reading weights straight from the extractor's parameters.
Tensor naive_features(const PerceptualExtractor& f, Tensor x, int stride, const std::vector<bool>& pool_before) {
    if (f.backend() == PerceptualBackend::pretrained_vgg19) {
        const double mean[] = {0.485, 0.456, 0.406}, sd[] = {0.229, 0.224, 0.225};
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < x.height(); ++y)
                for (int xx = 0; xx < x.width(); ++xx) x.at(c, y, xx) = ((x.at(c, y, xx) + 1.0) / 2.0 - mean[c]) / sd[c];
    }
    const auto& ps = f.parameters();
    for (std::size_t l = 0; l < ps.size() / 2; ++l) {
        if (pool_before[l]) {
            Tensor p({x.channels(), x.height() / 2, x.width() / 2});
            for (int c = 0; c < p.channels(); ++c)
                for (int y = 0; y < p.height(); ++y)
                    for (int xx = 0; xx < p.width(); ++xx)
                        p.at(c, y, xx) = std::max({x.at(c, 2 * y, 2 * xx), x.at(c, 2 * y, 2 * xx + 1),
                                                   x.at(c, 2 * y + 1, 2 * xx), x.at(c, 2 * y + 1, 2 * xx + 1)});
            x = p;
        }
        const Tensor& w = ps[2 * l].var.value();
        const Tensor& b = ps[2 * l + 1].var.value();
        const int cout = w.dim(0), cin = w.dim(1);
        const int oh = (x.height() + 2 - 3) / stride + 1, ow = (x.width() + 2 - 3) / stride + 1;
        Tensor out({cout, oh, ow});
        for (int o = 0; o < cout; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    double s = b[o];
                    for (int c = 0; c < cin; ++c)
                        for (int i = 0; i < 3; ++i)
                            for (int j = 0; j < 3; ++j) {
                                const int iy = y * stride - 1 + i, ix = xx * stride - 1 + j;
                                if (iy < 0 || iy >= x.height() || ix < 0 || ix >= x.width()) continue;
                                s += w[((static_cast<std::size_t>(o) * cin + c) * 3 + i) * 3 + j] * x.at(c, iy, ix);
                            }
                    out.at(o, y, xx) = std::max(0.0, s);
                }
        x = out;
    }
    return x;
}

double mean_sq(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

Critic linear_critic_with_norm(double norm, int side) {
    Tensor w({3, side, side});
    Rng rng(5);
    double sq = 0.0;
    for (double& v : w.values()) {
        v = rng.uniform(-1.0, 1.0);
        sq += v * v;
    }
    w *= norm / std::sqrt(sq);
    return Critic::linear(w, 0.25);
}

}  // namespace

TEST(PixelLoss, NormalizedL1AndL2) {
    const Tensor a({1, 2, 2}, std::vector<double>{0.0, 0.5, -0.5, 1.0});
    const Tensor b({1, 2, 2}, std::vector<double>{0.0, 0.0, 0.5, -1.0});
    EXPECT_DOUBLE_EQ(pixel_loss(a, b), (0.0 + 0.5 + 1.0 + 2.0) / 4.0);
    EXPECT_DOUBLE_EQ(pixel_loss_l2(a, b), (0.0 + 0.25 + 1.0 + 4.0) / 4.0);
    EXPECT_THROW(pixel_loss(a, Tensor({1, 2, 3})), ShapeMismatch);
}

TEST(PerceptualLoss, RandomCnnMatchesDirectLoops) {
    const auto f = PerceptualExtractor::seeded_random_cnn(7);
    EXPECT_EQ(f.layer_tag(), "relu3");
    const Tensor x = random_tensor({3, 16, 16}, 1), y = random_tensor({3, 16, 16}, 2);
    const Tensor fx = f.features(x);
    const Tensor want = naive_features(f, x, 2, {false, false, false});
    ASSERT_EQ(fx.shape(), (Shape{32, 2, 2}));
    for (std::size_t i = 0; i < fx.size(); ++i) ASSERT_NEAR(fx[i], want[i], 1e-12);
    EXPECT_NEAR(perceptual_loss(f, x, y), mean_sq(want, naive_features(f, y, 2, {false, false, false})), 1e-12);
}

TEST(PerceptualLoss, VggTopologyMatchesDirectLoops) {
    const auto f = PerceptualExtractor::vgg19_untrained(3);
    EXPECT_EQ(f.layer_tag(), "relu3_4");
    const Tensor x = random_tensor({3, 8, 8}, 4);
    const Tensor fx = f.features(x);
    const Tensor want = naive_features(f, x, 1, {false, false, true, false, true, false, false, false});
    ASSERT_EQ(fx.shape(), (Shape{256, 2, 2}));
    for (std::size_t i = 0; i < fx.size(); ++i) ASSERT_NEAR(fx[i], want[i], 1e-9 * std::max(1.0, std::abs(want[i])));
}

TEST(PerceptualLoss, PretrainedWeightsLoadFromArchive) {
    testing_support::TempDir dir;
    const auto src = PerceptualExtractor::vgg19_untrained(11);
    Archive a;
    for (const auto& p : src.parameters()) a.arrays.emplace_back(p.name, p.var.value());
    write_archive(dir / "vgg.bin", a);
    const auto f = PerceptualExtractor::pretrained_vgg19(dir / "vgg.bin");
    EXPECT_EQ(f.backend(), PerceptualBackend::pretrained_vgg19);
    const Tensor x = random_tensor({3, 8, 8}, 12);
    EXPECT_EQ(f.features(x), src.features(x));

    a.arrays[0].second = Tensor({64, 3, 1, 1});
    write_archive(dir / "bad.bin", a);
    EXPECT_THROW(PerceptualExtractor::pretrained_vgg19(dir / "bad.bin"), DataError);
}

TEST(PerceptualLoss, ExtractorIsFrozen) {
    const auto f = PerceptualExtractor::seeded_random_cnn(1);
    ag::Var x = ag::parameter(random_tensor({3, 8, 8}, 2));
    ag::backward(perceptual_loss(f, x, ag::constant(random_tensor({3, 8, 8}, 3))));
    EXPECT_FALSE(x.grad().empty());
    for (const auto& p : f.parameters()) EXPECT_TRUE(p.var.grad().empty()) << p.name;
}

TEST(BilevelLoss, CombinesWeightedTerms) {
    const auto f = PerceptualExtractor::seeded_random_cnn(1);
    const Tensor x = random_tensor({3, 16, 16}, 5), y = random_tensor({3, 16, 16}, 6);
    const LossWeights w{100.0, 0.1, 10.0};
    const double pix = pixel_loss(x, y), per = perceptual_loss(f, x, y);
    EXPECT_NEAR(bilevel_loss(f, x, y, w), 100.0 * pix + 0.1 * per, 1e-12);
    EXPECT_NEAR(bilevel_loss(f, x, y, w, {PixelNorm::L2, true}), 100.0 * pixel_loss_l2(x, y) + 0.1 * per, 1e-12);
    EXPECT_NEAR(bilevel_loss(f, x, y, w, {PixelNorm::L1, false}), 100.0 * pix, 1e-12);
    EXPECT_NEAR(bilevel_loss(f, x, y, w, {PixelNorm::None, true}), 0.1 * per, 1e-12);
    EXPECT_EQ(bilevel_loss(f, x, x, w), 0.0);
}

TEST(BilevelLoss, GradientMatchesFiniteDifferencesOn8x8) {
    const auto f = PerceptualExtractor::seeded_random_cnn(9);
    const LossWeights w{100.0, 0.1, 10.0};
    const Tensor sharp = random_tensor({3, 8, 8}, 7);
    ag::Var restored = ag::parameter(random_tensor({3, 8, 8}, 8));
    ag::backward(bilevel_terms(f, ag::constant(sharp), restored, w).total);
    Tensor probe = restored.value();
    Rng pick(10);
    for (int k = 0; k < 10; ++k) {
        const std::size_t i = pick.uniform_index(probe.size());
        const double fd =
            testing_support::central_difference(probe[i], [&] { return bilevel_loss(f, sharp, probe, w); }, 1e-6);
        EXPECT_LT(rel_err(restored.grad()[i], fd), 1e-3) << "pixel " << i;
    }
}

TEST(ContentLoss, WeightsSamplesAndSkipsZeroWeights) {
    const auto f = PerceptualExtractor::seeded_random_cnn(1);
    const LossWeights w;
    const std::vector<Tensor> sharp{random_tensor({3, 8, 8}, 1), random_tensor({3, 8, 8}, 2)};
    const std::vector<Tensor> out{random_tensor({3, 8, 8}, 3), random_tensor({3, 8, 8}, 4)};
    const double l0 = bilevel_loss(f, sharp[0], out[0], w), l1 = bilevel_loss(f, sharp[1], out[1], w);
    const std::vector<double> v{0.25, 1.0};
    EXPECT_NEAR(content_loss(sharp, out, v, f, w), 0.25 * l0 + l1, 1e-12);
    const std::vector<double> zero{0.0, 0.0};
    EXPECT_EQ(content_loss(sharp, out, zero, f, w), 0.0);
    const std::vector<double> bad{1.5, 0.0};
    EXPECT_THROW(content_loss(sharp, out, bad, f, w), ArgumentError);
}

TEST(AdversarialLoss, LinearCriticClosedForm) {
    const Critic d = linear_critic_with_norm(2.0, 4);
    const std::vector<Tensor> reals{random_tensor({3, 4, 4}, 1), random_tensor({3, 4, 4}, 2)};
    const std::vector<Tensor> fakes{random_tensor({3, 4, 4}, 3), random_tensor({3, 4, 4}, 4)};
    const std::vector<double> v{1.0, 0.5};
    const double want = (1.0 * (d.score(reals[0]) - d.score(fakes[0])) + 0.5 * (d.score(reals[1]) - d.score(fakes[1]))) / 2.0;
    EXPECT_NEAR(adversarial_loss(d, reals, fakes, v), want, 1e-12);
}

TEST(GradientPenalty, LinearCriticNormThreeGivesForty) {
    const Critic d = linear_critic_with_norm(3.0, 6);
    const std::vector<Tensor> reals{random_tensor({3, 6, 6}, 1)}, fakes{random_tensor({3, 6, 6}, 2)};
    const std::vector<double> v{1.0};
    EXPECT_NEAR(gradient_penalty(d, reals, fakes, v, 10.0, 99), 40.0, 1e-5);
}

TEST(GradientPenalty, WeightingByV) {
    const Critic d = linear_critic_with_norm(3.0, 4);
    const std::vector<Tensor> reals{random_tensor({3, 4, 4}, 1), random_tensor({3, 4, 4}, 2)};
    const std::vector<Tensor> fakes{random_tensor({3, 4, 4}, 3), random_tensor({3, 4, 4}, 4)};
    const std::vector<double> v{0.5, 0.0};
    EXPECT_NEAR(gradient_penalty(d, reals, fakes, v, 10.0, 1), 10.0 * 0.5 * 4.0 / 2.0, 1e-9);
    EXPECT_NEAR(gradient_penalty(d, reals, fakes, v, 10.0, 1, false), 40.0, 1e-9);
    const std::vector<double> none{0.0, 0.0};
    EXPECT_EQ(gradient_penalty(d, reals, fakes, none, 10.0, 1), 0.0);
}

TEST(GradientPenalty, AlphasAreSeededUniform) {
    const auto a = penalty_alphas(3, 100), b = penalty_alphas(3, 100), c = penalty_alphas(4, 100);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (double x : a) {
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, 1.0);
    }
    const Tensor r({1, 1, 2}, std::vector<double>{1.0, 0.0}), f({1, 1, 2}, std::vector<double>{0.0, 1.0});
    const Tensor m = interpolate(r, f, 0.25);
    EXPECT_DOUBLE_EQ(m[0], 0.25);
    EXPECT_DOUBLE_EQ(m[1], 0.75);
}

TEST(TotalLoss, AddsContentOverN) {
    EXPECT_DOUBLE_EQ(total_loss(1.5, 8.0, 4), 1.5 + 2.0);
    EXPECT_THROW(total_loss(0.0, 1.0, 0), ArgumentError);
}

TEST(LossWeightsTest, RejectsNegativeOrNonFinite) {
    EXPECT_NO_THROW(LossWeights{}.validate());
    EXPECT_THROW((LossWeights{-1.0, 0.1, 10.0}.validate()), SpecError);
    EXPECT_THROW((LossWeights{100.0, NAN, 10.0}.validate()), SpecError);
    EXPECT_EQ(parse_perceptual_backend(to_string(PerceptualBackend::pretrained_vgg19)), PerceptualBackend::pretrained_vgg19);
    EXPECT_THROW(parse_perceptual_backend("alexnet"), SpecError);
}
