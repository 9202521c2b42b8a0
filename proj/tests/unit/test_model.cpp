#include <gtest/gtest.h>

#include <algorithm>

#include "biskip/errors.hpp"
#include "biskip/model.hpp"
#include "support.hpp"

using namespace biskip;
using testing_support::random_tensor;
using testing_support::rel_err;
using testing_support::small_spec;

namespace {

GeneratorSpec spec_for(ModelVariant v) {
    GeneratorSpec s;
    s.variant = v;
    return s;
}

std::size_t count_matching(const ParameterSet& ps, const std::string& needle) {
    return static_cast<std::size_t>(
        std::count_if(ps.begin(), ps.end(), [&](const Parameter& p) { return p.name.find(needle) != std::string::npos; }));
}

}  // namespace

// Layer-by-layer sums from tests/oracles/param_counts.py.
TEST(GeneratorParameters, GoldenCountsForDefaultSpec) {
    EXPECT_EQ(count_parameters(Generator(spec_for(ModelVariant::S), 0)), 3531763u);
    EXPECT_EQ(count_parameters(Generator(spec_for(ModelVariant::BS_cR), 0)), 5490115u);
    EXPECT_EQ(count_parameters(Generator(spec_for(ModelVariant::BS_wo_R), 0)), 4020451u);
    EXPECT_EQ(count_parameters(Generator(spec_for(ModelVariant::BS), 0)), 6959779u);
}

TEST(GeneratorParameters, VariantOrderByConstruction) {
    const auto s = count_parameters(Generator(spec_for(ModelVariant::S), 0));
    const auto wo = count_parameters(Generator(spec_for(ModelVariant::BS_wo_R), 0));
    const auto cr = count_parameters(Generator(spec_for(ModelVariant::BS_cR), 0));
    const auto bs = count_parameters(Generator(spec_for(ModelVariant::BS), 0));
    EXPECT_LT(s, wo);
    EXPECT_LT(wo, cr);
    EXPECT_LT(cr, bs);
    EXPECT_LT(s, bs);
}

TEST(GeneratorParameters, VariantStructure) {
    const Generator s(spec_for(ModelVariant::S), 0);
    EXPECT_EQ(count_matching(s.parameters(), ".res"), 0u);
    EXPECT_EQ(count_matching(s.parameters(), "skip.deep"), 0u);

    const Generator cr(spec_for(ModelVariant::BS_cR), 0);
    EXPECT_EQ(count_matching(cr.parameters(), ".conv2."), 0u);
    EXPECT_EQ(count_matching(cr.parameters(), ".res0.conv1.weight"), 5u);

    const Generator wo(spec_for(ModelVariant::BS_wo_R), 0);
    EXPECT_EQ(count_matching(wo.parameters(), ".res"), 0u);
    EXPECT_EQ(count_matching(wo.parameters(), "skip.deep.weight"), 5u);

    const Generator bs(spec_for(ModelVariant::BS), 0);
    EXPECT_EQ(count_matching(bs.parameters(), ".conv2.weight"), 15u);
}

TEST(GeneratorParameters, OutputLayerHasNoNormalization) {
    const Generator g(spec_for(ModelVariant::BS), 0);
    EXPECT_EQ(count_matching(g.parameters(), "out."), 2u);
    EXPECT_EQ(count_matching(g.parameters(), "out.conv1.norm"), 0u);
}

TEST(GeneratorSpecTest, RejectsInconsistentChannelLists) {
    GeneratorSpec s;
    s.channels_skip = {16, 32};
    EXPECT_THROW(Generator(s, 0), SpecError);
    GeneratorSpec t;
    t.channels_path = {32, 64, 0, 128, 128};
    EXPECT_THROW(Generator(t, 0), SpecError);
}

TEST(VariantNames, RoundTrip) {
    for (ModelVariant v : {ModelVariant::S, ModelVariant::BS_cR, ModelVariant::BS_wo_R, ModelVariant::BS}) {
        EXPECT_EQ(parse_variant(to_string(v)), v);
    }
    EXPECT_EQ(parse_variant("BS_wo_R"), ModelVariant::BS_wo_R);
    EXPECT_THROW(parse_variant("XL"), SpecError);
}

TEST(GeneratorForward, DefaultSpecAccepts256) {
    const Generator g(spec_for(ModelVariant::BS), 0);
    const Tensor x = random_tensor({3, 256, 256}, 1);
    const Tensor y = g.forward(x);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_TRUE(y.all_finite());
}

TEST(GeneratorForward, ShapeAndRangeForEveryVariant) {
    for (ModelVariant v : {ModelVariant::S, ModelVariant::BS_cR, ModelVariant::BS_wo_R, ModelVariant::BS}) {
        const Generator g(spec_for(v), 3);
        for (const Shape& shape : {Shape{3, 64, 64}, Shape{3, 32, 96}}) {
            const Tensor y = g.forward(random_tensor(shape, 2));
            ASSERT_EQ(y.shape(), shape);
            for (double val : y.values()) {
                ASSERT_GE(val, -1.0);
                ASSERT_LE(val, 1.0);
            }
        }
    }
}

TEST(GeneratorForward, RejectsNonDivisibleInput) {
    const Generator g(small_spec(), 0);
    EXPECT_THROW(g.forward(Tensor({3, 100, 100})), DimensionError);
    EXPECT_THROW(g.forward(Tensor({3, 64, 48})), DimensionError);
    EXPECT_THROW(g.forward(Tensor({1, 64, 64})), ShapeMismatch);
}

TEST(GeneratorForward, DeterministicGivenSeed) {
    const Generator a(spec_for(ModelVariant::BS), 42), b(spec_for(ModelVariant::BS), 42), c(spec_for(ModelVariant::BS), 43);
    EXPECT_EQ(a.parameters().hash(), b.parameters().hash());
    EXPECT_NE(a.parameters().hash(), c.parameters().hash());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        ASSERT_EQ(a.parameters()[i].var.value(), b.parameters()[i].var.value());
    }
    const Tensor x = random_tensor({3, 64, 64}, 5);
    EXPECT_EQ(a.forward(x), b.forward(x));
}

TEST(GeneratorForward, XavierBoundsAndZeroBiases) {
    const Generator g(spec_for(ModelVariant::BS), 9);
    for (const auto& p : g.parameters()) {
        const Tensor& v = p.var.value();
        if (p.name.ends_with(".gamma")) {
            for (double x : v.values()) ASSERT_EQ(x, 1.0) << p.name;
        } else if (p.name.ends_with(".bias") || p.name.ends_with(".beta")) {
            for (double x : v.values()) ASSERT_EQ(x, 0.0) << p.name;
        } else {
            const double a = xavier_bound(v.shape());
            ASSERT_LE(v.max_abs(), a) << p.name;
            ASSERT_GT(v.max_abs(), 0.5 * a) << p.name;
        }
    }
}

TEST(GeneratorForward, ZeroedOutputLayerIsIdentity) {
    for (ModelVariant v : {ModelVariant::S, ModelVariant::BS}) {
        Generator g(small_spec(v), 4);
        g.zero_residual_output();
        const Tensor x = random_tensor({3, 32, 64}, 6);
        EXPECT_EQ(g.forward(x), x);
    }
}

TEST(GeneratorForward, OutputIsInputPlusResidualWhereUnclamped) {
    const Generator g(small_spec(), 8);
    const Tensor x = random_tensor({3, 32, 32}, 7, -0.2, 0.2);
    ag::NoGradGuard guard;
    const Tensor r = g.residual(ag::constant(x)).value();
    const Tensor y = g.forward(x);
    int unclamped = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double raw = x[i] + r[i];
        if (raw > -1.0 && raw < 1.0) {
            ++unclamped;
            ASSERT_EQ(y[i], raw);
        } else {
            ASSERT_EQ(y[i], std::clamp(raw, -1.0, 1.0));
        }
    }
    EXPECT_GT(unclamped, 0);
}

TEST(GeneratorGradient, MatchesFiniteDifferencesAt32x32) {
    Generator g(spec_for(ModelVariant::BS), 11);
    const Tensor x = random_tensor({3, 32, 32}, 12, -0.3, 0.3);
    const Tensor r = random_tensor({3, 32, 32}, 13);
    // Scalar probe <residual(x), r>; the clamp is left out so the probe is smooth.
    auto probe = [&] {
        ag::NoGradGuard guard;
        const Tensor y = g.residual(ag::constant(x)).value();
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
        return s;
    };
    g.parameters().zero_grad();
    ag::backward(g.residual(ag::constant(x)), r);

    // Conv weights only: with a 32x32 input the deepest scale is 1x1, so its
    // normalized activations sit exactly on the ReLU kink and biases/betas
    // there have no two-sided derivative.
    std::vector<std::size_t> weights;
    for (std::size_t i = 0; i < g.parameters().size(); ++i) {
        if (g.parameters()[i].name.ends_with(".weight")) weights.push_back(i);
    }
    Rng pick(14);
    int nonzero = 0;
    for (int k = 0; k < 10; ++k) {
        auto& p = g.parameters()[weights[pick.uniform_index(weights.size())]];
        const std::size_t i = pick.uniform_index(p.var.value().size());
        const double analytic = p.var.grad()[i];
        const double fd = testing_support::central_difference(p.var.mutable_value()[i], probe, 1e-6);
        if (std::abs(analytic) > 1e-9) ++nonzero;
        EXPECT_LT(std::abs(analytic - fd), 1e-3 * std::max(std::abs(fd), 1e-6))
            << p.name << "[" << i << "] analytic " << analytic << " fd " << fd;
    }
    EXPECT_GE(nonzero, 5);
}

TEST(CriticTest, ScalarScoreForSeveralSizes) {
    const Critic d = build_critic(0);
    for (int s : {64, 256}) {
        const double score = d.score(random_tensor({3, s, s}, static_cast<std::uint64_t>(s)));
        EXPECT_TRUE(std::isfinite(score));
    }
}

TEST(CriticTest, DeterministicGivenSeed) {
    const Critic a = build_critic(5), b = build_critic(5), c = build_critic(6);
    EXPECT_EQ(a.parameters().hash(), b.parameters().hash());
    EXPECT_NE(a.parameters().hash(), c.parameters().hash());
    EXPECT_EQ(count_parameters(a), 1843649u);
}

TEST(CriticTest, LastLayerHasNoActivation) {
    const auto layers = default_critic_layers();
    ASSERT_EQ(layers.size(), 5u);
    EXPECT_FALSE(layers.back().activation);
    EXPECT_EQ(layers.back().out_channels, 1);
    EXPECT_EQ(layers.front().in_channels, 3);
}

TEST(CriticTest, ScoreUnboundedNoSquashing) {
    // Scaling the input of a piecewise-linear network without biases scales the score.
    Critic d = build_critic(1);
    for (auto& p : d.parameters()) {
        if (p.name.ends_with(".bias")) p.var.mutable_value().fill(0.0);
    }
    const Tensor x = random_tensor({3, 32, 32}, 2);
    Tensor x100 = x;
    x100 *= 100.0;
    EXPECT_NEAR(d.score(x100), 100.0 * d.score(x), 1e-9 * std::abs(100.0 * d.score(x)) + 1e-12);
}

TEST(CriticGradient, ScoreMatchesFiniteDifferencesOn8x8) {
    Critic d = build_critic(3);
    for (auto& p : d.parameters()) {
        if (p.name.ends_with(".bias")) {
            Rng r(17);
            for (double& v : p.var.mutable_value().values()) v = r.uniform(-0.1, 0.1);
        }
    }
    const Tensor x = random_tensor({3, 8, 8}, 15);
    d.parameters().zero_grad();
    const Critic::Pass pass = d.forward(x);
    const Tensor gx = d.backward(pass, 1.0);

    Rng pick(16);
    for (int k = 0; k < 10; ++k) {
        auto& p = d.parameters()[pick.uniform_index(d.parameters().size())];
        const std::size_t i = pick.uniform_index(p.var.value().size());
        const double fd = testing_support::central_difference(p.var.mutable_value()[i], [&] { return d.score(x); });
        EXPECT_LT(rel_err(p.var.grad()[i], fd), 1e-3) << p.name << "[" << i << "]";
    }
    Tensor xv = x;
    for (int k = 0; k < 10; ++k) {
        const std::size_t i = pick.uniform_index(x.size());
        const double fd = testing_support::central_difference(xv[i], [&] { return d.score(xv); });
        EXPECT_LT(rel_err(gx[i], fd), 1e-3) << "input[" << i << "]";
    }
}

TEST(CriticGradient, PenaltyParameterGradientMatchesFiniteDifferences) {
    Critic d = build_critic(4);
    const Tensor x = random_tensor({3, 8, 8}, 18);
    d.parameters().zero_grad();
    d.penalty(x, 1.0);
    Rng pick(19);
    int checked = 0;
    while (checked < 10) {
        auto& p = d.parameters()[pick.uniform_index(d.parameters().size())];
        if (p.name.ends_with(".bias")) continue;
        const std::size_t i = pick.uniform_index(p.var.value().size());
        const double fd = testing_support::central_difference(p.var.mutable_value()[i],
                                                              [&] { return std::as_const(d).penalty(x).value; }, 1e-6);
        EXPECT_LT(std::abs(p.var.grad()[i] - fd), 1e-3 * std::max(1.0, std::abs(fd)) + 1e-7) << p.name << "[" << i << "]";
        ++checked;
    }
}

TEST(CriticTest, LinearCriticScoreAndGradient) {
    Tensor w({1, 2, 2}, std::vector<double>{1.0, 2.0, 0.0, -2.0});
    const Critic d = Critic::linear(w, 0.5);
    const Tensor x({1, 2, 2}, std::vector<double>{1.0, 1.0, 1.0, 1.0});
    EXPECT_DOUBLE_EQ(d.score(x), 1.0 + 0.5);
    const auto pen = d.penalty(x);
    EXPECT_DOUBLE_EQ(pen.grad_norm, 3.0);
    EXPECT_DOUBLE_EQ(pen.value, 4.0);
}
