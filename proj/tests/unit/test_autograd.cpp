#include <gtest/gtest.h>

#include <functional>

#include "biskip/autograd.hpp"
#include "biskip/errors.hpp"
#include "support.hpp"

using namespace biskip;
using testing_support::random_tensor;
using testing_support::rel_err;

namespace {

// <f(x), r> as a scalar tape node.
ag::Var project(const ag::Var& y, const Tensor& r) {
    const ag::Var rr = ag::constant(r);
    // sum(y * r) = (mean((y+r)^2) - mean((y-r)^2)) * n / 4
    const double n = static_cast<double>(r.size());
    const ag::Var parts[] = {ag::mean_sq_diff(y, ag::scale(rr, -1.0)), ag::mean_sq_diff(y, rr)};
    const double w[] = {n / 4.0, -n / 4.0};
    return ag::weighted_sum(parts, w);
}

// Checks d<op(leaves), r>/d leaf against central differences at a few entries.
void check_op(std::vector<ag::Var> leaves, const std::function<ag::Var(const std::vector<ag::Var>&)>& op,
              std::uint64_t seed, double tol = 1e-6) {
    const Tensor r = random_tensor(op(leaves).shape(), seed);
    for (auto& l : leaves) l.zero_grad();
    ag::backward(project(op(leaves), r));
    Rng pick(seed + 1);
    for (auto& leaf : leaves) {
        ASSERT_FALSE(leaf.grad().empty());
        for (int k = 0; k < 6; ++k) {
            const std::size_t i = pick.uniform_index(leaf.value().size());
            double& slot = leaf.mutable_value()[i];
            const double fd = testing_support::central_difference(slot, [&] {
                ag::NoGradGuard guard;
                return project(op(leaves), r).item();
            });
            EXPECT_LT(std::abs(fd - leaf.grad()[i]), tol * std::max(1.0, std::abs(fd))) << "entry " << i;
        }
    }
}

}  // namespace

TEST(Autograd, Conv2dGradients) {
    check_op({ag::parameter(random_tensor({3, 6, 6}, 1)), ag::parameter(random_tensor({4, 3, 3, 3}, 2)),
              ag::parameter(random_tensor({4}, 3))},
             [](const auto& v) { return ag::conv2d(v[0], v[1], &v[2], {3, 2, 1}); }, 10);
}

TEST(Autograd, ConvTransposeGradients) {
    check_op({ag::parameter(random_tensor({3, 4, 4}, 4)), ag::parameter(random_tensor({3, 2, 5, 5}, 5)),
              ag::parameter(random_tensor({2}, 6))},
             [](const auto& v) { return ag::conv_transpose2d(v[0], v[1], &v[2], {5, 2, 2}, 1); }, 11);
}

TEST(Autograd, BatchNormGradients) {
    check_op({ag::parameter(random_tensor({3, 4, 5}, 7)), ag::parameter(random_tensor({3}, 8, 0.5, 1.5)),
              ag::parameter(random_tensor({3}, 9))},
             [](const auto& v) { return ag::batch_norm(v[0], v[1], v[2]); }, 12, 1e-5);
}

TEST(Autograd, PoolingGradients) {
    check_op({ag::parameter(random_tensor({2, 6, 6}, 13))}, [](const auto& v) { return ag::avg_pool2(v[0]); }, 14);
    check_op({ag::parameter(random_tensor({2, 6, 6}, 15))}, [](const auto& v) { return ag::max_pool2(v[0]); }, 16);
}

TEST(Autograd, PointwiseGradients) {
    check_op({ag::parameter(random_tensor({2, 5, 5}, 17))},
             [](const auto& v) { return ag::leaky_relu(ag::affine(v[0], 2.0, 0.1), 0.2); }, 18);
    check_op({ag::parameter(random_tensor({2, 5, 5}, 19)), ag::parameter(random_tensor({2, 5, 5}, 20))},
             [](const auto& v) { return ag::relu(ag::sub(ag::add(v[0], v[1]), ag::scale(v[1], 0.3))); }, 21);
    const double s[] = {2.0, -1.0}, t[] = {0.5, 0.25};
    check_op({ag::parameter(random_tensor({2, 3, 3}, 22))},
             [&](const auto& v) { return ag::channel_affine(v[0], s, t); }, 23);
}

TEST(Autograd, ConcatGradients) {
    check_op({ag::parameter(random_tensor({2, 4, 4}, 24)), ag::parameter(random_tensor({3, 4, 4}, 25))},
             [](const auto& v) {
                 const ag::Var parts[] = {v[0], v[1]};
                 return ag::concat_channels(parts);
             },
             26);
}

TEST(Autograd, ClampPassesGradientOnlyInside) {
    ag::Var x = ag::parameter(Tensor({1, 1, 3}, std::vector<double>{-2.0, 0.5, 3.0}));
    ag::backward(ag::weighted_sum(std::vector<ag::Var>{ag::mean_abs_diff(ag::clamp(x, -1, 1), ag::constant(Tensor({1, 1, 3}, -5.0)))},
                                  std::vector<double>{3.0}));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 1.0);
    EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(Autograd, MeanAbsDiffUsesZeroSubgradientAtTies) {
    ag::Var x = ag::parameter(Tensor({1, 1, 2}, std::vector<double>{1.0, 2.0}));
    ag::backward(ag::mean_abs_diff(x, ag::constant(Tensor({1, 1, 2}, std::vector<double>{1.0, 0.0}))));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 0.5);
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
    ag::Var x = ag::parameter(Tensor({1, 1, 1}, 2.0));
    const ag::Var parts[] = {ag::mean_sq_diff(x, ag::constant(Tensor({1, 1, 1}, 0.0))), ag::mean_abs_diff(x, ag::constant(Tensor({1, 1, 1}, 0.0)))};
    const double w[] = {1.0, 1.0};
    ag::backward(ag::weighted_sum(parts, w));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 * 2.0 + 1.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
    ag::Var x = ag::parameter(Tensor({1, 2, 2}, 1.0));
    ag::NoGradGuard guard;
    const ag::Var y = ag::relu(x);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, ExternalScalarInjectsKnownGradient) {
    ag::Var x = ag::parameter(Tensor({1, 1, 2}, 0.0));
    ag::backward(ag::external_scalar(x, 7.0, Tensor({1, 1, 2}, std::vector<double>{3.0, -4.0})));
    EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
}
