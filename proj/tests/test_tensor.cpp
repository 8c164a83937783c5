#include <gtest/gtest.h>

#include <chrono>

#include "grad_check.hpp"
#include "mae/ops.hpp"

using namespace mae;
using testutil::max_grad_rel_err;
using testutil::random_values;

namespace {

Tensor rand_tensor(std::mt19937_64& rng, std::vector<int> shape, double kink_gap = 0.0) {
    auto n = detail::shape_count(shape);
    return Tensor::from(std::move(shape), random_values(rng, n, -1.0, 1.0, kink_gap), true);
}

}  // namespace

TEST(TensorBasics, ShapeCountMatchesValues) {
    EXPECT_THROW(Tensor::from({2, 3}, {1.0, 2.0}), std::invalid_argument);
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.size(), 6u);
}

TEST(TensorBasics, NonFiniteValuesRejected) {
    EXPECT_THROW(Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()}),
                 std::runtime_error);
    // overflow inside an op must surface, not propagate silently
    Tensor x = Tensor::scalar(1e308, true);
    EXPECT_THROW(mul(x, x), std::runtime_error);
}

TEST(Backward, SumOfSquaresGradIsTwoX) {
    Tensor x = Tensor::from({4}, {1.0, -2.0, 3.0, 0.5}, true);
    Tensor loss = sum(mul(x, x));
    backward(loss);
    const auto& g = x.grad();
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g[i], 2.0 * x.values()[i]);
}

TEST(Backward, RepeatedCallsAccumulateExactly) {
    Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    Tensor loss = sum(mul(x, x));
    backward(loss);
    std::vector<double> once = x.grad();
    backward(loss);
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * once[i]);
}

TEST(Backward, NonScalarLossRejected) {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    EXPECT_THROW(backward(x), std::invalid_argument);
}

// --- conv2d -----------------------------------------------------------------

TEST(Conv2d, IdentityKernel) {
    std::mt19937_64 rng(1);
    Tensor x = rand_tensor(rng, {2, 4, 4});
    Tensor w = Tensor::zeros({2, 2, 1, 1});
    w.values()[0] = 1.0;  // out0 <- in0
    w.values()[3] = 1.0;  // out1 <- in1
    Tensor b = Tensor::zeros({2});
    Tensor y = conv2d(x, w, b, 1, 0);
    EXPECT_EQ(y.values(), x.values());
}

TEST(Conv2d, AllOnesKernelOnOnesInput) {
    Tensor x = Tensor::from({1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor w = Tensor::from({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1, 1);
    // sliding-window sums: corners 4, edge midpoints 6, center 9
    std::vector<double> want = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    EXPECT_EQ(y.values(), want);
}

TEST(Conv2d, ZeroWeightsGiveZeroOutput) {
    std::mt19937_64 rng(2);
    Tensor x = rand_tensor(rng, {3, 5, 5});
    Tensor y = conv2d(x, Tensor::zeros({4, 3, 3, 3}), Tensor::zeros({4}), 1, 1);
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, SamePaddingPreservesExtentForOddKernels) {
    std::mt19937_64 rng(3);
    Tensor x = rand_tensor(rng, {1, 6, 7});
    for (int k : {1, 3, 5}) {
        Tensor w = rand_tensor(rng, {2, 1, k, k});
        Tensor y = conv2d(x, w, Tensor::zeros({2}), 1, (k - 1) / 2);
        EXPECT_EQ(y.shape(), (std::vector<int>{2, 6, 7}));
    }
}

TEST(Conv2d, Validation) {
    Tensor x = Tensor::zeros({1, 4, 4});
    EXPECT_THROW(conv2d(x, Tensor::zeros({1, 2, 1, 1}), Tensor::zeros({1})),
                 std::invalid_argument);  // channel mismatch
    EXPECT_THROW(conv2d(x, Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1})),
                 std::invalid_argument);  // even kernel
    EXPECT_THROW(conv2d(x, Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 2, 1),
                 std::invalid_argument);  // non-integral extent
}

// --- batchnorm --------------------------------------------------------------

TEST(BatchNorm, EvalIdentityConfiguration) {
    std::mt19937_64 rng(4);
    Tensor x = rand_tensor(rng, {2, 3, 3});
    BatchNormState bn = BatchNormState::make(2);
    bn.training = false;
    Tensor y = batchnorm2d(x, bn);
    double s = 1.0 / std::sqrt(1.0 + bn.epsilon);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.values()[i], x.values()[i] * s);
}

TEST(BatchNorm, EvalAffine) {
    Tensor x = Tensor::from({1, 1, 2}, {1.0, -2.0});
    BatchNormState bn = BatchNormState::make(1);
    bn.training = false;
    bn.gamma.values()[0] = 2.0;
    bn.beta.values()[0] = 3.0;
    bn.running_mean[0] = 0.0;
    bn.running_var[0] = 0.0;
    Tensor y = batchnorm2d(x, bn);
    double s = 1.0 / std::sqrt(bn.epsilon);
    EXPECT_DOUBLE_EQ(y.values()[0], 2.0 * 1.0 * s + 3.0);
    EXPECT_DOUBLE_EQ(y.values()[1], 2.0 * -2.0 * s + 3.0);
}

TEST(BatchNorm, TrainConstantInputGivesBeta) {
    Tensor x = Tensor::from({2, 2, 2}, {5, 5, 5, 5, -3, -3, -3, -3});
    BatchNormState bn = BatchNormState::make(2);
    bn.beta.values() = {1.5, -0.5};
    Tensor y = batchnorm2d(x, bn);
    for (int i = 0; i < 4; ++i) {
        EXPECT_NEAR(y.values()[i], 1.5, 1e-9);
        EXPECT_NEAR(y.values()[4 + i], -0.5, 1e-9);
    }
}

TEST(BatchNorm, EvalModeIsPure) {
    std::mt19937_64 rng(5);
    Tensor x = rand_tensor(rng, {3, 4, 4});
    BatchNormState bn = BatchNormState::make(3);
    bn.training = false;
    bn.running_mean = {0.1, -0.2, 0.3};
    bn.running_var = {1.0, 2.0, 0.5};
    Tensor a = batchnorm2d(x, bn);
    Tensor b = batchnorm2d(x, bn);
    EXPECT_EQ(a.values(), b.values());
    EXPECT_EQ(bn.running_mean, (std::vector<double>{0.1, -0.2, 0.3}));
}

TEST(BatchNorm, ChannelMismatchRejected) {
    BatchNormState bn = BatchNormState::make(2);
    EXPECT_THROW(batchnorm2d(Tensor::zeros({3, 2, 2}), bn), std::invalid_argument);
}

// --- pointwise --------------------------------------------------------------

TEST(MulMask, IdentityAndAnnihilation) {
    std::mt19937_64 rng(6);
    Tensor x = rand_tensor(rng, {3, 4, 4});
    Tensor ones = Tensor::from({1, 4, 4}, std::vector<double>(16, 1.0));
    Tensor zeros = Tensor::zeros({1, 4, 4});
    EXPECT_EQ(mul_mask(x, ones).values(), x.values());
    Tensor zeroed = mul_mask(x, zeros);
    for (double v : zeroed.values()) EXPECT_EQ(v, 0.0);
}

TEST(MulMask, CheckerboardZeroesMaskedCellsInEveryChannel) {
    std::mt19937_64 rng(7);
    Tensor x = rand_tensor(rng, {2, 4, 4});
    std::vector<double> m(16);
    for (int i = 0; i < 16; ++i) m[i] = ((i / 4 + i % 4) % 2 == 0) ? 1.0 : 0.0;
    Tensor y = mul_mask(x, Tensor::from({1, 4, 4}, m));
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 16; ++i)
            EXPECT_EQ(y.values()[c * 16 + i], m[i] == 1.0 ? x.values()[c * 16 + i] : 0.0);
}

TEST(MulMask, IdempotentAndBinaryValidated) {
    std::mt19937_64 rng(8);
    Tensor x = rand_tensor(rng, {2, 3, 3});
    std::vector<double> m = {1, 0, 1, 0, 1, 0, 1, 0, 1};
    Tensor mask = Tensor::from({1, 3, 3}, m);
    Tensor once = mul_mask(x, mask);
    Tensor twice = mul_mask(once, mask);
    EXPECT_EQ(once.values(), twice.values());
    EXPECT_THROW(mul_mask(x, Tensor::from({1, 3, 3}, std::vector<double>(9, 0.5))),
                 std::invalid_argument);
}

// --- concat / slice ---------------------------------------------------------

TEST(Concat, PaperChannelCount) {
    std::vector<Tensor> parts(5, Tensor::zeros({154, 2, 2}));
    EXPECT_EQ(concat_channels(parts).shape()[0], 770);
}

TEST(Concat, SliceRoundTripIsBitwiseIdentity) {
    std::mt19937_64 rng(9);
    Tensor a = rand_tensor(rng, {2, 3, 3});
    Tensor b = rand_tensor(rng, {4, 3, 3});
    Tensor c = concat_channels({a, b});
    EXPECT_EQ(slice_channels(c, 0, 2).values(), a.values());
    EXPECT_EQ(slice_channels(c, 2, 6).values(), b.values());
    EXPECT_EQ(concat_channels({a}).values(), a.values());
    EXPECT_THROW(concat_channels({}), std::invalid_argument);
}

// --- pooling ----------------------------------------------------------------

TEST(GlobalMaxPool, ConstantAndSpike) {
    Tensor c = Tensor::from({2, 2, 2}, {3, 3, 3, 3, -1, -1, -1, -1});
    EXPECT_EQ(global_max_pool(c).values(), (std::vector<double>{3, -1}));
    Tensor s = Tensor::from({1, 2, 2}, {0, 0, 7, 0});
    EXPECT_EQ(global_max_pool(s).values(), (std::vector<double>{7}));
}

TEST(GlobalMaxPool, GradientLandsOnArgmaxOnly) {
    Tensor x = Tensor::from({1, 2, 2}, {0.1, 0.9, 0.3, 0.2}, true);
    backward(sum(global_max_pool(x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{0, 1, 0, 0}));
}

TEST(GlobalMaxPool, TieBreaksToLowestLinearIndex) {
    Tensor x = Tensor::from({1, 2, 2}, {0.5, 0.5, 0.5, 0.5}, true);
    backward(sum(global_max_pool(x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(AvgPool2, HalvesExtentAndAverages) {
    Tensor x = Tensor::from({1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor y = avg_pool2(x);
    EXPECT_EQ(y.shape(), (std::vector<int>{1, 1, 2}));
    EXPECT_DOUBLE_EQ(y.values()[0], (1 + 2 + 5 + 6) / 4.0);
    EXPECT_DOUBLE_EQ(y.values()[1], (3 + 4 + 7 + 8) / 4.0);
    EXPECT_THROW(avg_pool2(Tensor::zeros({1, 3, 4})), std::invalid_argument);
}

// --- roi align --------------------------------------------------------------

TEST(RoiAlign, FullImageAlignedGridIsIdentity) {
    std::mt19937_64 rng(10);
    Tensor f = rand_tensor(rng, {2, 4, 4});
    // image size == feature size, box == whole image, out == feature extent:
    // every sample lands exactly on a pixel center
    Tensor y = roi_align_crop(f, Box{0, 0, 4, 4}, 4, 4, 4, 4);
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(y.values()[i], f.values()[i], 1e-12);
}

TEST(RoiAlign, ConstantFeatureAnyBox) {
    Tensor f = Tensor::from({1, 6, 6}, std::vector<double>(36, 2.5));
    Tensor y = roi_align_crop(f, Box{3.3, 7.1, 21.8, 40.0}, 48, 48, 5, 3);
    for (double v : y.values()) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(RoiAlign, LinearRampMatchesBilinearFormula) {
    // f(x,y) = x on a 8x8 feature grid, image 8x8 (scale 1)
    std::vector<double> v(64);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) v[y * 8 + x] = x;
    Tensor f = Tensor::from({1, 8, 8}, v);
    Box box{0, 0, 4, 8};  // half image
    Tensor out = roi_align_crop(f, box, 8, 8, 4, 4);
    // bilinear interp of a linear ramp reproduces the sample coordinate
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
            double u = 0.0 + (ox + 0.5) * (4.0 / 4.0) - 0.5;
            u = std::clamp(u, 0.0, 7.0);
            EXPECT_NEAR(out.values()[oy * 4 + ox], u, 1e-12);
        }
}

TEST(RoiAlign, DegenerateBoxRejected) {
    Tensor f = Tensor::zeros({1, 4, 4});
    EXPECT_THROW(roi_align_crop(f, Box{-5, -5, -1, -1}, 8, 8, 2, 2), std::invalid_argument);
}

// --- linear -----------------------------------------------------------------

TEST(Linear, IdentityAndConstant) {
    Tensor x = Tensor::from({3}, {1, 2, 3});
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    EXPECT_EQ(linear(x, eye, Tensor::zeros({3})).values(), x.values());
    Tensor c = linear(x, Tensor::zeros({2, 3}), Tensor::from({2}, {4.0, -1.0}));
    EXPECT_EQ(c.values(), (std::vector<double>{4.0, -1.0}));
}

TEST(Linear, MatchesHandComputedProduct) {
    Tensor x = Tensor::from({4}, {1, -1, 2, 0.5});
    Tensor w = Tensor::from({3, 4}, {1, 2, 3, 4, 0, -1, 1, 0, 2, 2, 2, 2});
    Tensor b = Tensor::from({3}, {0.5, 0, -1});
    Tensor y = linear(x, w, b);
    EXPECT_DOUBLE_EQ(y.values()[0], 1 - 2 + 6 + 2 + 0.5);
    EXPECT_DOUBLE_EQ(y.values()[1], 0 + 1 + 2 + 0);
    EXPECT_DOUBLE_EQ(y.values()[2], 2 - 2 + 4 + 1 - 1);
}

// --- gradient suite ---------------------------------------------------------

TEST(GradSuite, EveryOpPassesFiniteDifferenceChecks) {
    auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(seed * 7919 + 13);
        {
            Tensor a = rand_tensor(rng, {2, 3, 3});
            Tensor b = rand_tensor(rng, {2, 3, 3});
            EXPECT_LT(max_grad_rel_err([&] { return sum(mul(add(a, b), b)); }, {a, b}), 1e-4);
            EXPECT_LT(max_grad_rel_err([&] { return sum(scale(a, -2.5)); }, {a}), 1e-4);
        }
        {
            Tensor a = rand_tensor(rng, {2, 3, 3}, 1e-3);  // keep clear of the ReLU kink
            EXPECT_LT(max_grad_rel_err([&] { return sum(relu(a)); }, {a}), 1e-4);
            EXPECT_LT(max_grad_rel_err([&] { return sum(sigmoid(a)); }, {a}), 1e-4);
        }
        {
            Tensor x = rand_tensor(rng, {3, 4, 4});
            std::vector<double> mv(16);
            for (auto& m : mv) m = (rng() & 1u) ? 1.0 : 0.0;
            Tensor mask = Tensor::from({1, 4, 4}, mv);
            EXPECT_LT(max_grad_rel_err([&] { return sum(mul_mask(x, mask)); }, {x}), 1e-4);
        }
        {
            Tensor a = rand_tensor(rng, {2, 3, 3});
            Tensor b = rand_tensor(rng, {3, 3, 3});
            EXPECT_LT(max_grad_rel_err(
                          [&] { return sum(slice_channels(concat_channels({a, b}), 1, 4)); },
                          {a, b}),
                      1e-4);
        }
        {
            Tensor x = rand_tensor(rng, {2, 5, 5});
            Tensor w = rand_tensor(rng, {3, 2, 3, 3});
            Tensor b = rand_tensor(rng, {3});
            EXPECT_LT(max_grad_rel_err([&] { return sum(conv2d(x, w, b, 1, 1)); }, {x, w, b}),
                      1e-4);
            // strided variant: 5x5, k=3, pad 0, stride 2 -> 2x2
            EXPECT_LT(max_grad_rel_err([&] { return sum(conv2d(x, w, b, 2, 0)); }, {x, w, b}),
                      1e-4);
        }
        {
            Tensor x = rand_tensor(rng, {2, 4, 4});
            BatchNormState bn = BatchNormState::make(2);
            bn.gamma.values() = random_values(rng, 2, 0.5, 1.5);
            bn.beta.values() = random_values(rng, 2);
            Tensor probe = rand_tensor(rng, {2, 4, 4});
            auto run_train = [&] {
                BatchNormState local = BatchNormState::make(2);
                local.gamma.values() = bn.gamma.values();
                local.beta.values() = bn.beta.values();
                // random linear functional keeps gradients well away from zero
                // (sum of squares of standardized values is nearly constant)
                return sum(mul(batchnorm2d(x, local), probe));
            };
            EXPECT_LT(max_grad_rel_err(run_train, {x}), 1e-4);
            BatchNormState ev = BatchNormState::make(2);
            ev.training = false;
            ev.running_mean = random_values(rng, 2);
            ev.running_var = random_values(rng, 2, 0.5, 2.0);
            EXPECT_LT(max_grad_rel_err([&] { return sum(batchnorm2d(x, ev)); },
                                       {x, ev.gamma, ev.beta}),
                      1e-4);
        }
        {
            Tensor x = rand_tensor(rng, {2, 3, 3});
            EXPECT_LT(max_grad_rel_err([&] { return sum(global_max_pool(x)); }, {x}), 1e-4);
            Tensor p = rand_tensor(rng, {2, 4, 4});
            EXPECT_LT(max_grad_rel_err([&] { return sum(avg_pool2(p)); }, {p}), 1e-4);
        }
        {
            Tensor f = rand_tensor(rng, {2, 6, 6});
            Box box{1.3, 0.7, 10.9, 14.2};
            EXPECT_LT(max_grad_rel_err(
                          [&] { return sum(roi_align_crop(f, box, 16, 16, 3, 3)); }, {f}),
                      1e-4);
        }
        {
            Tensor x = rand_tensor(rng, {4});
            Tensor w = rand_tensor(rng, {3, 4});
            Tensor b = rand_tensor(rng, {3});
            EXPECT_LT(max_grad_rel_err([&] { return sum(mul(linear(x, w, b), linear(x, w, b))); },
                                       {x, w, b}),
                      1e-4);
        }
        {
            Tensor x = rand_tensor(rng, {5}, 1e-2);
            EXPECT_LT(max_grad_rel_err([&] { return l2_norm(x); }, {x}), 1e-4);
            EXPECT_LT(max_grad_rel_err([&] { return sum(div_scalar(x, l2_norm(x))); }, {x}), 1e-4);
            std::vector<std::vector<double>> m = {random_values(rng, 5), random_values(rng, 5),
                                                  random_values(rng, 5)};
            EXPECT_LT(max_grad_rel_err(
                          [&] { return cross_entropy_logits(matvec_const(m, x), 1); }, {x}),
                      1e-4);
        }
        {
            Tensor z = Tensor::from({1}, random_values(rng, 1), true);
            EXPECT_LT(max_grad_rel_err([&] { return bce(sigmoid(z), 1.0); }, {z}), 1e-4);
            EXPECT_LT(max_grad_rel_err([&] { return bce(sigmoid(z), 0.0); }, {z}), 1e-4);
        }
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 120.0);
}

TEST(GradSuite, DivScalarUnitVectorTight) {
    // cosine-style objective through the norm/direction split
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(seed + 101);
        Tensor x = rand_tensor(rng, {6}, 5e-2);
        std::vector<double> target = random_values(rng, 6);
        std::vector<std::vector<double>> m = {target};
        auto loss = [&] { return sum(matvec_const(m, div_scalar(x, l2_norm(x)))); };
        EXPECT_LT(max_grad_rel_err(loss, {x}), 1e-4);
    }
}

TEST(Norms, ZeroVectorRejected) {
    EXPECT_THROW(l2_norm(Tensor::zeros({3})), std::runtime_error);
}
