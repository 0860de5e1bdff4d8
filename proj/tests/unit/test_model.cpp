#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "resunet/check/suites.hpp"
#include "resunet/model/graph.hpp"
#include "resunet/model/resunet.hpp"
#include "resunet/train/loss.hpp"

using namespace resunet;

namespace {

Tensor<float> random_float(Shape s, std::mt19937_64& rng, float lo = 0.f, float hi = 1.f) {
    std::uniform_real_distribution<float> d(lo, hi);
    Tensor<float> t(s);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

// Expected output size (C, H, W) of Conv1..Conv15 for a 224x224 input.
const std::vector<Shape> kConvOutputSizes{
    {1, 64, 224, 224},  {1, 64, 224, 224},  {1, 128, 112, 112}, {1, 128, 112, 112}, {1, 256, 56, 56},
    {1, 256, 56, 56},   {1, 512, 28, 28},   {1, 512, 28, 28},   {1, 256, 56, 56},   {1, 256, 56, 56},
    {1, 128, 112, 112}, {1, 128, 112, 112}, {1, 64, 224, 224},  {1, 64, 224, 224},  {1, 1, 224, 224},
};

}  // namespace

TEST(Graph, ChannelWidthsAndSkipInputs) {
    const auto g = ModelGraph::build();
    const std::array<std::size_t, 7> widths{64, 128, 256, 512, 256, 128, 64};
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(g.levels[i].out_channels, widths[i]);
    EXPECT_EQ(g.levels[4].in_channels, 768u);
    EXPECT_EQ(g.levels[5].in_channels, 384u);
    EXPECT_EQ(g.levels[6].in_channels, 192u);
    EXPECT_EQ(g.head_in_channels, 64u);
    for (std::size_t i = 0; i < 7; ++i) {
        EXPECT_EQ(g.levels[i].first_stride, (i >= 1 && i <= 3) ? 2u : 1u);
        EXPECT_EQ(g.levels[i].preactivate_first, i != 0);
    }
}

TEST(Graph, WidthScaleShrinksEveryLevel) {
    const auto g = ModelGraph::build(0.125);
    const std::array<std::size_t, 7> widths{8, 16, 32, 64, 32, 16, 8};
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(g.levels[i].out_channels, widths[i]);
    EXPECT_EQ(g.levels[4].in_channels, 96u);
}

TEST(ResidualUnit, ZeroResidualBranchIsIdentity) {
    const ResidualUnitSpec spec{"u", 4, 4, 1, true, 1};
    ParamStore store;
    for (const std::string bn : {spec.bn_a(), spec.bn_b()}) {
        store.add(bn + ".gamma", ParamKind::learnable, Tensor<float>({1, 4, 1, 1}, 1.f));
        store.add(bn + ".beta", ParamKind::learnable, Tensor<float>({1, 4, 1, 1}, 0.f));
        store.add(bn + ".running_mean", ParamKind::running_stat, Tensor<float>({1, 4, 1, 1}, 0.3f));
        store.add(bn + ".running_var", ParamKind::running_stat, Tensor<float>({1, 4, 1, 1}, 2.f));
    }
    store.add(spec.conv_a(), ParamKind::learnable, Tensor<float>({4, 4, 3, 3}));
    store.add(spec.conv_b(), ParamKind::learnable, Tensor<float>({4, 4, 3, 3}));
    std::mt19937_64 rng(1);
    const auto x = random_float({2, 4, 8, 8}, rng, -2.f, 2.f);
    EXPECT_TRUE(bit_identical(residual_unit_forward(x, spec, store, Mode::inference), x));
    EXPECT_TRUE(bit_identical(residual_unit_forward(x, spec, store, Mode::training), x));
}

TEST(ResidualUnit, LevelTwoHalvesAndWidens) {
    const auto g = ModelGraph::build();
    const auto store = init_params(g, 3);
    std::mt19937_64 rng(2);
    const auto x = random_float({1, 64, 224, 224}, rng);
    const auto y = residual_unit_forward(x, g.levels[1], store, Mode::inference);
    EXPECT_EQ(y.shape(), (Shape{1, 128, 112, 112}));
}

TEST(ResidualUnit, RejectsChannelMismatch) {
    const auto g = ModelGraph::build(0.125);
    const auto store = init_params(g, 3);
    EXPECT_THROW(residual_unit_forward(Tensor<float>({1, 5, 16, 16}), g.levels[1], store, Mode::inference),
                 ShapeError);
}

TEST(ResidualUnit, FiniteDifferences) {
    std::mt19937_64 rng(31);
    const ResidualUnitSpec down{"down", 2, 4, 2, true, 1};
    const ResidualUnitSpec stem{"stem", 3, 4, 1, false, 1};
    for (int s = 0; s < 3; ++s) {
        EXPECT_LT(check::check_residual_unit(rng, down, {2, 2, 8, 8}).max_rel_error, 1e-3);
        EXPECT_LT(check::check_residual_unit(rng, stem, {2, 3, 6, 6}).max_rel_error, 1e-3);
    }
}

TEST(Forward, ConvOutputShapes) {
    const auto g = ModelGraph::build();
    const auto store = init_params(g, 5);
    std::mt19937_64 rng(4);
    const auto x = random_float({1, 3, 224, 224}, rng);
    std::vector<ConvTrace> trace;
    const auto y = forward(g, store, x, Mode::inference, nullptr, &trace);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 224, 224}));
    ASSERT_EQ(trace.size(), 15u);
    for (std::size_t i = 0; i < 15; ++i) {
        EXPECT_EQ(trace[i].shape, kConvOutputSizes[i]) << trace[i].layer;
        EXPECT_TRUE(trace[i].layer.ends_with("conv" + std::to_string(i + 1))) << trace[i].layer;
    }
}

TEST(Forward, SmallInputProbabilities) {
    const auto g = ModelGraph::build(0.25);
    const auto store = init_params(g, 6);
    std::mt19937_64 rng(5);
    const auto x = random_float({2, 3, 32, 32}, rng);
    for (Mode mode : {Mode::inference, Mode::training}) {
        const auto y = forward(g, store, x, mode);
        ASSERT_EQ(y.shape(), (Shape{2, 1, 32, 32}));
        for (float v : y.data()) {
            EXPECT_GT(v, 0.f);
            EXPECT_LT(v, 1.f);
        }
    }
}

TEST(Forward, RejectsIncoherentSpatialSize) {
    const auto g = ModelGraph::build(0.125);
    const auto store = init_params(g, 6);
    EXPECT_THROW(forward(g, store, Tensor<float>({1, 3, 36, 32}), Mode::inference), ShapeError);
    EXPECT_THROW(forward(g, store, Tensor<float>({1, 3, 8, 8}), Mode::inference), ShapeError);
    EXPECT_THROW(forward(g, store, Tensor<float>({1, 4, 32, 32}), Mode::inference), ShapeError);
}

TEST(Forward, Deterministic) {
    const auto g = ModelGraph::build(0.125);
    const auto store = init_params(g, 8);
    std::mt19937_64 rng(6);
    const auto x = random_float({2, 3, 48, 64}, rng);
    EXPECT_TRUE(bit_identical(forward(g, store, x, Mode::inference), forward(g, store, x, Mode::inference)));
    EXPECT_TRUE(bit_identical(forward(g, store, x, Mode::training), forward(g, store, x, Mode::training)));
}

TEST(Forward, TrainingUpdatesRunningStatisticsOnlyThroughForwardTrain) {
    const auto g = ModelGraph::build(0.125);
    auto store = init_params(g, 8);
    const auto before = store;
    std::mt19937_64 rng(7);
    const auto x = random_float({2, 3, 32, 32}, rng);
    forward(g, store, x, Mode::training);
    EXPECT_TRUE(bit_identical(store, before));
    ForwardCache<float> cache;
    forward_train(g, store, x, cache);
    EXPECT_FALSE(bit_identical(store.at("level2.bn3.running_mean"), before.at("level2.bn3.running_mean")));
    EXPECT_TRUE(bit_identical(store.at("level2.conv3"), before.at("level2.conv3")));
}

TEST(Backward, ZeroLossGradientGivesZeroGradients) {
    const auto g = ModelGraph::build(0.125);
    const auto store = init_params(g, 9);
    std::mt19937_64 rng(8);
    ForwardCache<float> cache;
    const auto y = forward(g, store, random_float({2, 3, 16, 16}, rng), Mode::training, &cache);
    const auto grads = backward(g, store, cache, Tensor<float>(y.shape()));
    EXPECT_EQ(count_params(grads), count_params(store));
    for (const auto& e : grads.entries())
        for (float v : e.tensor.data()) ASSERT_EQ(v, 0.f) << e.name;
}

TEST(Backward, RunningStatisticsReceiveNoGradient) {
    const auto g = ModelGraph::build(0.125);
    const auto store = init_params(g, 9);
    const auto grads = store.zeros_like_learnable();
    for (const auto& e : grads.entries()) {
        EXPECT_FALSE(e.name.ends_with("running_mean") || e.name.ends_with("running_var")) << e.name;
    }
}

TEST(Backward, RequiresTrainingForward) {
    const auto g = ModelGraph::build(0.125);
    const auto store = init_params(g, 9);
    ForwardCache<float> cache;
    EXPECT_THROW(backward(g, store, cache, Tensor<float>({1, 1, 16, 16})), StateError);
    std::mt19937_64 rng(9);
    const auto y = forward(g, store, random_float({1, 3, 16, 16}, rng), Mode::inference, &cache);
    EXPECT_THROW(backward(g, store, cache, Tensor<float>(y.shape())), StateError);
}

TEST(Backward, HeadKernelGradientIsPixelSum) {
    const auto g = ModelGraph::build(0.125);
    const auto store = init_params(g, 10);
    std::mt19937_64 rng(10);
    ForwardCache<float> cache;
    const auto y = forward(g, store, random_float({2, 3, 16, 16}, rng), Mode::training, &cache);
    const auto loss_grad = random_float(y.shape(), rng, -1.f, 1.f);
    const auto grads = backward(g, store, cache, loss_grad);
    // Gradient at the head's linear output: loss_grad * sigmoid'(z).
    const auto& act = cache.head_input;
    const auto& head = grads.at(ModelGraph::head_name());
    for (std::size_t c = 0; c < act.shape().c; ++c) {
        double expected = 0.0;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 256; ++i) {
                const double p = y.plane(n, 0)[i];
                expected += double(loss_grad.plane(n, 0)[i]) * p * (1.0 - p) * double(act.plane(n, c)[i]);
            }
        EXPECT_NEAR(head[c], expected, 1e-5 * std::max(1.0, std::abs(expected)));
    }
}

TEST(Backward, FullModelFiniteDifferences) {
    std::mt19937_64 rng(41);
    const auto r = check::check_full_model(rng, 1.0 / 16.0, 40);
    EXPECT_EQ(r.checked, 40u);
    EXPECT_LT(r.max_rel_error, 1e-2);
}

TEST(Backward, SgdDirectionReducesLoss) {
    // First-order sanity for the float path: a small step against the
    // gradient lowers the loss on the same batch.
    const auto g = ModelGraph::build(0.125);
    auto store = init_params(g, 11);
    std::mt19937_64 rng(11);
    const auto x = random_float({2, 3, 32, 32}, rng);
    const auto t = random_float({2, 1, 32, 32}, rng);
    ForwardCache<float> cache;
    const auto y = forward(g, store, x, Mode::training, &cache);
    const auto loss = mse_loss(y, t);
    const auto grads = backward(g, store, cache, loss.grad);
    for (auto& e : store.entries()) {
        if (e.kind != ParamKind::learnable) continue;
        const auto& gr = grads.at(e.name);
        for (std::size_t i = 0; i < e.tensor.size(); ++i) e.tensor[i] -= 1e-2f * gr[i];
    }
    EXPECT_LT(mse_loss(forward(g, store, x, Mode::training), t).value, loss.value);
}

TEST(Init, DeterministicAndBatchNormDefaults) {
    const auto g = ModelGraph::build(0.25);
    const auto a = init_params(g, 42);
    const auto b = init_params(g, 42);
    EXPECT_TRUE(bit_identical(a, b));
    EXPECT_FALSE(bit_identical(a, init_params(g, 43)));
    for (const auto& e : a.entries()) {
        if (e.name.ends_with(".gamma") || e.name.ends_with(".running_var")) {
            for (float v : e.tensor.data()) ASSERT_EQ(v, 1.f) << e.name;
        }
        if (e.name.ends_with(".beta") || e.name.ends_with(".running_mean")) {
            for (float v : e.tensor.data()) ASSERT_EQ(v, 0.f) << e.name;
        }
    }
}

TEST(Init, HeNormalSpreadOfConvTwo) {
    const auto store = init_params(ModelGraph::build(), 1);
    const auto& k = store.at("level1.conv2");
    ASSERT_EQ(k.shape(), (Shape{64, 64, 3, 3}));
    double sum = 0, sq = 0;
    for (float v : k.data()) sum += v;
    const double mean = sum / double(k.size());
    for (float v : k.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / double(k.size() - 1));
    const double expected = std::sqrt(2.0 / 576.0);  // 0.0589
    EXPECT_NEAR(sd, expected, 0.1 * expected);
}

TEST(CountParams, MatchesClosedForm) {
    const auto store = init_params(ModelGraph::build(), 1);
    // sum of C_out * C_in * k * k over the 15 main-path convolutions
    EXPECT_EQ(count_main_path_conv_params(store), 7'780'096u);
    // + projections 430,272 + BN gamma/beta 6,400
    EXPECT_EQ(count_params(store), 8'216'768u);
    EXPECT_GE(count_params(store), 7'400'000u);
    EXPECT_LE(count_params(store), 8'400'000u);
    EXPECT_EQ(count_params(ParamStore{}), 0u);
}

TEST(CountParams, ClosedFormByHand) {
    // Independent of the store: the 15 convolutions by hand.
    const std::vector<std::array<std::size_t, 3>> rows{
        {3, 64, 9},    {64, 64, 9},   {64, 128, 9},  {128, 128, 9}, {128, 256, 9},
        {256, 256, 9}, {256, 512, 9}, {512, 512, 9}, {768, 256, 9}, {256, 256, 9},
        {384, 128, 9}, {128, 128, 9}, {192, 64, 9},  {64, 64, 9},   {64, 1, 1}};
    std::size_t total = 0;
    for (const auto& r : rows) total += r[0] * r[1] * r[2];
    EXPECT_EQ(total, 7'780'096u);
}
