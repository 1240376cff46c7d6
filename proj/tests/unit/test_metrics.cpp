#include <gtest/gtest.h>

#include <cmath>

#include "sthd/metrics.hpp"
#include "sthd/random.hpp"

namespace sthd {
namespace {

ForecastSet make_set(std::size_t horizon, const std::vector<std::vector<double>>& preds,
                     const std::vector<std::vector<double>>& truths) {
    ForecastSet fs(horizon);
    for (std::size_t i = 0; i < preds.size(); ++i) fs.add({0, i}, preds[i], truths[i]);
    return fs;
}

TEST(Metrics, WorkedExample) {
    const auto fs = make_set(2, {{1, 3}}, {{2, 2}});
    EXPECT_DOUBLE_EQ(mae(fs), 1.0);
    EXPECT_DOUBLE_EQ(rmse(fs), 1.0);
    EXPECT_DOUBLE_EQ(wape(fs), 0.5);
    EXPECT_DOUBLE_EQ(wrmspe(fs), 0.5);
}

TEST(Metrics, PerfectForecastsAreZero) {
    const auto fs = make_set(3, {{1, -2, 3}, {4, 5, 6}}, {{1, -2, 3}, {4, 5, 6}});
    const auto m = summarize(fs);
    EXPECT_EQ(m.rmse, 0.0);
    EXPECT_EQ(m.mae, 0.0);
    EXPECT_EQ(m.wape, 0.0);
    EXPECT_EQ(m.wrmspe, 0.0);
}

TEST(Metrics, MicroAveragedOverAllPairs) {
    // Errors 1, 1 in pair 0 and 3, 3 in pair 1; truths sum |y| = 2+2+4+4.
    const auto fs = make_set(2, {{1, 3}, {1, 7}}, {{2, 2}, {4, 4}});
    EXPECT_DOUBLE_EQ(mae(fs), 2.0);
    EXPECT_DOUBLE_EQ(rmse(fs), std::sqrt(5.0));
    EXPECT_DOUBLE_EQ(wape(fs), 8.0 / 12.0);
    EXPECT_DOUBLE_EQ(wrmspe(fs), std::sqrt(5.0) / 3.0);
}

TEST(Metrics, HomogeneityUnderJointScaling) {
    Rng rng(1);
    ForecastSet a(4), b(4);
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<double> p(4), y(4), p10(4), y10(4);
        for (std::size_t h = 0; h < 4; ++h) {
            p[h] = uniform(rng, -3, 3);
            y[h] = uniform(rng, -3, 3);
            p10[h] = 10 * p[h];
            y10[h] = 10 * y[h];
        }
        a.add({1, i}, p, y);
        b.add({1, i}, p10, y10);
    }
    EXPECT_NEAR(wape(b), wape(a), 1e-12);
    EXPECT_NEAR(wrmspe(b), wrmspe(a), 1e-12);
    EXPECT_NEAR(rmse(b), 10 * rmse(a), 1e-12);
    EXPECT_NEAR(mae(b), 10 * mae(a), 1e-12);
}

TEST(Metrics, WorsenedPairNeverDecreasesAnyMetric) {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        ForecastSet base(3);
        for (std::size_t i = 0; i < 4; ++i) {
            std::vector<double> p(3), y(3);
            for (std::size_t h = 0; h < 3; ++h) {
                y[h] = uniform(rng, 1, 5);
                p[h] = y[h] + uniform(rng, -1, 1);
            }
            base.add({0, i}, p, y);
        }
        auto worse = base;
        // Push pair 0 further from its truth.
        for (std::size_t h = 0; h < 3; ++h) {
            const double e = worse.predictions[h] - worse.truths[h];
            worse.predictions[h] = worse.truths[h] + e + (e >= 0 ? 1.0 : -1.0);
        }
        EXPECT_GE(rmse(worse), rmse(base));
        EXPECT_GE(mae(worse), mae(base));
        EXPECT_GE(wape(worse), wape(base));
        EXPECT_GE(wrmspe(worse), wrmspe(base));
    }
}

TEST(Metrics, ConstantAbsoluteErrorsMakeWapeEqualWrmspe) {
    const auto fs = make_set(3, {{2, 4, 9}}, {{3, 3, 8}});
    EXPECT_DOUBLE_EQ(wape(fs), wrmspe(fs));
}

TEST(Metrics, ZeroTruthMassRejectedForWeightedMetrics) {
    const auto fs = make_set(2, {{1, 1}}, {{0, 0}});
    EXPECT_THROW(wape(fs), std::domain_error);
    EXPECT_THROW(wrmspe(fs), std::domain_error);
    EXPECT_DOUBLE_EQ(mae(fs), 1.0);
}

TEST(Metrics, EmptyOrMisalignedSetRejected) {
    ForecastSet empty(2);
    EXPECT_THROW(rmse(empty), std::invalid_argument);
    ForecastSet fs(2);
    EXPECT_THROW(fs.add({0, 0}, std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

MtsDataset series_dataset(const std::vector<double>& v, std::size_t train_end, std::size_t val_end) {
    return MtsDataset(1, v.size(), v, {"x"}, train_end, val_end);
}

TEST(Naive, RepeatsLastInput) {
    // Test range [8, 14): a single window with L=3, tau=3 ending its input at 7.
    const auto d = series_dataset({0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 7, 10, 11, 12}, 6, 8);
    const auto fs = naive_forecast(d, {3, 3, 1}, SplitRange::test);
    ASSERT_TRUE(fs);
    ASSERT_EQ(fs->size(), 1u);
    EXPECT_EQ(fs->predictions, (std::vector<double>{7, 7, 7}));
    EXPECT_EQ(fs->truths, (std::vector<double>{10, 11, 12}));
}

TEST(Naive, RampHasGrowingError) {
    std::vector<double> v(20);
    for (std::size_t t = 0; t < 20; ++t) v[t] = static_cast<double>(t);
    const auto d = series_dataset(v, 10, 14);
    const auto fs = naive_forecast(d, {4, 2, 1}, SplitRange::test);
    ASSERT_TRUE(fs);
    for (std::size_t i = 0; i < fs->size(); ++i) {
        EXPECT_EQ(std::abs(fs->truths[2 * i] - fs->predictions[2 * i]), 1.0);
        EXPECT_EQ(std::abs(fs->truths[2 * i + 1] - fs->predictions[2 * i + 1]), 2.0);
    }
}

TEST(Naive, ConstantChannelHasZeroError) {
    const auto d = series_dataset(std::vector<double>(30, 4.5), 18, 24);
    const auto m = summarize(*naive_forecast(d, {3, 2, 1}));
    EXPECT_EQ(m.mae, 0.0);
    EXPECT_EQ(m.rmse, 0.0);
    EXPECT_EQ(m.wape, 0.0);
    EXPECT_EQ(m.wrmspe, 0.0);
}

TEST(Naive, SeasonalNotApplicableWhenInputShorterThanHorizon) {
    const auto d = series_dataset(std::vector<double>(40, 1.0), 20, 30);
    EXPECT_FALSE(naive_forecast(d, {2, 4, 1}, SplitRange::test, NaiveMode::seasonal));
    EXPECT_TRUE(naive_forecast(d, {2, 4, 1}, SplitRange::test, NaiveMode::repeat_last));
    EXPECT_TRUE(naive_forecast(d, {4, 4, 1}, SplitRange::test, NaiveMode::seasonal));
}

TEST(Linear, IdentityTaskPutsWeightOnLastInput) {
    // For a slow random walk the best linear one-step rule copies the last
    // value, and the residual is the small step noise.
    Rng rng(3);
    const std::size_t M = 3, T = 400;
    std::vector<double> v(M * T);
    for (std::size_t c = 0; c < M; ++c) {
        double x = 0;
        for (std::size_t t = 0; t < T; ++t) {
            x += 0.05 * standard_normal(rng);
            v[c * T + t] = x;
        }
    }
    MtsDataset d(M, T, v, {"a", "b", "c"}, 240, 320);
    const WindowSpec spec{6, 1, 1};
    LinearBaseline model(6, 1, 4);
    LinearTrainOptions options;
    options.epochs = 60;
    options.batch_size = 32;
    model.fit(d, fit_normalizer(d), spec, options);
    const auto w = model.weight().data();
    std::size_t argmax = 0;
    for (std::size_t t = 1; t < 6; ++t) {
        if (std::abs(w[t]) > std::abs(w[argmax])) argmax = t;
    }
    EXPECT_EQ(argmax, 5u);
    EXPECT_GT(w[5], 0.7);

    const auto fs = linear_forecast(d, spec, options);
    double mse = 0.0;
    for (std::size_t i = 0; i < fs.truths.size(); ++i) mse += std::pow(fs.truths[i] - fs.predictions[i], 2);
    EXPECT_LT(mse / static_cast<double>(fs.truths.size()), 0.01);
}

TEST(Linear, NoiselessSinusoidIsLearnedExactly) {
    // A pure sinusoid obeys x(t+1) = 2 cos(w) x(t) - x(t-1), so a linear map
    // of the window reproduces the horizon exactly.
    const std::size_t M = 4, T = 200;
    std::vector<double> v(M * T);
    for (std::size_t c = 0; c < M; ++c) {
        for (std::size_t t = 0; t < T; ++t) v[c * T + t] = std::sin(0.3 * static_cast<double>(t) + 0.7 * c);
    }
    MtsDataset d(M, T, v, {"a", "b", "c", "d"}, 120, 160);
    LinearTrainOptions options;
    options.epochs = 100;
    options.batch_size = 16;
    const auto fs = linear_forecast(d, {8, 2, 1}, options);
    double mse = 0.0;
    for (std::size_t i = 0; i < fs.truths.size(); ++i) mse += std::pow(fs.truths[i] - fs.predictions[i], 2);
    mse /= static_cast<double>(fs.truths.size());
    EXPECT_LT(mse, 0.01);
}

TEST(Linear, DeterministicUnderSeed) {
    std::vector<double> v(2 * 80);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.1 * static_cast<double>(i)) + 0.01 * (i % 7);
    MtsDataset d(2, 80, v, {"a", "b"}, 48, 64);
    LinearTrainOptions options;
    options.epochs = 5;
    options.seed = 9;
    const auto a = linear_forecast(d, {6, 2, 1}, options);
    const auto b = linear_forecast(d, {6, 2, 1}, options);
    EXPECT_EQ(a.predictions, b.predictions);
}

TEST(Linear, RowsAreIndependentFunctionals) {
    LinearBaseline model(5, 3, 1);
    std::vector<double> x(5, 0.0);
    const auto base = model.predict(x);
    for (std::size_t t = 0; t < 5; ++t) {
        x.assign(5, 0.0);
        x[t] = 1.0;
        const auto out = model.predict(x);
        for (std::size_t h = 0; h < 3; ++h) {
            EXPECT_NEAR(out[h] - base[h], model.weight().data()[h * 5 + t], 1e-15);
        }
    }
}

TEST(Denormalization, PipelineLeavesMetricsInvariant) {
    // Metrics in original units do not change when the data are shifted and
    // scaled before normalization, apart from the same affine map.
    std::vector<double> v(2 * 60);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::cos(0.2 * static_cast<double>(i)) + 3.0;
    MtsDataset d(2, 60, v, {"a", "b"}, 36, 48);
    std::vector<double> w = v;
    for (auto& x : w) x = 5.0 * x - 2.0;
    MtsDataset e(2, 60, w, {"a", "b"}, 36, 48);
    LinearTrainOptions options;
    options.epochs = 10;
    const auto a = linear_forecast(d, {6, 2, 1}, options);
    const auto b = linear_forecast(e, {6, 2, 1}, options);
    EXPECT_NEAR(rmse(b), 5.0 * rmse(a), 1e-9);
    EXPECT_NEAR(mae(b), 5.0 * mae(a), 1e-9);
}

}  // namespace
}  // namespace sthd
