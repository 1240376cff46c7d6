#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sthd/core_data.hpp"
#include "sthd/tensor.hpp"

namespace sthd {

/// Matched prediction/truth horizons in original units. Values are stored
/// flat, pair-major: pair i occupies [i*horizon, (i+1)*horizon).
struct ForecastSet {
    std::size_t horizon = 0;
    std::vector<double> predictions;
    std::vector<double> truths;
    std::vector<WindowRef> provenance;

    explicit ForecastSet(std::size_t horizon_ = 0) : horizon(horizon_) {}

    std::size_t size() const { return provenance.size(); }
    void add(WindowRef ref, std::span<const double> prediction, std::span<const double> truth);
    void validate() const;
};

double rmse(const ForecastSet& fs);
double mae(const ForecastSet& fs);
/// sqrt(mean (y - yhat)^2) / mean |y|. Throws when sum |y| is 0.
double wrmspe(const ForecastSet& fs);
/// sum |y - yhat| / sum |y|. Throws when sum |y| is 0.
double wape(const ForecastSet& fs);

struct MetricSummary {
    double rmse = 0.0;
    double wrmspe = 0.0;
    double mae = 0.0;
    double wape = 0.0;
};

MetricSummary summarize(const ForecastSet& fs);

enum class NaiveMode { repeat_last, seasonal };

NaiveMode parse_naive_mode(std::string_view name);

/// repeat_last predicts the final input value for every horizon step.
/// seasonal repeats the last tau inputs and is not applicable (nullopt) when
/// L < tau.
std::optional<ForecastSet> naive_forecast(const MtsDataset& dataset, const WindowSpec& spec,
                                          SplitRange range = SplitRange::test,
                                          NaiveMode mode = NaiveMode::repeat_last);

struct LinearTrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 128;
    double learning_rate = 1e-2;
    std::uint64_t seed = 0;
};

/// One linear map from L normalized inputs to tau outputs, shared by every
/// channel.
class LinearBaseline {
public:
    LinearBaseline(std::size_t input_length, std::size_t horizon, std::uint64_t seed);

    /// Trains on the training windows of every channel with MSE and Adam.
    /// Returns the mean training loss of each epoch.
    std::vector<double> fit(const MtsDataset& dataset, const NormalizationState& normalizer,
                            const WindowSpec& spec, const LinearTrainOptions& options);

    /// Normalized input window of length L -> normalized horizon.
    std::vector<double> predict(std::span<const double> window) const;

    const nn::Tensor& weight() const { return weight_; }  // [tau, L]
    const nn::Tensor& bias() const { return bias_; }      // [tau]

private:
    std::size_t input_length_;
    std::size_t horizon_;
    nn::Tensor weight_;
    nn::Tensor bias_;
};

/// Fits a LinearBaseline on the training split and forecasts `range` in
/// original units.
ForecastSet linear_forecast(const MtsDataset& dataset, const WindowSpec& spec, const LinearTrainOptions& options,
                            SplitRange range = SplitRange::test);

}  // namespace sthd
