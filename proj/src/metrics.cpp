#include "sthd/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sthd/optim.hpp"
#include "sthd/random.hpp"

namespace sthd {

void ForecastSet::add(WindowRef ref, std::span<const double> prediction, std::span<const double> truth) {
    if (prediction.size() != horizon || truth.size() != horizon) {
        throw std::invalid_argument("ForecastSet::add: expected horizon " + std::to_string(horizon) + ", got " +
                                    std::to_string(prediction.size()) + " predictions and " +
                                    std::to_string(truth.size()) + " truths");
    }
    predictions.insert(predictions.end(), prediction.begin(), prediction.end());
    truths.insert(truths.end(), truth.begin(), truth.end());
    provenance.push_back(ref);
}

void ForecastSet::validate() const {
    if (horizon == 0) throw std::invalid_argument("ForecastSet: horizon must be positive");
    if (provenance.empty()) throw std::invalid_argument("ForecastSet: no forecast pairs");
    if (predictions.size() != truths.size() || predictions.size() != provenance.size() * horizon) {
        throw std::invalid_argument("ForecastSet: prediction/truth/provenance counts disagree");
    }
}

namespace {

double sum_abs_truth(const ForecastSet& fs, const char* metric) {
    double s = 0.0;
    for (double y : fs.truths) s += std::abs(y);
    if (s == 0.0) throw std::domain_error(std::string(metric) + " is undefined when sum |y| = 0");
    return s;
}

double mean_squared_error(const ForecastSet& fs) {
    double s = 0.0;
    for (std::size_t i = 0; i < fs.truths.size(); ++i) {
        const double e = fs.truths[i] - fs.predictions[i];
        s += e * e;
    }
    return s / static_cast<double>(fs.truths.size());
}

double sum_abs_error(const ForecastSet& fs) {
    double s = 0.0;
    for (std::size_t i = 0; i < fs.truths.size(); ++i) s += std::abs(fs.truths[i] - fs.predictions[i]);
    return s;
}

}  // namespace

double rmse(const ForecastSet& fs) {
    fs.validate();
    return std::sqrt(mean_squared_error(fs));
}

double mae(const ForecastSet& fs) {
    fs.validate();
    return sum_abs_error(fs) / static_cast<double>(fs.truths.size());
}

double wrmspe(const ForecastSet& fs) {
    fs.validate();
    const double mean_abs = sum_abs_truth(fs, "wrmspe") / static_cast<double>(fs.truths.size());
    return std::sqrt(mean_squared_error(fs)) / mean_abs;
}

double wape(const ForecastSet& fs) {
    fs.validate();
    return sum_abs_error(fs) / sum_abs_truth(fs, "wape");
}

MetricSummary summarize(const ForecastSet& fs) { return {rmse(fs), wrmspe(fs), mae(fs), wape(fs)}; }

NaiveMode parse_naive_mode(std::string_view name) {
    if (name == "repeat_last") return NaiveMode::repeat_last;
    if (name == "seasonal") return NaiveMode::seasonal;
    throw std::invalid_argument("unknown naive mode '" + std::string(name) + "' (expected repeat_last|seasonal)");
}

std::optional<ForecastSet> naive_forecast(const MtsDataset& dataset, const WindowSpec& spec, SplitRange range,
                                          NaiveMode mode) {
    const std::size_t L = spec.input_length, tau = spec.horizon;
    if (mode == NaiveMode::seasonal && L < tau) return std::nullopt;
    ForecastSet fs(tau);
    std::vector<double> pred(tau), truth(tau);
    for (const auto& ref : make_windows(dataset, spec, range)) {
        const auto series = dataset.channel(ref.channel);
        for (std::size_t h = 0; h < tau; ++h) {
            pred[h] = mode == NaiveMode::repeat_last ? series[ref.start + L - 1] : series[ref.start + L - tau + h];
            truth[h] = series[ref.start + L + h];
        }
        fs.add(ref, pred, truth);
    }
    return fs;
}

LinearBaseline::LinearBaseline(std::size_t input_length, std::size_t horizon, std::uint64_t seed)
    : input_length_(input_length), horizon_(horizon) {
    if (input_length == 0 || horizon == 0) throw std::invalid_argument("LinearBaseline needs positive L and tau");
    Rng rng(mix_seed(seed, 0x11AEA));
    weight_ = nn::uniform_parameter({horizon, input_length}, input_length, rng);
    bias_ = nn::Tensor::zeros({horizon}, true);
}

namespace {

void normalized_window(const MtsDataset& dataset, const NormalizationState& normalizer, const WindowRef& ref,
                       std::size_t L, std::size_t tau, double* x, double* y) {
    const auto series = dataset.channel(ref.channel);
    for (std::size_t t = 0; t < L; ++t) x[t] = normalizer.normalize(ref.channel, series[ref.start + t]);
    if (y) {
        for (std::size_t h = 0; h < tau; ++h) y[h] = normalizer.normalize(ref.channel, series[ref.start + L + h]);
    }
}

}  // namespace

std::vector<double> LinearBaseline::fit(const MtsDataset& dataset, const NormalizationState& normalizer,
                                        const WindowSpec& spec, const LinearTrainOptions& options) {
    if (spec.input_length != input_length_ || spec.horizon != horizon_) {
        throw std::invalid_argument("LinearBaseline::fit: window spec does not match the model shape");
    }
    auto windows = make_windows(dataset, spec, SplitRange::train);
    nn::Adam adam({weight_, bias_}, options.learning_rate);
    std::vector<double> epoch_losses;
    const std::size_t L = input_length_, tau = horizon_;
    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        Rng rng(mix_seed(options.seed, epoch));
        shuffle(std::span<WindowRef>(windows), rng);
        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < windows.size(); begin += options.batch_size) {
            const std::size_t n = std::min(options.batch_size, windows.size() - begin);
            std::vector<double> x(n * L), y(n * tau);
            for (std::size_t i = 0; i < n; ++i) {
                normalized_window(dataset, normalizer, windows[begin + i], L, tau, &x[i * L], &y[i * tau]);
            }
            adam.zero_grad();
            const auto loss = nn::mse(nn::linear(nn::Tensor::from_data({n, L}, std::move(x)), weight_, bias_),
                                      nn::Tensor::from_data({n, tau}, std::move(y)));
            loss.backward();
            adam.step();
            loss_sum += loss.item() * static_cast<double>(n);
        }
        epoch_losses.push_back(loss_sum / static_cast<double>(windows.size()));
    }
    return epoch_losses;
}

std::vector<double> LinearBaseline::predict(std::span<const double> window) const {
    if (window.size() != input_length_) throw std::invalid_argument("LinearBaseline::predict: wrong input length");
    const auto w = weight_.data();
    const auto b = bias_.data();
    std::vector<double> out(horizon_);
    for (std::size_t h = 0; h < horizon_; ++h) {
        double s = b[h];
        for (std::size_t t = 0; t < input_length_; ++t) s += w[h * input_length_ + t] * window[t];
        out[h] = s;
    }
    return out;
}

ForecastSet linear_forecast(const MtsDataset& dataset, const WindowSpec& spec, const LinearTrainOptions& options,
                            SplitRange range) {
    const auto normalizer = fit_normalizer(dataset);
    LinearBaseline model(spec.input_length, spec.horizon, options.seed);
    model.fit(dataset, normalizer, spec, options);
    ForecastSet fs(spec.horizon);
    std::vector<double> x(spec.input_length), truth(spec.horizon);
    WindowSpec eval_spec = spec;
    eval_spec.stride = 1;
    for (const auto& ref : make_windows(dataset, eval_spec, range)) {
        normalized_window(dataset, normalizer, ref, spec.input_length, spec.horizon, x.data(), nullptr);
        auto pred = model.predict(x);
        const auto series = dataset.channel(ref.channel);
        for (std::size_t h = 0; h < spec.horizon; ++h) {
            pred[h] = normalizer.denormalize(ref.channel, pred[h]);
            truth[h] = series[ref.start + spec.input_length + h];
        }
        fs.add(ref, pred, truth);
    }
    return fs;
}

}  // namespace sthd
