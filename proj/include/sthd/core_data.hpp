#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sthd/neighbor_index.hpp"

namespace sthd {

enum class SplitRange { train, val, test };

SplitRange parse_split_range(std::string_view name);
std::string_view to_string(SplitRange range);

/// Half-open time span [begin, end).
struct TimeSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t length() const { return end - begin; }
};

/// M channels x T time points, stored channel-major, with chronological
/// split boundaries: train = [0, train_end), val = [train_end, val_end),
/// test = [val_end, T).
class MtsDataset {
public:
    MtsDataset(std::size_t num_channels, std::size_t num_steps, std::vector<double> values,
               std::vector<std::string> channel_ids, std::size_t train_end, std::size_t val_end,
               std::string frequency_label = "unknown");

    std::size_t num_channels() const { return num_channels_; }
    std::size_t num_steps() const { return num_steps_; }

    double at(std::size_t channel, std::size_t t) const {
        return values_[channel * num_steps_ + t];
    }
    std::span<const double> channel(std::size_t c) const {
        return {values_.data() + c * num_steps_, num_steps_};
    }
    std::span<const double> values() const { return values_; }

    const std::vector<std::string>& channel_ids() const { return channel_ids_; }
    const std::string& frequency_label() const { return frequency_label_; }
    std::size_t train_end() const { return train_end_; }
    std::size_t val_end() const { return val_end_; }
    TimeSpan span(SplitRange range) const;

    bool operator==(const MtsDataset&) const = default;

private:
    std::size_t num_channels_;
    std::size_t num_steps_;
    std::vector<double> values_;
    std::vector<std::string> channel_ids_;
    std::string frequency_label_;
    std::size_t train_end_;
    std::size_t val_end_;
};

/// Reads a CSV with a header row of channel ids and one row per time step.
/// Rows and columns in error messages are 1-based data coordinates (the
/// header is not counted).
MtsDataset load_csv(const std::filesystem::path& path, std::pair<double, double> split_fractions);
MtsDataset parse_csv(std::string_view text, std::pair<double, double> split_fractions);

void write_csv(const MtsDataset& dataset, const std::filesystem::path& path);
std::string to_csv(const MtsDataset& dataset);

/// Split indices for T time points: (floor(f_train*T), floor((f_train+f_val)*T)).
std::pair<std::size_t, std::size_t> split_points(std::size_t num_steps,
                                                 std::pair<double, double> split_fractions);

class NormalizationState {
public:
    static constexpr double default_epsilon = 1e-8;

    NormalizationState(std::vector<double> mean, std::vector<double> stddev,
                       double epsilon = default_epsilon);

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& stddev() const { return stddev_; }
    double epsilon() const { return epsilon_; }

    double scale(std::size_t channel) const;
    double normalize(std::size_t channel, double x) const {
        return (x - mean_[channel]) / scale(channel);
    }
    double denormalize(std::size_t channel, double z) const {
        return z * scale(channel) + mean_[channel];
    }

private:
    std::vector<double> mean_;
    std::vector<double> stddev_;
    double epsilon_;
};

/// Per-channel z-score statistics (population std) over the training range.
NormalizationState fit_normalizer(const MtsDataset& dataset,
                                  double epsilon = NormalizationState::default_epsilon);

struct WindowSpec {
    std::size_t input_length = 48;  // L
    std::size_t horizon = 6;        // tau
    std::size_t stride = 1;
};

struct WindowRef {
    std::size_t channel = 0;
    std::size_t start = 0;

    auto operator<=>(const WindowRef&) const = default;
};

std::size_t windows_per_channel(std::size_t range_length, const WindowSpec& spec);

/// Every (channel, start) whose span [start, start+L+tau) lies inside the
/// range, channel-major, starts ascending.
std::vector<WindowRef> make_windows(const MtsDataset& dataset, const WindowSpec& spec,
                                    SplitRange range);

/// inputs is row-major L x (1+K): column 0 the target, columns 1..K the
/// neighbors in rank order. All values normalized per their own channel.
struct Sample {
    std::size_t input_length = 0;
    std::size_t width = 0;  // 1 + K
    std::vector<double> inputs;
    std::vector<double> target_horizon;
    std::size_t target_channel = 0;
    std::size_t window_start = 0;

    double input(std::size_t t, std::size_t column) const { return inputs[t * width + column]; }
};

Sample assemble_sample(const MtsDataset& dataset, const NeighborIndex& neighbors,
                       const NormalizationState& normalizer, std::size_t target_channel,
                       std::size_t window_start, const WindowSpec& spec);

struct SyntheticSpec {
    std::size_t num_channels = 20;
    std::size_t num_steps = 400;
    std::size_t num_groups = 2;
    double intra_group_coupling = 0.9;
    double noise_std = 0.5;
    std::size_t lag = 0;
    std::uint64_t seed = 0;
    std::pair<double, double> split_fractions{0.6, 0.2};
};

/// Channels are laid out in contiguous group blocks.
std::size_t synthetic_group_of(const SyntheticSpec& spec, std::size_t channel);

/// Each group g has a latent z_g: a sum of sinusoids with random periods in
/// [4, 48), phases and amplitudes, scaled to unit variance. Channel c with
/// in-group position r follows
///   x_c(t) = coupling * z_g(t - (r % 2) * lag) + (1 - coupling) * u_c(t)
///            + noise_std * eps_c(t)
/// where u_c is an independent latent of the same family and eps_c is
/// standard white noise. Pure function of `spec`.
MtsDataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace sthd
