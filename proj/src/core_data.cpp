#include "sthd/core_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "sthd/random.hpp"

namespace sthd {

SplitRange parse_split_range(std::string_view name) {
    if (name == "train") return SplitRange::train;
    if (name == "val" || name == "validation") return SplitRange::val;
    if (name == "test") return SplitRange::test;
    throw std::invalid_argument("unknown split range '" + std::string(name) + "'");
}

std::string_view to_string(SplitRange range) {
    switch (range) {
        case SplitRange::train: return "train";
        case SplitRange::val: return "val";
        case SplitRange::test: return "test";
    }
    return "?";
}

MtsDataset::MtsDataset(std::size_t num_channels, std::size_t num_steps, std::vector<double> values,
                       std::vector<std::string> channel_ids, std::size_t train_end,
                       std::size_t val_end, std::string frequency_label)
    : num_channels_(num_channels),
      num_steps_(num_steps),
      values_(std::move(values)),
      channel_ids_(std::move(channel_ids)),
      frequency_label_(std::move(frequency_label)),
      train_end_(train_end),
      val_end_(val_end) {
    if (num_channels_ < 1) throw std::invalid_argument("dataset needs at least one channel");
    if (num_steps_ < 2) throw std::invalid_argument("dataset needs at least two time steps");
    if (values_.size() != num_channels_ * num_steps_) {
        throw std::invalid_argument("dataset values size " + std::to_string(values_.size()) +
                                    " != M*T = " + std::to_string(num_channels_ * num_steps_));
    }
    if (channel_ids_.size() != num_channels_) {
        throw std::invalid_argument("expected " + std::to_string(num_channels_) +
                                    " channel ids, got " + std::to_string(channel_ids_.size()));
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : channel_ids_) {
        if (!seen.insert(id).second) throw std::invalid_argument("duplicate channel id '" + id + "'");
    }
    if (!(0 < train_end_ && train_end_ < val_end_ && val_end_ <= num_steps_)) {
        throw std::invalid_argument("invalid split (" + std::to_string(train_end_) + ", " +
                                    std::to_string(val_end_) + ") for T=" +
                                    std::to_string(num_steps_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw std::invalid_argument("non-finite value in channel '" +
                                        channel_ids_[i / num_steps_] + "' at t=" +
                                        std::to_string(i % num_steps_));
        }
    }
}

TimeSpan MtsDataset::span(SplitRange range) const {
    switch (range) {
        case SplitRange::train: return {0, train_end_};
        case SplitRange::val: return {train_end_, val_end_};
        case SplitRange::test: return {val_end_, num_steps_};
    }
    throw std::logic_error("bad split range");
}

std::pair<std::size_t, std::size_t> split_points(std::size_t num_steps,
                                                 std::pair<double, double> split_fractions) {
    const auto [f_train, f_val] = split_fractions;
    if (!(0.0 < f_train && f_train < f_train + f_val && f_train + f_val < 1.0)) {
        throw std::invalid_argument("split fractions must satisfy 0 < f_train < f_train + f_val < 1");
    }
    const auto n = static_cast<double>(num_steps);
    return {static_cast<std::size_t>(std::floor(f_train * n)),
            static_cast<std::size_t>(std::floor((f_train + f_val) * n))};
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const auto comma = line.find(',', pos);
        out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace

MtsDataset parse_csv(std::string_view text, std::pair<double, double> split_fractions) {
    std::vector<std::string_view> lines;
    {
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto nl = text.find('\n', pos);
            const auto line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
            lines.push_back(line);
            if (nl == std::string_view::npos) break;
            pos = nl + 1;
        }
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) throw std::invalid_argument("CSV is empty (no header row)");

    std::vector<std::string> ids;
    {
        std::unordered_set<std::string> seen;
        for (auto field : split_fields(lines[0])) {
            if (field.empty()) throw std::invalid_argument("CSV header has an empty channel id");
            std::string id(field);
            if (!seen.insert(id).second) {
                throw std::invalid_argument("CSV header has duplicate channel id '" + id + "'");
            }
            ids.push_back(std::move(id));
        }
    }
    const std::size_t num_channels = ids.size();
    const std::size_t num_steps = lines.size() - 1;

    // Read row-major, store channel-major.
    std::vector<double> values(num_channels * num_steps);
    for (std::size_t row = 0; row < num_steps; ++row) {
        const auto fields = split_fields(lines[row + 1]);
        if (fields.size() != num_channels) {
            throw std::invalid_argument("malformed CSV row " + std::to_string(row + 1) + ": expected " +
                                        std::to_string(num_channels) + " columns, got " +
                                        std::to_string(fields.size()));
        }
        for (std::size_t col = 0; col < num_channels; ++col) {
            const auto field = fields[col];
            double v = 0.0;
            const auto* end = field.data() + field.size();
            const auto [ptr, ec] = std::from_chars(field.data(), end, v);
            const auto where = "row " + std::to_string(row + 1) + ", column " + std::to_string(col + 1);
            if (field.empty() || ec != std::errc() || ptr != end) {
                throw std::invalid_argument("non-numeric cell '" + std::string(field) + "' at " + where);
            }
            if (!std::isfinite(v)) {
                throw std::invalid_argument("non-finite value '" + std::string(field) + "' at " + where);
            }
            values[col * num_steps + row] = v;
        }
    }
    if (num_steps < 2) throw std::invalid_argument("CSV needs at least two data rows");
    const auto [train_end, val_end] = split_points(num_steps, split_fractions);
    return MtsDataset(num_channels, num_steps, std::move(values), std::move(ids), train_end, val_end);
}

MtsDataset load_csv(const std::filesystem::path& path, std::pair<double, double> split_fractions) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open CSV file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), split_fractions);
}

std::string to_csv(const MtsDataset& dataset) {
    std::ostringstream out;
    out.precision(17);
    const auto& ids = dataset.channel_ids();
    for (std::size_t c = 0; c < ids.size(); ++c) out << (c ? "," : "") << ids[c];
    out << '\n';
    for (std::size_t t = 0; t < dataset.num_steps(); ++t) {
        for (std::size_t c = 0; c < dataset.num_channels(); ++c) {
            out << (c ? "," : "") << dataset.at(c, t);
        }
        out << '\n';
    }
    return out.str();
}

void write_csv(const MtsDataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write CSV file " + path.string());
    out << to_csv(dataset);
}

NormalizationState::NormalizationState(std::vector<double> mean, std::vector<double> stddev,
                                       double epsilon)
    : mean_(std::move(mean)), stddev_(std::move(stddev)), epsilon_(epsilon) {
    if (mean_.size() != stddev_.size()) throw std::invalid_argument("mean/std length mismatch");
    if (!(epsilon_ > 0.0)) throw std::invalid_argument("normalization epsilon must be positive");
}

double NormalizationState::scale(std::size_t channel) const {
    return std::max(stddev_[channel], epsilon_);
}

NormalizationState fit_normalizer(const MtsDataset& dataset, double epsilon) {
    const std::size_t n = dataset.train_end();
    if (n < 2) throw std::invalid_argument("fit_normalizer needs at least two training steps");
    std::vector<double> mean(dataset.num_channels()), stddev(dataset.num_channels());
    for (std::size_t c = 0; c < dataset.num_channels(); ++c) {
        const auto x = dataset.channel(c).first(n);
        double sum = 0.0;
        for (double v : x) sum += v;
        const double mu = sum / static_cast<double>(n);
        double ss = 0.0;
        for (double v : x) ss += (v - mu) * (v - mu);
        mean[c] = mu;
        stddev[c] = std::sqrt(ss / static_cast<double>(n));
    }
    return NormalizationState(std::move(mean), std::move(stddev), epsilon);
}

std::size_t windows_per_channel(std::size_t range_length, const WindowSpec& spec) {
    const std::size_t need = spec.input_length + spec.horizon;
    if (range_length < need) return 0;
    return (range_length - need) / spec.stride + 1;
}

std::vector<WindowRef> make_windows(const MtsDataset& dataset, const WindowSpec& spec,
                                    SplitRange range) {
    if (spec.input_length == 0 || spec.horizon == 0 || spec.stride == 0) {
        throw std::invalid_argument("window spec needs positive L, tau and stride");
    }
    const auto span = dataset.span(range);
    const auto per_channel = windows_per_channel(span.length(), spec);
    if (per_channel == 0) {
        throw std::invalid_argument("range '" + std::string(to_string(range)) + "' has " +
                                    std::to_string(span.length()) + " steps, need at least L + tau = " +
                                    std::to_string(spec.input_length + spec.horizon));
    }
    std::vector<WindowRef> out;
    out.reserve(per_channel * dataset.num_channels());
    for (std::size_t c = 0; c < dataset.num_channels(); ++c) {
        for (std::size_t w = 0; w < per_channel; ++w) out.push_back({c, span.begin + w * spec.stride});
    }
    return out;
}

Sample assemble_sample(const MtsDataset& dataset, const NeighborIndex& neighbors,
                       const NormalizationState& normalizer, std::size_t target_channel,
                       std::size_t window_start, const WindowSpec& spec) {
    if (target_channel >= dataset.num_channels()) {
        throw std::out_of_range("target channel " + std::to_string(target_channel) + " out of range");
    }
    if (window_start + spec.input_length + spec.horizon > dataset.num_steps()) {
        throw std::out_of_range("window starting at " + std::to_string(window_start) +
                                " runs past the end of the series");
    }
    if (target_channel >= neighbors.num_channels()) {
        throw std::invalid_argument("neighbor index has no entry for channel " +
                                    std::to_string(target_channel));
    }
    const auto& list = neighbors.of(target_channel);
    if (list.size() != neighbors.k()) {
        throw std::invalid_argument("neighbor entry for channel " + std::to_string(target_channel) +
                                    " has " + std::to_string(list.size()) + " neighbors, expected K=" +
                                    std::to_string(neighbors.k()));
    }

    Sample s;
    s.input_length = spec.input_length;
    s.width = 1 + list.size();
    s.target_channel = target_channel;
    s.window_start = window_start;
    s.inputs.resize(s.input_length * s.width);

    std::vector<std::size_t> columns{target_channel};
    for (const auto& n : list) columns.push_back(n.channel);
    for (std::size_t col = 0; col < columns.size(); ++col) {
        const auto ch = columns[col];
        for (std::size_t t = 0; t < spec.input_length; ++t) {
            s.inputs[t * s.width + col] = normalizer.normalize(ch, dataset.at(ch, window_start + t));
        }
    }
    s.target_horizon.resize(spec.horizon);
    for (std::size_t h = 0; h < spec.horizon; ++h) {
        s.target_horizon[h] = normalizer.normalize(
            target_channel, dataset.at(target_channel, window_start + spec.input_length + h));
    }
    return s;
}

std::size_t synthetic_group_of(const SyntheticSpec& spec, std::size_t channel) {
    return channel * spec.num_groups / spec.num_channels;
}

namespace {

constexpr std::size_t kComponents = 4;

// Sum of sinusoids with random periods, phases and amplitudes, scaled to unit
// variance. Drawn from its own seeded stream so a latent does not depend on
// how many other latents were generated before it.
struct PeriodicLatent {
    double period[kComponents];
    double phase[kComponents];
    double amplitude[kComponents];

    explicit PeriodicLatent(std::uint64_t seed) {
        Rng rng(seed);
        double power = 0.0;
        for (std::size_t k = 0; k < kComponents; ++k) {
            period[k] = uniform(rng, 4.0, 48.0);
            phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            amplitude[k] = uniform(rng, 0.3, 1.0);
            power += 0.5 * amplitude[k] * amplitude[k];
        }
        for (auto& a : amplitude) a /= std::sqrt(power);
    }

    double operator()(double t) const {
        double v = 0.0;
        for (std::size_t k = 0; k < kComponents; ++k) {
            v += amplitude[k] * std::sin(2.0 * std::numbers::pi * t / period[k] + phase[k]);
        }
        return v;
    }
};

}  // namespace

MtsDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_channels < 1 || spec.num_groups < 1 || spec.num_groups > spec.num_channels) {
        throw std::invalid_argument("synthetic spec needs 1 <= num_groups <= M");
    }
    if (!(spec.intra_group_coupling > 0.0 && spec.intra_group_coupling <= 1.0)) {
        throw std::invalid_argument("intra_group_coupling must lie in (0, 1]");
    }
    if (!(spec.noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");

    const std::size_t M = spec.num_channels;
    const std::size_t T = spec.num_steps;
    const double coupling = spec.intra_group_coupling;

    std::vector<PeriodicLatent> group_latents;
    for (std::size_t g = 0; g < spec.num_groups; ++g) {
        group_latents.emplace_back(mix_seed(spec.seed, 0x1000 + g));
    }

    std::vector<double> values(M * T);
    std::vector<std::string> ids;
    std::vector<std::size_t> group_first(spec.num_groups, M);
    for (std::size_t c = 0; c < M; ++c) {
        const auto g = synthetic_group_of(spec, c);
        group_first[g] = std::min(group_first[g], c);
    }
    for (std::size_t c = 0; c < M; ++c) {
        const auto g = synthetic_group_of(spec, c);
        const std::size_t rank_in_group = c - group_first[g];
        const double shift = static_cast<double>((rank_in_group % 2) * spec.lag);
        const PeriodicLatent own(mix_seed(spec.seed, 0x200000 + c));
        Rng noise(mix_seed(spec.seed, 0x300000 + c));
        for (std::size_t t = 0; t < T; ++t) {
            const double td = static_cast<double>(t);
            double v = coupling * group_latents[g](td - shift);
            if (coupling < 1.0) v += (1.0 - coupling) * own(td);
            if (spec.noise_std > 0.0) v += spec.noise_std * standard_normal(noise);
            values[c * T + t] = v;
        }
        ids.push_back("g" + std::to_string(g) + "_s" + std::to_string(c));
    }
    const auto [train_end, val_end] = split_points(T, spec.split_fractions);
    return MtsDataset(M, T, std::move(values), std::move(ids), train_end, val_end, "synthetic");
}

}  // namespace sthd
