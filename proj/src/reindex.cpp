#include "sthd/reindex.hpp"

#include <stdexcept>

#include "sthd/random.hpp"

namespace sthd {

std::uint64_t epoch_seed(std::uint64_t base_seed, std::uint64_t epoch) {
    return mix_seed(base_seed, epoch);
}

SampleIndex build_index(const MtsDataset& dataset, const WindowSpec& spec, SplitRange range,
                        std::uint64_t base_seed, std::uint64_t epoch) {
    SampleIndex index;
    index.entries = make_windows(dataset, spec, range);
    index.epoch_seed = epoch_seed(base_seed, epoch);
    if (range == SplitRange::train) {
        Rng rng(index.epoch_seed);
        shuffle(std::span<WindowRef>(index.entries), rng);
        index.shuffled = true;
    }
    return index;
}

SampleAssembler make_assembler(const MtsDataset& dataset, const NeighborIndex& neighbors,
                               const NormalizationState& normalizer, const WindowSpec& spec) {
    return [&dataset, &neighbors, &normalizer, spec](const WindowRef& ref) {
        return assemble_sample(dataset, neighbors, normalizer, ref.channel, ref.start, spec);
    };
}

Batch make_batch(const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
    const std::size_t L = samples[0].input_length;
    const std::size_t width = samples[0].width;
    const std::size_t tau = samples[0].target_horizon.size();
    std::vector<double> inputs, targets;
    inputs.reserve(samples.size() * L * width);
    targets.reserve(samples.size() * tau);
    Batch batch;
    for (const auto& s : samples) {
        if (s.input_length != L || s.width != width || s.target_horizon.size() != tau) {
            throw std::invalid_argument("make_batch: samples have inconsistent shapes");
        }
        inputs.insert(inputs.end(), s.inputs.begin(), s.inputs.end());
        targets.insert(targets.end(), s.target_horizon.begin(), s.target_horizon.end());
        batch.provenance.push_back({s.target_channel, s.window_start});
    }
    batch.inputs = nn::Tensor::from_data({samples.size(), L, width}, std::move(inputs));
    batch.targets = nn::Tensor::from_data({samples.size(), tau}, std::move(targets));
    return batch;
}

std::optional<Batch> next_batch(const SampleIndex& index, std::size_t& cursor, std::size_t batch_size,
                                const SampleAssembler& assembler, bool drop_last) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (cursor >= index.entries.size()) return std::nullopt;
    const std::size_t take = std::min(batch_size, index.entries.size() - cursor);
    if (drop_last && take < batch_size) {
        cursor = index.entries.size();
        return std::nullopt;
    }
    std::vector<Sample> samples;
    samples.reserve(take);
    for (std::size_t i = 0; i < take; ++i) samples.push_back(assembler(index.entries[cursor + i]));
    cursor += take;
    return make_batch(samples);
}

std::size_t legacy_batch_elements(std::size_t num_channels, std::size_t batch_size, std::size_t k,
                                  std::size_t input_length) {
    return batch_size * num_channels * (1 + k) * input_length;
}

std::size_t reindex_batch_elements(std::size_t batch_size, std::size_t k, std::size_t input_length) {
    return batch_size * (1 + k) * input_length;
}

LegacyIndex build_legacy_index(const MtsDataset& dataset, const WindowSpec& spec, SplitRange range,
                               std::uint64_t base_seed, std::uint64_t epoch) {
    const auto windows = make_windows(dataset, spec, range);
    LegacyIndex index;
    index.num_channels = dataset.num_channels();
    for (const auto& w : windows) {
        if (w.channel != 0) break;
        index.starts.push_back(w.start);
    }
    if (range == SplitRange::train) {
        Rng rng(epoch_seed(base_seed, epoch));
        shuffle(std::span<std::size_t>(index.starts), rng);
    }
    return index;
}

std::optional<Batch> next_legacy_batch(const LegacyIndex& index, std::size_t& cursor,
                                       std::size_t batch_size, const SampleAssembler& assembler,
                                       bool drop_last) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (cursor >= index.starts.size()) return std::nullopt;
    const std::size_t take = std::min(batch_size, index.starts.size() - cursor);
    if (drop_last && take < batch_size) {
        cursor = index.starts.size();
        return std::nullopt;
    }
    std::vector<Sample> samples;
    samples.reserve(take * index.num_channels);
    for (std::size_t i = 0; i < take; ++i) {
        for (std::size_t c = 0; c < index.num_channels; ++c) {
            samples.push_back(assembler({c, index.starts[cursor + i]}));
        }
    }
    cursor += take;
    return make_batch(samples);
}

}  // namespace sthd
