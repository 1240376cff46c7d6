#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "sthd/core_data.hpp"
#include "sthd/tensor.hpp"

namespace sthd {

/// The M x S window grid flattened into one sample axis. Training indices are
/// a seeded permutation (a pure function of base seed and epoch); validation
/// and test indices keep enumeration order.
struct SampleIndex {
    std::vector<WindowRef> entries;
    std::uint64_t epoch_seed = 0;
    bool shuffled = false;
};

std::uint64_t epoch_seed(std::uint64_t base_seed, std::uint64_t epoch);

SampleIndex build_index(const MtsDataset& dataset, const WindowSpec& spec, SplitRange range,
                        std::uint64_t base_seed, std::uint64_t epoch);

/// inputs [b, L, 1+K], targets [b, tau].
struct Batch {
    nn::Tensor inputs;
    nn::Tensor targets;
    std::vector<WindowRef> provenance;

    std::size_t size() const { return provenance.size(); }
};

using SampleAssembler = std::function<Sample(const WindowRef&)>;

/// Binds the pieces assemble_sample needs.
SampleAssembler make_assembler(const MtsDataset& dataset, const NeighborIndex& neighbors,
                               const NormalizationState& normalizer, const WindowSpec& spec);

Batch make_batch(const std::vector<Sample>& samples);

/// Assembles the next min(b, remaining) entries starting at `cursor` and
/// advances it. Returns nullopt at the end of the epoch, and also for a short
/// trailing batch when drop_last is set.
std::optional<Batch> next_batch(const SampleIndex& index, std::size_t& cursor, std::size_t batch_size,
                                const SampleAssembler& assembler, bool drop_last = false);

/// Element count of one batch when batches are drawn along the window axis
/// only, so each batch carries every channel: b * M * (1+K) * L.
std::size_t legacy_batch_elements(std::size_t num_channels, std::size_t batch_size, std::size_t k,
                                  std::size_t input_length);

/// Element count of one ReIndex batch: b * (1+K) * L.
std::size_t reindex_batch_elements(std::size_t batch_size, std::size_t k, std::size_t input_length);

/// Batching without ReIndex: shuffled window starts, and every batch holds
/// `batch_size` starts times all M channels.
struct LegacyIndex {
    std::vector<std::size_t> starts;
    std::size_t num_channels = 0;
};

LegacyIndex build_legacy_index(const MtsDataset& dataset, const WindowSpec& spec, SplitRange range,
                               std::uint64_t base_seed, std::uint64_t epoch);

std::optional<Batch> next_legacy_batch(const LegacyIndex& index, std::size_t& cursor,
                                       std::size_t batch_size, const SampleAssembler& assembler,
                                       bool drop_last = false);

}  // namespace sthd
