#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace sthd {

struct Neighbor {
    std::size_t channel = 0;
    double correlation = 0.0;

    bool operator==(const Neighbor&) const = default;
};

/// For every channel, exactly K other channels in rank order (slot 1..K of a
/// sample). Built by top_k_neighbors / bottom_k_neighbors or parsed from text.
class NeighborIndex {
public:
    NeighborIndex() = default;
    NeighborIndex(std::size_t k, std::vector<std::vector<Neighbor>> lists);

    /// K = 0 index over M channels (no auxiliary series).
    static NeighborIndex empty(std::size_t num_channels);

    std::size_t k() const { return k_; }
    std::size_t num_channels() const { return lists_.size(); }
    const std::vector<Neighbor>& of(std::size_t channel) const;

    bool operator==(const NeighborIndex&) const = default;

    /// One line per channel: `id: id1=corr1, id2=corr2`.
    std::string to_text(const std::vector<std::string>& channel_ids) const;
    static NeighborIndex from_text(std::string_view text,
                                   const std::vector<std::string>& channel_ids);

private:
    std::size_t k_ = 0;
    std::vector<std::vector<Neighbor>> lists_;
};

}  // namespace sthd
