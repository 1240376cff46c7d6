#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sthd/core_data.hpp"
#include "sthd/neighbor_index.hpp"

namespace sthd {

/// Symmetric M x M Pearson matrix over one time span. Pairs involving a
/// zero-variance channel are 0, including that channel's diagonal entry.
struct CorrelationMatrix {
    std::size_t num_channels = 0;
    TimeSpan source_span;
    std::vector<double> gamma;  // row-major

    double operator()(std::size_t i, std::size_t j) const { return gamma[i * num_channels + j]; }
    std::span<const double> row(std::size_t i) const {
        return {gamma.data() + i * num_channels, num_channels};
    }
};

/// Contiguous block of the upper-triangle pair enumeration (i < j, row-major),
/// expressed as the rows [row_begin, row_end) it covers.
struct PairBlock {
    std::size_t row_begin = 0;
    std::size_t row_end = 0;
    std::size_t num_pairs = 0;
};

/// Splits rows into at most `workers` blocks with near-equal pair counts.
std::vector<PairBlock> partition_pairs(std::size_t num_channels, std::size_t workers);

/// Parallel engine: channels are centered once, then each unordered pair is
/// reduced by a fixed left-to-right sum over time, so the result does not
/// depend on `workers`.
CorrelationMatrix pearson_matrix(const MtsDataset& dataset, SplitRange range, std::size_t workers);
CorrelationMatrix pearson_matrix(std::span<const double> values, std::size_t num_channels,
                                 std::size_t num_steps, TimeSpan span, std::size_t workers);

/// Serial two-loop reference that recomputes every statistic per pair.
CorrelationMatrix pearson_matrix_reference(std::span<const double> values, std::size_t num_channels,
                                           std::size_t num_steps, TimeSpan span);

enum class ScoreMode { signed_corr, absolute };

ScoreMode parse_score_mode(std::string_view name);
std::string_view to_string(ScoreMode mode);

/// The K highest-scoring other channels per row, ties broken by ascending
/// channel index. Requires K < M.
NeighborIndex top_k_neighbors(const CorrelationMatrix& corr, std::size_t k,
                              ScoreMode score = ScoreMode::signed_corr);

/// The K lowest-scoring other channels per row, listed lowest first (ties by
/// ascending channel index). Used for the unrelated-series ablation.
NeighborIndex bottom_k_neighbors(const CorrelationMatrix& corr, std::size_t k,
                                 ScoreMode score = ScoreMode::signed_corr);

std::string correlation_to_csv(const CorrelationMatrix& corr,
                               const std::vector<std::string>& channel_ids);

struct CorrelationBenchmark {
    std::size_t num_channels = 0;
    std::size_t num_steps = 0;
    double reference_seconds = 0.0;
    struct Run {
        std::size_t workers = 0;
        double seconds = 0.0;
        double speedup = 0.0;
    };
    std::vector<Run> runs;
    double max_abs_diff = 0.0;
    bool verified = false;
};

/// Times the serial reference and the engine at each worker count. Throws if
/// any engine result differs from the reference by more than `tolerance` or
/// if engine runs differ from each other at all.
CorrelationBenchmark benchmark_correlation(const MtsDataset& dataset,
                                           const std::vector<std::size_t>& workers_list,
                                           SplitRange range = SplitRange::train,
                                           double tolerance = 1e-10);

}  // namespace sthd
