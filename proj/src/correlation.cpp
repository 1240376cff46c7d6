#include "sthd/correlation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace sthd {

namespace {

double clamp_unit(double r) { return std::clamp(r, -1.0, 1.0); }

bool is_constant(std::span<const double> x) {
    return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

void check_inputs(std::span<const double> values, std::size_t num_channels, std::size_t num_steps,
                  TimeSpan span) {
    if (values.size() != num_channels * num_steps) {
        throw std::invalid_argument("correlation input size does not match M*T");
    }
    if (span.end > num_steps || span.begin >= span.end) {
        throw std::invalid_argument("correlation span out of range");
    }
    if (span.length() < 3) {
        throw std::invalid_argument("correlation needs a range of at least 3 time steps, got " +
                                    std::to_string(span.length()));
    }
}

template <typename Fn>
void run_blocks(const std::vector<PairBlock>& blocks, Fn&& fn) {
    if (blocks.size() <= 1) {
        for (const auto& b : blocks) fn(b);
        return;
    }
    std::vector<std::jthread> threads;
    threads.reserve(blocks.size());
    for (const auto& b : blocks) threads.emplace_back([&fn, b] { fn(b); });
}

}  // namespace

std::vector<PairBlock> partition_pairs(std::size_t num_channels, std::size_t workers) {
    if (workers == 0) throw std::invalid_argument("workers must be positive");
    const std::size_t total = num_channels * (num_channels - 1) / 2;
    std::vector<PairBlock> blocks;
    if (total == 0) return blocks;
    workers = std::min(workers, num_channels - 1);

    std::size_t row = 0, done = 0;
    for (std::size_t w = 0; w < workers; ++w) {
        // Close this block once the running pair count reaches its share.
        const std::size_t target = total * (w + 1) / workers;
        PairBlock b{row, row, 0};
        while (row + 1 < num_channels && done < target) {
            const std::size_t row_pairs = num_channels - 1 - row;
            b.num_pairs += row_pairs;
            done += row_pairs;
            ++row;
        }
        b.row_end = row;
        if (b.num_pairs > 0) blocks.push_back(b);
    }
    return blocks;
}

CorrelationMatrix pearson_matrix(std::span<const double> values, std::size_t num_channels,
                                 std::size_t num_steps, TimeSpan span, std::size_t workers) {
    check_inputs(values, num_channels, num_steps, span);
    const std::size_t M = num_channels;
    const std::size_t n = span.length();

    // Centered copies of every channel, packed contiguously, plus their sums
    // of squares. Constant channels get ss = 0 and correlate with nothing.
    std::vector<double> centered(M * n);
    std::vector<double> ss(M, 0.0);
    std::vector<PairBlock> channel_blocks;
    {
        const std::size_t w = std::max<std::size_t>(1, std::min(workers, M));
        for (std::size_t b = 0; b < w; ++b) {
            const std::size_t lo = M * b / w, hi = M * (b + 1) / w;
            if (hi > lo) channel_blocks.push_back({lo, hi, 0});
        }
    }
    run_blocks(channel_blocks, [&](const PairBlock& blk) {
        for (std::size_t c = blk.row_begin; c < blk.row_end; ++c) {
            const auto x = values.subspan(c * num_steps + span.begin, n);
            double* out = centered.data() + c * n;
            if (is_constant(x)) {
                std::fill(out, out + n, 0.0);
                ss[c] = 0.0;
                continue;
            }
            double sum = 0.0;
            for (double v : x) sum += v;
            const double mean = sum / static_cast<double>(n);
            double acc = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                out[t] = x[t] - mean;
                acc += out[t] * out[t];
            }
            ss[c] = acc;
        }
    });

    CorrelationMatrix corr;
    corr.num_channels = M;
    corr.source_span = span;
    corr.gamma.assign(M * M, 0.0);
    for (std::size_t i = 0; i < M; ++i) corr.gamma[i * M + i] = ss[i] > 0.0 ? 1.0 : 0.0;

    auto finish = [&](std::size_t i, std::size_t j, double sxy) {
        double r = 0.0;
        if (ss[i] > 0.0 && ss[j] > 0.0) r = clamp_unit(sxy / std::sqrt(ss[i] * ss[j]));
        corr.gamma[i * M + j] = r;
        corr.gamma[j * M + i] = r;
    };

    run_blocks(partition_pairs(M, workers), [&](const PairBlock& blk) {
        for (std::size_t i = blk.row_begin; i < blk.row_end; ++i) {
            const double* a = centered.data() + i * n;
            std::size_t j = i + 1;
            // Four pairs at a time: independent accumulators, each one still a
            // plain t = 0..n-1 sum.
            for (; j + 4 <= M; j += 4) {
                const double* b0 = centered.data() + j * n;
                const double* b1 = b0 + n;
                const double* b2 = b1 + n;
                const double* b3 = b2 + n;
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    const double at = a[t];
                    s0 += at * b0[t];
                    s1 += at * b1[t];
                    s2 += at * b2[t];
                    s3 += at * b3[t];
                }
                finish(i, j, s0);
                finish(i, j + 1, s1);
                finish(i, j + 2, s2);
                finish(i, j + 3, s3);
            }
            for (; j < M; ++j) {
                const double* b = centered.data() + j * n;
                double s = 0.0;
                for (std::size_t t = 0; t < n; ++t) s += a[t] * b[t];
                finish(i, j, s);
            }
        }
    });
    return corr;
}

CorrelationMatrix pearson_matrix(const MtsDataset& dataset, SplitRange range, std::size_t workers) {
    return pearson_matrix(dataset.values(), dataset.num_channels(), dataset.num_steps(),
                          dataset.span(range), workers);
}

CorrelationMatrix pearson_matrix_reference(std::span<const double> values, std::size_t num_channels,
                                           std::size_t num_steps, TimeSpan span) {
    check_inputs(values, num_channels, num_steps, span);
    const std::size_t M = num_channels;
    const std::size_t n = span.length();
    CorrelationMatrix corr;
    corr.num_channels = M;
    corr.source_span = span;
    corr.gamma.assign(M * M, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        corr.gamma[i * M + i] = is_constant(values.subspan(i * num_steps + span.begin, n)) ? 0.0 : 1.0;
        for (std::size_t j = i + 1; j < M; ++j) {
            const auto x = values.subspan(i * num_steps + span.begin, n);
            const auto y = values.subspan(j * num_steps + span.begin, n);
            double r = 0.0;
            if (!is_constant(x) && !is_constant(y)) {
                double sum_x = 0.0, sum_y = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    sum_x += x[t];
                    sum_y += y[t];
                }
                const double mx = sum_x / static_cast<double>(n);
                const double my = sum_y / static_cast<double>(n);
                double sxy = 0.0, sxx = 0.0, syy = 0.0;
                for (std::size_t t = 0; t < n; ++t) {
                    const double dx = x[t] - mx;
                    const double dy = y[t] - my;
                    sxy += dx * dy;
                    sxx += dx * dx;
                    syy += dy * dy;
                }
                r = clamp_unit(sxy / std::sqrt(sxx * syy));
            }
            corr.gamma[i * M + j] = r;
            corr.gamma[j * M + i] = r;
        }
    }
    return corr;
}

ScoreMode parse_score_mode(std::string_view name) {
    if (name == "signed") return ScoreMode::signed_corr;
    if (name == "absolute" || name == "abs") return ScoreMode::absolute;
    throw std::invalid_argument("unknown score mode '" + std::string(name) +
                                "' (expected signed|absolute)");
}

std::string_view to_string(ScoreMode mode) {
    return mode == ScoreMode::absolute ? "absolute" : "signed";
}

namespace {

NeighborIndex select_neighbors(const CorrelationMatrix& corr, std::size_t k, ScoreMode score,
                               bool highest) {
    const std::size_t M = corr.num_channels;
    if (k >= M) {
        throw std::invalid_argument("K=" + std::to_string(k) + " must be smaller than M=" +
                                    std::to_string(M));
    }
    auto key = [&](std::size_t i, std::size_t j) {
        const double r = corr(i, j);
        return score == ScoreMode::absolute ? std::abs(r) : r;
    };
    std::vector<std::vector<Neighbor>> lists(M);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < M; ++i) {
        candidates.clear();
        for (std::size_t j = 0; j < M; ++j) {
            if (j != i) candidates.push_back(j);
        }
        auto before = [&](std::size_t a, std::size_t b) {
            const double ka = key(i, a), kb = key(i, b);
            if (ka != kb) return highest ? ka > kb : ka < kb;
            return a < b;
        };
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                          candidates.end(), before);
        auto& list = lists[i];
        list.reserve(k);
        for (std::size_t r = 0; r < k; ++r) list.push_back({candidates[r], corr(i, candidates[r])});
    }
    return NeighborIndex(k, std::move(lists));
}

}  // namespace

NeighborIndex top_k_neighbors(const CorrelationMatrix& corr, std::size_t k, ScoreMode score) {
    return select_neighbors(corr, k, score, true);
}

NeighborIndex bottom_k_neighbors(const CorrelationMatrix& corr, std::size_t k, ScoreMode score) {
    return select_neighbors(corr, k, score, false);
}

std::string correlation_to_csv(const CorrelationMatrix& corr,
                               const std::vector<std::string>& channel_ids) {
    if (channel_ids.size() != corr.num_channels) {
        throw std::invalid_argument("channel id count does not match correlation matrix");
    }
    std::ostringstream out;
    out.precision(17);
    out << "channel";
    for (const auto& id : channel_ids) out << ',' << id;
    out << '\n';
    for (std::size_t i = 0; i < corr.num_channels; ++i) {
        out << channel_ids[i];
        for (std::size_t j = 0; j < corr.num_channels; ++j) out << ',' << corr(i, j);
        out << '\n';
    }
    return out.str();
}

CorrelationBenchmark benchmark_correlation(const MtsDataset& dataset,
                                           const std::vector<std::size_t>& workers_list,
                                           SplitRange range, double tolerance) {
    using clock = std::chrono::steady_clock;
    auto seconds_since = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };
    CorrelationBenchmark report;
    report.num_channels = dataset.num_channels();
    const auto span = dataset.span(range);
    report.num_steps = span.length();

    auto t0 = clock::now();
    const auto reference = pearson_matrix_reference(dataset.values(), dataset.num_channels(),
                                                    dataset.num_steps(), span);
    report.reference_seconds = seconds_since(t0);

    std::vector<double> first_run;
    for (const auto workers : workers_list) {
        t0 = clock::now();
        auto corr = pearson_matrix(dataset, range, workers);
        const double elapsed = seconds_since(t0);
        for (std::size_t i = 0; i < corr.gamma.size(); ++i) {
            const double diff = std::abs(corr.gamma[i] - reference.gamma[i]);
            report.max_abs_diff = std::max(report.max_abs_diff, diff);
            if (!(diff <= tolerance)) {
                throw std::runtime_error("correlation engine (workers=" + std::to_string(workers) +
                                         ") disagrees with reference at entry " + std::to_string(i) +
                                         " by " + std::to_string(diff));
            }
        }
        if (first_run.empty()) {
            first_run = std::move(corr.gamma);
        } else if (first_run != corr.gamma) {
            throw std::runtime_error("correlation engine output depends on worker count (workers=" +
                                     std::to_string(workers) + ")");
        }
        report.runs.push_back({workers, elapsed, report.reference_seconds / elapsed});
    }
    report.verified = true;
    return report;
}

}  // namespace sthd
