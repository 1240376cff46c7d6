#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sthd/tensor.hpp"

namespace sthd::nn {

struct NamedParameter {
    std::string name;
    Tensor tensor;
};

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

/// Adam with bias correction.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double learning_rate = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double epsilon = 1e-8);

    /// Throws if any parameter has never received a gradient.
    void step();
    void zero_grad();
    void set_learning_rate(double learning_rate) { state_.learning_rate = learning_rate; }

    const AdamState& state() const { return state_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamState state_;
};

void zero_grads(const std::vector<NamedParameter>& params);
std::size_t parameter_count(const std::vector<NamedParameter>& params);

// Checkpoint binary layout (all integers unsigned little-endian, values IEEE-754
// binary64 little-endian):
//   magic   8 bytes  "STHDCKPT"
//   version u32      1
//   count   u64      number of parameters
//   per parameter, in order:
//     name_len u32, name bytes (UTF-8)
//     rank u32, dims u64 x rank
//     values f64 x prod(dims)
// The text manifest next to it lists `key = value` metadata lines followed by
// one `param <name> <shape> <byte offset of first value>` line per parameter.

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

std::string encode_checkpoint(const std::vector<NamedParameter>& params);
std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes);

std::string checkpoint_manifest(const std::vector<NamedParameter>& params,
                                const std::map<std::string, std::string>& metadata);
std::map<std::string, std::string> parse_manifest_metadata(const std::string& text);

/// Writes `<stem>.bin` and `<stem>.manifest`.
void save_checkpoint(const std::filesystem::path& stem, const std::vector<NamedParameter>& params,
                     const std::map<std::string, std::string>& metadata);

/// Copies stored values into `params`; names and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& stem, const std::vector<NamedParameter>& params);
void restore_parameters(const std::vector<CheckpointEntry>& entries,
                        const std::vector<NamedParameter>& params);

}  // namespace sthd::nn
