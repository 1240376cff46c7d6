#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sthd/optim.hpp"
#include "sthd/reindex.hpp"
#include "sthd/tensor.hpp"

namespace sthd {

struct SthdConfig {
    std::size_t input_length = 48;  // L
    std::size_t horizon = 6;        // tau
    std::size_t k = 5;              // auxiliary slots; the channel table has 1+k rows
    std::size_t patch_len = 12;     // l
    std::size_t patch_stride = 6;   // s
    std::size_t d_model = 256;
    std::size_t heads = 4;
    std::size_t head_dim = 0;  // 0 means d_model / heads
    std::size_t encoder_layers = 2;
    std::size_t ff_dim = 384;
    std::size_t conv_kernel = 1;
    double dropout = 0.0;

    std::size_t num_patches() const;
    std::size_t resolved_head_dim() const;
    void validate() const;

    std::map<std::string, std::string> to_metadata() const;
    static SthdConfig from_metadata(const std::map<std::string, std::string>& meta);
};

/// P = floor((L - l) / s) + 2, counted after padding l copies of the last
/// value onto the window.
std::size_t patch_count(std::size_t input_length, std::size_t patch_len, std::size_t patch_stride);

/// inputs [b, L, C] -> patches [b, C, P, l]. Each channel is padded with l
/// copies of its final value and unfolded with window l and stride s.
nn::Tensor make_patches(const nn::Tensor& inputs, std::size_t patch_len, std::size_t patch_stride);

/// Sinusoidal table [P, D]: even columns sin(p / 10000^(2i/D)), odd cos.
nn::Tensor sinusoidal_table(std::size_t positions, std::size_t dim);

/// Attention maps recorded during encode, one [b, N, N] tensor per (layer, head).
struct AttentionTrace {
    std::vector<nn::Tensor> weights;
};

/// Patch embedding + temporal/channel encodings, joint time x channel
/// self-attention layers with a convolutional feedforward, and a flatten
/// decoder that reads channel slot 0 only.
class SthdModel {
public:
    SthdModel(SthdConfig config, std::uint64_t seed);

    const SthdConfig& config() const { return config_; }

    /// patches [b, C, P, l] -> tokens [b, C*P, D], channel-major token order.
    nn::Tensor encode(const nn::Tensor& patches, AttentionTrace* trace = nullptr,
                      Rng* dropout_rng = nullptr) const;

    /// tokens [b, C*P, D] -> forecast [b, tau].
    nn::Tensor decode(const nn::Tensor& encoded) const;

    /// inputs [b, L, C] -> forecast [b, tau]. Dropout is active only when a
    /// generator is passed.
    nn::Tensor forward(const nn::Tensor& inputs, Rng* dropout_rng = nullptr) const;

    nn::Tensor forward_loss(const Batch& batch, Rng* dropout_rng = nullptr) const;

    std::vector<nn::NamedParameter> parameters() const;
    std::vector<nn::Tensor> parameter_tensors() const;

    const nn::Tensor& temporal_encoding() const { return temporal_encoding_; }
    nn::Tensor& channel_encoding() { return channel_encoding_; }
    nn::Tensor& head_bias() { return head_b_; }

private:
    struct EncoderLayer {
        nn::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        nn::Tensor conv1_w, conv1_b, conv2_w, conv2_b;
        nn::Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    };

    nn::Tensor encoder_layer(const EncoderLayer& layer, const nn::Tensor& x, AttentionTrace* trace,
                             Rng* dropout_rng) const;

    SthdConfig config_;
    nn::Tensor patch_proj_;         // [D, l]
    nn::Tensor temporal_encoding_;  // [P, D], fixed
    nn::Tensor channel_encoding_;   // [1+k, D]
    std::vector<EncoderLayer> layers_;
    nn::Tensor flatten_w_, flatten_b_;  // [D, P*D], [D]
    nn::Tensor head_w_, head_b_;        // [tau, D], [tau]
};

}  // namespace sthd
