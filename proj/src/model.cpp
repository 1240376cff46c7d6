#include "sthd/model.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace sthd {

using nn::Tensor;

std::size_t patch_count(std::size_t input_length, std::size_t patch_len, std::size_t patch_stride) {
    if (input_length == 0 || patch_len == 0 || patch_stride == 0) {
        throw std::invalid_argument("patch_count needs positive L, l and s");
    }
    // The padded series has L + l points, so a patch fits at every multiple of
    // s up to L; the (L - l) < 0 case still yields the +2 trailing patches
    // through floor division on signed values.
    const auto diff = static_cast<std::ptrdiff_t>(input_length) - static_cast<std::ptrdiff_t>(patch_len);
    const auto s = static_cast<std::ptrdiff_t>(patch_stride);
    const std::ptrdiff_t q = diff >= 0 ? diff / s : -((-diff + s - 1) / s);
    const std::ptrdiff_t p = q + 2;
    if (p < 1) {
        throw std::invalid_argument("patch length " + std::to_string(patch_len) + " leaves no patches for L=" +
                                    std::to_string(input_length));
    }
    return static_cast<std::size_t>(p);
}

std::size_t SthdConfig::num_patches() const { return patch_count(input_length, patch_len, patch_stride); }

std::size_t SthdConfig::resolved_head_dim() const { return head_dim == 0 ? d_model / heads : head_dim; }

void SthdConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
    };
    positive(input_length, "input_length");
    positive(horizon, "horizon");
    positive(patch_len, "patch_len");
    positive(patch_stride, "patch_stride");
    positive(d_model, "d_model");
    positive(heads, "heads");
    positive(encoder_layers, "encoder_layers");
    positive(ff_dim, "ff_dim");
    if (head_dim == 0 && d_model % heads != 0) {
        throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    if (conv_kernel % 2 == 0) throw std::invalid_argument("model config: conv_kernel must be odd");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must lie in [0, 1)");
    (void)num_patches();
}

std::map<std::string, std::string> SthdConfig::to_metadata() const {
    std::map<std::string, std::string> m;
    m["model.input_length"] = std::to_string(input_length);
    m["model.horizon"] = std::to_string(horizon);
    m["model.k"] = std::to_string(k);
    m["model.patch_len"] = std::to_string(patch_len);
    m["model.patch_stride"] = std::to_string(patch_stride);
    m["model.d_model"] = std::to_string(d_model);
    m["model.heads"] = std::to_string(heads);
    m["model.head_dim"] = std::to_string(resolved_head_dim());
    m["model.encoder_layers"] = std::to_string(encoder_layers);
    m["model.ff_dim"] = std::to_string(ff_dim);
    m["model.conv_kernel"] = std::to_string(conv_kernel);
    char buf[40];
    const auto r = std::to_chars(buf, buf + sizeof(buf), dropout);
    m["model.dropout"] = std::string(buf, r.ptr);
    return m;
}

SthdConfig SthdConfig::from_metadata(const std::map<std::string, std::string>& meta) {
    auto get = [&](const std::string& key) -> const std::string& {
        const auto it = meta.find("model." + key);
        if (it == meta.end()) throw std::runtime_error("manifest is missing model." + key);
        return it->second;
    };
    auto num = [&](const std::string& key) { return static_cast<std::size_t>(std::stoull(get(key))); };
    SthdConfig c;
    c.input_length = num("input_length");
    c.horizon = num("horizon");
    c.k = num("k");
    c.patch_len = num("patch_len");
    c.patch_stride = num("patch_stride");
    c.d_model = num("d_model");
    c.heads = num("heads");
    c.head_dim = num("head_dim");
    c.encoder_layers = num("encoder_layers");
    c.ff_dim = num("ff_dim");
    c.conv_kernel = num("conv_kernel");
    c.dropout = std::stod(get("dropout"));
    c.validate();
    return c;
}

Tensor make_patches(const Tensor& inputs, std::size_t patch_len, std::size_t patch_stride) {
    if (inputs.rank() != 3) {
        throw std::invalid_argument("make_patches: inputs must be [b, L, C], got " +
                                    nn::shape_to_string(inputs.shape()));
    }
    const std::size_t b = inputs.dim(0), L = inputs.dim(1), C = inputs.dim(2);
    const std::size_t P = patch_count(L, patch_len, patch_stride);
    std::vector<std::size_t> idx;
    idx.reserve(b * C * P * patch_len);
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t p = 0; p < P; ++p) {
                for (std::size_t j = 0; j < patch_len; ++j) {
                    // Positions past the window read the repeated last value.
                    const std::size_t t = std::min(p * patch_stride + j, L - 1);
                    idx.push_back((s * L + t) * C + c);
                }
            }
        }
    }
    return nn::gather(inputs, std::move(idx), {b, C, P, patch_len});
}

Tensor sinusoidal_table(std::size_t positions, std::size_t dim) {
    std::vector<double> table(positions * dim);
    for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
            const double angle = static_cast<double>(p) * freq;
            table[p * dim + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from_data({positions, dim}, std::move(table));
}

SthdModel::SthdModel(SthdConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(mix_seed(seed, 0x5748D));
    const std::size_t D = config_.d_model;
    const std::size_t HD = config_.heads * config_.resolved_head_dim();
    const std::size_t P = config_.num_patches();
    const std::size_t ks = config_.conv_kernel;

    patch_proj_ = nn::uniform_parameter({D, config_.patch_len}, config_.patch_len, rng);
    temporal_encoding_ = sinusoidal_table(P, D);
    channel_encoding_ = nn::uniform_parameter({1 + config_.k, D}, D, rng);
    auto zeros = [](std::size_t n) { return Tensor::zeros({n}, true); };
    auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0, true); };
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
        EncoderLayer layer;
        layer.wq = nn::uniform_parameter({HD, D}, D, rng);
        layer.bq = zeros(HD);
        layer.wk = nn::uniform_parameter({HD, D}, D, rng);
        layer.bk = zeros(HD);
        layer.wv = nn::uniform_parameter({HD, D}, D, rng);
        layer.bv = zeros(HD);
        layer.wo = nn::uniform_parameter({D, HD}, HD, rng);
        layer.bo = zeros(D);
        layer.conv1_w = nn::uniform_parameter({config_.ff_dim, D, ks}, D * ks, rng);
        layer.conv1_b = zeros(config_.ff_dim);
        layer.conv2_w = nn::uniform_parameter({D, config_.ff_dim, ks}, config_.ff_dim * ks, rng);
        layer.conv2_b = zeros(D);
        layer.ln1_gain = ones(D);
        layer.ln1_bias = zeros(D);
        layer.ln2_gain = ones(D);
        layer.ln2_bias = zeros(D);
        layers_.push_back(std::move(layer));
    }
    flatten_w_ = nn::uniform_parameter({D, P * D}, P * D, rng);
    flatten_b_ = zeros(D);
    head_w_ = nn::uniform_parameter({config_.horizon, D}, D, rng);
    head_b_ = zeros(config_.horizon);
}

std::vector<nn::NamedParameter> SthdModel::parameters() const {
    std::vector<nn::NamedParameter> out;
    out.push_back({"patch_proj.weight", patch_proj_});
    out.push_back({"channel_encoding", channel_encoding_});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& L = layers_[l];
        const std::string p = "encoder." + std::to_string(l) + ".";
        out.push_back({p + "attn.q.weight", L.wq});
        out.push_back({p + "attn.q.bias", L.bq});
        out.push_back({p + "attn.k.weight", L.wk});
        out.push_back({p + "attn.k.bias", L.bk});
        out.push_back({p + "attn.v.weight", L.wv});
        out.push_back({p + "attn.v.bias", L.bv});
        out.push_back({p + "attn.out.weight", L.wo});
        out.push_back({p + "attn.out.bias", L.bo});
        out.push_back({p + "ff.conv1.weight", L.conv1_w});
        out.push_back({p + "ff.conv1.bias", L.conv1_b});
        out.push_back({p + "ff.conv2.weight", L.conv2_w});
        out.push_back({p + "ff.conv2.bias", L.conv2_b});
        out.push_back({p + "norm1.gain", L.ln1_gain});
        out.push_back({p + "norm1.bias", L.ln1_bias});
        out.push_back({p + "norm2.gain", L.ln2_gain});
        out.push_back({p + "norm2.bias", L.ln2_bias});
    }
    out.push_back({"decoder.flatten.weight", flatten_w_});
    out.push_back({"decoder.flatten.bias", flatten_b_});
    out.push_back({"decoder.head.weight", head_w_});
    out.push_back({"decoder.head.bias", head_b_});
    return out;
}

std::vector<Tensor> SthdModel::parameter_tensors() const {
    std::vector<Tensor> out;
    for (auto& p : parameters()) out.push_back(p.tensor);
    return out;
}

Tensor SthdModel::encoder_layer(const EncoderLayer& layer, const Tensor& x, AttentionTrace* trace,
                                Rng* dropout_rng) const {
    const std::size_t H = config_.heads;
    const std::size_t d = config_.resolved_head_dim();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    auto drop = [&](const Tensor& t) {
        return dropout_rng && config_.dropout > 0.0 ? nn::dropout(t, config_.dropout, *dropout_rng) : t;
    };

    const Tensor q = nn::linear(x, layer.wq, layer.bq);
    const Tensor k = nn::linear(x, layer.wk, layer.bk);
    const Tensor v = nn::linear(x, layer.wv, layer.bv);
    Tensor mixed;
    if (trace) {
        // Composed form, so the per-head weights can be recorded.
        std::vector<Tensor> heads;
        heads.reserve(H);
        for (std::size_t h = 0; h < H; ++h) {
            const Tensor qh = nn::slice(q, -1, h * d, d);
            const Tensor kh = nn::slice(k, -1, h * d, d);
            const Tensor vh = nn::slice(v, -1, h * d, d);
            const Tensor scores = nn::scale(nn::matmul(qh, nn::transpose(kh, -1, -2)), inv_sqrt_d);
            const Tensor weights = nn::softmax(scores, -1);
            trace->weights.push_back(weights);
            heads.push_back(nn::matmul(weights, vh));
        }
        mixed = H == 1 ? heads[0] : nn::concat(heads, -1);
    } else {
        mixed = nn::multi_head_attention(q, k, v, H);
    }
    const Tensor attended = nn::linear(mixed, layer.wo, layer.bo);
    const Tensor x1 = nn::layer_norm(nn::add(x, drop(attended)), layer.ln1_gain, layer.ln1_bias);
    const Tensor ff = nn::conv1d(nn::gelu(nn::conv1d(x1, layer.conv1_w, layer.conv1_b)), layer.conv2_w,
                                 layer.conv2_b);
    return nn::layer_norm(nn::add(x1, drop(ff)), layer.ln2_gain, layer.ln2_bias);
}

Tensor SthdModel::encode(const Tensor& patches, AttentionTrace* trace, Rng* dropout_rng) const {
    const std::size_t P = config_.num_patches();
    const std::size_t D = config_.d_model;
    if (patches.rank() != 4 || patches.dim(2) != P || patches.dim(3) != config_.patch_len) {
        throw std::invalid_argument("encode: expected patches [b, C, " + std::to_string(P) + ", " +
                                    std::to_string(config_.patch_len) + "], got " +
                                    nn::shape_to_string(patches.shape()));
    }
    const std::size_t b = patches.dim(0), C = patches.dim(1);
    if (C > 1 + config_.k) {
        throw std::invalid_argument("encode: " + std::to_string(C) + " channels exceed the configured 1+K = " +
                                    std::to_string(1 + config_.k));
    }
    Tensor z = nn::linear(patches, patch_proj_);  // [b, C, P, D]
    z = nn::add(z, temporal_encoding_);
    const Tensor channel_rows = nn::reshape(nn::slice(channel_encoding_, 0, 0, C), {C, 1, D});
    z = nn::add(z, channel_rows);
    z = nn::reshape(z, {b, C * P, D});
    if (dropout_rng && config_.dropout > 0.0) z = nn::dropout(z, config_.dropout, *dropout_rng);
    for (const auto& layer : layers_) z = encoder_layer(layer, z, trace, dropout_rng);
    return z;
}

Tensor SthdModel::decode(const Tensor& encoded) const {
    const std::size_t P = config_.num_patches();
    const std::size_t D = config_.d_model;
    if (encoded.rank() != 3 || encoded.dim(2) != D || encoded.dim(1) % P != 0) {
        throw std::invalid_argument("decode: expected [b, C*" + std::to_string(P) + ", " + std::to_string(D) +
                                    "], got " + nn::shape_to_string(encoded.shape()));
    }
    const std::size_t b = encoded.dim(0), C = encoded.dim(1) / P;
    const Tensor per_channel = nn::reshape(encoded, {b, C, P * D});
    const Tensor projected = nn::linear(per_channel, flatten_w_, flatten_b_);  // [b, C, D]
    const Tensor target = nn::reshape(nn::slice(projected, 1, 0, 1), {b, D});
    return nn::linear(target, head_w_, head_b_);
}

Tensor SthdModel::forward(const Tensor& inputs, Rng* dropout_rng) const {
    if (inputs.rank() != 3 || inputs.dim(1) != config_.input_length) {
        throw std::invalid_argument("forward: expected inputs [b, " + std::to_string(config_.input_length) +
                                    ", C], got " + nn::shape_to_string(inputs.shape()));
    }
    return decode(encode(make_patches(inputs, config_.patch_len, config_.patch_stride), nullptr, dropout_rng));
}

Tensor SthdModel::forward_loss(const Batch& batch, Rng* dropout_rng) const {
    const Tensor prediction = forward(batch.inputs, dropout_rng);
    if (prediction.shape() != batch.targets.shape()) {
        throw std::invalid_argument("forward_loss: prediction " + nn::shape_to_string(prediction.shape()) +
                                    " vs targets " + nn::shape_to_string(batch.targets.shape()));
    }
    return nn::mse(prediction, batch.targets);
}

}  // namespace sthd
