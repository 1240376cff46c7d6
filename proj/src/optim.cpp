#include "sthd/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sthd::nn {

Adam::Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2, double epsilon)
    : params_(std::move(params)) {
    state_.learning_rate = learning_rate;
    state_.beta1 = beta1;
    state_.beta2 = beta2;
    state_.epsilon = epsilon;
    for (const auto& p : params_) {
        if (!p.requires_grad()) throw std::invalid_argument("Adam: parameter does not require grad");
        state_.first_moment.emplace_back(p.numel(), 0.0);
        state_.second_moment.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
        if (!params_[k].has_grad()) {
            throw std::runtime_error("Adam: parameter " + std::to_string(k) + " " +
                                     shape_to_string(params_[k].shape()) + " has no gradient");
        }
    }
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(state_.beta1, t);
    const double bc2 = 1.0 - std::pow(state_.beta2, t);
    const double b1 = state_.beta1, b2 = state_.beta2;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto w = params_[k].mutable_data();
        const auto g = params_[k].grad();
        auto& m = state_.first_moment[k];
        auto& v = state_.second_moment[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            w[i] -= state_.learning_rate * m_hat / (std::sqrt(v_hat) + state_.epsilon);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void zero_grads(const std::vector<NamedParameter>& params) {
    for (auto p : params) p.tensor.zero_grad();
}

std::size_t parameter_count(const std::vector<NamedParameter>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

namespace {

constexpr char kMagic[8] = {'S', 'T', 'H', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::string& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedParameter>& params) {
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint64_t>(out, params.size());
    for (const auto& p : params) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out += p.name;
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (auto d : p.tensor.shape()) put_le<std::uint64_t>(out, d);
        for (double v : p.tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
    Reader in(bytes);
    if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw std::runtime_error("not a checkpoint file (bad magic)");
    }
    if (const auto version = in.get<std::uint32_t>(); version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = in.get<std::uint64_t>();
    std::vector<CheckpointEntry> entries;
    for (std::uint64_t k = 0; k < count; ++k) {
        CheckpointEntry e;
        e.name = in.take(in.get<std::uint32_t>());
        const auto rank = in.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(in.get<std::uint64_t>());
        e.values.resize(shape_numel(e.shape));
        for (auto& v : e.values) v = std::bit_cast<double>(in.get<std::uint64_t>());
        entries.push_back(std::move(e));
    }
    if (!in.done()) throw std::runtime_error("trailing bytes after checkpoint payload");
    return entries;
}

std::string checkpoint_manifest(const std::vector<NamedParameter>& params,
                                const std::map<std::string, std::string>& metadata) {
    std::ostringstream out;
    out << "# sthd checkpoint manifest, binary format version " << kVersion << '\n';
    for (const auto& [k, v] : metadata) out << k << " = " << v << '\n';
    std::size_t offset = sizeof(kMagic) + 4 + 8;
    for (const auto& p : params) {
        offset += 4 + p.name.size() + 4 + 8 * p.tensor.rank();
        out << "param " << p.name << ' ' << shape_to_string(p.tensor.shape()) << ' ' << offset << '\n';
        offset += 8 * p.tensor.numel();
    }
    return out.str();
}

std::map<std::string, std::string> parse_manifest_metadata(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("param ", 0) == 0) continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw std::runtime_error("bad manifest line: " + line);
        out[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& stem, const std::vector<NamedParameter>& params,
                     const std::map<std::string, std::string>& metadata) {
    auto write = [](const std::filesystem::path& path, const std::string& content) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << content;
    };
    auto bin = stem;
    bin += ".bin";
    auto manifest = stem;
    manifest += ".manifest";
    write(bin, encode_checkpoint(params));
    write(manifest, checkpoint_manifest(params, metadata));
}

void restore_parameters(const std::vector<CheckpointEntry>& entries,
                        const std::vector<NamedParameter>& params) {
    if (entries.size() != params.size()) {
        throw std::runtime_error("checkpoint has " + std::to_string(entries.size()) + " parameters, model has " +
                                 std::to_string(params.size()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (entries[k].name != params[k].name || entries[k].shape != params[k].tensor.shape()) {
            throw std::runtime_error("checkpoint parameter " + entries[k].name + " " +
                                     shape_to_string(entries[k].shape) + " does not match model parameter " +
                                     params[k].name + " " + shape_to_string(params[k].tensor.shape()));
        }
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto t = params[k].tensor;
        std::copy(entries[k].values.begin(), entries[k].values.end(), t.mutable_data().begin());
    }
}

void load_checkpoint(const std::filesystem::path& stem, const std::vector<NamedParameter>& params) {
    auto bin = stem;
    bin += ".bin";
    std::ifstream in(bin, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + bin.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    restore_parameters(decode_checkpoint(buf.str()), params);
}

}  // namespace sthd::nn
