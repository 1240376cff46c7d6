#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sthd/random.hpp"

namespace sthd::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulated into
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major double tensor with reverse-mode autodiff. Copies are
/// shallow handles onto the same storage; ops always allocate fresh outputs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    /// Negative axes count from the end.
    std::size_t dim(std::ptrdiff_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad; }
    void zero_grad();

    /// Populates .grad() of every reachable tensor that requires grad.
    /// The tensor must hold exactly one element.
    void backward() const;

    /// Same values, cut from the graph.
    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Elementwise, with numpy-style broadcasting of either operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// a: [..., n, k]; b: [k, m] (shared across leading dims) or [..., k, m]
/// with the same leading dims as a.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: [..., in], weight: [out, in], bias: [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::ptrdiff_t axis0, std::ptrdiff_t axis1);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length);

/// out[i] = x.data()[indices[i]], reshaped to `shape`. Gradients scatter-add.
Tensor gather(const Tensor& x, std::vector<std::size_t> indices, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax(const Tensor& x, std::ptrdiff_t axis);
Tensor gelu(const Tensor& x);

/// Multi-head scaled dot-product attention over the last two axes.
/// q, k, v: [..., N, heads * d]. Head h reads columns [h*d, (h+1)*d) and its
/// output lands in the same columns. Equals, bit for bit, slicing each head,
/// softmax(scale(matmul(q_h, transpose(k_h)), 1/sqrt(d))) times v_h, and
/// concatenating the heads, without materializing the intermediates.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

/// Normalizes over the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-10);

/// Channels-last 1-D convolution along axis -2 with zero "same" padding.
/// x: [..., N, C_in]; weight: [C_out, C_in, k] with odd k; bias: [C_out].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Inverted dropout. Identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

/// Mean of squared differences over all elements.
Tensor mse(const Tensor& prediction, const Tensor& truth);

/// Weight for a layer with the given fan-in: uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor uniform_parameter(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace sthd::nn
