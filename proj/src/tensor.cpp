#include "sthd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace sthd::nn {

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": " + detail);
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
    const auto r = static_cast<std::ptrdiff_t>(rank);
    const auto a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        shape_error(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

NodePtr new_node(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

/// Wraps forward output; records the backward closure only when some input
/// needs a gradient and recording is on.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
    auto out = new_node(std::move(shape), std::move(data));
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
        if (any) {
            out->requires_grad = true;
            for (auto& t : inputs) out->parents.push_back(t.defined() ? t.node() : nullptr);
            out->backward = std::move(backward);
        }
    }
    return Tensor(std::move(out));
}

/// Parent i of `self` if it wants a gradient, with grad storage allocated.
Node* grad_target(Node& self, std::size_t i) {
    Node* p = self.parents[i].get();
    if (p == nullptr || !p->requires_grad) return nullptr;
    p->ensure_grad();
    return p;
}

struct Dims3 {
    std::size_t outer, axis, inner;
};

Dims3 split_at(const Shape& shape, std::size_t axis) {
    Dims3 d{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) d.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) d.inner *= shape[i];
    return d;
}

using Vec4 = double __attribute__((vector_size(32)));

// C[i][j] += sum_p A[i * ai + p * ap] * B[p * m + j] for i < n, p < k, j < m.
// Each C element accumulates over p in increasing order, whatever the tiling.
void gemm_strided(const double* __restrict A, std::size_t ai, std::size_t ap, const double* __restrict B,
                  double* __restrict C, std::size_t n, std::size_t k, std::size_t m) {
    constexpr std::size_t R = 4;
    constexpr std::size_t V = 2;
    constexpr std::size_t W = 4 * V;
    std::size_t i = 0;
    for (; i + R <= n; i += R) {
        std::size_t j = 0;
        for (; j + W <= m; j += W) {
            Vec4 acc[R][V];
            for (std::size_t r = 0; r < R; ++r) {
                for (std::size_t v = 0; v < V; ++v) std::memcpy(&acc[r][v], C + (i + r) * m + j + 4 * v, sizeof(Vec4));
            }
            for (std::size_t p = 0; p < k; ++p) {
                Vec4 b[V];
                for (std::size_t v = 0; v < V; ++v) std::memcpy(&b[v], B + p * m + j + 4 * v, sizeof(Vec4));
                for (std::size_t r = 0; r < R; ++r) {
                    const double a = A[(i + r) * ai + p * ap];
                    for (std::size_t v = 0; v < V; ++v) acc[r][v] += a * b[v];
                }
            }
            for (std::size_t r = 0; r < R; ++r) {
                for (std::size_t v = 0; v < V; ++v) std::memcpy(C + (i + r) * m + j + 4 * v, &acc[r][v], sizeof(Vec4));
            }
        }
        if (j == m) continue;
        for (std::size_t r = 0; r < R; ++r) {
            double* c = C + (i + r) * m;
            for (std::size_t p = 0; p < k; ++p) {
                const double a = A[(i + r) * ai + p * ap];
                const double* b = B + p * m;
                for (std::size_t jj = j; jj < m; ++jj) c[jj] += a * b[jj];
            }
        }
    }
    for (; i < n; ++i) {
        double* c = C + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * ai + p * ap];
            const double* b = B + p * m;
            for (std::size_t j = 0; j < m; ++j) c[j] += a * b[j];
        }
    }
}

// C[n x m] += A[n x k] * B[k x m]
void gemm_nn(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m) {
    gemm_strided(A, k, 1, B, C, n, k, m);
}

// C[k x m] += A[n x k]^T * B[n x m]
void gemm_tn(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m) {
    gemm_strided(A, 1, k, B, C, k, n, m);
}

std::vector<double> transposed(const double* X, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = X[r * cols + c];
    }
    return out;
}

// C[n x m] += A[n x k] * B[m x k]^T
void gemm_nt(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m) {
    const auto bt = transposed(B, m, k);
    gemm_nn(A, bt.data(), C, n, k, m);
}

// ---- broadcasting ---------------------------------------------------------

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
        const std::size_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
        if (da != db && da != 1 && db != 1) {
            shape_error(op, "cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

/// Strides of `in` aligned to `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t i = in.size() - 1 - k;
        const std::size_t o = out.size() - 1 - k;
        strides[o] = in[i] == 1 ? 0 : stride;
        stride *= in[i];
    }
    return strides;
}

/// Calls fn(out_index, a_index, b_index) for every element of `out`.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
    const std::size_t total = shape_numel(out);
    if (a == out && b == out) {
        for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
        return;
    }
    const auto sa = broadcast_strides(a, out);
    const auto sb = broadcast_strides(b, out);
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < total; ++i) {
        fn(i, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

enum class BinaryOp { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op, const char* name) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
    std::vector<double> out(shape_numel(out_shape));
    const auto& da = a.node()->data;
    const auto& db = b.node()->data;
    for_each_broadcast(out_shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (op) {
            case BinaryOp::add: out[i] = da[ia] + db[ib]; break;
            case BinaryOp::sub: out[i] = da[ia] - db[ib]; break;
            case BinaryOp::mul: out[i] = da[ia] * db[ib]; break;
        }
    });
    Shape sa = a.shape(), sb = b.shape();
    return make_result(out_shape, std::move(out), {a, b}, [sa, sb, op](Node& self) {
        Node* pa = grad_target(self, 0);
        Node* pb = grad_target(self, 1);
        const auto& g = self.grad;
        const auto& xa = self.parents[0]->data;
        const auto& xb = self.parents[1]->data;
        for_each_broadcast(self.shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            switch (op) {
                case BinaryOp::add:
                    if (pa) pa->grad[ia] += g[i];
                    if (pb) pb->grad[ib] += g[i];
                    break;
                case BinaryOp::sub:
                    if (pa) pa->grad[ia] += g[i];
                    if (pb) pb->grad[ib] -= g[i];
                    break;
                case BinaryOp::mul:
                    if (pa) pa->grad[ia] += g[i] * xb[ib];
                    if (pb) pb->grad[ib] += g[i] * xa[ia];
                    break;
            }
        });
    });
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
    out << ']';
    return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shape_to_string(shape));
    }
    const auto n = shape_numel(shape);
    auto node = new_node(std::move(shape), std::vector<double>(n, value));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shape_to_string(shape));
    }
    if (data.size() != shape_numel(shape)) {
        throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_to_string(shape));
    }
    auto node = new_node(std::move(shape), std::move(data));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
    return node_->shape[normalize_axis(axis, rank(), "dim")];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("item() on tensor of shape " + shape_to_string(shape()));
    }
    return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor::from_data(shape(), node_->data, false);
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw std::invalid_argument("backward() needs a scalar loss, got shape " + shape_to_string(shape()));
    }
    if (!requires_grad()) throw std::invalid_argument("backward() on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p != nullptr && p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::mul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    return make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
        if (Node* p = grad_target(self, 0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += factor * self.grad[i];
        }
    });
}

// ---- matmul / linear --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        shape_error("matmul", "operands need rank >= 2, got " + shape_to_string(a.shape()) + " and " +
                                  shape_to_string(b.shape()));
    }
    const std::size_t n = a.dim(-2), k = a.dim(-1);
    if (b.dim(-2) != k) {
        shape_error("matmul", "inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                                  shape_to_string(b.shape()));
    }
    const std::size_t m = b.dim(-1);
    const bool shared = b.rank() == 2;
    if (!shared) {
        if (b.rank() != a.rank() ||
            !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
            shape_error("matmul", "batch dimensions differ: " + shape_to_string(a.shape()) + " x " +
                                      shape_to_string(b.shape()));
        }
    }
    const std::size_t batch = a.numel() / (n * k);
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(m);
    std::vector<double> out(batch * n * m, 0.0);
    const double* A = a.data().data();
    const double* B = b.data().data();
    if (shared) {
        gemm_nn(A, B, out.data(), batch * n, k, m);
    } else {
        for (std::size_t s = 0; s < batch; ++s) {
            gemm_nn(A + s * n * k, B + s * k * m, out.data() + s * n * m, n, k, m);
        }
    }
    return make_result(std::move(out_shape), std::move(out), {a, b}, [=](Node& self) {
        Node* pa = grad_target(self, 0);
        Node* pb = grad_target(self, 1);
        const double* G = self.grad.data();
        const double* Ad = self.parents[0]->data.data();
        const double* Bd = self.parents[1]->data.data();
        if (shared) {
            if (pa) gemm_nt(G, Bd, pa->grad.data(), batch * n, m, k);
            if (pb) gemm_tn(Ad, G, pb->grad.data(), batch * n, k, m);
        } else {
            for (std::size_t s = 0; s < batch; ++s) {
                if (pa) gemm_nt(G + s * n * m, Bd + s * k * m, pa->grad.data() + s * n * k, n, m, k);
                if (pb) gemm_tn(Ad + s * n * k, G + s * n * m, pb->grad.data() + s * k * m, n, k, m);
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) shape_error("linear", "weight must be [out, in], got " + shape_to_string(weight.shape()));
    const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
    if (x.rank() < 1 || x.dim(-1) != in_f) {
        shape_error("linear", "input " + shape_to_string(x.shape()) + " incompatible with weight " +
                                  shape_to_string(weight.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
        shape_error("linear", "bias " + shape_to_string(bias.shape()) + " does not match " +
                                  std::to_string(out_f) + " outputs");
    }
    const std::size_t rows = x.numel() / in_f;
    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    std::vector<double> out(rows * out_f, 0.0);
    if (bias.defined()) {
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(bias.data().begin(), bias.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_f));
        }
    }
    gemm_nt(x.data().data(), weight.data().data(), out.data(), rows, in_f, out_f);
    const bool has_bias = bias.defined();
    return make_result(std::move(out_shape), std::move(out), {x, weight, bias}, [=](Node& self) {
        const double* G = self.grad.data();
        if (Node* px = grad_target(self, 0)) {
            gemm_nn(G, self.parents[1]->data.data(), px->grad.data(), rows, out_f, in_f);
        }
        if (Node* pw = grad_target(self, 1)) {
            gemm_tn(G, self.parents[0]->data.data(), pw->grad.data(), rows, out_f, in_f);
        }
        if (has_bias) {
            if (Node* pb = grad_target(self, 2)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t o = 0; o < out_f; ++o) pb->grad[o] += G[r * out_f + o];
                }
            }
        }
    });
}

// ---- layout -------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        shape_error("reshape", "cannot reshape " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
    }
    return make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {x},
                       [](Node& self) {
                           if (Node* p = grad_target(self, 0)) {
                               for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
                           }
                       });
}

Tensor transpose(const Tensor& x, std::ptrdiff_t axis0, std::ptrdiff_t axis1) {
    const std::size_t r = x.rank();
    const std::size_t a0 = normalize_axis(axis0, r, "transpose");
    const std::size_t a1 = normalize_axis(axis1, r, "transpose");
    Shape out_shape = x.shape();
    std::swap(out_shape[a0], out_shape[a1]);

    // in_stride[d] for output axis d
    std::vector<std::size_t> in_strides(r);
    {
        std::size_t s = 1;
        for (std::size_t d = r; d-- > 0;) {
            in_strides[d] = s;
            s *= x.shape()[d];
        }
        std::swap(in_strides[a0], in_strides[a1]);
    }
    const std::size_t total = x.numel();
    std::vector<std::size_t> src(total);
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t off = 0;
        for (std::size_t i = 0; i < total; ++i) {
            src[i] = off;
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                off += in_strides[d];
                if (idx[d] < out_shape[d]) break;
                off -= in_strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    }
    return gather(x, std::move(src), std::move(out_shape));
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
    if (parts.empty()) shape_error("concat", "no inputs");
    const std::size_t r = parts[0].rank();
    const std::size_t ax = normalize_axis(axis, r, "concat");
    Shape out_shape = parts[0].shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        bool ok = p.rank() == r;
        for (std::size_t d = 0; ok && d < r; ++d) ok = d == ax || p.shape()[d] == parts[0].shape()[d];
        if (!ok) {
            shape_error("concat", "shape " + shape_to_string(p.shape()) + " incompatible with " +
                                      shape_to_string(parts[0].shape()) + " along axis " + std::to_string(ax));
        }
        out_shape[ax] += p.shape()[ax];
    }
    const auto dims = split_at(out_shape, ax);
    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t len = p.shape()[ax] * dims.inner;
        for (std::size_t o = 0; o < dims.outer; ++o) {
            std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * len), len,
                        out.begin() + static_cast<std::ptrdiff_t>(o * dims.axis * dims.inner + offset));
        }
        offset += len;
    }
    return make_result(std::move(out_shape), std::move(out), parts, [dims, offsets](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node* p = grad_target(self, k);
            if (!p) continue;
            const std::size_t len = p->data.size() / dims.outer;
            for (std::size_t o = 0; o < dims.outer; ++o) {
                const double* g = self.grad.data() + o * dims.axis * dims.inner + offsets[k];
                double* dst = p->grad.data() + o * len;
                for (std::size_t i = 0; i < len; ++i) dst[i] += g[i];
            }
        }
    });
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
    if (length == 0 || start + length > x.shape()[ax]) {
        shape_error("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                 ") outside axis of size " + std::to_string(x.shape()[ax]));
    }
    const auto dims = split_at(x.shape(), ax);
    Shape out_shape = x.shape();
    out_shape[ax] = length;
    std::vector<double> out(dims.outer * length * dims.inner);
    for (std::size_t o = 0; o < dims.outer; ++o) {
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((o * dims.axis + start) * dims.inner),
                    length * dims.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * dims.inner));
    }
    return make_result(std::move(out_shape), std::move(out), {x}, [dims, start, length](Node& self) {
        if (Node* p = grad_target(self, 0)) {
            for (std::size_t o = 0; o < dims.outer; ++o) {
                const double* g = self.grad.data() + o * length * dims.inner;
                double* dst = p->grad.data() + (o * dims.axis + start) * dims.inner;
                for (std::size_t i = 0; i < length * dims.inner; ++i) dst[i] += g[i];
            }
        }
    });
}

Tensor gather(const Tensor& x, std::vector<std::size_t> indices, Shape shape) {
    if (shape_numel(shape) != indices.size()) {
        shape_error("gather", std::to_string(indices.size()) + " indices for shape " + shape_to_string(shape));
    }
    std::vector<double> out(indices.size());
    const auto& src = x.node()->data;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= src.size()) shape_error("gather", "index out of range");
        out[i] = src[indices[i]];
    }
    return make_result(std::move(shape), std::move(out), {x}, [idx = std::move(indices)](Node& self) {
        if (Node* p = grad_target(self, 0)) {
            for (std::size_t i = 0; i < idx.size(); ++i) p->grad[idx[i]] += self.grad[i];
        }
    });
}

// ---- reductions -----------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({}, {s}, {x}, [](Node& self) {
        if (Node* p = grad_target(self, 0)) {
            for (auto& g : p->grad) g += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double inv = 1.0 / static_cast<double>(x.numel());
    return make_result({}, {s * inv}, {x}, [inv](Node& self) {
        if (Node* p = grad_target(self, 0)) {
            for (auto& g : p->grad) g += self.grad[0] * inv;
        }
    });
}

Tensor mse(const Tensor& prediction, const Tensor& truth) {
    if (prediction.shape() != truth.shape()) {
        shape_error("mse", "prediction " + shape_to_string(prediction.shape()) + " vs truth " +
                               shape_to_string(truth.shape()));
    }
    const auto p = prediction.data();
    const auto t = truth.data();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
    const double inv = 1.0 / static_cast<double>(p.size());
    return make_result({}, {s * inv}, {prediction, truth}, [inv](Node& self) {
        const auto& pd = self.parents[0]->data;
        const auto& td = self.parents[1]->data;
        const double g = self.grad[0] * 2.0 * inv;
        if (Node* pp = grad_target(self, 0)) {
            for (std::size_t i = 0; i < pd.size(); ++i) pp->grad[i] += g * (pd[i] - td[i]);
        }
        if (Node* pt = grad_target(self, 1)) {
            for (std::size_t i = 0; i < pd.size(); ++i) pt->grad[i] -= g * (pd[i] - td[i]);
        }
    });
}

// ---- nonlinearities -------------------------------------------------------------

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
    const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
    const auto dims = split_at(x.shape(), ax);
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t o = 0; o < dims.outer; ++o) {
        for (std::size_t i = 0; i < dims.inner; ++i) {
            const std::size_t base = o * dims.axis * dims.inner + i;
            double mx = in[base];
            for (std::size_t a = 1; a < dims.axis; ++a) mx = std::max(mx, in[base + a * dims.inner]);
            double total = 0.0;
            for (std::size_t a = 0; a < dims.axis; ++a) {
                const double e = std::exp(in[base + a * dims.inner] - mx);
                out[base + a * dims.inner] = e;
                total += e;
            }
            for (std::size_t a = 0; a < dims.axis; ++a) out[base + a * dims.inner] /= total;
        }
    }
    return make_result(x.shape(), std::move(out), {x}, [dims](Node& self) {
        Node* p = grad_target(self, 0);
        if (!p) return;
        const auto& y = self.data;
        const auto& g = self.grad;
        for (std::size_t o = 0; o < dims.outer; ++o) {
            for (std::size_t i = 0; i < dims.inner; ++i) {
                const std::size_t base = o * dims.axis * dims.inner + i;
                double dot = 0.0;
                for (std::size_t a = 0; a < dims.axis; ++a) {
                    dot += g[base + a * dims.inner] * y[base + a * dims.inner];
                }
                for (std::size_t a = 0; a < dims.axis; ++a) {
                    const std::size_t k = base + a * dims.inner;
                    p->grad[k] += y[k] * (g[k] - dot);
                }
            }
        }
    });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    if (q.rank() < 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        shape_error("multi_head_attention", "q, k and v need one shape of rank >= 2, got " +
                                                shape_to_string(q.shape()) + ", " + shape_to_string(k.shape()) +
                                                " and " + shape_to_string(v.shape()));
    }
    const std::size_t N = q.dim(-2);
    const std::size_t width = q.dim(-1);
    if (heads == 0 || width % heads != 0) {
        shape_error("multi_head_attention", std::to_string(heads) + " heads do not divide width " +
                                                std::to_string(width));
    }
    const std::size_t d = width / heads;
    const std::size_t batch = N == 0 ? 0 : q.numel() / (N * width);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    // Copies column block h of a [N, width] slab into a contiguous [N, d] matrix.
    auto load_head = [N, width, d](const double* src, std::size_t h, double* dst) {
        for (std::size_t i = 0; i < N; ++i) std::memcpy(dst + i * d, src + i * width + h * d, d * sizeof(double));
    };

    auto weights = std::make_shared<std::vector<double>>(batch * heads * N * N);
    std::vector<double> out(q.numel(), 0.0);
    std::vector<double> kt(d * N), qh(N * d), vh(N * d), oh(N * d);
    const double* Q = q.data().data();
    const double* K = k.data().data();
    const double* V = v.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t slab = b * N * width;
        for (std::size_t h = 0; h < heads; ++h) {
            double* P = weights->data() + (b * heads + h) * N * N;
            for (std::size_t j = 0; j < N; ++j) {
                for (std::size_t c = 0; c < d; ++c) kt[c * N + j] = K[slab + j * width + h * d + c];
            }
            load_head(Q + slab, h, qh.data());
            gemm_nn(qh.data(), kt.data(), P, N, d, N);
            for (std::size_t i = 0; i < N * N; ++i) P[i] *= inv_sqrt_d;
            for (std::size_t i = 0; i < N; ++i) {
                double* row = P + i * N;
                double mx = row[0];
                for (std::size_t j = 1; j < N; ++j) mx = std::max(mx, row[j]);
                double total = 0.0;
                for (std::size_t j = 0; j < N; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    total += row[j];
                }
                for (std::size_t j = 0; j < N; ++j) row[j] /= total;
            }
            load_head(V + slab, h, vh.data());
            std::fill(oh.begin(), oh.end(), 0.0);
            gemm_nn(P, vh.data(), oh.data(), N, N, d);
            for (std::size_t i = 0; i < N; ++i) {
                std::memcpy(out.data() + slab + i * width + h * d, oh.data() + i * d, d * sizeof(double));
            }
        }
    }

    return make_result(q.shape(), std::move(out), {q, k, v}, [=](Node& self) {
        Node* pq = grad_target(self, 0);
        Node* pk = grad_target(self, 1);
        Node* pv = grad_target(self, 2);
        if (!pq && !pk && !pv) return;
        const double* G = self.grad.data();
        const double* Qd = self.parents[0]->data.data();
        const double* Kd = self.parents[1]->data.data();
        const double* Vd = self.parents[2]->data.data();
        std::vector<double> gh(N * d), qh(N * d), kh(N * d), vh(N * d), dP(N * N);
        std::vector<double> dq(N * d), dk(N * d), dv(N * d);
        auto scatter_add = [N, width, d](const std::vector<double>& src, std::size_t h, double* dst) {
            for (std::size_t i = 0; i < N; ++i) {
                for (std::size_t c = 0; c < d; ++c) dst[i * width + h * d + c] += src[i * d + c];
            }
        };
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t slab = b * N * width;
            for (std::size_t h = 0; h < heads; ++h) {
                const double* P = weights->data() + (b * heads + h) * N * N;
                load_head(G + slab, h, gh.data());
                if (pv) {
                    std::fill(dv.begin(), dv.end(), 0.0);
                    gemm_tn(P, gh.data(), dv.data(), N, N, d);
                    scatter_add(dv, h, pv->grad.data() + slab);
                }
                if (!pq && !pk) continue;
                load_head(Vd + slab, h, vh.data());
                std::fill(dP.begin(), dP.end(), 0.0);
                gemm_nt(gh.data(), vh.data(), dP.data(), N, d, N);
                // dP becomes the gradient of the scaled scores' pre-scale input.
                for (std::size_t i = 0; i < N; ++i) {
                    const double* prow = P + i * N;
                    double* grow = dP.data() + i * N;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < N; ++j) dot += grow[j] * prow[j];
                    for (std::size_t j = 0; j < N; ++j) grow[j] = prow[j] * (grow[j] - dot) * inv_sqrt_d;
                }
                if (pq) {
                    load_head(Kd + slab, h, kh.data());
                    std::fill(dq.begin(), dq.end(), 0.0);
                    gemm_nn(dP.data(), kh.data(), dq.data(), N, N, d);
                    scatter_add(dq, h, pq->grad.data() + slab);
                }
                if (pk) {
                    load_head(Qd + slab, h, qh.data());
                    std::fill(dk.begin(), dk.end(), 0.0);
                    gemm_tn(dP.data(), qh.data(), dk.data(), N, N, d);
                    scatter_add(dk, h, pk->grad.data() + slab);
                }
            }
        }
    });
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * std::numbers::sqrt2 / 2.0));
    }
    return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
        Node* p = grad_target(self, 0);
        if (!p) return;
        const auto& xin = p->data;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < xin.size(); ++i) {
            const double v = xin[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            p->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = x.dim(-1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
        shape_error("layer_norm", "gain/bias " + shape_to_string(gain.shape()) + "/" +
                                      shape_to_string(bias.shape()) + " do not match input " +
                                      shape_to_string(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
    const auto in = x.data();
    const auto gw = gain.data();
    const auto bw = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = in.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t i = 0; i < d; ++i) {
            const double h = (xr[i] - mu) * is;
            xhat[r * d + i] = h;
            out[r * d + i] = h * gw[i] + bw[i];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gain, bias},
                       [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                           const auto& g = self.grad;
                           const auto& gw = self.parents[1]->data;
                           if (Node* pg = grad_target(self, 1)) {
                               for (std::size_t k = 0; k < g.size(); ++k) pg->grad[k % d] += g[k] * xhat[k];
                           }
                           if (Node* pb = grad_target(self, 2)) {
                               for (std::size_t k = 0; k < g.size(); ++k) pb->grad[k % d] += g[k];
                           }
                           Node* px = grad_target(self, 0);
                           if (!px) return;
                           const double inv_d = 1.0 / static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               double sum_dh = 0.0, sum_dh_h = 0.0;
                               for (std::size_t i = 0; i < d; ++i) {
                                   const double dh = g[r * d + i] * gw[i];
                                   sum_dh += dh;
                                   sum_dh_h += dh * xhat[r * d + i];
                               }
                               for (std::size_t i = 0; i < d; ++i) {
                                   const double dh = g[r * d + i] * gw[i];
                                   px->grad[r * d + i] +=
                                       inv_std[r] * (dh - sum_dh * inv_d - xhat[r * d + i] * sum_dh_h * inv_d);
                               }
                           }
                       });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 3) {
        shape_error("conv1d", "weight must be [C_out, C_in, k], got " + shape_to_string(weight.shape()));
    }
    const std::size_t c_out = weight.dim(0), c_in = weight.dim(1), ks = weight.dim(2);
    if (ks % 2 == 0) shape_error("conv1d", "kernel size must be odd, got " + std::to_string(ks));
    if (x.rank() < 2 || x.dim(-1) != c_in) {
        shape_error("conv1d", "input " + shape_to_string(x.shape()) + " does not have " +
                                  std::to_string(c_in) + " channels last");
    }
    if (bias.rank() != 1 || bias.dim(0) != c_out) {
        shape_error("conv1d", "bias " + shape_to_string(bias.shape()) + " does not match " +
                                  std::to_string(c_out) + " output channels");
    }
    const std::size_t len = x.dim(-2);
    const std::size_t batch = x.numel() / (len * c_in);
    const std::size_t pad = ks / 2;

    // Tap j contributes out[n] += x[n + j - pad] * W_j for every n whose source
    // row exists; those n form one contiguous run.
    struct TapRun {
        std::size_t out_begin, src_begin, count;
    };
    std::vector<TapRun> runs(ks);
    for (std::size_t j = 0; j < ks; ++j) {
        const std::size_t out_begin = j < pad ? pad - j : 0;
        const std::size_t out_end = j >= len + pad ? 0 : std::min(len, len + pad - j);
        runs[j] = {out_begin, out_begin + j - pad, out_end > out_begin ? out_end - out_begin : 0};
    }
    // W_j as [C_in, C_out] (forward) and [C_out, C_in] (input gradient).
    std::vector<double> taps_io(ks * c_in * c_out), taps_oi(ks * c_out * c_in);
    const auto w = weight.data();
    for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t c = 0; c < c_in; ++c) {
            for (std::size_t j = 0; j < ks; ++j) {
                taps_io[(j * c_in + c) * c_out + o] = w[(o * c_in + c) * ks + j];
                taps_oi[(j * c_out + o) * c_in + c] = w[(o * c_in + c) * ks + j];
            }
        }
    }
    Shape out_shape = x.shape();
    out_shape.back() = c_out;
    std::vector<double> out(batch * len * c_out);
    for (std::size_t r = 0; r < batch * len; ++r) {
        std::copy(bias.data().begin(), bias.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r * c_out));
    }
    const double* X = x.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < ks; ++j) {
            const auto& run = runs[j];
            if (run.count == 0) continue;
            gemm_nn(X + (b * len + run.src_begin) * c_in, taps_io.data() + j * c_in * c_out,
                    out.data() + (b * len + run.out_begin) * c_out, run.count, c_in, c_out);
        }
    }
    return make_result(std::move(out_shape), std::move(out), {x, weight, bias},
                       [=, taps_oi = std::move(taps_oi)](Node& self) {
                           const double* G = self.grad.data();
                           const double* Xd = self.parents[0]->data.data();
                           Node* px = grad_target(self, 0);
                           Node* pw = grad_target(self, 1);
                           Node* pb = grad_target(self, 2);
                           if (pb) {
                               for (std::size_t r = 0; r < batch * len; ++r) {
                                   for (std::size_t o = 0; o < c_out; ++o) pb->grad[o] += G[r * c_out + o];
                               }
                           }
                           std::vector<double> dtaps(pw ? ks * c_in * c_out : 0, 0.0);
                           for (std::size_t b = 0; b < batch; ++b) {
                               for (std::size_t j = 0; j < ks; ++j) {
                                   const auto& run = runs[j];
                                   if (run.count == 0) continue;
                                   const double* g = G + (b * len + run.out_begin) * c_out;
                                   if (px) {
                                       gemm_nn(g, taps_oi.data() + j * c_out * c_in,
                                               px->grad.data() + (b * len + run.src_begin) * c_in, run.count,
                                               c_out, c_in);
                                   }
                                   if (pw) {
                                       gemm_tn(Xd + (b * len + run.src_begin) * c_in, g,
                                               dtaps.data() + j * c_in * c_out, run.count, c_in, c_out);
                                   }
                               }
                           }
                           if (pw) {
                               for (std::size_t o = 0; o < c_out; ++o) {
                                   for (std::size_t c = 0; c < c_in; ++c) {
                                       for (std::size_t j = 0; j < ks; ++j) {
                                           pw->grad[(o * c_in + c) * ks + j] += dtaps[(j * c_in + c) * c_out + o];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1)");
    if (p == 0.0) return x;
    std::vector<double> mask(x.numel());
    const double keep_scale = 1.0 / (1.0 - p);
    for (auto& m : mask) m = uniform01(rng) < p ? 0.0 : keep_scale;
    return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

Tensor uniform_parameter(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = uniform(rng, -bound, bound);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace sthd::nn
