#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wg/rng.hpp"

namespace wg {

// Scalar type of the tensor core. Double by default; a float build can be
// selected with -DWG_REAL_FLOAT for cheaper training runs. Gradient checks
// require the double build.
#ifdef WG_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

// Epsilon policy for guarded primitives: log() clamps its argument to
// >= kLogFloor instead of rejecting; div() rejects exact zeros.
inline constexpr Real kLogFloor = static_cast<Real>(1e-12);

class Tensor;
void backward(const Tensor& loss);

namespace detail {

struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<Real> value;
    std::vector<Real> grad;       // allocated lazily, same length as value
    bool requires_grad = false;   // true for leaves that want gradients
    bool needs_grad = false;      // true if any ancestor leaf requires grad
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // scatters node.grad into parents

    size_t size() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
};

inline thread_local int nograd_depth = 0;

} // namespace detail

// Scoped inference mode: ops created inside record nothing on the tape.
struct NoGradGuard {
    NoGradGuard() { ++detail::nograd_depth; }
    ~NoGradGuard() { --detail::nograd_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// A 2-D dense tensor with reverse-mode autodiff. Tensors are cheap handles
// onto shared nodes; every operation returns a fresh node, so values are
// immutable once created. Scalars are [1,1], row vectors [1,n].
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols, bool requires_grad = false) {
        return filled(rows, cols, Real(0), requires_grad);
    }

    static Tensor filled(int rows, int cols, Real v, bool requires_grad = false) {
        auto n = std::make_shared<detail::Node>();
        n->rows = rows;
        n->cols = cols;
        n->value.assign(static_cast<size_t>(rows) * cols, v);
        n->requires_grad = requires_grad;
        n->needs_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(Real v, bool requires_grad = false) { return filled(1, 1, v, requires_grad); }

    static Tensor from_vector(int rows, int cols, std::vector<Real> data, bool requires_grad = false);

    // Uniform init in [-bound, bound]; draws come from the caller's stream.
    static Tensor uniform_init(int rows, int cols, Real bound, Rng& rng) {
        std::vector<Real> d(static_cast<size_t>(rows) * cols);
        for (auto& x : d) x = static_cast<Real>(rng.uniform(-bound, bound));
        return from_vector(rows, cols, std::move(d), true);
    }

    bool defined() const { return node_ != nullptr; }
    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    size_t size() const { return node_->size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const Real> value() const { return node_->value; }
    std::span<Real> mutable_value() { return node_->value; }
    std::span<const Real> grad() const { return node_->grad; }

    Real item() const;
    Real at(int r, int c) const { return node_->value[static_cast<size_t>(r) * node_->cols + c]; }

    void zero_grad() { node_->grad.assign(node_->value.size(), Real(0)); }

    // Value copy with no graph history.
    Tensor detach() const {
        auto n = std::make_shared<detail::Node>();
        n->rows = node_->rows;
        n->cols = node_->cols;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(int rows, int cols, std::vector<Real> value,
                          std::vector<Tensor> parents, std::function<void(detail::Node&)> backprop);
    friend void backward(const Tensor& loss);
};

// --- primitive ops -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, Real s);
Tensor mul_scalar(const Tensor& a, Real s);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a); // clamps input to kLogFloor, see epsilon policy
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax(const Tensor& a);        // over the last axis, rowwise
Tensor concat(const Tensor& a, const Tensor& b); // along the last axis
Tensor slice(const Tensor& a, int col_start, int col_count); // column range
Tensor sum(const Tensor& a);            // all elements -> [1,1]
Tensor mean(const Tensor& a);           // all elements -> [1,1]
Tensor sum_rows(const Tensor& a);       // [B,K] -> [B,1]
Tensor clamp(const Tensor& a, Real lo, Real hi);
Tensor neg(const Tensor& a);

// Explicit shape helpers (the core has no implicit broadcasting beyond
// scalar-tensor; these ops make the intent visible).
Tensor repeat_rows(const Tensor& row, int count);      // [1,K] -> [count,K]
Tensor scale_rows(const Tensor& a, const Tensor& s);   // [B,K] * [B,1] rowwise

// Sparse one-hot input projection: out[r,:] = sum_{i in indices[r]} w[i,:].
// Equivalent to matmul with a stacked multi-hot matrix; state encodings are
// sparse so this is the input layer used throughout.
Tensor rows_sum(const Tensor& w, const std::vector<std::vector<int>>& indices);

// Runs reverse-mode accumulation from a scalar loss. Every leaf with
// requires_grad reachable from the loss receives its total derivative in
// grad(). The traversed graph is consumed: interior edges are released so a
// second backward over the same nodes is impossible.
void backward(const Tensor& loss);

// Sum of squares of all grads -> sqrt; used by the global-norm clip.
Real grad_global_norm(const std::vector<Tensor>& params);
void clip_grad_global_norm(std::vector<Tensor>& params, Real max_norm);

} // namespace wg
