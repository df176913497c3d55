#include "wg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace wg {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes [" +
                                std::to_string(a.rows()) + "," + std::to_string(a.cols()) + "] and [" +
                                std::to_string(b.rows()) + "," + std::to_string(b.cols()) + "]");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

} // namespace

Tensor make_op(int rows, int cols, std::vector<Real> value,
               std::vector<Tensor> parents, std::function<void(detail::Node&)> backprop) {
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    bool needs = detail::nograd_depth == 0;
    if (needs) {
        needs = false;
        for (const auto& p : parents) needs = needs || p.node()->needs_grad;
    }
    n->needs_grad = needs;
    if (needs) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

Tensor Tensor::from_vector(int rows, int cols, std::vector<Real> data, bool requires_grad) {
    if (data.size() != static_cast<size_t>(rows) * cols)
        throw std::invalid_argument("from_vector: data length " + std::to_string(data.size()) +
                                    " does not match shape [" + std::to_string(rows) + "," +
                                    std::to_string(cols) + "]");
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return Tensor(std::move(n));
}

Real Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return node_->value[0];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<Real> out(static_cast<size_t>(m) * n, Real(0));
    const Real* av = a.value().data();
    const Real* bv = b.value().data();
    // i-k-j order keeps the inner loop contiguous in both b and out.
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const Real aik = av[static_cast<size_t>(i) * k + kk];
            if (aik == Real(0)) continue;
            const Real* brow = bv + static_cast<size_t>(kk) * n;
            Real* orow = out.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    auto an = a.node_ptr();
    auto bn = b.node_ptr();
    return make_op(m, n, std::move(out), {a, b}, [m, k, n](detail::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const Real* g = node.grad.data();
        if (pa.needs_grad) {
            pa.ensure_grad();
            // dA = dC * B^T
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const Real gij = g[static_cast<size_t>(i) * n + j];
                    if (gij == Real(0)) continue;
                    const Real* brow = pb.value.data() + 0;
                    for (int kk = 0; kk < k; ++kk)
                        pa.grad[static_cast<size_t>(i) * k + kk] += gij * brow[static_cast<size_t>(kk) * n + j];
                }
        }
        if (pb.needs_grad) {
            pb.ensure_grad();
            // dB = A^T * dC
            for (int kk = 0; kk < k; ++kk)
                for (int i = 0; i < m; ++i) {
                    const Real aik = pa.value[static_cast<size_t>(i) * k + kk];
                    if (aik == Real(0)) continue;
                    const Real* grow = g + static_cast<size_t>(i) * n;
                    Real* brow = pb.grad.data() + static_cast<size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) brow[j] += aik * grow[j];
                }
        }
    });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    require_same_shape(name, a, b);
    const size_t n = a.size();
    std::vector<Real> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = fwd(a.value()[i], b.value()[i]);
    return make_op(a.rows(), a.cols(), std::move(out), {a, b}, [bwd, n](detail::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (pa.needs_grad) pa.ensure_grad();
        if (pb.needs_grad) pb.ensure_grad();
        for (size_t i = 0; i < n; ++i) {
            Real da, db;
            bwd(pa.value[i], pb.value[i], da, db);
            if (pa.needs_grad) pa.grad[i] += node.grad[i] * da;
            if (pb.needs_grad) pb.grad[i] += node.grad[i] * db;
        }
    });
}

template <typename Fwd, typename Bwd>
Tensor elementwise_unary(const Tensor& a, Fwd fwd, Bwd bwd) {
    const size_t n = a.size();
    std::vector<Real> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = fwd(a.value()[i]);
    return make_op(a.rows(), a.cols(), std::move(out), {a}, [bwd, n](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.needs_grad) return;
        pa.ensure_grad();
        for (size_t i = 0; i < n; ++i) pa.grad[i] += node.grad[i] * bwd(pa.value[i], node.value[i]);
    });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary("add", a, b,
        [](Real x, Real y) { return x + y; },
        [](Real, Real, Real& da, Real& db) { da = 1; db = 1; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise_binary("sub", a, b,
        [](Real x, Real y) { return x - y; },
        [](Real, Real, Real& da, Real& db) { da = 1; db = -1; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary("mul", a, b,
        [](Real x, Real y) { return x * y; },
        [](Real x, Real y, Real& da, Real& db) { da = y; db = x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (Real y : b.value())
        if (y == Real(0)) throw std::invalid_argument("div: exact zero denominator");
    return elementwise_binary("div", a, b,
        [](Real x, Real y) { return x / y; },
        [](Real x, Real y, Real& da, Real& db) { da = Real(1) / y; db = -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, Real s) {
    return elementwise_unary(a,
        [s](Real x) { return x + s; },
        [](Real, Real) { return Real(1); });
}

Tensor mul_scalar(const Tensor& a, Real s) {
    return elementwise_unary(a,
        [s](Real x) { return x * s; },
        [s](Real, Real) { return s; });
}

Tensor exp(const Tensor& a) {
    return elementwise_unary(a,
        [](Real x) { return std::exp(x); },
        [](Real, Real y) { return y; });
}

Tensor log(const Tensor& a) {
    return elementwise_unary(a,
        [](Real x) { return std::log(std::max(x, kLogFloor)); },
        [](Real x, Real) { return Real(1) / std::max(x, kLogFloor); });
}

Tensor sigmoid(const Tensor& a) {
    return elementwise_unary(a,
        [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); },
        [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor tanh(const Tensor& a) {
    return elementwise_unary(a,
        [](Real x) { return std::tanh(x); },
        [](Real, Real y) { return Real(1) - y * y; });
}

Tensor relu(const Tensor& a) {
    return elementwise_unary(a,
        [](Real x) { return x > Real(0) ? x : Real(0); },
        [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, Real(-1)); }

Tensor clamp(const Tensor& a, Real lo, Real hi) {
    return elementwise_unary(a,
        [lo, hi](Real x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](Real x, Real) { return (x >= lo && x <= hi) ? Real(1) : Real(0); });
}

Tensor softmax(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    std::vector<Real> out(a.size());
    for (int i = 0; i < r; ++i) {
        const Real* row = a.value().data() + static_cast<size_t>(i) * c;
        Real* orow = out.data() + static_cast<size_t>(i) * c;
        Real mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        Real total = 0;
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - mx);
            total += orow[j];
        }
        for (int j = 0; j < c; ++j) orow[j] /= total;
    }
    return make_op(r, c, std::move(out), {a}, [r, c](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.needs_grad) return;
        pa.ensure_grad();
        for (int i = 0; i < r; ++i) {
            const Real* y = node.value.data() + static_cast<size_t>(i) * c;
            const Real* g = node.grad.data() + static_cast<size_t>(i) * c;
            Real dot = 0;
            for (int j = 0; j < c; ++j) dot += y[j] * g[j];
            Real* pg = pa.grad.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) pg[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor concat(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) shape_error("concat", a, b);
    const int r = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<Real> out(static_cast<size_t>(r) * (ca + cb));
    for (int i = 0; i < r; ++i) {
        std::copy_n(a.value().data() + static_cast<size_t>(i) * ca, ca,
                    out.data() + static_cast<size_t>(i) * (ca + cb));
        std::copy_n(b.value().data() + static_cast<size_t>(i) * cb, cb,
                    out.data() + static_cast<size_t>(i) * (ca + cb) + ca);
    }
    return make_op(r, ca + cb, std::move(out), {a, b}, [r, ca, cb](detail::Node& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (pa.needs_grad) {
            pa.ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < ca; ++j)
                    pa.grad[static_cast<size_t>(i) * ca + j] += node.grad[static_cast<size_t>(i) * (ca + cb) + j];
        }
        if (pb.needs_grad) {
            pb.ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < cb; ++j)
                    pb.grad[static_cast<size_t>(i) * cb + j] += node.grad[static_cast<size_t>(i) * (ca + cb) + ca + j];
        }
    });
}

Tensor slice(const Tensor& a, int col_start, int col_count) {
    if (col_start < 0 || col_count < 0 || col_start + col_count > a.cols())
        throw std::invalid_argument("slice: range [" + std::to_string(col_start) + "," +
                                    std::to_string(col_start + col_count) + ") outside " +
                                    std::to_string(a.cols()) + " columns");
    const int r = a.rows(), c = a.cols();
    std::vector<Real> out(static_cast<size_t>(r) * col_count);
    for (int i = 0; i < r; ++i)
        std::copy_n(a.value().data() + static_cast<size_t>(i) * c + col_start, col_count,
                    out.data() + static_cast<size_t>(i) * col_count);
    return make_op(r, col_count, std::move(out), {a}, [r, c, col_start, col_count](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.needs_grad) return;
        pa.ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < col_count; ++j)
                pa.grad[static_cast<size_t>(i) * c + col_start + j] += node.grad[static_cast<size_t>(i) * col_count + j];
    });
}

Tensor sum(const Tensor& a) {
    Real total = 0;
    for (Real v : a.value()) total += v;
    return make_op(1, 1, {total}, {a}, [](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.needs_grad) return;
        pa.ensure_grad();
        for (auto& g : pa.grad) g += node.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    Real total = 0;
    for (Real v : a.value()) total += v;
    const Real inv = Real(1) / static_cast<Real>(a.size());
    return make_op(1, 1, {total * inv}, {a}, [inv](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.needs_grad) return;
        pa.ensure_grad();
        for (auto& g : pa.grad) g += node.grad[0] * inv;
    });
}

Tensor sum_rows(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    std::vector<Real> out(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        Real t = 0;
        for (int j = 0; j < c; ++j) t += a.value()[static_cast<size_t>(i) * c + j];
        out[static_cast<size_t>(i)] = t;
    }
    return make_op(r, 1, std::move(out), {a}, [r, c](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.needs_grad) return;
        pa.ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                pa.grad[static_cast<size_t>(i) * c + j] += node.grad[static_cast<size_t>(i)];
    });
}

Tensor repeat_rows(const Tensor& row, int count) {
    if (row.rows() != 1) throw std::invalid_argument("repeat_rows: input must be [1,K]");
    const int c = row.cols();
    std::vector<Real> out(static_cast<size_t>(count) * c);
    for (int i = 0; i < count; ++i)
        std::copy_n(row.value().data(), c, out.data() + static_cast<size_t>(i) * c);
    return make_op(count, c, std::move(out), {row}, [count, c](detail::Node& node) {
        auto& pa = *node.parents[0];
        if (!pa.needs_grad) return;
        pa.ensure_grad();
        for (int i = 0; i < count; ++i)
            for (int j = 0; j < c; ++j)
                pa.grad[static_cast<size_t>(j)] += node.grad[static_cast<size_t>(i) * c + j];
    });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
    if (s.rows() != a.rows() || s.cols() != 1) shape_error("scale_rows", a, s);
    const int r = a.rows(), c = a.cols();
    std::vector<Real> out(a.size());
    for (int i = 0; i < r; ++i) {
        const Real si = s.value()[static_cast<size_t>(i)];
        for (int j = 0; j < c; ++j)
            out[static_cast<size_t>(i) * c + j] = a.value()[static_cast<size_t>(i) * c + j] * si;
    }
    return make_op(r, c, std::move(out), {a, s}, [r, c](detail::Node& node) {
        auto& pa = *node.parents[0];
        auto& ps = *node.parents[1];
        if (pa.needs_grad) {
            pa.ensure_grad();
            for (int i = 0; i < r; ++i) {
                const Real si = ps.value[static_cast<size_t>(i)];
                for (int j = 0; j < c; ++j)
                    pa.grad[static_cast<size_t>(i) * c + j] += node.grad[static_cast<size_t>(i) * c + j] * si;
            }
        }
        if (ps.needs_grad) {
            ps.ensure_grad();
            for (int i = 0; i < r; ++i) {
                Real dot = 0;
                for (int j = 0; j < c; ++j)
                    dot += node.grad[static_cast<size_t>(i) * c + j] * pa.value[static_cast<size_t>(i) * c + j];
                ps.grad[static_cast<size_t>(i)] += dot;
            }
        }
    });
}

Tensor rows_sum(const Tensor& w, const std::vector<std::vector<int>>& indices) {
    const int c = w.cols();
    const int b = static_cast<int>(indices.size());
    std::vector<Real> out(static_cast<size_t>(b) * c, Real(0));
    for (int i = 0; i < b; ++i) {
        Real* orow = out.data() + static_cast<size_t>(i) * c;
        for (int idx : indices[static_cast<size_t>(i)]) {
            if (idx < 0 || idx >= w.rows())
                throw std::invalid_argument("rows_sum: index " + std::to_string(idx) + " outside " +
                                            std::to_string(w.rows()) + " rows");
            const Real* wrow = w.value().data() + static_cast<size_t>(idx) * c;
            for (int j = 0; j < c; ++j) orow[j] += wrow[j];
        }
    }
    return make_op(b, c, std::move(out), {w}, [indices, b, c](detail::Node& node) {
        auto& pw = *node.parents[0];
        if (!pw.needs_grad) return;
        pw.ensure_grad();
        for (int i = 0; i < b; ++i) {
            const Real* grow = node.grad.data() + static_cast<size_t>(i) * c;
            for (int idx : indices[static_cast<size_t>(i)]) {
                Real* wrow = pw.grad.data() + static_cast<size_t>(idx) * c;
                for (int j = 0; j < c; ++j) wrow[j] += grow[j];
            }
        }
    });
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    detail::Node* root = loss.node();
    if (!root->needs_grad && !root->requires_grad) return;

    // Iterative post-order DFS; reverse of it is a valid topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
    // Consume the tape: interior nodes release their edges, leaves keep grads.
    for (detail::Node* node : order) {
        node->backprop = nullptr;
        node->parents.clear();
    }
}

Real grad_global_norm(const std::vector<Tensor>& params) {
    Real ss = 0;
    for (const auto& p : params)
        for (Real g : p.grad()) ss += g * g;
    return std::sqrt(ss);
}

void clip_grad_global_norm(std::vector<Tensor>& params, Real max_norm) {
    const Real norm = grad_global_norm(params);
    if (norm <= max_norm || norm == Real(0)) return;
    const Real scale = max_norm / norm;
    for (auto& p : params) {
        auto* n = p.node();
        for (auto& g : n->grad) g *= scale;
    }
}

} // namespace wg
