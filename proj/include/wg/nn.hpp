#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wg/tensor.hpp"

namespace wg::nn {

// Named parameter collection. Modules register their tensors here so the
// optimizer and the checkpoint container see a stable, sorted view.
class ParamRegistry {
public:
    Tensor& add(const std::string& name, Tensor t) {
        auto [it, fresh] = params_.emplace(name, std::move(t));
        if (!fresh) throw std::invalid_argument("duplicate parameter name: " + name);
        return it->second;
    }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& [_, t] : params_) out.push_back(t);
        return out;
    }

    const std::map<std::string, Tensor>& named() const { return params_; }
    std::map<std::string, Tensor>& named() { return params_; }

    Tensor& at(const std::string& name) { return params_.at(name); }
    const Tensor& at(const std::string& name) const { return params_.at(name); }
    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    void zero_grad() {
        for (auto& [_, t] : params_) t.zero_grad();
    }

private:
    std::map<std::string, Tensor> params_;
};

// y = x @ W + b, with W [in, out] and b [1, out] repeated over the batch.
class Linear {
public:
    Linear() = default;
    Linear(ParamRegistry& reg, const std::string& prefix, int in, int out, Rng& rng) {
        const Real bound = static_cast<Real>(std::sqrt(6.0 / (in + out)));
        w_ = reg.add(prefix + ".w", Tensor::uniform_init(in, out, bound, rng));
        b_ = reg.add(prefix + ".b", Tensor::zeros(1, out, true));
        out_ = out;
    }

    Tensor operator()(const Tensor& x) const {
        return add(matmul(x, w_), repeat_rows(b_, x.rows()));
    }

    // Sparse multi-hot input: rows of W indexed directly.
    Tensor apply_sparse(const std::vector<std::vector<int>>& indices) const {
        return add(rows_sum(w_, indices), repeat_rows(b_, static_cast<int>(indices.size())));
    }

    const Tensor& weight() const { return w_; }
    const Tensor& bias() const { return b_; }
    int out_features() const { return out_; }

private:
    Tensor w_, b_;
    int out_ = 0;
};

struct LstmState {
    Tensor h;
    Tensor c;
};

// Gated recurrent cell. Gate layout along the packed axis is [i | f | g | o]:
//   i = sigmoid(Wx·x + Wh·h + b_i)      input gate
//   f = sigmoid(... + b_f)              forget gate
//   g = tanh(...)                       candidate
//   o = sigmoid(...)                    output gate
//   c' = f*c + i*g,  h' = o*tanh(c')
class LstmCell {
public:
    LstmCell() = default;
    LstmCell(ParamRegistry& reg, const std::string& prefix, int input, int hidden, Rng& rng)
        : input_(input), hidden_(hidden) {
        const Real bound = static_cast<Real>(std::sqrt(6.0 / (input + hidden + 4 * hidden)));
        w_ = reg.add(prefix + ".w", Tensor::uniform_init(input + hidden, 4 * hidden, bound, rng));
        b_ = reg.add(prefix + ".b", Tensor::zeros(1, 4 * hidden, true));
    }

    LstmState initial_state(int batch) const {
        return {Tensor::zeros(batch, hidden_), Tensor::zeros(batch, hidden_)};
    }

    LstmState step(const Tensor& x, const LstmState& prev) const {
        if (x.cols() != input_ || prev.h.cols() != hidden_)
            throw std::invalid_argument("lstm step: input/hidden size mismatch, got x[" +
                                        std::to_string(x.rows()) + "," + std::to_string(x.cols()) +
                                        "] h[" + std::to_string(prev.h.rows()) + "," +
                                        std::to_string(prev.h.cols()) + "], cell expects input " +
                                        std::to_string(input_) + " hidden " + std::to_string(hidden_));
        Tensor gates = add(matmul(concat(x, prev.h), w_), repeat_rows(b_, x.rows()));
        Tensor i = sigmoid(slice(gates, 0, hidden_));
        Tensor f = sigmoid(slice(gates, hidden_, hidden_));
        Tensor g = tanh(slice(gates, 2 * hidden_, hidden_));
        Tensor o = sigmoid(slice(gates, 3 * hidden_, hidden_));
        Tensor c = add(mul(f, prev.c), mul(i, g));
        Tensor h = mul(o, tanh(c));
        return {h, c};
    }

    int hidden_size() const { return hidden_; }
    int input_size() const { return input_; }

private:
    Tensor w_, b_;
    int input_ = 0;
    int hidden_ = 0;
};

// softplus(x) + floor, the positivity map for distribution parameters.
inline Tensor softplus_positive(const Tensor& x, Real floor = static_cast<Real>(1e-4)) {
    // log(1 + e^x) computed as max(x,0) + log1p(e^-|x|) is not expressible in
    // primitives without abs; the clamped form below is stable for |x| <= 30
    // and the clamp keeps exp() in range beyond that.
    Tensor xc = clamp(x, Real(-30), Real(30));
    Tensor sp = log(add_scalar(exp(xc), Real(1)));
    // For x > 30 softplus(x) ~= x; the clamp would flatten the gradient, so
    // add back the linear overflow part: softplus(x) ~ sp(xc) + relu(x - 30).
    return add_scalar(add(sp, relu(add_scalar(x, Real(-30)))), floor);
}

// Adaptive-moment optimizer (Adam). State is keyed by parameter name.
class Adam {
public:
    explicit Adam(Real lr = static_cast<Real>(7e-4), Real beta1 = static_cast<Real>(0.9),
                  Real beta2 = static_cast<Real>(0.999), Real eps = static_cast<Real>(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // One update over every registered parameter; gradients are cleared.
    // Throws if any gradient is non-finite, naming the parameter.
    void step(ParamRegistry& params);

    void set_lr(Real lr) { lr_ = lr; }
    Real lr() const { return lr_; }
    int64_t step_count() const { return step_count_; }

private:
    struct Moments {
        std::vector<Real> m;
        std::vector<Real> v;
    };
    std::map<std::string, Moments> state_;
    Real lr_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
};

} // namespace wg::nn
