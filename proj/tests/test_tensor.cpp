#include <cmath>

#include "doctest.h"
#include "grad_check.hpp"
#include "wg/checkpoint.hpp"
#include "wg/nn.hpp"
#include "wg/rng.hpp"
#include "wg/tensor.hpp"

using namespace wg;

TEST_CASE("matmul identity leaves any 3x3 matrix unchanged") {
    Rng rng(7);
    std::vector<Real> id = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    Tensor eye = Tensor::from_vector(3, 3, id);
    std::vector<Real> data(9);
    for (auto& v : data) v = static_cast<Real>(rng.normal());
    Tensor a = Tensor::from_vector(3, 3, data);
    Tensor out = matmul(eye, a);
    for (int i = 0; i < 9; ++i) CHECK(out.value()[i] == doctest::Approx(data[i]).epsilon(1e-12));
}

TEST_CASE("softmax of zeros is uniform, sums to one, strictly positive") {
    Tensor x = Tensor::zeros(1, 3);
    Tensor p = softmax(x);
    for (int j = 0; j < 3; ++j) CHECK(p.value()[j] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Real> d(8);
        for (auto& v : d) v = static_cast<Real>(rng.uniform(-20, 20));
        Tensor probs = softmax(Tensor::from_vector(2, 4, d));
        for (int i = 0; i < 2; ++i) {
            Real total = 0;
            for (int j = 0; j < 4; ++j) {
                CHECK(probs.at(i, j) > 0.0);
                total += probs.at(i, j);
            }
            CHECK(std::fabs(total - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("sigmoid(0) is 0.5") {
    CHECK(sigmoid(Tensor::scalar(0)).item() == doctest::Approx(0.5));
}

TEST_CASE("backward of sum(w*w) gives 2w") {
    Tensor w = Tensor::from_vector(1, 2, {1, 2}, true);
    Tensor loss = sum(mul(w, w));
    backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("gradient of unused parameter is zero") {
    Tensor w = Tensor::from_vector(1, 2, {1, 2}, true);
    Tensor p = Tensor::from_vector(1, 2, {3, 4}, true);
    Tensor loss = sum(mul(w, w));
    backward(loss);
    p.zero_grad();
    CHECK(p.grad()[0] == 0.0);
    CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor w = Tensor::from_vector(1, 2, {1, 2}, true);
    CHECK_THROWS(backward(mul(w, w)));
}

TEST_CASE("shape mismatches are rejected with a diagnostic") {
    Tensor a = Tensor::zeros(2, 3);
    Tensor b = Tensor::zeros(2, 3);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
    Tensor c = Tensor::zeros(3, 2);
    CHECK_THROWS_AS(add(a, c), std::invalid_argument);
    CHECK_THROWS_AS(slice(a, 2, 5), std::invalid_argument);
}

TEST_CASE("div rejects exact zero denominators") {
    Tensor a = Tensor::from_vector(1, 2, {1, 2});
    Tensor z = Tensor::from_vector(1, 2, {1, 0});
    CHECK_THROWS_AS(div(a, z), std::invalid_argument);
}

namespace {

// Random composite over the primitive set; exercises every op with mixed
// fan-out so accumulation paths are covered.
Tensor composite_loss(nn::ParamRegistry& reg) {
    Tensor w1 = reg.at("w1"); // [3,5]
    Tensor w2 = reg.at("w2"); // [5,4]
    Tensor w3 = reg.at("w3"); // [1,4]
    Tensor h = tanh(matmul(w1, w2));                       // [3,4]
    Tensor s = softmax(add(h, repeat_rows(w3, 3)));        // [3,4]
    Tensor e = exp(mul_scalar(h, Real(0.3)));
    Tensor l = log(add_scalar(relu(h), Real(0.2)));
    Tensor mixed = add(mul(s, e), div(l, add_scalar(sigmoid(h), Real(1))));
    Tensor left = slice(mixed, 0, 2);
    Tensor right = slice(mixed, 2, 2);
    Tensor cat = concat(left, clamp(right, Real(-0.5), Real(0.75)));
    Tensor scaled = scale_rows(cat, sum_rows(s));
    return add(mean(scaled), mul_scalar(sum(sub(e, l)), Real(0.05)));
}

} // namespace

TEST_CASE("composite gradients match central finite differences under 1e-4") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        Rng rng(seed);
        nn::ParamRegistry reg;
        reg.add("w1", Tensor::uniform_init(3, 5, Real(0.8), rng));
        reg.add("w2", Tensor::uniform_init(5, 4, Real(0.8), rng));
        reg.add("w3", Tensor::uniform_init(1, 4, Real(0.8), rng));
        double err = gradient_check(reg, [&] { return composite_loss(reg); });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("rows_sum matches dense matmul with a multi-hot matrix") {
    Rng rng(5);
    nn::ParamRegistry reg;
    Tensor w = reg.add("w", Tensor::uniform_init(6, 3, Real(1.0), rng));
    std::vector<std::vector<int>> idx = {{0, 2, 5}, {1}, {}};
    Tensor out = rows_sum(w, idx);
    CHECK(out.rows() == 3);
    for (int j = 0; j < 3; ++j) {
        CHECK(out.at(0, j) == doctest::Approx(w.at(0, j) + w.at(2, j) + w.at(5, j)));
        CHECK(out.at(1, j) == doctest::Approx(w.at(1, j)));
        CHECK(out.at(2, j) == 0.0);
    }
    double err = gradient_check(reg, [&] { return sum(tanh(rows_sum(reg.at("w"), idx))); });
    CHECK(err < 1e-4);
}

TEST_CASE("lstm cell: zero input, state and params give zero hidden") {
    Rng rng(1);
    nn::ParamRegistry reg;
    nn::LstmCell cell(reg, "cell", 4, 3, rng);
    for (auto& [name, t] : reg.named()) {
        auto v = t.mutable_value();
        for (auto& x : v) x = 0;
    }
    auto st = cell.initial_state(2);
    auto next = cell.step(Tensor::zeros(2, 4), st);
    for (Real v : next.h.value()) CHECK(v == 0.0);
}

TEST_CASE("lstm cell rejects hidden-size mismatch") {
    Rng rng(1);
    nn::ParamRegistry reg;
    nn::LstmCell cell(reg, "cell", 4, 3, rng);
    nn::LstmState bad{Tensor::zeros(2, 5), Tensor::zeros(2, 5)};
    CHECK_THROWS_AS(cell.step(Tensor::zeros(2, 4), bad), std::invalid_argument);
}

TEST_CASE("unrolled 5-step lstm gradient matches finite differences") {
    Rng rng(42);
    nn::ParamRegistry reg;
    nn::LstmCell cell(reg, "cell", 3, 4, rng);
    nn::Linear head(reg, "head", 4, 1, rng);
    std::vector<std::vector<Real>> inputs;
    for (int t = 0; t < 5; ++t) {
        std::vector<Real> x(6);
        for (auto& v : x) v = static_cast<Real>(rng.normal() * 0.5);
        inputs.push_back(x);
    }
    auto loss_fn = [&] {
        auto st = cell.initial_state(2);
        Tensor acc = Tensor::scalar(0);
        for (int t = 0; t < 5; ++t) {
            st = cell.step(Tensor::from_vector(2, 3, inputs[t]), st);
            acc = add(acc, sum(head(st.h)));
        }
        return acc;
    };
    CHECK(gradient_check(reg, loss_fn) < 1e-4);
}

TEST_CASE("lstm step is bit-deterministic for equal seeds") {
    auto run = [] {
        Rng rng(99);
        nn::ParamRegistry reg;
        nn::LstmCell cell(reg, "cell", 3, 4, rng);
        std::vector<Real> x = {0.1, -0.2, 0.3};
        auto st = cell.step(Tensor::from_vector(1, 3, x), cell.initial_state(1));
        return std::vector<Real>(st.h.value().begin(), st.h.value().end());
    };
    auto a = run();
    auto b = run();
    CHECK(a == b);
}

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
    Rng rng(3);
    nn::ParamRegistry reg;
    Tensor w = reg.add("w", Tensor::uniform_init(2, 2, Real(1.0), rng));
    std::vector<Real> before(w.value().begin(), w.value().end());
    nn::Adam opt;
    reg.zero_grad();
    opt.step(reg);
    std::vector<Real> after(w.value().begin(), w.value().end());
    CHECK(before == after);
}

TEST_CASE("adam descends a convex quadratic monotonically") {
    // Oracle: on f(w) = 0.5*(w-3)^2 the loss sequence must be strictly
    // decreasing until convergence; closed-form optimum w*=3.
    nn::ParamRegistry reg;
    Tensor w = reg.add("w", Tensor::from_vector(1, 1, {10.0}, true));
    nn::Adam opt(Real(0.05));
    double prev = 1e300;
    for (int i = 0; i < 400; ++i) {
        reg.zero_grad();
        Tensor d = add_scalar(reg.at("w"), Real(-3));
        Tensor loss = mul_scalar(mul(d, d), Real(0.5));
        double l = loss.item();
        if (i > 0) CHECK(l <= prev + 1e-12);
        prev = l;
        backward(loss);
        opt.step(reg);
    }
    CHECK(std::fabs(w.value()[0] - 3.0) < 0.05);
}

TEST_CASE("adam aborts on non-finite gradients naming the parameter") {
    nn::ParamRegistry reg;
    Tensor w = reg.add("w.bad", Tensor::from_vector(1, 1, {1.0}, true));
    Tensor loss = sum(mul(w, w));
    backward(loss);
    w.node()->grad[0] = std::numeric_limits<Real>::quiet_NaN();
    nn::Adam opt;
    CHECK_THROWS_WITH_AS(opt.step(reg), doctest::Contains("w.bad"), std::runtime_error);
}

TEST_CASE("identical seeds give identical parameter trajectories") {
    auto run = [] {
        Rng rng(1234);
        nn::ParamRegistry reg;
        nn::Linear lin(reg, "lin", 3, 2, rng);
        nn::Adam opt;
        for (int i = 0; i < 20; ++i) {
            reg.zero_grad();
            std::vector<Real> x(3);
            for (auto& v : x) v = static_cast<Real>(rng.normal());
            Tensor loss = sum(mul(lin(Tensor::from_vector(1, 3, x)), lin(Tensor::from_vector(1, 3, x))));
            backward(loss);
            opt.step(reg);
        }
        std::vector<Real> out;
        for (const auto& [_, t] : reg.named()) out.insert(out.end(), t.value().begin(), t.value().end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("global-norm clip rescales gradients to the cap") {
    nn::ParamRegistry reg;
    Tensor a = reg.add("a", Tensor::from_vector(1, 2, {3, 0}, true));
    Tensor b = reg.add("b", Tensor::from_vector(1, 1, {4}, true));
    backward(add(sum(mul(a, a)), sum(mul(b, b))));
    // grads: a=[6,0], b=[8] -> norm 10
    auto params = reg.tensors();
    CHECK(grad_global_norm(params) == doctest::Approx(10.0));
    clip_grad_global_norm(params, Real(0.5));
    CHECK(grad_global_norm(params) == doctest::Approx(0.5));
    CHECK(a.grad()[0] == doctest::Approx(0.3));
}

TEST_CASE("checkpoint round-trip restores bit-identical parameters") {
    Rng rng(77);
    nn::ParamRegistry reg;
    nn::Linear lin(reg, "lin", 4, 3, rng);
    nn::LstmCell cell(reg, "cell", 4, 3, rng);
    auto ckpt = nn::snapshot(reg);
    nn::save_checkpoint(ckpt, "/tmp/wg_test_ckpt.bin");
    auto loaded = nn::load_checkpoint("/tmp/wg_test_ckpt.bin");
    REQUIRE(loaded.size() == ckpt.size());

    nn::ParamRegistry reg2;
    Rng rng2(78);
    nn::Linear lin2(reg2, "lin", 4, 3, rng2);
    nn::LstmCell cell2(reg2, "cell", 4, 3, rng2);
    nn::restore(reg2, loaded);
    for (const auto& [name, t] : reg.named()) {
        const auto& u = reg2.at(name);
        for (size_t i = 0; i < t.size(); ++i) CHECK(t.value()[i] == u.value()[i]);
    }
}

TEST_CASE("checkpoint restore rejects shape mismatch naming both shapes") {
    Rng rng(5);
    nn::ParamRegistry reg;
    nn::Linear lin(reg, "lin", 4, 3, rng);
    auto ckpt = nn::snapshot(reg);
    nn::ParamRegistry other;
    Rng rng2(6);
    nn::Linear lin2(other, "lin", 5, 3, rng2);
    CHECK_THROWS_WITH_AS(nn::restore(other, ckpt), doctest::Contains("lin.w"), std::runtime_error);
}

TEST_CASE("softplus_positive is positive and matches std softplus") {
    Rng rng(8);
    nn::ParamRegistry reg;
    reg.add("x", Tensor::uniform_init(1, 6, Real(5.0), rng));
    Tensor y = nn::softplus_positive(reg.at("x"));
    for (size_t i = 0; i < y.size(); ++i) {
        double exact = std::log1p(std::exp(static_cast<double>(reg.at("x").value()[i]))) + 1e-4;
        CHECK(y.value()[i] == doctest::Approx(exact).epsilon(1e-9));
        CHECK(y.value()[i] > 0.0);
    }
    CHECK(gradient_check(reg, [&] { return sum(nn::softplus_positive(reg.at("x"))); }) < 1e-4);
}
