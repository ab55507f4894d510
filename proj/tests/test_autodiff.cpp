#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "interpomae/autodiff.hpp"
#include "interpomae/rng.hpp"
#include "interpomae/tensor.hpp"
#include "oracles.hpp"

using namespace interpomae;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -2.0, double hi = 2.0) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

Shape random_shape(Rng& rng, std::size_t max_rank = 3, std::size_t max_dim = 4) {
    const std::size_t rank = 1 + rng.below(max_rank);
    Shape s(rank);
    for (auto& d : s) d = 1 + rng.below(max_dim);
    return s;
}

// Scalar probe: sum(out * R) with a fixed random weighting R, so the upstream
// gradient reaching the op is non-uniform.
Var probe(Tape& tape, Var out, const Tensor& weights) {
    return tape.sum(tape.mul(out, tape.constant(weights)));
}

}  // namespace

TEST_CASE("primitive forward examples") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Var prod = tape.matmul(a, eye);
    CHECK(bitwise_equal(tape.value(prod), Tensor({2, 2}, {1, 2, 3, 4})));

    Var z = tape.tanh(tape.constant(Tensor({3}, {0, 0, 0})));
    for (std::size_t i = 0; i < 3; ++i) CHECK(tape.value(z)[i] == 0.0);

    Var r = tape.sqrt_eps(tape.constant(Tensor::scalar(4.0)));
    CHECK(tape.value(r)[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("backward on linear and quadratic sums") {
    {
        Tape tape;
        Var p = tape.leaf(Tensor({3}, {5, -1, 2}));
        Var loss = tape.sum(p);
        tape.backward(loss);
        CHECK(bitwise_equal(tape.grad(p), Tensor({3}, {1, 1, 1})));
    }
    {
        Tape tape;
        Var p = tape.leaf(Tensor({3}, {1, 2, 3}));
        Var loss = tape.sum(tape.mul(p, p));
        tape.backward(loss);
        CHECK(bitwise_equal(tape.grad(p), Tensor({3}, {2, 4, 6})));
    }
}

TEST_CASE("gradient accumulation across repeated use") {
    Tape tape;
    Var p = tape.leaf(Tensor({4}, {0.5, -2, 3, 7}));
    Var loss = tape.add(tape.sum(p), tape.sum(p));
    tape.backward(loss);
    CHECK(bitwise_equal(tape.grad(p), Tensor({4}, {2, 2, 2, 2})));
}

TEST_CASE("backward is deterministic bitwise") {
    auto run = [](std::vector<Tensor>& grads) {
        Tape tape;
        Var w = tape.leaf(Tensor({2, 3}, {0.3, -0.8, 1.1, 0.02, 2.5, -1.7}));
        Var x = tape.constant(Tensor({3}, {0.9, -0.1, 0.44}));
        Var h = tape.tanh(tape.matmul(w, x));
        Var loss = tape.sum(tape.mul(h, h));
        tape.backward(loss);
        grads.push_back(tape.grad(w));
    };
    std::vector<Tensor> grads;
    run(grads);
    run(grads);
    CHECK(bitwise_equal(grads[0], grads[1]));
}

TEST_CASE("two layer MLP matches finite differences") {
    Rng rng(401);
    ParamStore params;
    params.insert("w1", random_tensor(rng, {4, 3}, -0.8, 0.8));
    params.insert("b1", random_tensor(rng, {4}, -0.5, 0.5));
    params.insert("w2", random_tensor(rng, {2, 4}, -0.8, 0.8));
    params.insert("b2", random_tensor(rng, {2}, -0.5, 0.5));
    const Tensor input = random_tensor(rng, {3});

    GraphFn f = [&](Tape& tape, ParamBinder& bind) {
        Var x = tape.constant(input);
        Var h = tape.tanh(tape.add(tape.matmul(bind("w1"), x), bind("b1")));
        Var y = tape.add(tape.matmul(bind("w2"), h), bind("b2"));
        return tape.sum(tape.mul(y, y));
    };

    const GradMap analytic = backward(f, params);
    const GradMap numeric = oracles::fd_gradient(f, params, 1e-5);
    CHECK(oracles::max_rel_error(analytic, numeric) < 1e-4);
}

TEST_CASE("grad_check on squared norm loss") {
    Rng rng(77);
    ParamStore params;
    params.insert("p", random_tensor(rng, {5}));
    GraphFn f = [](Tape& tape, ParamBinder& bind) {
        Var p = bind("p");
        return tape.sum(tape.mul(p, p));
    };
    CHECK(grad_check(f, params, 1e-5) < 1e-6);
}

TEST_CASE("grad_check with a parameter the loss ignores") {
    Rng rng(78);
    ParamStore params;
    params.insert("used", random_tensor(rng, {3}));
    params.insert("ignored", random_tensor(rng, {2}));
    GraphFn f = [](Tape& tape, ParamBinder& bind) {
        Var p = bind("used");
        return tape.sum(tape.mul(p, p));
    };
    const GradMap analytic = backward(f, params);
    const GradMap numeric = oracles::fd_gradient(f, params, 1e-5);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(analytic.at("ignored")[i] == 0.0);
        CHECK(numeric.at("ignored")[i] == 0.0);
    }
    CHECK(grad_check(f, params, 1e-5) < 1e-6);
}

TEST_CASE("grad_check on a hand rolled GRU cell step") {
    Rng rng(90);
    const std::size_t in = 3, hidden = 4;
    ParamStore params;
    for (const char* g : {"z", "r", "n"}) {
        params.insert(std::string("W") + g, random_tensor(rng, {hidden, in}, -0.7, 0.7));
        params.insert(std::string("U") + g, random_tensor(rng, {hidden, hidden}, -0.7, 0.7));
        params.insert(std::string("b") + g, random_tensor(rng, {hidden}, -0.3, 0.3));
    }
    const Tensor x = random_tensor(rng, {in});
    const Tensor h_prev = random_tensor(rng, {hidden}, -0.9, 0.9);

    GraphFn f = [&](Tape& tape, ParamBinder& bind) {
        Var xv = tape.constant(x);
        Var hv = tape.constant(h_prev);
        Var z = tape.sigmoid(
            tape.add(tape.add(tape.matmul(bind("Wz"), xv), tape.matmul(bind("Uz"), hv)),
                     bind("bz")));
        Var r = tape.sigmoid(
            tape.add(tape.add(tape.matmul(bind("Wr"), xv), tape.matmul(bind("Ur"), hv)),
                     bind("br")));
        Var n = tape.tanh(tape.add(
            tape.add(tape.matmul(bind("Wn"), xv), tape.mul(r, tape.matmul(bind("Un"), hv))),
            bind("bn")));
        Var keep = tape.mul(z, hv);
        Var ones = tape.constant(Tensor::full({hidden}, 1.0));
        Var update = tape.mul(tape.sub(ones, z), n);
        Var h = tape.add(keep, update);
        return tape.sum(tape.mul(h, h));
    };
    CHECK(grad_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("every primitive matches finite differences on random inputs") {
    Rng rng(2026);
    const double h = 1e-5;
    const double tol = 1e-4;

    for (int iter = 0; iter < 100; ++iter) {
        CAPTURE(iter);

        // elementwise binary: add, sub, mul
        {
            const Shape s = random_shape(rng);
            ParamStore params;
            params.insert("a", random_tensor(rng, s));
            params.insert("b", random_tensor(rng, s));
            const Tensor w = random_tensor(rng, s);
            for (int which = 0; which < 3; ++which) {
                GraphFn f = [&, which](Tape& tape, ParamBinder& bind) {
                    Var a = bind("a"), b = bind("b");
                    Var out = which == 0 ? tape.add(a, b) : which == 1 ? tape.sub(a, b)
                                                                       : tape.mul(a, b);
                    return probe(tape, out, w);
                };
                CHECK(oracles::max_rel_error(backward(f, params),
                                             oracles::fd_gradient(f, params, h)) < tol);
            }
        }

        // elementwise unary: tanh, sigmoid, mul_scalar, sqrt_eps
        {
            const Shape s = random_shape(rng);
            ParamStore params;
            params.insert("a", random_tensor(rng, s));
            const Tensor w = random_tensor(rng, s);
            const double scale = rng.uniform(-3.0, 3.0);
            for (int which = 0; which < 3; ++which) {
                GraphFn f = [&, which](Tape& tape, ParamBinder& bind) {
                    Var a = bind("a");
                    Var out = which == 0 ? tape.tanh(a) : which == 1 ? tape.sigmoid(a)
                                                                     : tape.mul_scalar(a, scale);
                    return probe(tape, out, w);
                };
                CHECK(oracles::max_rel_error(backward(f, params),
                                             oracles::fd_gradient(f, params, h)) < tol);
            }
            ParamStore pos;  // keep sqrt_eps away from the kink at zero
            pos.insert("a", random_tensor(rng, s, 0.1, 2.0));
            GraphFn f = [&](Tape& tape, ParamBinder& bind) {
                return probe(tape, tape.sqrt_eps(bind("a")), w);
            };
            CHECK(oracles::max_rel_error(backward(f, pos), oracles::fd_gradient(f, pos, h)) <
                  tol);
        }

        // reductions: sum, mean
        {
            const Shape s = random_shape(rng);
            ParamStore params;
            params.insert("a", random_tensor(rng, s));
            for (int which = 0; which < 2; ++which) {
                GraphFn f = [&, which](Tape& tape, ParamBinder& bind) {
                    Var a = bind("a");
                    Var reduced = which == 0 ? tape.sum(a) : tape.mean(a);
                    return tape.mul(reduced, reduced);
                };
                CHECK(oracles::max_rel_error(backward(f, params),
                                             oracles::fd_gradient(f, params, h)) < tol);
            }
        }

        // matmul, both right-hand arities
        {
            const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
            ParamStore params;
            params.insert("a", random_tensor(rng, {m, k}));
            params.insert("b", random_tensor(rng, {k, n}));
            params.insert("x", random_tensor(rng, {k}));
            const Tensor w2 = random_tensor(rng, {m, n});
            const Tensor w1 = random_tensor(rng, {m});
            GraphFn f2 = [&](Tape& tape, ParamBinder& bind) {
                return probe(tape, tape.matmul(bind("a"), bind("b")), w2);
            };
            GraphFn f1 = [&](Tape& tape, ParamBinder& bind) {
                return probe(tape, tape.matmul(bind("a"), bind("x")), w1);
            };
            CHECK(oracles::max_rel_error(backward(f2, params),
                                         oracles::fd_gradient(f2, params, h)) < tol);
            CHECK(oracles::max_rel_error(backward(f1, params),
                                         oracles::fd_gradient(f1, params, h)) < tol);
        }

        // concat + slice + reshape on a shared random shape
        {
            Shape s = random_shape(rng);
            const std::size_t axis = rng.below(s.size());
            ParamStore params;
            params.insert("a", random_tensor(rng, s));
            Shape s2 = s;
            s2[axis] = 1 + rng.below(4);
            params.insert("b", random_tensor(rng, s2));
            Shape joined = s;
            joined[axis] += s2[axis];
            const Tensor w = random_tensor(rng, joined);
            GraphFn fc = [&](Tape& tape, ParamBinder& bind) {
                return probe(tape, tape.concat({bind("a"), bind("b")}, axis), w);
            };
            CHECK(oracles::max_rel_error(backward(fc, params),
                                         oracles::fd_gradient(fc, params, h)) < tol);

            const std::size_t len = 1 + rng.below(s[axis]);
            const std::size_t start = rng.below(s[axis] - len + 1);
            Shape sliced = s;
            sliced[axis] = len;
            const Tensor ws = random_tensor(rng, sliced);
            GraphFn fs = [&](Tape& tape, ParamBinder& bind) {
                return probe(tape, tape.slice(bind("a"), axis, start, len), ws);
            };
            CHECK(oracles::max_rel_error(backward(fs, params),
                                         oracles::fd_gradient(fs, params, h)) < tol);

            const Tensor wf = random_tensor(rng, {shape_numel(s)});
            GraphFn fr = [&](Tape& tape, ParamBinder& bind) {
                return probe(tape, tape.reshape(bind("a"), {shape_numel(s)}), wf);
            };
            CHECK(oracles::max_rel_error(backward(fr, params),
                                         oracles::fd_gradient(fr, params, h)) < tol);
        }
    }
}

TEST_CASE("shape errors name the op and both shapes") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 3}));
    Var b = tape.leaf(Tensor({3, 2}));
    CHECK_THROWS_WITH_AS(tape.add(a, b), "add: shape mismatch [2,3] vs [3,2]",
                         std::invalid_argument);
    CHECK_THROWS_AS(tape.matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(tape.slice(a, 0, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(tape.reshape(a, {7}), std::invalid_argument);
}

TEST_CASE("non-scalar loss is rejected") {
    Tape tape;
    Var p = tape.leaf(Tensor({3}, {1, 2, 3}));
    CHECK_THROWS_AS(tape.backward(p), std::invalid_argument);
}

TEST_CASE("non-finite op output is a hard error") {
    Tape tape;
    CHECK_THROWS_AS(tape.leaf(Tensor({1}, {std::nan("")})), std::runtime_error);
    Var neg = tape.leaf(Tensor({1}, {-5.0}));
    CHECK_THROWS_AS(tape.sqrt_eps(neg), std::runtime_error);
}

TEST_CASE("unreachable parameters receive zero grad in the map") {
    ParamStore params;
    params.insert("p", Tensor({2}, {1.0, 2.0}));
    params.insert("never_used", Tensor({3}, {1.0, 1.0, 1.0}));
    GraphFn f = [](Tape& tape, ParamBinder& bind) { return tape.sum(bind("p")); };
    const GradMap g = backward(f, params);
    CHECK(bitwise_equal(g.at("never_used"), Tensor({3})));
    CHECK(bitwise_equal(g.at("p"), Tensor({2}, {1.0, 1.0})));
}

TEST_CASE("constants cut the gradient path") {
    Tape tape;
    Var p = tape.leaf(Tensor({2}, {1.0, 2.0}));
    Var c = tape.constant(Tensor({2}, {3.0, 4.0}));
    Var loss = tape.sum(tape.mul(p, c));
    tape.backward(loss);
    CHECK(bitwise_equal(tape.grad(p), Tensor({2}, {3.0, 4.0})));
    CHECK_THROWS_AS(tape.grad(c), std::logic_error);
}
