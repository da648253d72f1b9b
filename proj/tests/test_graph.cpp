#include "doctest.h"

#include <cmath>

#include "dynmix/graph.hpp"
#include "dynmix/rng.hpp"

using namespace dynmix;
using ad::Graph;
using ad::Parameter;
using ad::Tensor;
using ad::Var;

TEST_CASE("elementwise forward semantics") {
    Graph g;
    Var a = g.constant(Tensor::vec({1.0, 2.0, 3.0}));
    Var b = g.constant(Tensor::vec({4.0, 0.5, -1.0}));
    CHECK(g.tensor(g.add(a, b)).data == std::vector<double>{5.0, 2.5, 2.0});
    CHECK(g.tensor(g.mul(a, b)).data == std::vector<double>{4.0, 1.0, -3.0});
    CHECK(g.tensor(g.sub(a, b)).data == std::vector<double>{-3.0, 1.5, 4.0});
    CHECK(g.value(g.dot(a, b)) == doctest::Approx(2.0));
    CHECK(g.value(g.sum(a)) == doctest::Approx(6.0));
}

TEST_CASE("softmax of zeros is uniform and sums to one") {
    Graph g;
    Var s = g.softmax(g.constant(Tensor::vec({0.0, 0.0})));
    CHECK(g.tensor(s).data[0] == doctest::Approx(0.5));
    CHECK(g.tensor(s).data[1] == doctest::Approx(0.5));

    rng::Engine eng(7);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> logits(1 + eng.uniform_int(6));
        for (double& v : logits) v = 10.0 * (eng.uniform01() - 0.5);
        Graph g2;
        const Tensor& y = g2.tensor(g2.softmax(g2.constant(Tensor::vec(logits))));
        double sum = 0.0;
        for (double v : y.data) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("sigmoid at zero") {
    Graph g;
    CHECK(g.value(g.at(g.sigmoid(g.constant(Tensor::vec({0.0}))), 0)) == doctest::Approx(0.5));
}

TEST_CASE("masked squared distance ignores masked dimensions") {
    Graph g;
    Var mu = g.constant(Tensor::vec({1.0, 5.0}));
    Var r = g.masked_sqdist({1.0, 2.0}, {1, 0}, mu);
    CHECK(g.value(r) == doctest::Approx(0.0));
}

TEST_CASE("gradient of a linear map is the input") {
    Parameter W("W", Tensor::matrix(2, 3, {0.5, -1.0, 2.0, 1.5, 0.0, -0.5}));
    std::vector<double> x = {1.0, 2.0, 3.0};
    Graph g;
    Var loss = g.sum(g.affine(g.constant(Tensor::vec(x)), g.param(W),
                              g.constant(Tensor::zeros({2}))));
    g.backward(loss);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(W.grad.data[i * 3 + j] == doctest::Approx(x[j]));
}

TEST_CASE("sigmoid gradient at zero is a quarter") {
    Parameter w("w", Tensor::vec({0.0}));
    const double c = 3.0;
    Graph g;
    Var loss = g.at(g.scale(g.sigmoid(g.param(w)), c), 0);
    g.backward(loss);
    CHECK(w.grad.data[0] == doctest::Approx(0.25 * c));
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
    Parameter w("w", Tensor::vec({1.0}));
    for (int rep = 0; rep < 2; ++rep) {
        Graph g;
        Var loss = g.at(g.scale(g.param(w), 2.0), 0);
        g.backward(loss);
    }
    CHECK(w.grad.data[0] == doctest::Approx(4.0));
    w.zero_grad();
    CHECK(w.grad.data[0] == 0.0);
}

TEST_CASE("softmax backward row-sum identity") {
    // The softmax Jacobian maps any upstream gradient to a vector summing
    // to zero.
    rng::Engine eng(11);
    for (int rep = 0; rep < 100; ++rep) {
        int k = 2 + static_cast<int>(eng.uniform_int(5));
        Parameter logits("l", Tensor::zeros({k}));
        for (double& v : logits.value.data) v = 3.0 * (eng.uniform01() - 0.5);
        std::vector<double> up(k);
        for (double& v : up) v = 2.0 * (eng.uniform01() - 0.5);
        Graph g;
        Var loss = g.dot(g.softmax(g.param(logits)), g.constant(Tensor::vec(up)));
        g.backward(loss);
        double sum = 0.0;
        for (double v : logits.grad.data) sum += v;
        CHECK(std::abs(sum) < 1e-12);
    }
}

namespace {

// Three-layer composition exercising most ops.
double composite_loss(Graph& g, Parameter& W1, Parameter& b1, Parameter& W2, Parameter& b2,
                      Parameter& w3, const std::vector<double>& x, Var* out) {
    Var h1 = g.tanh(g.affine(g.constant(Tensor::vec(x)), g.param(W1), g.param(b1)));
    Var h2 = g.softmax(g.affine(h1, g.param(W2), g.param(b2)));
    Var h3 = g.sigmoid(g.smul(g.at(h2, 0), g.param(w3)));
    Var mixed = g.add(g.log(g.add_scalar(h3, 1.0)), g.exp(g.scale(h3, -0.5)));
    Var loss = g.add(g.sum(mixed), g.dot(h2, g.log_softmax(g.param(w3))));
    if (out) *out = loss;
    return g.value(loss);
}

}  // namespace

TEST_CASE("random composite network matches finite differences") {
    rng::Engine eng(42);
    Parameter W1("W1", Tensor::zeros({4, 3})), b1("b1", Tensor::zeros({4}));
    Parameter W2("W2", Tensor::zeros({3, 4})), b2("b2", Tensor::zeros({3}));
    Parameter w3("w3", Tensor::zeros({3}));
    for (Parameter* p : {&W1, &b1, &W2, &b2, &w3})
        for (double& v : p->value.data) v = eng.normal() * 0.7;
    std::vector<double> x = {0.3, -1.2, 0.8};

    std::vector<Parameter*> params = {&W1, &b1, &W2, &b2, &w3};
    auto loss = [&]() {
        Graph g;
        return composite_loss(g, W1, b1, W2, b2, w3, x, nullptr);
    };
    auto grads = [&]() {
        for (Parameter* p : params) p->zero_grad();
        Graph g;
        Var l;
        composite_loss(g, W1, b1, W2, b2, w3, x, &l);
        g.backward(l);
    };
    ad::FdReport rep = ad::fd_check(loss, grads, params, 1e-4, 1e-4);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("fd_check on a linear loss reports near-zero error") {
    Parameter w("w", Tensor::vec({1.0, -2.0, 0.5}));
    std::vector<double> c = {2.0, 3.0, -1.0};
    std::vector<Parameter*> params = {&w};
    auto loss = [&]() {
        Graph g;
        return g.value(g.dot(g.param(w), g.constant(Tensor::vec(c))));
    };
    auto grads = [&]() {
        w.zero_grad();
        Graph g;
        Var l = g.dot(g.param(w), g.constant(Tensor::vec(c)));
        g.backward(l);
    };
    ad::FdReport rep = ad::fd_check(loss, grads, params, 1e-4, 1e-8);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("fd_check with zero tolerance fails but does not throw") {
    Parameter w("w", Tensor::vec({1.0}));
    std::vector<Parameter*> params = {&w};
    auto loss = [&]() {
        Graph g;
        return g.value(g.at(g.scale(g.param(w), 2.0), 0));
    };
    auto grads = [&]() {
        w.zero_grad();
        Graph g;
        Var l = g.at(g.scale(g.param(w), 2.0), 0);
        g.backward(l);
    };
    ad::FdReport rep = ad::fd_check(loss, grads, params, 1e-4, 0.0);
    CHECK_FALSE(rep.pass);
}

TEST_CASE("gradients are bitwise deterministic") {
    auto run = [](std::vector<double>* out) {
        Parameter W("W", Tensor::matrix(3, 3, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8, -0.9}));
        Graph g;
        Var h = g.softmax(g.affine(g.constant(Tensor::vec({1.0, -2.0, 0.5})), g.param(W),
                                   g.constant(Tensor::zeros({3}))));
        g.backward(g.dot(h, g.constant(Tensor::vec({0.2, -0.7, 1.1}))));
        *out = W.grad.data;
    };
    std::vector<double> g1, g2;
    run(&g1);
    run(&g2);
    CHECK(g1 == g2);
}

TEST_CASE("non-finite results raise instead of propagating") {
    Graph g;
    CHECK_THROWS_AS(g.log(g.constant(Tensor::vec({-1.0}))), NonFiniteError);
    CHECK_THROWS_AS(g.exp(g.constant(Tensor::vec({1e9}))), NonFiniteError);
    CHECK_THROWS_AS(g.constant(Tensor::vec({std::nan("")})), NonFiniteError);
}

TEST_CASE("backward requires a scalar loss") {
    Graph g;
    Var v = g.constant(Tensor::vec({1.0, 2.0}));
    CHECK_THROWS_AS(g.backward(v), ShapeError);
}

TEST_CASE("sampling nodes block gradient flow") {
    Parameter logits("l", Tensor::vec({0.2, -0.1, 0.4}));
    Graph g;
    Var probs = g.softmax(g.param(logits));
    Var draw = g.categorical_sample(probs, 99);
    Var loss = g.dot(draw, g.constant(Tensor::vec({1.0, 2.0, 3.0})));
    CHECK_THROWS_AS(g.backward(loss), ad::NonDifferentiableError);
}

TEST_CASE("concat pack at row smul adjoints agree with finite differences") {
    rng::Engine eng(5);
    Parameter M("M", Tensor::zeros({3, 2}));
    Parameter v("v", Tensor::zeros({2}));
    Parameter s("s", Tensor::scalar(0.0));
    for (Parameter* p : {&M, &v, &s})
        for (double& x : p->value.data) x = eng.normal();
    std::vector<Parameter*> params = {&M, &v, &s};

    auto build = [&](Graph& g, Var* out) {
        Var r1 = g.row(g.param(M), 1);
        Var cat = g.concat(r1, g.param(v));
        Var sm = g.smul(g.param(s), cat);
        Var packed = g.pack({g.at(sm, 0), g.at(sm, 3), g.sum(sm)});
        Var loss = g.dot(g.softplus(packed), g.constant(Tensor::vec({1.0, -2.0, 0.5})));
        if (out) *out = loss;
        return g.value(loss);
    };
    auto loss = [&]() {
        Graph g;
        return build(g, nullptr);
    };
    auto grads = [&]() {
        for (Parameter* p : params) p->zero_grad();
        Graph g;
        Var l;
        build(g, &l);
        g.backward(l);
    };
    ad::FdReport rep = ad::fd_check(loss, grads, params, 1e-4, 1e-4);
    CHECK(rep.pass);
}
