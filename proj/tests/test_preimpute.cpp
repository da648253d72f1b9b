#include "doctest.h"

#include <cmath>

#include "dynmix/preimpute.hpp"
#include "dynmix/rng.hpp"

using namespace dynmix;
using namespace dynmix::impute;

namespace {

data::MtsSample sparse_sample() {
    // Var 0 observed at t=1 (2.0) and t=3 (4.0); var 1 fully unobserved.
    data::MtsSample s;
    s.id = "sp";
    s.values = Mat(2, 3, missing_value());
    s.mask = MaskMat(2, 3, 0);
    s.ref_times = {1.0, 2.0, 3.0};
    s.values.at(0, 0) = 2.0;
    s.mask.at(0, 0) = 1;
    s.values.at(0, 2) = 4.0;
    s.mask.at(0, 2) = 1;
    return s;
}

PreImputeParams params_with_alpha(int d, double alpha) {
    PreImputeParams p = PreImputeParams::init(d, alpha);
    return p;
}

data::MtsSample random_sparse(int d, int w, double keep, uint64_t seed) {
    rng::Engine eng(seed);
    data::MtsSample s;
    s.id = "r";
    s.values = Mat(d, w, missing_value());
    s.mask = MaskMat(d, w, 0);
    s.ref_times.resize(w);
    for (int t = 0; t < w; ++t) s.ref_times[t] = t + 1;
    for (int i = 0; i < d; ++i)
        for (int t = 0; t < w; ++t)
            if (eng.uniform01() < keep) {
                s.mask.at(i, t) = 1;
                s.values.at(i, t) = eng.normal();
            }
    return s;
}

}  // namespace

TEST_CASE("kernel values") {
    CHECK(kernel(3.0, 3.0, 0.7) == doctest::Approx(1.0));
    CHECK(kernel(2.0, 1.0, std::log(2.0)) == doctest::Approx(0.5));
    CHECK(kernel(2.0, 4.0, std::log(2.0)) == doctest::Approx(0.0625));
    CHECK_THROWS_AS(kernel(1.0, 2.0, 0.0), InvalidArgument);
}

TEST_CASE("intensity values") {
    std::vector<double> times = {1.0, 2.0, 3.0};
    CHECK(intensity(2.0, {0, 0, 0}, times, 1.0) == doctest::Approx(0.0));
    CHECK(intensity(2.0, {0, 1, 0}, times, 1.0) == doctest::Approx(1.0));
    CHECK(intensity(2.0, {1, 0, 1}, times, std::log(2.0)) == doctest::Approx(1.0));
}

TEST_CASE("smooth: single observation extends everywhere") {
    data::MtsSample s;
    s.values = Mat(1, 4, missing_value());
    s.mask = MaskMat(1, 4, 0);
    s.ref_times = {1, 2, 3, 4};
    s.values.at(0, 1) = 7.5;
    s.mask.at(0, 1) = 1;
    auto sm = smooth(s, params_with_alpha(1, 1.0));
    for (int t = 0; t < 4; ++t) CHECK(sm.xbar.at(0, t) == doctest::Approx(7.5));
}

TEST_CASE("smooth: symmetric neighbors average") {
    data::MtsSample s;
    s.values = Mat(1, 3, missing_value());
    s.mask = MaskMat(1, 3, 0);
    s.ref_times = {1, 2, 3};
    s.values.at(0, 0) = 0.0;
    s.mask.at(0, 0) = 1;
    s.values.at(0, 2) = 2.0;
    s.mask.at(0, 2) = 1;
    for (double alpha : {0.3, 1.0, 5.0}) {
        auto sm = smooth(s, params_with_alpha(1, alpha));
        CHECK(sm.xbar.at(0, 1) == doctest::Approx(1.0));
    }
}

TEST_CASE("smooth: constant series stays constant") {
    data::MtsSample s;
    s.values = Mat(1, 5, missing_value());
    s.mask = MaskMat(1, 5, 0);
    s.ref_times = {1, 2, 3, 4, 5};
    for (int t : {0, 2, 4}) {
        s.values.at(0, t) = -3.25;
        s.mask.at(0, t) = 1;
    }
    auto sm = smooth(s, params_with_alpha(1, 2.0));
    for (int t = 0; t < 5; ++t) CHECK(sm.xbar.at(0, t) == doctest::Approx(-3.25));
}

TEST_CASE("merge: d=1 collapses to the smoothed estimate") {
    data::MtsSample s;
    s.values = Mat(1, 3, missing_value());
    s.mask = MaskMat(1, 3, 0);
    s.ref_times = {1, 2, 3};
    s.values.at(0, 0) = 1.0;
    s.mask.at(0, 0) = 1;
    s.values.at(0, 2) = 5.0;
    s.mask.at(0, 2) = 1;
    PreImputeParams p = params_with_alpha(1, 0.8);
    auto sm = smooth(s, p);
    auto dense = merge(s, sm, p);
    CHECK(dense.values.at(0, 1) == doctest::Approx(sm.xbar.at(0, 1)));
}

TEST_CASE("merge: observed entries pass through bitwise") {
    data::MtsSample s = random_sparse(3, 8, 0.6, 17);
    s.values.at(1, 2) = 3.7;
    s.mask.at(1, 2) = 1;
    PreImputeParams p = PreImputeParams::init(3);
    rng::Engine eng(2);
    for (double& v : p.rho.value.data) v = eng.normal();
    p.pin_rho_diagonal();
    auto dense = dense_impute(s, p);
    for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 8; ++t)
            if (s.mask.at(i, t)) CHECK(dense.values.at(i, t) == s.values.at(i, t));
    CHECK(dense.values.at(1, 2) == 3.7);
}

TEST_CASE("merge: scalar hand evaluation with an unobserved partner variable") {
    data::MtsSample s = sparse_sample();
    PreImputeParams p = params_with_alpha(2, std::log(2.0));  // rho = identity
    auto sm = smooth(s, p);
    // Hand evaluation at (var 0, t* = 2): kernel weights to the two
    // observations are both 1/2, so xbar_0 = 3; the unobserved partner has
    // xbar_1 = 0 but contributes the same intensity to the denominator,
    // which halves the estimate.
    CHECK(sm.xbar.at(0, 1) == doctest::Approx(3.0));
    CHECK(sm.xbar.at(1, 1) == doctest::Approx(0.0));
    auto dense = merge(s, sm, p);
    CHECK(dense.values.at(0, 1) == doctest::Approx(1.5));
    // Variable with no observations at all imputes 0.
    for (int t = 0; t < 3; ++t) CHECK(dense.values.at(1, t) == doctest::Approx(0.0));
}

TEST_CASE("merge output is bounded by rho-scaled smoothed range") {
    rng::Engine eng(23);
    for (int rep = 0; rep < 50; ++rep) {
        int d = 1 + eng.uniform_int(3), w = 3 + eng.uniform_int(6);
        data::MtsSample s = random_sparse(d, w, 0.5, 1000 + rep);
        PreImputeParams p = PreImputeParams::init(d, 0.2 + eng.uniform01());
        for (double& v : p.rho.value.data) v = 2.0 * (eng.uniform01() - 0.5);
        p.pin_rho_diagonal();
        auto sm = smooth(s, p);
        auto dense = merge(s, sm, p);
        for (int i = 0; i < d; ++i) {
            double rho_max = 0.0;
            for (int j = 0; j < d; ++j)
                rho_max = std::max(rho_max, std::abs(p.rho.value.data[i * d + j]));
            for (int t = 0; t < w; ++t) {
                if (s.mask.at(i, t)) continue;
                double xbar_max = 0.0;
                for (int j = 0; j < d; ++j)
                    xbar_max = std::max(xbar_max, std::abs(sm.xbar.at(j, t)));
                CHECK(std::abs(dense.values.at(i, t)) <= rho_max * xbar_max + 1e-12);
            }
        }
    }
}

TEST_CASE("masked payloads never influence any output") {
    data::MtsSample s = random_sparse(3, 10, 0.5, 41);
    PreImputeParams p = PreImputeParams::init(3, 0.9);
    rng::Engine eng(6);
    for (double& v : p.rho.value.data) v = eng.normal();
    p.pin_rho_diagonal();
    auto base = dense_impute(s, p);
    data::MtsSample garbled = s;
    for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 10; ++t)
            if (!garbled.mask.at(i, t)) garbled.values.at(i, t) = 1e30;
    auto poked = dense_impute(garbled, p);
    CHECK(base.values.a == poked.values.a);
}

TEST_CASE("tape forward agrees with the plain forward") {
    for (uint64_t seed : {7ULL, 8ULL, 9ULL}) {
        data::MtsSample s = random_sparse(2, 7, 0.55, seed);
        PreImputeParams p = PreImputeParams::init(2, 1.3);
        rng::Engine eng(seed);
        for (double& v : p.rho.value.data) v = eng.normal();
        p.pin_rho_diagonal();
        for (double& v : p.alpha_raw.value.data) v += 0.3 * eng.normal();
        auto dense = dense_impute(s, p);
        ad::Graph g;
        auto cols = build_dense_columns(g, s, g.param(p.alpha_raw), g.param(p.rho));
        for (int t = 0; t < s.w(); ++t) {
            const ad::Tensor& col = g.tensor(cols[t]);
            for (int i = 0; i < s.d(); ++i)
                CHECK(col.data[i] == doctest::Approx(dense.values.at(i, t)).epsilon(1e-13));
        }
    }
}

TEST_CASE("analytic gradients through smooth-merge match finite differences") {
    data::MtsSample s = random_sparse(2, 6, 0.5, 51);
    PreImputeParams p = PreImputeParams::init(2, 0.9);
    rng::Engine eng(12);
    for (double& v : p.rho.value.data) v = 0.5 * eng.normal();
    p.pin_rho_diagonal();

    std::vector<ad::Parameter*> params = {&p.alpha_raw, &p.rho};
    // Scalar loss: sum of squared dense entries plus a soft nonlinearity.
    auto build = [&](ad::Graph& g, ad::Var* out) {
        auto cols = build_dense_columns(g, s, g.param(p.alpha_raw), g.param(p.rho));
        ad::Var acc = g.scalar(0.0);
        for (auto c : cols) acc = g.add(acc, g.dot(c, g.tanh(c)));
        if (out) *out = acc;
        return g.value(acc);
    };
    auto loss = [&]() {
        ad::Graph g;
        return build(g, nullptr);
    };
    auto grads = [&]() {
        for (auto* q : params) q->zero_grad();
        ad::Graph g;
        ad::Var l;
        build(g, &l);
        g.backward(l);
    };
    ad::FdReport rep = ad::fd_check(loss, grads, params, 1e-4, 1e-4);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("softplus keeps effective bandwidths positive") {
    PreImputeParams p = PreImputeParams::init(3, 0.5);
    p.alpha_raw.value.data = {-40.0, 0.0, 40.0};
    for (double a : p.alphas()) CHECK(a > 0.0);
}
