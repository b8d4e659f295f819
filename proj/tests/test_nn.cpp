#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mtfnet/nn.hpp"
#include "oracles.hpp"

using namespace mtfnet;
using namespace mtfnet::nn;

using Mat = DenseMatrix<double>;

TEST_CASE("linear layer examples") {
    ParamStore<double> params;
    Rng rng(1);

    LinearLayer<double> identity;
    identity.weight = params.create("id.W", Mat::Identity(2, 2));
    identity.bias = params.create("id.b", Mat::Zero(1, 2));
    Mat x(3, 2);
    x << 1, 2, 3, 4, 5, 6;
    CHECK((linear(constant<double>(x), identity).value() - x).cwiseAbs().maxCoeff() == 0.0);

    LinearLayer<double> bias_only;
    bias_only.weight = params.create("b.W", Mat::Zero(2, 2));
    Mat b(1, 2);
    b << 1, 2;
    bias_only.bias = params.create("b.b", b);
    const auto out = linear(constant<double>(x), bias_only).value();
    for (int r = 0; r < 3; ++r) {
        CHECK(out(r, 0) == 1.0);
        CHECK(out(r, 1) == 2.0);
    }

    LinearLayer<double> affine;
    affine.weight = params.create("a.W", Mat::Identity(2, 2));
    Mat b2(1, 2);
    b2 << 0.5, -0.5;
    affine.bias = params.create("a.b", b2);
    Mat row(1, 2);
    row << 1, 2;
    const auto y = linear(constant<double>(row), affine).value();
    CHECK(y(0, 0) == doctest::Approx(1.5));
    CHECK(y(0, 1) == doctest::Approx(1.5));
}

TEST_CASE("attention: degenerate and hand-computed cases") {
    // Sequence length 1: the only attention weight is 1, context = V.
    Mat q1(1, 2), k1(1, 2), v1(1, 2);
    q1 << 0.3, -0.7;
    k1 << 1.0, 2.0;
    v1 << 5.0, 6.0;
    const auto single = attention(constant<double>(q1), constant<double>(k1),
                                  constant<double>(v1), 1);
    CHECK(single.head_weights[0].value()(0, 0) == doctest::Approx(1.0));
    CHECK((single.context.value() - v1).cwiseAbs().maxCoeff() < 1e-12);

    // Equal key rows: uniform weights, context rows are the mean of V.
    Rng rng(2);
    Mat q(4, 2), v(4, 2);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
            q(i, j) = uniform(rng, -1, 1);
            v(i, j) = uniform(rng, -1, 1);
        }
    Mat k = Mat::Ones(4, 2);
    const auto uniform_att =
        attention(constant<double>(q), constant<double>(k), constant<double>(v), 1);
    const Mat mean_v = v.colwise().mean();
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c)
            CHECK(uniform_att.head_weights[0].value()(r, c) == doctest::Approx(0.25));
        CHECK((uniform_att.context.value().row(r) - mean_v).cwiseAbs().maxCoeff() < 1e-12);
    }

    // Two tokens, one head, d_k = 1: scalar softmax.
    Mat q2(2, 1), k2(2, 1), v2(2, 2);
    q2 << 1, 0;
    k2 << 1, 0;
    v2 << 1, 0, 0, 1;
    const auto two = attention(constant<double>(q2), constant<double>(k2),
                               constant<double>(v2), 1);
    CHECK(two.head_weights[0].value()(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(two.head_weights[0].value()(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));

    CHECK_THROWS_AS(attention(constant<double>(q2), constant<double>(k2),
                              constant<double>(v2), 3),
                    InvalidHeadCount);
}

TEST_CASE("attention weights are row-stochastic") {
    Rng rng(3);
    for (int trial = 0; trial < 25; ++trial) {
        const int seq = 2 + static_cast<int>(uniform_index(rng, 6));
        const int heads = 1 << uniform_index(rng, 3);
        const int width = heads * (1 + static_cast<int>(uniform_index(rng, 4)));
        Mat q(seq, width), k(seq, width), v(seq, width);
        for (int i = 0; i < seq; ++i)
            for (int j = 0; j < width; ++j) {
                q(i, j) = uniform(rng, -2, 2);
                k(i, j) = uniform(rng, -2, 2);
                v(i, j) = uniform(rng, -2, 2);
            }
        const auto att =
            attention(constant<double>(q), constant<double>(k), constant<double>(v), heads);
        CHECK(att.head_weights.size() == static_cast<std::size_t>(heads));
        for (const auto& w : att.head_weights) {
            CHECK(w.value().minCoeff() >= 0.0);
            for (int r = 0; r < seq; ++r)
                CHECK(w.value().row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
        }
        CHECK(att.context.rows() == seq);
        CHECK(att.context.cols() == width);
    }
}

TEST_CASE("positional encoding values and bounds") {
    const auto pe = positional_encoding<double>(8, 6);
    for (int i = 0; i < 6; ++i) CHECK(pe(0, i) == (i % 2 == 0 ? 0.0 : 1.0));

    const auto pe4 = positional_encoding<double>(4, 4);
    CHECK(pe4(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-9));

    const auto pe2 = positional_encoding<double>(4, 2);
    CHECK(pe2(2, 1) == doctest::Approx(std::cos(2.0)).epsilon(1e-9));

    CHECK(pe.maxCoeff() <= 1.0);
    CHECK(pe.minCoeff() >= -1.0);
    CHECK_THROWS_AS(positional_encoding<double>(4, 5), OddDimension);
}

TEST_CASE("adamw: fixed point, clipping, closed-form single step") {
    // Zero gradients and zero decay leave parameters unchanged.
    ParamStore<double> params;
    Rng rng(4);
    auto w = params.create("w", xavier_uniform<double>(3, 3, rng));
    const Mat before = w.value();
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW<double> opt(cfg);
    backward(scale(sum_all(w), 0.0));  // gradient is exactly zero
    opt.step(params);
    CHECK((w.value() - before).cwiseAbs().maxCoeff() == 0.0);

    // Single scalar parameter, one step: hand-stepped recurrence.
    {
        ParamStore<double> ps;
        auto p = ps.create("p", Mat::Constant(1, 1, 2.0));
        AdamWConfig c;
        c.lr = 0.1;
        c.weight_decay = 0.01;
        c.clip_norm = 10.0;
        AdamW<double> o(c);
        backward(scale(sum_all(p), 3.0));  // dL/dp = 3
        o.step(ps);
        const double g = 3.0;
        const double m = (1 - c.beta1) * g, v = (1 - c.beta2) * g * g;
        const double m_hat = m / (1 - c.beta1), v_hat = v / (1 - c.beta2);
        const double expected =
            2.0 - c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * 2.0);
        CHECK(p.value()(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    }

    // Gradient norm 10 against clip 1.0: the applied gradient has norm 1.
    {
        ParamStore<double> ps;
        auto p = ps.create("p", Mat::Zero(1, 2));
        AdamWConfig c;
        c.lr = 0.05;
        c.weight_decay = 0.0;
        c.clip_norm = 1.0;
        AdamW<double> o(c);
        Mat dir(2, 1);
        dir << 6.0, 8.0;  // gradient [6, 8], norm 10
        backward(matmul(p, constant<double>(dir)));
        CHECK(ps.grad_norm() == doctest::Approx(10.0));
        o.step(ps);
        // Clipped gradient is [0.6, 0.8]; first-step update direction is
        // g_hat / (|g_hat| + eps) elementwise.
        const double u0 = 0.6 / (0.6 + c.eps), u1 = 0.8 / (0.8 + c.eps);
        CHECK(p.value()(0, 0) == doctest::Approx(-c.lr * u0).epsilon(1e-9));
        CHECK(p.value()(0, 1) == doctest::Approx(-c.lr * u1).epsilon(1e-9));
    }
}

TEST_CASE("xavier bounds and determinism") {
    Rng rng(11);
    const auto w = xavier_uniform<double>(30, 20, rng);
    const double bound = std::sqrt(6.0 / 50.0);
    CHECK(w.maxCoeff() <= bound);
    CHECK(w.minCoeff() >= -bound);

    Rng r1(5), r2(5);
    CHECK((xavier_uniform<double>(4, 4, r1) - xavier_uniform<double>(4, 4, r2))
              .cwiseAbs()
              .maxCoeff() == 0.0);
}

TEST_CASE("unused parameters are reported with zero gradient") {
    ParamStore<double> params;
    Rng rng(6);
    auto used = params.create("used", xavier_uniform<double>(2, 2, rng));
    params.create("unused", xavier_uniform<double>(2, 2, rng));

    backward(sum_all(used));
    const auto disconnected = params.disconnected();
    REQUIRE(disconnected.size() == 1);
    CHECK(disconnected[0] == "unused");
    CHECK_FALSE(params.at("unused").has_grad());

    params.zero_grad();
    CHECK_FALSE(params.at("used").has_grad());
}

TEST_CASE("softmax axis wrapper") {
    Mat x(2, 2);
    x << 0, 1, 2, 3;
    const auto rows = softmax(constant<double>(x), 1).value();
    for (int r = 0; r < 2; ++r) CHECK(rows.row(r).sum() == doctest::Approx(1.0));
    const auto cols = softmax(constant<double>(x), 0).value();
    for (int c = 0; c < 2; ++c) CHECK(cols.col(c).sum() == doctest::Approx(1.0));
}
