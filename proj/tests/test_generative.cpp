#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ssnn/grad_check.hpp"
#include "ssnn/oracle.hpp"
#include "ssnn/tape.hpp"

using namespace ssnn;
using namespace ssnn::testing;

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;
}

TEST_CASE("transition countdown puts all mass on the decrement") {
    Rng rng(1);
    GenerativeParams params = GenerativeParams::random_init(dims(3, 4, 2, 2), rng);
    Tensor lp = transition_log_probs(2, 3, params);
    for (int z = 1; z <= 3; ++z)
        for (int d = 1; d <= 4; ++d) {
            double v = lp[(z - 1) * 4 + (d - 1)];
            if (z == 2 && d == 2)
                CHECK(v == 0.0);
            else
                CHECK(v == neg_inf());
        }
}

TEST_CASE("degenerate model transitions to the only pair") {
    GenerativeParams params = zero_params(dims(1, 1, 1, 1));
    Tensor lp = transition_log_probs(1, 1, params);
    CHECK(lp.numel() == 1);
    CHECK(lp[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("uniform tables give uniform boundary transitions") {
    GenerativeParams params = zero_params(dims(2, 2, 1, 1));
    Tensor lp = transition_log_probs(1, 1, params);
    for (int i = 0; i < 4; ++i) CHECK(std::exp(lp[i]) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("transition rows exponentiate to one") {
    Rng rng(7);
    GenerativeParams params = GenerativeParams::random_init(dims(3, 3, 2, 2), rng);
    for (int z = 1; z <= 3; ++z)
        for (int d = 1; d <= 3; ++d) {
            Tensor lp = transition_log_probs(z, d, params);
            double s = 0.0;
            for (std::int64_t i = 0; i < lp.numel(); ++i) s += std::exp(lp[i]);
            CHECK(std::abs(s - 1.0) < 1e-10);
        }
}

TEST_CASE("transition index range is checked") {
    GenerativeParams params = zero_params(dims(2, 2, 1, 1));
    CHECK_THROWS_AS(transition_log_probs(0, 1, params), contract_error);
    CHECK_THROWS_AS(transition_log_probs(1, 3, params), contract_error);
}

TEST_CASE("recurrent update at zero parameters is zero") {
    GenerativeParams params = zero_params(dims(2, 2, 3, 4));
    Tensor h = recurrent_update(Tensor(Shape{4}), Tensor(Shape{3}), one_hot(0, 2), params);
    for (int i = 0; i < 4; ++i) CHECK(h[i] == 0.0);
}

TEST_CASE("one-hot weights use exactly the selected slice") {
    Rng rng(3);
    GenerativeParams params = GenerativeParams::random_init(dims(3, 2, 2, 3), rng);
    Tensor h_prev(Shape{3}), x_prev(Shape{2});
    for (int i = 0; i < 3; ++i) h_prev[i] = rng.normal();
    for (int i = 0; i < 2; ++i) x_prev[i] = rng.normal();

    Tensor mix(Shape{3});
    mix[1] = 1.0;
    Tensor a = recurrent_update(h_prev, x_prev, one_hot(1, 3), params);
    Tensor b = recurrent_update(h_prev, x_prev, mix, params);
    for (int i = 0; i < 3; ++i) {
        CHECK(a[i] == b[i]);
        CHECK(a[i] > -1.0);
        CHECK(a[i] < 1.0);
    }
}

TEST_CASE("recurrent update mixture weights carry finite-difference gradients") {
    Rng rng(13);
    ModelDims dm = dims(3, 2, 2, 3);
    GenerativeParams gen = GenerativeParams::random_init(dm, rng);
    Tensor h_prev(Shape{3}), x_prev(Shape{2});
    for (int i = 0; i < 3; ++i) h_prev[i] = rng.normal();
    for (int i = 0; i < 2; ++i) x_prev[i] = rng.normal();

    ParamStore weights;
    weights.add("w", Tensor::vector({0.2, 0.5, 0.3}));

    LossBuilder loss = [&](ad::Tape& t, const ParamStore& p) {
        ad::Var w = t.param(p, "w");
        ad::Var pre = t.add(t.add(t.bank_matvec(t.constant(gen.W_x()), w, t.constant(x_prev)),
                                  t.bank_matvec(t.constant(gen.W_h()), w, t.constant(h_prev))),
                            t.mix_rows(t.constant(gen.b_h()), w));
        return t.sum(t.tanh(pre));
    };
    CHECK(grad_check(loss, weights, 1e-5) < 1e-6);

    // tape forward agrees with the value-path implementation
    ad::Tape t;
    ad::Var w = t.constant(weights.value("w"));
    ad::Var pre = t.add(t.add(t.bank_matvec(t.constant(gen.W_x()), w, t.constant(x_prev)),
                              t.bank_matvec(t.constant(gen.W_h()), w, t.constant(h_prev))),
                        t.mix_rows(t.constant(gen.b_h()), w));
    ad::Var h_tape = t.tanh(pre);
    Tensor h_val = recurrent_update(h_prev, x_prev, weights.value("w"), gen);
    for (int i = 0; i < 3; ++i) CHECK(t.val(h_tape)[i] == doctest::Approx(h_val[i]).epsilon(1e-14));
}

TEST_CASE("emission log-prob of a standard normal at the origin") {
    {
        GenerativeParams params = zero_params(dims(1, 1, 1, 2));
        double lp = emission_log_prob(Tensor(Shape{1}), Tensor(Shape{2}), one_hot(0, 1), params);
        CHECK(lp == doctest::Approx(-kHalfLog2Pi).epsilon(1e-9));
    }
    {
        GenerativeParams params = zero_params(dims(1, 1, 2, 2));
        double lp = emission_log_prob(Tensor(Shape{2}), Tensor(Shape{2}), one_hot(0, 1), params);
        CHECK(lp == doctest::Approx(-2.0 * kHalfLog2Pi).epsilon(1e-9));
    }
}

TEST_CASE("emission at the mode with unit variance") {
    // mu = x exactly: b_mu set to x, everything else zero
    ModelDims dm = dims(1, 1, 3, 2);
    GenerativeParams params = zero_params(dm);
    Tensor x = Tensor::vector({0.4, -1.2, 2.0});
    Tensor b_mu(Shape{1, 3});
    for (int j = 0; j < 3; ++j) b_mu.at(0, j) = x[j];
    params.store().set(params.store().require("b_mu"), b_mu);
    double lp = emission_log_prob(x, Tensor(Shape{2}), one_hot(0, 1), params);
    CHECK(lp == doctest::Approx(-1.5 * 2.0 * kHalfLog2Pi).epsilon(1e-9));
}

TEST_CASE("single-step segment is one emission from the h0 update") {
    Rng rng(5);
    ModelDims dm = dims(2, 3, 2, 3);
    GenerativeParams params = GenerativeParams::random_init(dm, rng);
    Sequence seq = random_sequence(4, 2, rng);

    double lp = segment_log_prob(seq, 1, 1, 2, params);
    Tensor h0(Shape{3});
    for (int i = 0; i < 3; ++i) h0[i] = params.h0().at(1, i);
    Tensor h = recurrent_update(h0, Tensor(Shape{2}), one_hot(1, 2), params);
    Tensor x1(Shape{2});
    for (int j = 0; j < 2; ++j) x1[j] = seq.frame(1)[j];
    CHECK(lp == doctest::Approx(emission_log_prob(x1, h, one_hot(1, 2), params)).epsilon(1e-14));
}

TEST_CASE("zero-parameter segment of zeros scores standard normals") {
    ModelDims dm = dims(1, 2, 3, 2);
    GenerativeParams params = zero_params(dm);
    Sequence seq;
    seq.id = "z";
    seq.x = Tensor(Shape{2, 3});
    CHECK(segment_log_prob(seq, 0, 2, 1, params) == doctest::Approx(-2.0 * 3.0 * kHalfLog2Pi).epsilon(1e-9));
}

TEST_CASE("segment range is checked") {
    GenerativeParams params = zero_params(dims(1, 4, 1, 1));
    Sequence seq;
    seq.x = Tensor(Shape{3, 1});
    CHECK_THROWS_AS(segment_log_prob(seq, 2, 2, 1, params), contract_error);
}

TEST_CASE("joint log-prob of the trivial instance") {
    GenerativeParams params = zero_params(dims(1, 1, 1, 1));
    Sequence seq;
    seq.x = Tensor(Shape{1, 1});
    LatentPath path{{1}, {1}};
    CHECK(joint_log_prob(seq, path, params) == doctest::Approx(-kHalfLog2Pi).epsilon(1e-6));
}

TEST_CASE("countdown violations score minus infinity") {
    Rng rng(2);
    GenerativeParams params = GenerativeParams::random_init(dims(2, 3, 1, 1), rng);
    Sequence seq = random_sequence(3, 1, rng);
    LatentPath bad{{1, 2, 2}, {2, 2, 1}};  // z changes while d counts down
    CHECK(joint_log_prob(seq, bad, params) == neg_inf());
    LatentPath bad2{{1, 1, 1}, {2, 2, 1}};  // d fails to decrement
    CHECK(joint_log_prob(seq, bad2, params) == neg_inf());
}

TEST_CASE("segment scores decompose the joint") {
    Rng rng(23);
    ModelDims dm = dims(3, 3, 2, 2);
    GenerativeParams params = GenerativeParams::random_init(dm, rng);
    Sequence seq = random_sequence(6, 2, rng);
    LatentPath path = random_valid_path(6, 3, 3, rng);

    Tensor li = params.log_init();
    Tensor lt = params.log_trans_rows();
    Tensor ld = params.log_dur_rows();
    double structural = li[path.z[0] - 1] + ld.at(path.z[0] - 1, path.d[0] - 1);
    for (int t = 1; t < 6; ++t) {
        if (path.d[t - 1] > 1) continue;
        structural += lt.at(path.z[t - 1] - 1, path.z[t] - 1) + ld.at(path.z[t] - 1, path.d[t] - 1);
    }
    double segments = 0.0;
    for (int s : path.segment_starts())
        segments += segment_log_prob(seq, s, std::min(path.d[s], 6 - s), path.z[s], params);

    CHECK(joint_log_prob(seq, path, params) == doctest::Approx(structural + segments).epsilon(1e-12));
}

TEST_CASE("joint summed over all paths equals the exact likelihood") {
    Rng rng(31);
    ModelDims dm = dims(2, 2, 2, 2);
    GenerativeParams params = GenerativeParams::random_init(dm, rng);
    Sequence seq = random_sequence(4, 2, rng);

    std::vector<double> terms;
    for_each_valid_path(4, 2, 2, [&](const LatentPath& p) { terms.push_back(joint_log_prob(seq, p, params)); });
    double total = log_sum_exp(terms);
    CHECK(total == doctest::Approx(exact_log_likelihood(seq, params)).epsilon(1e-10));
}

TEST_CASE("degenerate sampling is the forced path") {
    GenerativeParams params = zero_params(dims(1, 1, 1, 1));
    Rng rng(9);
    auto [seq, path] = sample_sequence(params, 5, rng);
    for (int t = 0; t < 5; ++t) {
        CHECK(path.z[t] == 1);
        CHECK(path.d[t] == 1);
    }
    CHECK(seq.length() == 5);
}

TEST_CASE("sampling is deterministic under a fixed seed") {
    Rng rng1(77), rng2(77);
    ModelDims dm = dims(3, 4, 2, 2);
    Rng init(4);
    GenerativeParams params = GenerativeParams::random_init(dm, init);
    auto [s1, p1] = sample_sequence(params, 20, rng1);
    auto [s2, p2] = sample_sequence(params, 20, rng2);
    CHECK(p1.z == p2.z);
    CHECK(p1.d == p2.d);
    for (std::int64_t i = 0; i < s1.x.numel(); ++i) CHECK(s1.x[i] == s2.x[i]);
}

TEST_CASE("sampled paths are valid and never score minus infinity") {
    Rng init(15);
    GenerativeParams params = GenerativeParams::random_init(dims(3, 3, 2, 2), init);
    Rng rng(100);
    for (int i = 0; i < 200; ++i) {
        auto [seq, path] = sample_sequence(params, 8, rng);
        CHECK(path.countdown_valid());
        CHECK(joint_log_prob(seq, path, params) > neg_inf());
    }
}

TEST_CASE("sampled durations follow the duration table") {
    // K = 1, M = 2, p(d) = (0.2, 0.8); boundary draws are Bernoulli
    ModelDims dm = dims(1, 2, 1, 1);
    GenerativeParams params = zero_params(dm);
    Tensor dur(Shape{1, 2});
    dur.at(0, 0) = std::log(0.2);
    dur.at(0, 1) = std::log(0.8);
    params.store().set(params.store().require("dur"), dur);

    Rng rng(555);
    int draws = 0, ones = 0;
    for (int i = 0; i < 2000; ++i) {
        auto [seq, path] = sample_sequence(params, 7, rng);
        for (int t : path.segment_starts()) {
            ++draws;
            if (path.d[t] == 1) ++ones;
        }
    }
    double p_hat = static_cast<double>(ones) / draws;
    double sigma = std::sqrt(0.2 * 0.8 / draws);
    CHECK(std::abs(p_hat - 0.2) < 3.0 * sigma);
}
