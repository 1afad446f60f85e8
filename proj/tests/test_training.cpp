#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ssnn/grad_check.hpp"
#include "ssnn/oracle.hpp"
#include "ssnn/training.hpp"

using namespace ssnn;
using namespace ssnn::testing;

namespace {

TrainConfig tiny_config(const ModelDims& dm) {
    TrainConfig cfg;
    cfg.dims = dm;
    cfg.batch_size = 2;
    cfg.iterations = 30;
    cfg.learning_rate = 0.05;
    cfg.tau_start = 0.5;
    cfg.tau_end = 0.1;
    cfg.seed = 7;
    return cfg;
}

// Central finite differences of a plain double-valued function over a store.
std::vector<Tensor> finite_diff(const std::function<double()>& fn, ParamStore& store, double step) {
    std::vector<Tensor> out;
    for (int slot = 0; slot < store.size(); ++slot) {
        Tensor saved = store.value(slot);
        Tensor grad(saved.shape());
        Tensor work = saved;
        for (std::int64_t i = 0; i < saved.numel(); ++i) {
            work[i] = saved[i] + step;
            store.set(slot, work);
            double plus = fn();
            work[i] = saved[i] - step;
            store.set(slot, work);
            double minus = fn();
            work[i] = saved[i];
            store.set(slot, work);
            grad[i] = (plus - minus) / (2.0 * step);
        }
        store.set(slot, saved);
        out.push_back(std::move(grad));
    }
    return out;
}

}  // namespace

TEST_CASE("degenerate ELBO equals the exact log-likelihood") {
    ModelDims dm = dims(1, 1, 2, 2, 2, 2);
    Rng rng(3);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Sequence seq = random_sequence(6, 2, rng);

    ad::Tape tape;
    Rng noise(11);
    ElboGraph g = build_elbo_graph(tape, seq, theta, phi, Temperature(0.5), TrainMode::HardST, &noise);
    double exact = exact_log_likelihood(seq, theta);
    CHECK(tape.val(g.elbo)[0] == doctest::Approx(exact).epsilon(1e-12));
    CHECK(g.path.log_q == 0.0);
    CHECK(elbo_term(seq, g.path, theta, phi) == doctest::Approx(exact).epsilon(1e-12));
}

TEST_CASE("hard-ST ELBO value decomposes as joint minus posterior") {
    ModelDims dm = dims(3, 3, 2, 3, 3, 3);
    Rng rng(5);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Sequence seq = random_sequence(9, 2, rng);

    for (int trial = 0; trial < 5; ++trial) {
        ad::Tape tape;
        Rng noise(100 + trial);
        ElboGraph g = build_elbo_graph(tape, seq, theta, phi, Temperature(0.3), TrainMode::HardST, &noise);
        double joint = joint_log_prob(seq, g.path.hard, theta);
        double lq = posterior_log_prob(g.path.hard, seq, phi);
        CHECK(tape.val(g.elbo)[0] == doctest::Approx(joint - lq).epsilon(1e-9));
        CHECK(g.path.log_q == doctest::Approx(lq).epsilon(1e-9));
        CHECK(elbo_term(seq, g.path, theta) == doctest::Approx(tape.val(g.elbo)[0]).epsilon(1e-9));
    }
}

TEST_CASE("ELBO is deterministic given the noise stream") {
    ModelDims dm = dims(2, 3, 2, 2, 3, 3);
    Rng rng(9);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Sequence seq = random_sequence(7, 2, rng);

    auto run = [&]() {
        ad::Tape tape;
        Rng noise(42);
        ElboGraph g = build_elbo_graph(tape, seq, theta, phi, Temperature(0.2), TrainMode::HardST, &noise);
        return tape.val(g.elbo)[0];
    };
    CHECK(run() == run());
}

TEST_CASE("degenerate-model theta gradients match the exact likelihood") {
    ModelDims dm = dims(1, 1, 2, 2, 2, 2);
    Rng rng(13);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Sequence seq = random_sequence(5, 2, rng);

    TrainConfig cfg = tiny_config(dm);
    BatchGradients bg = elbo_gradients({&seq}, theta, phi, Temperature(0.5), cfg, 0);

    auto ll = [&]() { return exact_log_likelihood(seq, theta); };
    std::vector<Tensor> fd = finite_diff(ll, theta.store(), 1e-5);
    for (int slot = 0; slot < theta.store().size(); ++slot)
        for (std::int64_t i = 0; i < fd[static_cast<size_t>(slot)].numel(); ++i) {
            double a = bg.theta[slot][i];
            double b = fd[static_cast<size_t>(slot)][i];
            CHECK(std::abs(a - b) / std::max(1.0, std::abs(b)) < 1e-6);
        }
}

TEST_CASE("relaxed-mode ELBO gradients pass a full finite-difference audit") {
    ModelDims dm = dims(2, 2, 2, 3, 3, 3);
    Rng rng(17);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Sequence seq = random_sequence(4, 2, rng);

    Rng noise(23);
    ad::Tape probe;
    ElboGraph realized = build_elbo_graph(probe, seq, theta, phi, Temperature(0.4), TrainMode::Relaxed, &noise);
    RelaxedPath frozen = realized.path;

    LossBuilder loss = [&](ad::Tape& t, const ParamStore&) {
        return build_elbo_graph(t, seq, theta, phi, Temperature(0.4), TrainMode::Relaxed, nullptr, &frozen).elbo;
    };
    CHECK(grad_check(loss, theta.store(), 1e-5) < 1e-4);
    CHECK(grad_check(loss, phi.store(), 1e-5) < 1e-4);
}

TEST_CASE("duplicating a batch entry leaves the mean gradient unchanged") {
    ModelDims dm = dims(2, 2, 2, 2, 3, 3);
    Rng rng(19);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Sequence seq = random_sequence(6, 2, rng);
    seq.id = "dup";

    TrainConfig cfg = tiny_config(dm);
    BatchGradients single = elbo_gradients({&seq}, theta, phi, Temperature(0.3), cfg, 2);
    BatchGradients doubled = elbo_gradients({&seq, &seq}, theta, phi, Temperature(0.3), cfg, 2);
    CHECK(doubled.mean_elbo == doctest::Approx(single.mean_elbo).epsilon(1e-12));
    for (int slot = 0; slot < theta.store().size(); ++slot)
        for (std::int64_t i = 0; i < single.theta[slot].numel(); ++i)
            CHECK(std::abs(single.theta[slot][i] - doubled.theta[slot][i]) < 1e-12);
    for (int slot = 0; slot < phi.store().size(); ++slot)
        for (std::int64_t i = 0; i < single.phi[slot].numel(); ++i)
            CHECK(std::abs(single.phi[slot][i] - doubled.phi[slot][i]) < 1e-12);
}

TEST_CASE("a whole-sequence chunk reproduces unchunked gradients") {
    ModelDims dm = dims(2, 3, 2, 2, 3, 3);
    Rng rng(29);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Sequence seq = random_sequence(8, 2, rng);

    TrainConfig cfg = tiny_config(dm);
    BatchGradients plain = elbo_gradients({&seq}, theta, phi, Temperature(0.3), cfg, 1);
    cfg.chunk_len = 8;
    BatchGradients chunked = elbo_gradients({&seq}, theta, phi, Temperature(0.3), cfg, 1);
    CHECK(plain.mean_elbo == chunked.mean_elbo);
    for (int slot = 0; slot < theta.store().size(); ++slot)
        for (std::int64_t i = 0; i < plain.theta[slot].numel(); ++i)
            CHECK(plain.theta[slot][i] == chunked.theta[slot][i]);
}

TEST_CASE("truncated-BPTT chunks run and stay finite") {
    ModelDims dm = dims(2, 4, 2, 2, 3, 3);
    Rng rng(31);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Sequence seq = random_sequence(20, 2, rng);

    TrainConfig cfg = tiny_config(dm);
    cfg.chunk_len = 6;
    BatchGradients bg = elbo_gradients({&seq}, theta, phi, Temperature(0.3), cfg, 0);
    CHECK(std::isfinite(bg.mean_elbo));
    CHECK(bg.theta.all_finite());
    CHECK(bg.phi.all_finite());

    // the hard countdown must chain coherently across chunk cuts
    cfg.chunk_len = 7;
    BatchGradients bg2 = elbo_gradients({&seq}, theta, phi, Temperature(0.3), cfg, 0);
    CHECK(std::isfinite(bg2.mean_elbo));
}

TEST_CASE("adam takes the textbook first step") {
    ParamStore params;
    params.add("p", Tensor::scalar(1.0));
    OptimizerState state = OptimizerState::for_store(params);
    ad::Gradients g;
    g.store = &params;
    g.tensors.push_back(Tensor::scalar(1.0));
    adam_step(params, g, state, 0.001, 0.9, 0.999, 1e-8);
    CHECK(params.value("p")[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-6));
}

TEST_CASE("zero gradients never move parameters") {
    ParamStore params;
    params.add("p", Tensor::vector({1.0, -2.0}));
    OptimizerState state = OptimizerState::for_store(params);
    ad::Gradients g;
    g.store = &params;
    g.tensors.push_back(Tensor(Shape{2}));
    for (int i = 0; i < 50; ++i) adam_step(params, g, state, 0.1, 0.9, 0.999, 1e-8);
    CHECK(params.value("p")[0] == 1.0);
    CHECK(params.value("p")[1] == -2.0);
}

TEST_CASE("temperature annealing hits both endpoints") {
    TrainConfig cfg;
    cfg.iterations = 100;
    cfg.tau_start = 0.15;
    cfg.tau_end = 0.01;
    CHECK(anneal_temperature(0, cfg) == doctest::Approx(0.15));
    CHECK(anneal_temperature(100, cfg) == doctest::Approx(0.01));
    CHECK(anneal_temperature(500, cfg) == doctest::Approx(0.01));
    for (int s = 1; s < 100; ++s) CHECK(anneal_temperature(s, cfg) < anneal_temperature(s - 1, cfg));

    cfg.tau_start = cfg.tau_end = 1e-4;  // constant schedule
    for (int s = 0; s < 100; s += 10) CHECK(anneal_temperature(s, cfg) == 1e-4);
}

TEST_CASE("clipping preserves the gradient direction") {
    ParamStore store;
    store.add("a", Tensor::vector({3.0, 4.0}));
    ad::Gradients g1, g2;
    g1.store = g2.store = &store;
    g1.tensors.push_back(Tensor::vector({30.0, 40.0}));
    g2.tensors.push_back(Tensor::vector({0.0, 0.0}));
    double norm = clip_gradients(g1, g2, 10.0);
    CHECK(norm == doctest::Approx(50.0));
    CHECK(g1.tensors[0][0] == doctest::Approx(6.0));
    CHECK(g1.tensors[0][1] == doctest::Approx(8.0));
}

TEST_CASE("training improves the ELBO on data from a known model") {
    ModelDims dm = dims(2, 3, 2, 2, 4, 4);
    Rng rng(37);
    GenerativeParams truth = GenerativeParams::random_init(dm, rng);
    // separate the emission means so there is structure to find
    Tensor b_mu(Shape{2, 2});
    b_mu.at(0, 0) = -2.0;
    b_mu.at(1, 0) = 2.0;
    truth.store().set(truth.store().require("b_mu"), b_mu);

    Dataset data;
    for (int i = 0; i < 6; ++i) {
        Rng gen(200 + i);
        auto [seq, path] = sample_sequence(truth, 24, gen, "seq" + std::to_string(i));
        data.sequences.push_back(seq);
    }

    Rng init(41);
    GenerativeParams theta = GenerativeParams::random_init(dm, init);
    InferenceParams phi = InferenceParams::random_init(dm, init);

    TrainConfig cfg = tiny_config(dm);
    cfg.iterations = 150;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.05;
    TrainResult result = train(data, theta, phi, cfg);
    REQUIRE(!result.aborted);
    REQUIRE(result.history.size() == 150);

    auto mean_over = [&](int from, int to) {
        double s = 0.0;
        for (int i = from; i < to; ++i) s += result.history[static_cast<size_t>(i)].mean_elbo;
        return s / (to - from);
    };
    CHECK(mean_over(140, 150) > mean_over(0, 10));
}

TEST_CASE("degenerate training is maximum likelihood") {
    ModelDims dm = dims(1, 1, 1, 1, 2, 2);
    Rng rng(43);
    GenerativeParams truth = GenerativeParams::random_init(dm, rng);
    Dataset data;
    for (int i = 0; i < 4; ++i) {
        Rng gen(300 + i);
        auto [seq, path] = sample_sequence(truth, 12, gen, "s" + std::to_string(i));
        data.sequences.push_back(seq);
    }

    Rng init(47);
    GenerativeParams theta = GenerativeParams::random_init(dm, init);
    InferenceParams phi = InferenceParams::random_init(dm, init);
    TrainConfig cfg = tiny_config(dm);
    cfg.iterations = 250;
    cfg.batch_size = 4;
    TrainResult result = train(data, theta, phi, cfg);
    REQUIRE(!result.aborted);

    // with K = M = 1 the estimator has zero variance: the last ELBO record is
    // exactly the mean exact log-likelihood of its batch; compare dataset-wide
    double total = 0.0;
    for (const Sequence& s : data.sequences) total += exact_log_likelihood(s, theta);
    total /= data.size();
    CHECK(std::abs(result.history.back().mean_elbo - total) < std::abs(total) * 0.2 + 2.0);
}

TEST_CASE("training runs are reproducible") {
    ModelDims dm = dims(2, 2, 2, 2, 3, 3);
    Rng rng(53);
    GenerativeParams truth = GenerativeParams::random_init(dm, rng);
    Dataset data;
    for (int i = 0; i < 3; ++i) {
        Rng gen(400 + i);
        auto [seq, path] = sample_sequence(truth, 10, gen, "r" + std::to_string(i));
        data.sequences.push_back(seq);
    }

    auto run = [&](std::uint64_t seed) {
        Rng init(seed);
        GenerativeParams theta = GenerativeParams::random_init(dm, init);
        InferenceParams phi = InferenceParams::random_init(dm, init);
        TrainConfig cfg = tiny_config(dm);
        cfg.seed = seed;
        cfg.iterations = 25;
        TrainResult r = train(data, theta, phi, cfg);
        return std::make_pair(r, theta.store().value("b_mu"));
    };
    auto [r1, p1] = run(99);
    auto [r2, p2] = run(99);
    REQUIRE(r1.history.size() == r2.history.size());
    for (size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].mean_elbo == r2.history[i].mean_elbo);
        CHECK(r1.history[i].grad_norm == r2.history[i].grad_norm);
    }
    for (std::int64_t i = 0; i < p1.numel(); ++i) CHECK(p1[i] == p2[i]);
}

TEST_CASE("a diverging run aborts and keeps the last good parameters") {
    ModelDims dm = dims(2, 2, 2, 2, 3, 3);
    Rng rng(59);
    GenerativeParams theta = GenerativeParams::random_init(dm, rng);
    InferenceParams phi = InferenceParams::random_init(dm, rng);
    Dataset data;
    Sequence seq = random_sequence(8, 2, rng);
    data.sequences.push_back(seq);

    TrainConfig cfg = tiny_config(dm);
    cfg.iterations = 400;
    cfg.learning_rate = 1e4;  // drive sigma logits into overflow
    cfg.clip_norm = 1e9;
    TrainResult result = train(data, theta, phi, cfg);
    if (result.aborted) {
        CHECK(!result.abort_reason.empty());
        CHECK(theta.store().all_finite());
        CHECK(phi.store().all_finite());
    }
}
