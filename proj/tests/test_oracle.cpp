#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ssnn/oracle.hpp"

using namespace ssnn;
using namespace ssnn::testing;

TEST_CASE("degenerate model: likelihood is the forced path's joint") {
    Rng rng(8);
    GenerativeParams params = GenerativeParams::random_init(dims(1, 1, 2, 2), rng);
    Sequence seq = random_sequence(5, 2, rng);
    LatentPath forced{{1, 1, 1, 1, 1}, {1, 1, 1, 1, 1}};
    double joint = joint_log_prob(seq, forced, params);
    CHECK(exact_log_likelihood(seq, params) == doctest::Approx(joint).epsilon(1e-12));
    CHECK(brute_force_log_likelihood(seq, params) == doctest::Approx(joint).epsilon(1e-12));
    LatentPath map = map_segmentation(seq, params);
    CHECK(map.z == forced.z);
    CHECK(map.d == forced.d);
}

TEST_CASE("exact likelihood matches brute-force enumeration") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        int K = 1 + rng.uniform_int(3), M = 1 + rng.uniform_int(3), T = 2 + rng.uniform_int(5);
        GenerativeParams params = GenerativeParams::random_init(dims(K, M, 2, 2), rng);
        Sequence seq = random_sequence(T, 2, rng);
        double exact = exact_log_likelihood(seq, params);
        double brute = brute_force_log_likelihood(seq, params);
        CHECK(std::abs(exact - brute) / std::max(1.0, std::abs(brute)) < 1e-10);
    }
}

TEST_CASE("streaming mode equals the tabulated mode") {
    Rng rng(33);
    GenerativeParams params = GenerativeParams::random_init(dims(3, 3, 2, 3), rng);
    Sequence seq = random_sequence(9, 2, rng);
    OracleOptions streaming;
    streaming.streaming = true;
    CHECK(exact_log_likelihood(seq, params) ==
          doctest::Approx(exact_log_likelihood(seq, params, streaming)).epsilon(1e-12));
}

TEST_CASE("score table agrees with segment_log_prob exactly") {
    Rng rng(41);
    GenerativeParams params = GenerativeParams::random_init(dims(2, 4, 2, 3), rng);
    Sequence seq = random_sequence(7, 2, rng);
    SegmentScoreTable table = compute_segment_scores(seq, params);
    for (int t = 0; t < 7; ++t)
        for (int len = 1; len <= std::min(4, 7 - t); ++len)
            for (int k = 1; k <= 2; ++k)
                CHECK(table.at(t, len, k) == segment_log_prob(seq, t, len, k, params));
}

TEST_CASE("adding c to every emission adds T*c to the likelihood") {
    Rng rng(55);
    GenerativeParams params = GenerativeParams::random_init(dims(2, 3, 2, 2), rng);
    Sequence seq = random_sequence(6, 2, rng);
    SegmentScoreTable table = compute_segment_scores(seq, params);
    double base = exact_log_likelihood_from_table(table, params);

    double c = 0.37;
    SegmentScoreTable shifted = table;
    for (int t = 0; t < table.T; ++t)
        for (int len = 1; len <= std::min(table.M, table.T - t); ++len)
            for (int k = 1; k <= table.K; ++k) shifted.at(t, len, k) += c * len;

    double lifted = exact_log_likelihood_from_table(shifted, params);
    CHECK(lifted == doctest::Approx(base + 6.0 * c).epsilon(1e-10));
}

TEST_CASE("single-step likelihood sums init, duration and emission") {
    Rng rng(62);
    ModelDims dm = dims(3, 2, 2, 2);
    GenerativeParams params = GenerativeParams::random_init(dm, rng);
    Sequence seq = random_sequence(1, 2, rng);
    Tensor li = params.log_init();
    Tensor ld = params.log_dur_rows();
    std::vector<double> terms;
    for (int k = 1; k <= 3; ++k)
        for (int d = 1; d <= 2; ++d)
            terms.push_back(li[k - 1] + ld.at(k - 1, d - 1) + segment_log_prob(seq, 0, 1, k, params));
    CHECK(brute_force_log_likelihood(seq, params) == doctest::Approx(log_sum_exp(terms)).epsilon(1e-12));
}

TEST_CASE("map segmentation attains the enumerated maximum") {
    Rng rng(70);
    for (int trial = 0; trial < 5; ++trial) {
        int K = 1 + rng.uniform_int(3), M = 1 + rng.uniform_int(3), T = 2 + rng.uniform_int(4);
        GenerativeParams params = GenerativeParams::random_init(dims(K, M, 2, 2), rng);
        Sequence seq = random_sequence(T, 2, rng);

        double best = neg_inf();
        for_each_valid_path(T, K, M, [&](const LatentPath& p) {
            best = std::max(best, joint_log_prob(seq, p, params));
        });
        LatentPath map = map_segmentation(seq, params);
        CHECK(map.countdown_valid());
        CHECK(joint_log_prob(seq, map, params) == doctest::Approx(best).epsilon(1e-10));
    }
}

TEST_CASE("map score dominates random valid paths") {
    Rng rng(81);
    GenerativeParams params = GenerativeParams::random_init(dims(3, 4, 2, 2), rng);
    Sequence seq = random_sequence(12, 2, rng);
    LatentPath map = map_segmentation(seq, params);
    double map_score = joint_log_prob(seq, map, params);
    for (int i = 0; i < 1000; ++i) {
        LatentPath p = random_valid_path(12, 3, 4, rng);
        CHECK(joint_log_prob(seq, p, params) <= map_score + 1e-12);
    }
}

TEST_CASE("joint of any path is bounded by the likelihood") {
    Rng rng(90);
    GenerativeParams params = GenerativeParams::random_init(dims(2, 3, 2, 2), rng);
    Sequence seq = random_sequence(6, 2, rng);
    double ll = exact_log_likelihood(seq, params);
    for (int i = 0; i < 200; ++i) {
        LatentPath p = random_valid_path(6, 2, 3, rng);
        CHECK(joint_log_prob(seq, p, params) <= ll + 1e-12);
    }
}

TEST_CASE("resource guards reject oversized instances") {
    Rng rng(99);
    GenerativeParams params = GenerativeParams::random_init(dims(3, 3, 1, 1), rng);
    Sequence big = random_sequence(30, 1, rng);
    CHECK_THROWS_AS(brute_force_log_likelihood(big, params), resource_error);

    GenerativeParams wide = GenerativeParams::random_init(dims(3, 400, 1, 1), rng);
    Sequence long_seq = random_sequence(10000, 1, rng);
    CHECK_THROWS_AS(exact_log_likelihood(long_seq, wide, {}), resource_error);
    CHECK_THROWS_AS(map_segmentation(long_seq, wide), resource_error);
}

TEST_CASE("path counting matches enumeration") {
    int counted = 0;
    for_each_valid_path(5, 2, 3, [&](const LatentPath&) { ++counted; });
    CHECK(count_valid_paths(5, 2, 3) == counted);
}
