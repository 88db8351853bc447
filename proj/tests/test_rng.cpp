#include "doctest.h"

#include "covfk/rng.hpp"

#include <cmath>
#include <set>

using namespace covfk;

TEST_SUITE_BEGIN("rng");

TEST_CASE("identical (seed, stream) pairs reproduce bit-identical values") {
    CounterRng a(RngConfig{42, 7});
    CounterRng b(RngConfig{42, 7});
    for (std::uint64_t i = 0; i < 100; ++i) {
        CHECK(a.bits(i) == b.bits(i));
        CHECK(a.gaussian(i) == b.gaussian(i));
    }
}

TEST_CASE("split is deterministic and children differ") {
    auto s1 = split_streams(RngConfig{1, 0}, 2);
    auto s2 = split_streams(RngConfig{1, 0}, 2);
    REQUIRE(s1.size() == 2);
    CHECK(s1[0] == s2[0]);
    CHECK(s1[1] == s2[1]);
    CHECK(s1[0].stream != s1[1].stream);

    auto one = split_streams(RngConfig{1, 0}, 1);
    CHECK(one[0] == s1[0]); // n=1 child equals the first child of any split
}

TEST_CASE("distinct stream ids give distinct first increments, seeds 0..100") {
    std::set<double> firsts;
    for (std::uint64_t seed = 0; seed <= 100; ++seed) {
        for (std::uint64_t stream = 0; stream < 4; ++stream) {
            CounterRng r(RngConfig{seed, stream});
            firsts.insert(r.gaussian(0));
        }
    }
    CHECK(firsts.size() == 101 * 4);
}

TEST_CASE("gaussian moments are sane") {
    CounterRng r(RngConfig{123, 0});
    const int n = 200000;
    double s = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        const double g = r.gaussian(i);
        s += g;
        s2 += g * g;
        s4 += g * g * g * g;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
    CHECK(std::abs(s4 / n - 3.0) < 0.1);
}

TEST_CASE("uniform stays inside (0,1]") {
    CounterRng r(RngConfig{9, 9});
    for (std::uint64_t i = 0; i < 10000; ++i) {
        const double u = r.uniform(i);
        CHECK(u > 0.0);
        CHECK(u <= 1.0);
    }
}

TEST_SUITE_END();
