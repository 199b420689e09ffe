#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "rftlab/rng.hpp"

using namespace rftlab;

TEST_CASE("identical seed reproduces the stream exactly") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng c(42), d(43);
    bool all_equal = true;
    for (int i = 0; i < 16; ++i) all_equal = all_equal && c.next_u64() == d.next_u64();
    CHECK_FALSE(all_equal);
}

TEST_CASE("uniform draws live in [0,1) and fill the interval") {
    Rng rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);

    Rng r2(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = r2.uniform(-2.0, 5.0);
        CHECK(u >= -2.0);
        CHECK(u < 5.0);
    }
}

TEST_CASE("gaussian sample mean obeys the law of large numbers") {
    Rng rng(123);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sumsq += g * g;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.02);
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("uniform_int is in range and covers all values") {
    Rng rng(5);
    std::vector<int> counts(10, 0);
    for (int i = 0; i < 10000; ++i) {
        const int k = rng.uniform_int(10);
        REQUIRE(k >= 0);
        REQUIRE(k < 10);
        ++counts[k];
    }
    for (int c : counts) CHECK(c > 700);  // each bucket near 1000
    CHECK_THROWS(rng.uniform_int(0));
}

TEST_CASE("named sub-streams are independent of consumption order") {
    // Drawing from one stream must not shift its sibling.
    Rng root(99);
    Rng a1 = root.sub("alpha");
    Rng b1 = root.sub("beta");
    const std::uint64_t b_first = b1.next_u64();

    Rng root2(99);
    Rng a2 = root2.sub("alpha");
    for (int i = 0; i < 100; ++i) a2.next_u64();  // burn the sibling
    Rng b2 = root2.sub("beta");
    CHECK(b2.next_u64() == b_first);

    // Different names and different indices give different streams.
    CHECK(root.sub("alpha").next_u64() != root.sub("beta").next_u64());
    CHECK(root.sub(0).next_u64() != root.sub(1).next_u64());
    // Same name twice gives the same stream.
    CHECK(root.sub("gamma").next_u64() == root.sub("gamma").next_u64());
}

TEST_CASE("shuffle is a permutation and is seed-deterministic") {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> w = v;

    Rng(11).shuffle(v);
    Rng(11).shuffle(w);
    CHECK(v == w);

    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(50);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(sorted == expect);

    std::vector<int> u(50);
    std::iota(u.begin(), u.end(), 0);
    Rng(12).shuffle(u);
    CHECK(u != v);
}

TEST_CASE("hash helpers are stable across calls") {
    CHECK(splitmix64(0) == splitmix64(0));
    CHECK(splitmix64(1) != splitmix64(2));
    CHECK(fnv1a64("abc") == fnv1a64("abc"));
    CHECK(fnv1a64("abc") != fnv1a64("abd"));
}
