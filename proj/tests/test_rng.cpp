#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "agsd/rng.hpp"

namespace rng = agsd::rng;

TEST_CASE("derive_seed is stable and separates purposes and indices") {
    const auto s = rng::derive_seed(42, "train", 3, 7);
    CHECK(s == rng::derive_seed(42, "train", 3, 7));
    CHECK(s != rng::derive_seed(42, "poison", 3, 7));
    CHECK(s != rng::derive_seed(42, "train", 4, 7));
    CHECK(s != rng::derive_seed(42, "train", 3, 8));
    CHECK(s != rng::derive_seed(43, "train", 3, 7));
}

TEST_CASE("uniform draws stay in [0,1) and ranges are honored") {
    rng::Rng r(1);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 100; ++i) {
        const double u = r.uniform(-2.0, 3.0);
        CHECK(u >= -2.0);
        CHECK(u < 3.0);
    }
}

TEST_CASE("uniform_below bounds and rejection of zero") {
    rng::Rng r(2);
    for (int i = 0; i < 1000; ++i) CHECK(r.uniform_below(7) < 7);
    CHECK_THROWS_AS(r.uniform_below(0), std::invalid_argument);

    // every residue is reachable
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 200; ++i) seen.insert(r.uniform_below(5));
    CHECK(seen.size() == 5);
}

TEST_CASE("normal draws have roughly standard moments") {
    rng::Rng r(3);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(mean == Catch::Approx(0.0).margin(0.05));
    CHECK(var == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("identical seeds give identical streams") {
    rng::Rng a(99), b(99);
    for (int i = 0; i < 50; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("shuffled_indices is a deterministic permutation") {
    const auto p = rng::shuffled_indices(20, 7);
    CHECK(p == rng::shuffled_indices(20, 7));
    CHECK(p != rng::shuffled_indices(20, 8));

    std::vector<int> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 20; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("sample_without_replacement returns sorted distinct ids") {
    const auto s = rng::sample_without_replacement(10, 4, 5);
    REQUIRE(s.size() == 4);
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] > s[i - 1]);
    for (int v : s) {
        CHECK(v >= 0);
        CHECK(v < 10);
    }

    CHECK(rng::sample_without_replacement(6, 0, 1).empty());
    const auto all = rng::sample_without_replacement(6, 6, 1);
    for (int i = 0; i < 6; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);

    CHECK_THROWS_AS(rng::sample_without_replacement(5, 6, 1), std::invalid_argument);
    CHECK_THROWS_AS(rng::sample_without_replacement(5, -1, 1), std::invalid_argument);
}
