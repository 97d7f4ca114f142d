#include <set>

#include "doctest.h"
#include "gridhack/common/rng.hpp"

using gridhack::Rng;

TEST_CASE("same seed reproduces the stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("pinned outputs: the generator algorithm must not drift") {
    // First three outputs for seed 1, cross-computed with an independent
    // implementation; any change to seeding or the update rule breaks
    // every recorded trace.
    Rng rng(1);
    CHECK(rng.next_u64() == 0xb3f2af6d0fc710c5ULL);
    CHECK(rng.next_u64() == 0x853b559647364ceaULL);
    CHECK(rng.next_u64() == 0x92f89756082a4514ULL);
}

TEST_CASE("bounded draws stay in range and cover values") {
    Rng rng(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = rng.bounded(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("range is inclusive on both ends") {
    Rng rng(9);
    bool lo = false, hi = false;
    for (int i = 0; i < 1000; ++i) {
        const int v = rng.range(3, 5);
        CHECK(v >= 3);
        CHECK(v <= 5);
        lo |= v == 3;
        hi |= v == 5;
    }
    CHECK(lo);
    CHECK(hi);
}

TEST_CASE("forked streams differ from each other and the base") {
    Rng base(1234);
    Rng f0 = Rng::fork(1234, 0);
    Rng f1 = Rng::fork(1234, 1);
    CHECK(base.next_u64() != f0.next_u64());
    CHECK(f0.next_u64() != f1.next_u64());
    Rng f0b = Rng::fork(1234, 0);
    Rng f0c = Rng::fork(1234, 0);
    for (int i = 0; i < 10; ++i) CHECK(f0b.next_u64() == f0c.next_u64());
}

TEST_CASE("doubles land in [0,1)") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double d = rng.next_double();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
    }
}

TEST_CASE("shuffle is a permutation and seed-stable") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<int> w = v;
    Rng a(3), b(3);
    a.shuffle(v);
    b.shuffle(w);
    CHECK(v == w);
    std::set<int> s(v.begin(), v.end());
    CHECK(s.size() == 10);
}
