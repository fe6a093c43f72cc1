#include <doctest.h>

#include <cmath>
#include <set>

#include "debias/errors.hpp"
#include "debias/math.hpp"
#include "support/oracles.hpp"

using namespace debias;

TEST_CASE("log_softmax of uniform logits is -ln(n)") {
    const Vector out = log_softmax({0.0, 0.0, 0.0});
    for (double x : out) CHECK(x == doctest::Approx(-std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("log_softmax matches the extended-precision oracle") {
    // frozen from oracle::log_softmax({1.0, 2.0})
    const Vector out = log_softmax({1.0, 2.0});
    CHECK(out[0] == doctest::Approx(-1.31326168751822286).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(-0.31326168751822286).epsilon(1e-12));
    const std::vector<double> want = oracle::log_softmax({1.0, 2.0});
    CHECK(oracle::max_abs_error(out, want) < 1e-15);
}

TEST_CASE("log_softmax is shift invariant") {
    SeededRng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        Vector v(1 + rng.uniform_int(6));
        for (double& x : v) x = rng.uniform(-20.0, 20.0);
        const double c = rng.uniform(-500.0, 500.0);
        Vector shifted = v;
        for (double& x : shifted) x += c;
        const Vector a = log_softmax(v);
        const Vector b = log_softmax(shifted);
        CHECK(oracle::max_abs_error(a, b) < 1e-12);
    }
}

TEST_CASE("log_softmax survives logits up to |700|") {
    const Vector out = log_softmax({700.0, -700.0});
    CHECK(all_finite(out));
    CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax basics") {
    CHECK(softmax({0.0, 0.0}) == Vector{0.5, 0.5});
    const Vector ratio = softmax({std::log(4.0), std::log(1.0)});
    CHECK(ratio[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(ratio[1] == doctest::Approx(0.2).epsilon(1e-12));
    // frozen from oracle::softmax({3, 1, 0})
    const Vector probs = softmax({3.0, 1.0, 0.0});
    CHECK(probs[0] == doctest::Approx(0.84379473448133946).epsilon(1e-10));
    CHECK(probs[1] == doctest::Approx(0.11419519938459448).epsilon(1e-10));
    CHECK(probs[2] == doctest::Approx(0.04201006613406605).epsilon(1e-10));
    CHECK(oracle::max_abs_error(probs, oracle::softmax({3.0, 1.0, 0.0})) < 1e-15);
}

TEST_CASE("softmax sums to one and equals exp of log_softmax") {
    SeededRng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        Vector v(1 + rng.uniform_int(8));
        for (double& x : v) x = rng.uniform(-30.0, 30.0);
        const Vector p = softmax(v);
        double sum = 0.0;
        for (double x : p) {
            CHECK(x > 0.0);
            CHECK(x <= 1.0);
            sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
        const Vector lsm = log_softmax(v);
        for (std::size_t i = 0; i < v.size(); ++i) {
            CHECK(std::abs(p[i] - std::exp(lsm[i])) < 1e-12);
        }
        CHECK(argmax(p) == argmax(v));
    }
}

TEST_CASE("argmax tie-break picks the lowest index") {
    CHECK(argmax({0.2, 0.7, 0.1}) == 1);
    CHECK(argmax({0.5, 0.5}) == 0);
    CHECK(argmax({1.0, 1.0, 1.0}) == 0);
}

TEST_CASE("argmax is invariant under monotone maps of the logits") {
    CHECK(argmax(softmax({2.0, 1.0})) == argmax(Vector{2.0, 1.0}));
    CHECK(argmax(softmax({4.0, 2.0})) == 0);
}

TEST_CASE("empty input raises a dimension error") {
    CHECK_THROWS_AS(log_softmax({}), DimensionError);
    CHECK_THROWS_AS(softmax({}), DimensionError);
    CHECK_THROWS_AS(argmax({}), DimensionError);
}

TEST_CASE("equal seeds give identical streams") {
    SeededRng a(123456789);
    SeededRng b(123456789);
    for (int i = 0; i < 10000; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    SeededRng c(1), d(2);
    bool differ = false;
    for (int i = 0; i < 16; ++i) differ |= (c.next_u64() != d.next_u64());
    CHECK(differ);
}

TEST_CASE("uniform stays in range and normal looks standard") {
    SeededRng rng(42);
    double sum = 0.0, sum_sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const double z = rng.normal();
        sum += z;
        sum_sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sum_sq / n - 1.0) < 0.05);
}

TEST_CASE("uniform_int covers [0, n) without bias artifacts") {
    SeededRng rng(5);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 10000; ++i) ++counts[rng.uniform_int(5)];
    for (int c : counts) CHECK(c > 1800);
    CHECK_THROWS_AS(rng.uniform_int(0), DimensionError);
}

TEST_CASE("split produces decorrelated child streams") {
    SeededRng parent(99);
    SeededRng child_a = parent.split();
    SeededRng child_b = parent.split();
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 100; ++i) {
        seen.insert(child_a.next_u64());
        seen.insert(child_b.next_u64());
    }
    CHECK(seen.size() == 200);
}

TEST_CASE("derive_seed is stable and stream-sensitive") {
    CHECK(derive_seed(1, 0) == derive_seed(1, 0));
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("shuffle is a deterministic permutation") {
    std::vector<int> items{0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<int> again = items;
    SeededRng a(3), b(3);
    a.shuffle(items);
    b.shuffle(again);
    CHECK(items == again);
    std::set<int> unique(items.begin(), items.end());
    CHECK(unique.size() == 8);
}

TEST_CASE("require_finite rejects NaN and infinity") {
    CHECK_THROWS_AS(require_finite(Vector{1.0, std::nan("")}, "x"), DimensionError);
    CHECK_THROWS_AS(require_finite(Vector{1.0, INFINITY}, "x"), DimensionError);
    CHECK_NOTHROW(require_finite(Vector{1.0, -2.5}, "x"));
}
