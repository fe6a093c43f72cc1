#include "debias/math.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "debias/errors.hpp"

namespace debias {

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(std::span<const double> v, const char* what) {
    if (!all_finite(v)) {
        throw DimensionError(std::string(what) + ": non-finite entry");
    }
}

Vector log_softmax(const Vector& logits) {
    if (logits.empty()) {
        throw DimensionError("log_softmax: empty logit vector");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    Vector out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] - m;
        sum += std::exp(out[i]);
    }
    const double log_sum = std::log(sum);
    for (double& x : out) x -= log_sum;
    return out;
}

Vector softmax(const Vector& logits) {
    Vector out = log_softmax(logits);
    for (double& x : out) x = std::exp(x);
    return out;
}

std::size_t argmax(const Vector& v) {
    if (v.empty()) {
        throw DimensionError("argmax: empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

namespace {

// SplitMix64 output scrambler (Steele, Lea, Flood 2014).
std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t SeededRng::next_u64() { return splitmix64(state_); }

double SeededRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::uint64_t SeededRng::uniform_int(std::uint64_t n) {
    if (n == 0) {
        throw DimensionError("uniform_int: n must be positive");
    }
    // rejection sampling over the largest multiple of n
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double SeededRng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    // Box-Muller; u1 in (0,1] keeps the log finite
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t state = base ^ (0x632be59bd9b4e019ULL * (stream + 1));
    return splitmix64(state);
}

}  // namespace debias
