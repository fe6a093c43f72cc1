#pragma once
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace debias {

/// Dense column of 64-bit floats. The whole toolkit works in double
/// precision; values stored in datasets and models must be finite.
using Vector = std::vector<double>;

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), values(r * c, fill) {}

    double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

bool all_finite(std::span<const double> v);

/// Throws DimensionError naming `what` if any entry is NaN or infinite.
void require_finite(std::span<const double> v, const char* what);

/// log softmax(logits), stabilized by max subtraction so |logit| <= 700
/// cannot overflow. exp of the result sums to 1 within 1e-12.
Vector log_softmax(const Vector& logits);

/// exp(log_softmax(logits)); entries in (0,1], sum 1 within 1e-12.
Vector softmax(const Vector& logits);

/// Index of the maximum entry; ties resolve to the lowest index.
std::size_t argmax(const Vector& v);

/// Deterministic splittable RNG (SplitMix64 core). The same seed yields
/// the same stream on every platform; distributions below are computed
/// from raw bits, not via std:: distributions, to keep that guarantee.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n), n > 0. Unbiased via rejection.
    std::uint64_t uniform_int(std::uint64_t n);

    /// Standard normal (Box-Muller); pairs are cached so draws stay cheap.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Independent child stream; used to derive per-split / per-job seeds.
    SeededRng split() { return SeededRng(next_u64()); }

    /// Fisher-Yates shuffle driven by this stream.
    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

/// Stable seed derivation for named substreams (e.g. sweep grid points).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace debias
