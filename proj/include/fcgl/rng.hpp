#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fcgl {

/// Splittable deterministic pseudorandom generator. Every stochastic site in
/// the library draws from a named substream obtained via child(), so the
/// draw order at one site never perturbs another. Draws use splitmix64;
/// real-valued distributions are hand-rolled for cross-run stability.
class Rng {
public:
    explicit Rng(uint64_t seed);

    /// Derive an independent substream keyed by (tag, index). Derivation
    /// depends only on this stream's key, not on how much it has drawn.
    Rng child(std::string_view tag, uint64_t index = 0) const;

    uint64_t next_u64();
    double uniform();                           // [0, 1)
    double uniform(double lo, double hi);
    double normal();                            // standard normal
    double normal(double mean, double stddev);
    int64_t below(int64_t n);                   // [0, n)
    bool bernoulli(double p);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t key() const { return key_; }

private:
    uint64_t key_ = 0;
    uint64_t state_ = 0;
};

/// Stable 64-bit hash of a byte string (FNV-1a), used for stream derivation.
uint64_t stable_hash(std::string_view bytes);

}  // namespace fcgl
