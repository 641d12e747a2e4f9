#include "fcgl/rng.hpp"

#include <cmath>

namespace fcgl {

namespace {

uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
constexpr uint64_t kFnvPrime = 0x100000001B3ULL;

uint64_t fnv1a(uint64_t h, const void* bytes, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

}  // namespace

uint64_t stable_hash(std::string_view bytes) {
    return fnv1a(kFnvOffset, bytes.data(), bytes.size());
}

Rng::Rng(uint64_t seed) : key_(seed), state_(seed ^ 0xA0761D6478BD642FULL) {}

Rng Rng::child(std::string_view tag, uint64_t index) const {
    uint64_t h = kFnvOffset;
    h = fnv1a(h, &key_, sizeof(key_));
    h = fnv1a(h, tag.data(), tag.size());
    h = fnv1a(h, &index, sizeof(index));
    return Rng(h);
}

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // Box-Muller; u1 shifted into (0,1] so the log is always defined.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

int64_t Rng::below(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

bool Rng::bernoulli(double p) { return uniform() < p; }

}  // namespace fcgl
