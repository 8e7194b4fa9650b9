#ifndef EQPROP_RNG_HPP
#define EQPROP_RNG_HPP

#include <cstdint>
#include <initializer_list>

namespace eqprop {

// splitmix64 finalizer. Good enough mixing to derive independent streams
// from structured counters, and trivially reproducible across platforms.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d4a798579dd687ULL;
    return x ^ (x >> 31);
}

// Collapses (seed, epoch, batch, example, purpose, ...) into one stream
// seed. Order-sensitive, so distinct roles get distinct streams without any
// shared mutable generator: drawing for example 7 never depends on whether
// example 6 drew first.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> words) {
    std::uint64_t h = 0x853c49e6748fea9bULL;
    for (std::uint64_t w : words) h = splitmix64(h ^ w);
    return h;
}

// Minimal counter RNG built on splitmix64; used where reproducibility per
// (epoch, batch, example) matters more than period length.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }

    // Uniform in [0, 1).
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Fair draw from {+1, -1}.
    int next_sign() { return (next_u64() & 1) ? 1 : -1; }

  private:
    std::uint64_t state_;
};

}  // namespace eqprop

#endif
