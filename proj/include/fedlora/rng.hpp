#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fedlora {

// Deterministic, splittable random stream. A stream is named by
// (seed, purpose, client, round); equal names give equal draw sequences on
// every platform, distinct names give statistically independent sequences.
// The generator is a keyed 64-bit counter mix (splitmix64 finalizer), so
// stream creation is free and independent of execution order. Everything
// random in the engine flows through streams derived from the single
// experiment seed; nothing reads the clock or OS entropy.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::string_view purpose,
              std::uint64_t client = 0, std::uint64_t round = 0);

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53 bits of precision.
    double uniform();

    // Unbiased uniform integer in [0, bound). bound must be > 0.
    std::uint64_t uniform_below(std::uint64_t bound);

    // Standard normal via the polar method (no cached spare, so a stream's
    // draw sequence is a pure function of its name and call count).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Gamma(shape, 1) via Marsaglia-Tsang squeeze.
    double gamma(double shape);

    // n proportions from Dirichlet(alpha * 1_n); sums to 1.
    std::vector<double> dirichlet(double alpha, std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // Derive an independent child stream; the parent is unaffected.
    RngStream fork(std::string_view tag) const;

private:
    explicit RngStream(std::uint64_t key) : key_(key) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace fedlora
