#include "fedlora/rng.hpp"

#include <cmath>

#include "fedlora/errors.hpp"

namespace fedlora {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t absorb(std::uint64_t h, std::uint64_t v) {
    return mix(h ^ (v + kGolden + (h << 6) + (h >> 2)));
}

std::uint64_t absorb_string(std::uint64_t h, std::string_view s) {
    // FNV-1a over the tag, then mixed into the key
    std::uint64_t f = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        f ^= c;
        f *= 0x100000001B3ULL;
    }
    return absorb(h, f);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view purpose,
                     std::uint64_t client, std::uint64_t round) {
    std::uint64_t h = mix(seed + kGolden);
    h = absorb_string(h, purpose);
    h = absorb(h, client);
    h = absorb(h, round);
    key_ = h;
}

std::uint64_t RngStream::next_u64() {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_below(std::uint64_t bound) {
    if (bound == 0) throw ConfigError("uniform_below: bound must be positive");
    if (bound == 1) return 0;
    // rejection on the smallest covering bit mask keeps the draw unbiased
    std::uint64_t mask = bound - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
        const std::uint64_t v = next_u64() & mask;
        if (v < bound) return v;
    }
}

double RngStream::normal() {
    for (;;) {
        const double u = 2.0 * uniform() - 1.0;
        const double v = 2.0 * uniform() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

double RngStream::gamma(double shape) {
    if (shape <= 0.0) throw ConfigError("gamma: shape must be positive");
    if (shape < 1.0) {
        // boost: Gamma(a) = Gamma(a+1) * U^{1/a}
        const double u = uniform();
        return gamma(shape + 1.0) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x;
        double v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
            return d * v;
        }
    }
}

std::vector<double> RngStream::dirichlet(double alpha, std::size_t n) {
    if (alpha <= 0.0) throw ConfigError("dirichlet: alpha must be positive");
    std::vector<double> p(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = gamma(alpha);
        total += p[i];
    }
    if (total <= 0.0) {
        // astronomically unlikely underflow; fall back to uniform
        for (double& v : p) v = 1.0 / static_cast<double>(n);
        return p;
    }
    for (double& v : p) v /= total;
    return p;
}

RngStream RngStream::fork(std::string_view tag) const {
    std::uint64_t h = absorb_string(key_, tag);
    h = absorb(h, counter_);
    return RngStream(h);
}

}  // namespace fedlora
