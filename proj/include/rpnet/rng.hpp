#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace rpnet {

// Counter-based generator built on the SplitMix64 mixer: a stream is a
// (key, counter) pair and every draw hashes key + counter. Streams split by
// deriving a child key from the parent key and a label, so each dataset,
// augmentation and dropout site owns an independent, reproducible sequence
// regardless of call interleaving.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ kKeyTag)), counter_(0) {}

    Rng split(std::uint64_t label) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(label + kSplitTag));
        child.counter_ = 0;
        return child;
    }

    Rng split(const std::string& label) const {
        std::uint64_t h = 1469598103934665603ull;  // FNV-1a
        for (unsigned char ch : label) {
            h ^= ch;
            h *= 1099511628211ull;
        }
        return split(h);
    }

    std::uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

    // Uniform in [0, 1): 53 mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Standard normal via Box-Muller; draws two uniforms per call so the
    // stream stays position-independent (no cached spare).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
    static constexpr std::uint64_t kKeyTag = 0xA02B4C5D6E7F8091ull;
    static constexpr std::uint64_t kSplitTag = 0x1F2E3D4C5B6A7988ull;
    static constexpr double kPi = 3.141592653589793238462643383279502884;

    static std::uint64_t mix(std::uint64_t z) {
        z += kGamma;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

}  // namespace rpnet
