#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace tog {

// Deterministic RNG. mt19937_64's output sequence is pinned by the standard;
// the distributions below are implemented here because std::*_distribution
// is implementation-defined and would break bitwise reproducibility.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    float uniform_f(float lo, float hi) {
        return static_cast<float>(uniform(lo, hi));
    }

    // Uniform integer in [0, n), n > 0. Modulo bias is irrelevant at the
    // ranges used here (n << 2^64) and keeps the draw count fixed.
    int below(int n) { return static_cast<int>(engine_() % static_cast<std::uint64_t>(n)); }

    // Box-Muller; consumes two draws per pair, caches the second.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    bool chance(double p) { return uniform() < p; }

    // Derive an independent stream, e.g. per scene id. splitmix64 finalizer
    // so neighbouring ids decorrelate.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed ^ (stream + 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Full state round trip (training resume). mt19937_64's text form is
    // standard-defined; the Box-Muller spare rides along.
    std::string state_string() const {
        std::ostringstream os;
        os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << spare_;
        return os.str();
    }
    static Rng from_state(const std::string& state) {
        Rng r(0);
        std::istringstream is(state);
        int has = 0;
        is >> r.engine_ >> has >> r.spare_;
        r.has_spare_ = has != 0;
        return r;
    }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tog
