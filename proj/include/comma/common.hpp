#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace comma {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

template <class... Args>
std::string strcat_msg(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::invalid_argument(msg); }

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// Deterministic PRNG. std::mt19937 distributions are implementation-defined,
// so all randomness in the project goes through this generator: splitmix64
// core, explicit uniform/normal transforms. Same seed => same bytes on any
// platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; second value cached so the stream is a pure function of the seed.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    std::int64_t uniform_int(std::int64_t n) {  // in [0, n)
        return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

    // Derive an independent stream from (seed, salt...) without touching this one.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        Rng r(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2)));
        r.next_u64();
        return r.next_u64();
    }
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
        return mix(mix(a, b), c);
    }

private:
    std::uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

class Timer {
public:
    Timer() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        auto dt = std::chrono::steady_clock::now() - t0_;
        return std::chrono::duration<double>(dt).count();
    }
    double ms() const { return seconds() * 1e3; }

private:
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace comma
