#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fuselab {

inline constexpr const char* kVersion = "0.1.0";

// Error hierarchy. The CLI maps domain_error and friends to exit code 1,
// argument parsing problems to exit code 2.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};
struct io_error : error {
    explicit io_error(const std::string& msg) : error(msg) {}
};
struct format_error : error {
    explicit format_error(const std::string& msg) : error(msg) {}
};
struct shape_error : error {
    explicit shape_error(const std::string& msg) : error(msg) {}
};
struct domain_error : error {
    explicit domain_error(const std::string& msg) : error(msg) {}
};

// Deterministic RNG wrapper. mt19937_64 has a standard-mandated output
// sequence; std::uniform_real_distribution does not, so scaling is done
// by hand to keep streams identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // in [0, 1)
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // in [lo, hi)
    double next_in(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // in [0, n)
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

// Stable 64-bit hash, used to derive independent per-tensor init streams.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed ^ (salt + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
    bool needs_quote = s.find_first_of(",\"\r\n") != std::string::npos;
    if (!needs_quote) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

}  // namespace fuselab
