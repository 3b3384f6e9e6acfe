#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace svs {

// Error categories map 1:1 onto CLI exit codes and C API status values.
enum class errc : int {
    usage          = 1,  // bad arguments / malformed input
    missing_prereq = 2,  // required artifact (checkpoint, corpus) absent
    runtime        = 3,  // everything else
};

struct error : std::runtime_error {
    errc code;
    error(errc c, const std::string &msg) : std::runtime_error(msg), code(c) {}
};

inline std::string strfmt(const char *fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    char buf[1024];
    vsnprintf(buf, sizeof(buf), fmt, ap);
    va_end(ap);
    return std::string(buf);
}

[[noreturn]] inline void fail(errc c, const std::string &msg) { throw error(c, msg); }

// row-major dense matrix, the workhorse container for frames-by-dims data
struct matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> v;

    matrix() = default;
    matrix(int64_t r, int64_t c) : rows(r), cols(c), v(size_t(r * c), 0.0) {}

    double &at(int64_t r, int64_t c) { return v[size_t(r * cols + c)]; }
    double at(int64_t r, int64_t c) const { return v[size_t(r * cols + c)]; }
    double *row(int64_t r) { return v.data() + r * cols; }
    const double *row(int64_t r) const { return v.data() + r * cols; }
    bool empty() const { return rows == 0 || cols == 0; }
};

//
// Deterministic RNG
//
// All randomness in the repo flows from one global seed through named
// substreams so stages can be rerun independently yet reproducibly.
// Hand-rolled generator (splitmix64 seeding + xoshiro256**) so results do
// not depend on the standard library implementation.
//

inline uint64_t splitmix64(uint64_t &state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a, used to derive per-stage seeds from stage names.
inline uint64_t hash64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t substream_seed(uint64_t global_seed, std::string_view stage) {
    uint64_t st = global_seed ^ hash64(stage);
    return splitmix64(st);
}

struct rng {
    uint64_t s[4];
    bool has_spare = false;
    double spare = 0.0;

    explicit rng(uint64_t seed) {
        uint64_t st = seed;
        for (auto &w : s) w = splitmix64(st);
    }

    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t next_u64() {
        uint64_t result = rotl(s[1] * 5, 7) * 9;
        uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    // [0, 1) with 53-bit resolution
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // [0, n)
    int64_t uniform_int(int64_t n) {
        // rejection sampling keeps the distribution exact
        uint64_t un = uint64_t(n);
        uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do { x = next_u64(); } while (x >= limit);
        return int64_t(x % un);
    }

    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare = r * std::sin(a);
        has_spare = true;
        return r * std::cos(a);
    }
};

} // namespace svs
