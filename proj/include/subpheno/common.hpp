#pragma once

// Shared low-level utilities: deterministic RNG, fixed-order parallel loops,
// round-trip number formatting, and ISO-8601 UTC timestamps.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace subpheno {

class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// splitmix64 core with hand-rolled distributions so that streams are
// bit-identical across compilers and platforms (std:: distributions are
// implementation-defined). Seed fan-out uses the same mix function, so a
// master seed plus a stage tag always yields the same substream.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
    // FNV-1a, used only to turn stage names into seed offsets.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so that small seeds diverge immediately.
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Derived generator for a named stage or an indexed substream.
    Rng child(std::string_view tag) const {
        std::uint64_t s = state_ ^ hash_tag(tag);
        return Rng(splitmix64(s));
    }
    Rng child(std::uint64_t index) const {
        std::uint64_t s = state_ ^ (0x9e3779b97f4a7c15ULL * (index + 1));
        return Rng(splitmix64(s));
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
    // our n (<< 2^32), but use Lemire reduction anyway.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: n == 0");
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Standard normal via Marsaglia polar method (deterministic loop).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Fixed-order parallelism. Work is split into contiguous index blocks; the
// callback writes only to its own indices, so results are identical for any
// thread count.
// ---------------------------------------------------------------------------

inline unsigned effective_threads(unsigned requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = effective_threads(threads);
    if (threads <= 1 || n < 2 * threads) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        std::size_t lo = static_cast<std::size_t>(t) * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Number formatting: shortest representation that round-trips exactly, so CSV
// artifacts are byte-stable and re-importable.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParseError("not a number: '" + std::string(s) + "'");
    return v;
}

inline long long parse_int(std::string_view s) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError("not an integer: '" + std::string(s) + "'");
    return v;
}

// ---------------------------------------------------------------------------
// ISO-8601 UTC timestamps ("2019-07-04T12:30:00Z"), stored as seconds since
// the Unix epoch. Civil-day conversion per the usual proleptic Gregorian
// algorithm; no locale or timezone machinery involved.
// ---------------------------------------------------------------------------

inline std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

inline std::int64_t parse_timestamp(std::string_view s) {
    // Accepted form: YYYY-MM-DDTHH:MM:SSZ (trailing Z optional).
    auto fail = [&]() -> std::int64_t {
        throw ParseError("bad timestamp: '" + std::string(s) + "'");
    };
    if (s.size() >= 1 && s.back() == 'Z') s.remove_suffix(1);
    if (s.size() != 19 || s[4] != '-' || s[7] != '-' || s[10] != 'T' ||
        s[13] != ':' || s[16] != ':')
        return fail();
    auto num = [&](std::size_t pos, std::size_t len) {
        int v = 0;
        auto res = std::from_chars(s.data() + pos, s.data() + pos + len, v);
        if (res.ec != std::errc() || res.ptr != s.data() + pos + len) fail();
        return v;
    };
    int y = num(0, 4), mo = num(5, 2), d = num(8, 2);
    int h = num(11, 2), mi = num(14, 2), se = num(17, 2);
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60) fail();
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
}

inline std::string format_timestamp(std::int64_t t) {
    std::int64_t days = t >= 0 ? t / 86400 : (t - 86399) / 86400;
    int secs = static_cast<int>(t - days * 86400);
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", y, m, d,
                  secs / 3600, (secs / 60) % 60, secs % 60);
    return buf;
}

constexpr double kSecondsPerDay = 86400.0;

}  // namespace subpheno
