#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ceph3d {

inline constexpr const char* kVersion = "0.1.0";

// ---- Seeded randomness ----------------------------------------------------
//
// All randomness in the library flows from a single user seed through
// derive_seed(seed, tag, indices...). The derivation is splitmix64 over the
// seed, a FNV-1a hash of the tag, and each index, so streams for different
// purposes (model init, augmentation, fold shuffling, phantom samples) are
// decorrelated and reproducible across runs.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename... Ints>
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, Ints... indices) {
    std::uint64_t s = splitmix64(seed ^ hash_tag(tag));
    ((s = splitmix64(s ^ static_cast<std::uint64_t>(indices))), ...);
    return s;
}

// Generator used everywhere. The double mappings below are fully specified
// (53-bit mantissa construction) so results do not depend on the standard
// library's distribution implementations.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [lo, hi] without modulo bias worth worrying about at
// the ranges used here (voxel counts, sample ids).
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(rng() % span);
}

// Standard normal via Box-Muller, kept explicit for reproducibility.
inline double normal01(Rng& rng) {
    double u1 = uniform01(rng);
    double u2 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// ---- Structured-text key/value files ---------------------------------------
//
// Shared syntax for sidecar headers, run configs and manifests: one
// "key = value" pair per line, '#' starts a comment, blank lines ignored.
// Keys keep file order; duplicate handling is up to the caller.

struct KvEntry {
    std::string key;
    std::string value;
};

struct KvFile {
    std::vector<KvEntry> entries;

    bool has(std::string_view key) const;
    // First value for key; throws format_error when absent.
    const std::string& get(std::string_view key) const;
    const std::string* find(std::string_view key) const;
    void set(std::string_view key, std::string value);
};

KvFile parse_kv_text(const std::string& text, const std::string& origin);
KvFile load_kv_file(const std::string& path);
std::string render_kv(const KvFile& kv);
void save_kv_file(const KvFile& kv, const std::string& path);

// Value codecs. Parsers throw format_error naming the key and expected type.
std::vector<double> parse_doubles(const std::string& key, const std::string& value, std::size_t count);
std::vector<std::int64_t> parse_ints(const std::string& key, const std::string& value, std::size_t count);
double parse_double(const std::string& key, const std::string& value);
std::int64_t parse_int(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

// Shortest round-trip-exact decimal form of a double.
std::string format_double(double v);
std::string join_doubles(const std::vector<double>& v);
std::string join_ints(const std::vector<std::int64_t>& v);

// ---- Filesystem helpers -----------------------------------------------------

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

} // namespace ceph3d
