#pragma once

// Shared vocabulary for the vslab headers: numeric aliases, error types and
// the seed-derivation scheme every randomized routine draws from.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vslab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Label = int;
using Labels = std::vector<Label>;

/// Caller handed us something outside an operation's preconditions.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A schedule, run or command configuration is inconsistent.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed external file. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, long line = -1)
        : std::runtime_error(line >= 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    long line() const noexcept { return line_; }

private:
    long line_;
};

/// Training diverged (non-finite loss).
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, int epoch)
        : std::runtime_error(what), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

namespace detail {

inline void require(bool cond, const char* msg) {
    if (!cond) throw InvalidInput(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInput(msg);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace detail

/// Sub-seed for (root, purpose, index). Distinct purposes or indices give
/// unrelated streams, so a sweep's runs never share draws with each other or
/// with the data generator.
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                           std::uint64_t index = 0) noexcept {
    std::uint64_t h = detail::splitmix64(root);
    h = detail::splitmix64(h ^ detail::fnv1a(purpose));
    return detail::splitmix64(h ^ (index * 0xD1B54A32D192ED03ULL));
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector from_std(std::span<const double> v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace vslab
