#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wavelens {

// Error categories map to CLI exit codes: ConfigError -> 2, SimulationError -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Requested work exceeds a configured memory budget; message reports the requirement.
struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A baseline model was asked to operate outside its validity domain.
struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

inline double um_to_mm(double um) { return um * 1e-3; }
inline double mm_to_um(double mm) { return mm * 1e3; }

// SplitMix64: tiny seeded generator with identical output on every platform,
// unlike the distributions in <random>.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Box-Muller; kept here so noise streams are reproducible across toolchains.
    double next_gaussian();

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used for manifest/trajectory hashes.
class Fnv64 {
public:
    void update(const void* data, std::size_t len);
    void update_double(double v);
    std::uint64_t digest() const { return hash_; }
    static std::uint64_t of_bytes(const void* data, std::size_t len);

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);

// Compensated (Kahan) accumulator so reductions are reproducible to the last bit
// regardless of how work was partitioned upstream.
class KahanSum {
public:
    void add(double v) {
        double y = v - c_;
        double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

private:
    double s_ = 0.0;
    double c_ = 0.0;
};

double kahan_total(const std::vector<double>& v);

} // namespace wavelens
