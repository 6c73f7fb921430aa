#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "tfr/common.hpp"

namespace tfr {

/// Deterministic random stream. Wraps std::mt19937_64 (whose sequence is fixed
/// by the standard) and generates all variates through explicit, stateless
/// transformations so that runs are reproducible across compilers and can be
/// checkpointed as text.
class RngStream {
  public:
    RngStream() : engine_(default_seed()) {}

    /// Derives an independent stream from a master seed and a stream id
    /// (chain index, projection stream, ...) via splitmix64 mixing.
    RngStream(std::uint64_t master_seed, std::uint64_t stream_id) {
        std::uint64_t s = mix64(master_seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1));
        s = mix64(s ^ (stream_id << 32));
        engine_.seed(s);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (no cached spare, so the stream state
    /// is exactly the engine state).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Gamma(shape, rate) with shape >= 1 via Marsaglia-Tsang.
    double gamma(double shape, double rate) {
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
                return d * v / rate;
            }
        }
    }

    /// Truncated normal on (lo, hi) by inverse-CDF; consumes one uniform.
    double truncated_normal(double mean, double sd, double lo, double hi) {
        const double a = normal_cdf((lo - mean) / sd);
        const double b = normal_cdf((hi - mean) / sd);
        if (b - a < 1e-14) {
            // Interval mass numerically vanished; fall back to the nearer bound.
            return std::min(std::max(mean, lo), hi);
        }
        const double u = a + (b - a) * uniform();
        double x = mean + sd * normal_quantile(u);
        return std::min(std::max(x, lo), hi);
    }

    std::string save() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void restore(const std::string& text) {
        std::istringstream is(text);
        is >> engine_;
        if (is.fail()) throw IntegrityError("rng checkpoint is corrupt");
    }

  private:
    static std::uint64_t default_seed() { return 0x853c49e6748fea9bULL; }

    static std::uint64_t mix64(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
};

}  // namespace tfr
