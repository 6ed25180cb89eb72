// Attenuated-laser photon pairs.
//
// Pairs arrive as a Poisson process (attempt rate thinned by the two-photon
// probability of the coherence window). Every pair gets a fresh AOM detuning,
// an orientation, and independent first-BS routing and PBS polarization for
// each of its two photons.

#pragma once

#include <cesim/interferometer.hpp>
#include <cesim/optics.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace cesim {

// ---------------------------------------------------------------- randomness

using Rng = std::mt19937_64;

// SplitMix64 finalizer; derives independent stream seeds from (seed, ids).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
    return mix64(mix64(mix64(seed) ^ a) ^ (b * 0xd1342543de82ef95ULL));
}

// The std distributions are implementation-defined; these are not, so a seed
// reproduces the same stream on every standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double exponential(Rng& rng, double mean) { return -mean * std::log1p(-uniform01(rng)); }

inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------- photon statistics

inline double poisson_pair_probability(double mu) {
    if (!(mu >= 0.0) || !std::isfinite(mu))
        throw std::domain_error("poisson_pair_probability: mu must be finite and >= 0");
    return std::exp(-mu) * mu * mu / 2.0;
}

// P(n >= 3) / P(n = 2) = sum_{n>=3} 2 mu^(n-2) / n!, summed as a series to
// avoid the cancellation in 1 - P0 - P1 - P2 at small mu.
inline double poisson_multipair_ratio(double mu) {
    if (!(mu > 0.0) || !std::isfinite(mu))
        throw std::domain_error("poisson_multipair_ratio: mu must be finite and > 0");
    double term = 2.0 * mu / 6.0;  // n = 3
    double sum = 0.0;
    for (int n = 3; n < 1000 && term > sum * 1e-18; ++n) {
        sum += term;
        term *= mu / (n + 1);
    }
    return sum;
}

// ------------------------------------------------------------------- config

struct DetuningGrid {
    enum class Mode : std::uint8_t { Grid, Uniform };

    Mode mode = Mode::Grid;
    double lo = -2.0e6;
    double hi = 2.0e6;
    double step = 2.0e5;

    // -2 Delta .. 2 Delta in steps of Delta / 5.
    static DetuningGrid standard(double delta_big) {
        return {Mode::Grid, -2.0 * delta_big, 2.0 * delta_big, delta_big / 5.0};
    }
    static DetuningGrid uniform(double lo, double hi) { return {Mode::Uniform, lo, hi, 0.0}; }

    void validate() const {
        if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi)
            throw std::invalid_argument("DetuningGrid: need finite lo <= hi");
        if (mode == Mode::Grid && !(step > 0.0))
            throw std::invalid_argument("DetuningGrid: grid step must be > 0");
    }

    std::size_t size() const {
        validate();
        if (mode == Mode::Uniform) return 0;
        return static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    }

    std::vector<double> points() const {
        const std::size_t n = size();
        std::vector<double> out(n);
        for (std::size_t k = 0; k < n; ++k) out[k] = lo + static_cast<double>(k) * step;
        return out;
    }

    double draw(Rng& rng) const {
        if (mode == Mode::Uniform) return lo + uniform01(rng) * (hi - lo);
        const std::size_t n = size();
        auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
        if (k >= n) k = n - 1;
        return lo + static_cast<double>(k) * step;
    }
};

struct SourceConfig {
    double mu = 0.1;          // mean photon number per coherence window
    double rate = 1.0e7;      // coherence-window attempts per second
    double duration = 1.0;    // s
    double delta_big = 1.0e6; // Hz, AOM diffraction bandwidth
    DetuningGrid grid = DetuningGrid::standard(1.0e6);
    std::uint64_t seed = 1;
    std::uint64_t max_pairs = 0;  // nonzero: exactly this many pairs, duration ignored
    std::uint64_t t0_ps = 1'000'000;  // first-tick offset, leaves room for negative jitter

    void validate() const {
        if (!(mu > 0.0)) throw std::invalid_argument("SourceConfig: mu must be > 0");
        if (!(rate > 0.0)) throw std::invalid_argument("SourceConfig: rate must be > 0");
        if (!(delta_big > 0.0)) throw std::invalid_argument("SourceConfig: delta_big must be > 0");
        if (!(duration > 0.0)) throw std::invalid_argument("SourceConfig: duration must be > 0");
        grid.validate();
    }

    double pair_rate() const { return rate * poisson_pair_probability(mu); }
};

// ------------------------------------------------------------------- events

enum class PairClass : std::uint8_t { SamePath, CrossPath };

inline constexpr std::uint32_t kNoPairId = 0xFFFFFFFFu;

struct PairEvent {
    std::uint32_t pair_id = 0;
    double delta_f = 0.0;  // Hz, signed draw from the detuning law
    Orientation orientation = Orientation::PlusMinus;
    Path route1 = Path::Path1;  // first-BS routing of each photon
    Path route2 = Path::Path1;
    Pol pol1 = Pol::H;  // polarization basis each photon lands in at the PBS
    Pol pol2 = Pol::H;
    std::uint64_t t_emit_ps = 0;

    PairClass pair_class() const noexcept {
        return route1 == route2 ? PairClass::SamePath : PairClass::CrossPath;
    }

    // A negative draw is the same pair with the orientation flipped.
    PairSetting setting(double tau) const noexcept {
        Orientation o = orientation;
        if (delta_f < 0.0)
            o = o == Orientation::PlusMinus ? Orientation::MinusPlus : Orientation::PlusMinus;
        return {std::abs(delta_f), o, tau};
    }

    friend bool operator==(const PairEvent&, const PairEvent&) = default;
};

// Detuning, orientation, routing and polarization of one pair; no timing.
inline PairEvent draw_pair_attributes(Rng& rng, const DetuningGrid& grid, std::uint32_t pair_id) {
    PairEvent ev;
    ev.pair_id = pair_id;
    ev.delta_f = grid.draw(rng);
    const std::uint64_t bits = rng();
    ev.orientation = (bits & 1u) ? Orientation::MinusPlus : Orientation::PlusMinus;
    ev.route1 = (bits & 2u) ? Path::Path2 : Path::Path1;
    ev.route2 = (bits & 4u) ? Path::Path2 : Path::Path1;
    ev.pol1 = (bits & 8u) ? Pol::V : Pol::H;
    ev.pol2 = (bits & 16u) ? Pol::V : Pol::H;
    return ev;
}

// Sequential, time-ordered pair generator. Deterministic for a given config.
class PairSource {
public:
    explicit PairSource(const SourceConfig& cfg) : cfg_(cfg), rng_(derive_seed(cfg.seed, 0x5eed)) {
        cfg_.validate();
        mean_gap_ps_ = 1.0e12 / cfg_.pair_rate();
        end_ps_ = static_cast<double>(cfg_.t0_ps) + cfg_.duration * 1.0e12;
        t_ps_ = static_cast<double>(cfg_.t0_ps);
    }

    // Returns false once the duration or pair budget is exhausted.
    bool next(PairEvent& out) {
        if (cfg_.max_pairs != 0 && produced_ >= cfg_.max_pairs) return false;
        if (produced_ >= kNoPairId) return false;
        t_ps_ += exponential(rng_, mean_gap_ps_);
        if (cfg_.max_pairs == 0 && t_ps_ >= end_ps_) return false;
        out = draw_pair_attributes(rng_, cfg_.grid, static_cast<std::uint32_t>(produced_));
        out.t_emit_ps = static_cast<std::uint64_t>(std::llround(t_ps_));
        ++produced_;
        return true;
    }

private:
    SourceConfig cfg_;
    Rng rng_;
    double mean_gap_ps_ = 0.0;
    double end_ps_ = 0.0;
    double t_ps_ = 0.0;
    std::uint64_t produced_ = 0;
};

inline std::vector<PairEvent> sample_pairs(const SourceConfig& cfg) {
    PairSource src(cfg);
    std::vector<PairEvent> out;
    if (cfg.max_pairs != 0) out.reserve(cfg.max_pairs);
    PairEvent ev;
    while (src.next(ev)) out.push_back(ev);
    return out;
}

}  // namespace cesim
