// Gated heterodyne coincidence selection and the joint
// correlation between the two analyzer outputs.
//
// The product E_s * E_i expands into four monomials tagged by where each
// factor came from:
//
//                    at B: H1 (+s)      at B: V2 (-s)
//   at A: V1 (+s)    rejected           accepted
//   at A: H2 (-s)    accepted           rejected
//
// Accepted monomials carry the same polarization origin at opposite
// detunings; their coherent sum is proportional to cos(xi + theta).

#pragma once

#include <cesim/interferometer.hpp>
#include <cesim/optics.hpp>
#include <cesim/source.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>

namespace cesim {

enum class RejectReason : std::uint8_t { None, SamePort, CrossPolarization, SameDetuning, OutOfWindow };

inline const char* to_string(RejectReason r) {
    switch (r) {
        case RejectReason::None: return "none";
        case RejectReason::SamePort: return "same_port";
        case RejectReason::CrossPolarization: return "cross_polarization";
        case RejectReason::SameDetuning: return "same_detuning";
        case RejectReason::OutOfWindow: return "out_of_window";
    }
    return "?";
}

struct SelectionRule {
    enum class Kind : std::uint8_t {
        Heterodyne,     // cross port, same polarization, opposite detuning
        CrossPortOnly,  // gating off: any D1-D2 pair
        Complement,     // exactly what Heterodyne rejects
    };
    Kind kind = Kind::Heterodyne;

    // Heterodyne verdict for one photon at port A and one at port B.
    static RejectReason heterodyne_reason(Pol pol_a, Detune det_a, Pol pol_b, Detune det_b) {
        if (pol_a != pol_b) return RejectReason::CrossPolarization;
        if (det_a == det_b) return RejectReason::SameDetuning;
        return RejectReason::None;
    }

    bool accepts(Pol pol_a, Detune det_a, Pol pol_b, Detune det_b) const {
        const bool het = heterodyne_reason(pol_a, det_a, pol_b, det_b) == RejectReason::None;
        switch (kind) {
            case Kind::Heterodyne: return het;
            case Kind::CrossPortOnly: return true;
            case Kind::Complement: return !het;
        }
        return false;
    }

    bool accepts(const ModeLabel& at_a, const ModeLabel& at_b) const {
        return accepts(at_a.pol, at_a.detune, at_b.pol, at_b.detune);
    }
};

// Which PBS output a photon leaves by.
enum class Port : std::uint8_t { A, B };

constexpr Port pbs_port(Path path, Pol pol) noexcept {
    return (path == Path::Path1) == (pol == Pol::V) ? Port::A : Port::B;
}

struct CoincidenceSetting {
    double tau_si = 0.0;            // s, D1 -> D2 electronic delay
    double tau_c = 1.0e-6;          // s, ensemble coherence time (1 / Delta)
    double gate_window = 1.0e-9;    // s
    double resolving_time = 5.0e-11;  // s, detector timing resolution

    static CoincidenceSetting for_bandwidth(double delta_big) {
        CoincidenceSetting c;
        c.tau_c = 1.0 / delta_big;
        return c;
    }

    void validate() const {
        if (!(tau_c > 0.0)) throw std::invalid_argument("CoincidenceSetting: tau_c must be > 0");
        if (!(gate_window > 0.0))
            throw std::invalid_argument("CoincidenceSetting: gate_window must be > 0");
        if (!(resolving_time < gate_window))
            throw std::invalid_argument(
                "CoincidenceSetting: detector resolving time must be shorter than the gate window");
    }

    double envelope() const { return std::exp(-2.0 * std::abs(tau_si) / tau_c); }
};

// Coherent sum of the rule-accepted monomials of E_s * E_i.
inline Complex heterodyne_product(std::span<const AnalyzerTerm> e_s, std::span<const AnalyzerTerm> e_i,
                                  const SelectionRule& rule = {}) {
    for (const auto& t : e_s)
        if (pbs_port(t.origin.path, t.origin.pol) != Port::A)
            throw std::invalid_argument("heterodyne_product: E_s term is not tagged for port A");
    for (const auto& t : e_i)
        if (pbs_port(t.origin.path, t.origin.pol) != Port::B)
            throw std::invalid_argument("heterodyne_product: E_i term is not tagged for port B");
    Complex sum{};
    for (const auto& a : e_s)
        for (const auto& b : e_i)
            if (rule.accepts(a.origin, b.origin)) sum += a.amp * b.amp;
    return sum;
}

// Peak-normalized joint correlation exp(-2 tau_si / tau_c) cos^2(xi + theta).
// Detuning and orientation drop out entirely.
inline double correlation_R(const PairSetting& s, const EraserSetting& e, const CoincidenceSetting& c) {
    s.validate();
    e.validate();
    c.validate();
    // (1 + cos 2x) / 2 is exact at the fringe zeros and peaks.
    return c.envelope() * 0.5 * (1.0 + std::cos(2.0 * (e.xi + e.theta)));
}

// |heterodyne_product|^2 at the fringe peak; divides raw values into R.
inline constexpr double kHeterodynePeakPower = 1.0 / 16.0;

// A cross-path pair reaches the D1/D2 coincidence through either photon
// ordering, and cross-path routing itself has probability 1/2, so the
// conditional acceptance probability is (2 / (1/2)) |E_s E_i|_accepted^2.
inline constexpr double kCrossPathAcceptWeight = 4.0;

// Outcome classes of one pair at the two detectors. Sums to 1.
struct OutcomeDistribution {
    double accepted = 0.0;              // heterodyne-accepted D1-D2 coincidence
    double rejected_coincidence = 0.0;  // D1-D2 clicks the rule rejects
    double d1_only = 0.0;
    double d2_only = 0.0;
    double none = 0.0;

    double total() const { return accepted + rejected_coincidence + d1_only + d2_only + none; }
};

namespace detail {

// Probability that a single photon in `path` ends at D1 / D2 behind the
// analyzers (incoherent, one photon at a time).
struct SinglePhoton {
    double d1;
    double d2;
    double lost() const { return std::max(0.0, 1.0 - d1 - d2); }
};

inline SinglePhoton single_photon(Path path, const std::optional<EraserSetting>& e) {
    if (!e) return {0.5, 0.5};
    const double sx = std::sin(e->xi), cx = std::cos(e->xi);
    const double st = std::sin(e->theta), ct = std::cos(e->theta);
    if (path == Path::Path1) return {0.5 * sx * sx, 0.5 * ct * ct};  // V1 -> A, H1 -> B
    return {0.5 * cx * cx, 0.5 * st * st};                            // H2 -> A, V2 -> B
}

}  // namespace detail

// Outcome distribution for one pair. Without polarizers (nullopt) a
// cross-path pair is accepted when both photons land in the same
// polarization basis. With polarizers the cross-path acceptance comes from
// the heterodyne product of the network amplitudes; the non-accepted classes
// share the remaining weight in the proportions of the one-photon-at-a-time
// model.
inline OutcomeDistribution assign_click_probabilities(const PairEvent& ev,
                                                      const std::optional<EraserSetting>& e,
                                                      double tau = 0.0) {
    OutcomeDistribution d;
    if (ev.pair_class() == PairClass::SamePath) {
        const auto p = detail::single_photon(ev.route1, e);
        const double p0 = p.lost();
        d.rejected_coincidence = 2.0 * p.d1 * p.d2;
        d.d1_only = p.d1 * p.d1 + 2.0 * p.d1 * p0;
        d.d2_only = p.d2 * p.d2 + 2.0 * p.d2 * p0;
        d.none = p0 * p0;
        return d;
    }
    if (!e) {
        d.accepted = 0.5;
        d.d1_only = 0.25;  // V1 and H2 both leave by port A
        d.d2_only = 0.25;
        return d;
    }
    const auto amps = eraser_amplitudes(ev.setting(tau), *e);
    d.accepted = std::min(1.0, kCrossPathAcceptWeight * std::norm(heterodyne_product(amps.s, amps.i)));

    const auto x = detail::single_photon(Path::Path1, e);
    const auto y = detail::single_photon(Path::Path2, e);
    const double x0 = x.lost(), y0 = y.lost();
    const double incoherent_coinc = x.d1 * y.d2 + x.d2 * y.d1;
    const double rest = 1.0 - incoherent_coinc;
    const double scale = rest > 0.0 ? (1.0 - d.accepted) / rest : 0.0;
    d.d1_only = scale * (x.d1 * y.d1 + x.d1 * y0 + x0 * y.d1);
    d.d2_only = scale * (x.d2 * y.d2 + x.d2 * y0 + x0 * y.d2);
    d.none = std::max(0.0, 1.0 - d.accepted - d.d1_only - d.d2_only);
    return d;
}

// Fraction of pairs whose particle-level routing passes the rule (no
// polarizers). Heterodyne keeps 1/4 of all pairs, CrossPortOnly 1/2.
inline double selection_efficiency(std::span<const PairEvent> events,
                                   SelectionRule::Kind kind = SelectionRule::Kind::Heterodyne) {
    if (events.empty()) throw std::domain_error("selection_efficiency: empty event stream");
    std::size_t accepted = 0;
    for (const auto& ev : events) {
        const Port p1 = pbs_port(ev.route1, ev.pol1);
        const Port p2 = pbs_port(ev.route2, ev.pol2);
        if (p1 == p2) continue;
        const bool het = ev.pair_class() == PairClass::CrossPath;  // cross port + cross path => same pol
        if (kind == SelectionRule::Kind::CrossPortOnly || (kind == SelectionRule::Kind::Heterodyne) == het)
            ++accepted;
    }
    return static_cast<double>(accepted) / static_cast<double>(events.size());
}

// (max - min) / (max + min).
inline double visibility(std::span<const double> values) {
    if (values.size() < 2) throw std::invalid_argument("visibility: need at least two samples");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*hi + *lo == 0.0) throw std::domain_error("visibility: undefined for an all-zero series");
    return (*hi - *lo) / (*hi + *lo);
}

}  // namespace cesim
