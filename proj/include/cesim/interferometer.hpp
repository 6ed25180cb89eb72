// The HWP / BS / AOM / PBS network and its closed-form
// local observables.
//
// Network: H-polarized input -> HWP(22.5 deg) -> BS -> {Path1: mirror, AOM(sigma)}
// {Path2: AOM(-sigma)} -> PBS -> ports A and B, optionally followed by
// polarizers at angles xi (port A) and theta (port B).
//
// With phi = 2*pi * 2*delta_f * tau the port fields are
//   E_A = (i/2) (-V1 e^{i sigma phi} + H2)
//   E_B = (i/2) ( H1 e^{i sigma phi} + V2)
// and behind the polarizers
//   I_s = (1 - sin 2xi  cos phi) / 4
//   I_i = (1 + sin 2theta cos phi) / 4.

#pragma once

#include <cesim/optics.hpp>

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cesim {

// phase = kDelayPhaseFactor * delta_f[Hz] * tau[s]. The two arms carry
// opposite detunings, so the relative phase runs at twice the detuning.
inline constexpr double kDelayPhaseFactor = 2.0 * std::numbers::pi * 2.0;

enum class Orientation : std::uint8_t { PlusMinus, MinusPlus };

struct PairSetting {
    double delta_f = 0.0;  // Hz, >= 0
    Orientation orientation = Orientation::PlusMinus;
    double tau = 0.0;  // s

    double phase() const noexcept { return kDelayPhaseFactor * delta_f * tau; }
    // Signed phase carried by Path1 (sigma * phi).
    double path1_phase() const noexcept {
        return orientation == Orientation::PlusMinus ? phase() : -phase();
    }
    Detune path1_detune() const noexcept {
        return orientation == Orientation::PlusMinus ? Detune::Plus : Detune::Minus;
    }

    void validate() const {
        if (!(delta_f >= 0.0) || !std::isfinite(delta_f))
            throw std::invalid_argument("PairSetting: delta_f must be finite and >= 0");
        if (!std::isfinite(tau)) throw std::invalid_argument("PairSetting: tau must be finite");
    }
};

struct EraserSetting {
    double xi = 0.0;     // rad, polarizer at port A
    double theta = 0.0;  // rad, polarizer at port B

    void validate() const {
        if (!std::isfinite(xi) || !std::isfinite(theta))
            throw std::invalid_argument("EraserSetting: angles must be finite");
    }
};

struct PortFields {
    FieldState a;
    FieldState b;
};

inline PortFields output_fields(const PairSetting& s) {
    s.validate();
    FieldState field{{{Path::Path1, Pol::H, Detune::Plus}, Complex{1.0, 0.0}}};
    field = hwp_22_5(field);
    field = bs_split(field);
    field = mirror(field, Path::Path1);
    const Detune d1 = s.path1_detune();
    field = aom_tag(field, Path::Path1, d1, s.path1_phase());
    field = aom_tag(field, Path::Path2, other(d1), 0.0);
    auto ports = pbs_route(field);
    return {std::move(ports.a), std::move(ports.b)};
}

// Orthogonal polarizations and distinct frequencies do not interfere.
inline double local_intensity(const FieldState& e) { return e.power(); }

struct EraserAmplitudes {
    std::vector<AnalyzerTerm> s;  // behind P1 at port A
    std::vector<AnalyzerTerm> i;  // behind P2 at port B
};

inline EraserAmplitudes eraser_amplitudes(const PairSetting& s, const EraserSetting& e) {
    e.validate();
    const auto ports = output_fields(s);
    return {analyzer_terms(ports.a, e.xi), analyzer_terms(ports.b, e.theta)};
}

inline double eraser_intensity(std::span<const AnalyzerTerm> terms) {
    return coherent_intensity(terms);
}

// Closed forms, used as the second route against the network.
inline double eraser_intensity_s_closed(double xi, double phase) {
    return 0.25 * (1.0 - std::sin(2.0 * xi) * std::cos(phase));
}
inline double eraser_intensity_i_closed(double theta, double phase) {
    return 0.25 * (1.0 + std::sin(2.0 * theta) * std::cos(phase));
}

// Frequency-path correlation needs delta_laser << Delta. Returns a warning
// when the laser linewidth exceeds a tenth of the AOM bandwidth.
inline std::optional<std::string> check_laser_linewidth(double laser_linewidth, double delta_big) {
    if (laser_linewidth < 0.0 || delta_big <= 0.0)
        throw std::invalid_argument("check_laser_linewidth: need linewidth >= 0 and Delta > 0");
    if (laser_linewidth > 0.1 * delta_big)
        return "laser linewidth " + std::to_string(laser_linewidth) +
               " Hz is not << AOM bandwidth " + std::to_string(delta_big) +
               " Hz; frequency-path correlation degrades";
    return std::nullopt;
}

}  // namespace cesim
