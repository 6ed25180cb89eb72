// Complex field amplitudes on labelled modes and the elementary
// lossless/lossy elements used to build the polarization-path network:
// balanced beam splitter, 22.5 deg half-wave plate, polarizing beam splitter,
// mirror, AOM frequency tag and a linear polarizer (analyzer).
//
// Conventions
//   - Amplitudes are in units of sqrt(I0) with E0 = 1.
//   - Reflection at a beam splitter or a mirror picks up a factor i.
//   - The PBS carries the sign flip on the V component of path 1, so the
//     output ports read  A = -V1 + H2,  B = H1 + V2.
//   - Angles are radians.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace cesim {

using Complex = std::complex<double>;

inline constexpr Complex kI{0.0, 1.0};

enum class Path : std::uint8_t { Path1, Path2 };
enum class Pol : std::uint8_t { H, V };
enum class Detune : std::uint8_t { Plus, Minus };

constexpr Path other(Path p) noexcept { return p == Path::Path1 ? Path::Path2 : Path::Path1; }
constexpr Pol other(Pol p) noexcept { return p == Pol::H ? Pol::V : Pol::H; }
constexpr Detune other(Detune d) noexcept { return d == Detune::Plus ? Detune::Minus : Detune::Plus; }
constexpr double sign_of(Detune d) noexcept { return d == Detune::Plus ? 1.0 : -1.0; }

constexpr double deg_to_rad(double deg) noexcept { return deg * std::numbers::pi / 180.0; }
constexpr double rad_to_deg(double rad) noexcept { return rad * 180.0 / std::numbers::pi; }

struct ModeLabel {
    Path path = Path::Path1;
    Pol pol = Pol::H;
    Detune detune = Detune::Plus;

    friend constexpr bool operator==(const ModeLabel&, const ModeLabel&) = default;
};

struct Term {
    ModeLabel label;
    Complex amp;

    friend bool operator==(const Term&, const Term&) = default;
};

// A superposition over labelled modes. Labels are unique; adding to an
// existing label sums the amplitudes. Term order is insertion order, which
// keeps every transform bit-reproducible.
class FieldState {
public:
    FieldState() = default;
    FieldState(std::initializer_list<Term> terms) {
        for (const auto& t : terms) add(t.label, t.amp);
    }

    void add(const ModeLabel& label, Complex amp) {
        auto it = std::find_if(terms_.begin(), terms_.end(),
                               [&](const Term& t) { return t.label == label; });
        if (it != terms_.end())
            it->amp += amp;
        else
            terms_.push_back({label, amp});
    }

    // Amplitude of a label, zero when absent.
    Complex amplitude(const ModeLabel& label) const {
        for (const auto& t : terms_)
            if (t.label == label) return t.amp;
        return {};
    }

    bool contains(const ModeLabel& label) const {
        return std::any_of(terms_.begin(), terms_.end(),
                           [&](const Term& t) { return t.label == label; });
    }

    // Incoherent power: distinct labels are orthogonal modes.
    double power() const {
        double p = 0.0;
        for (const auto& t : terms_) p += std::norm(t.amp);
        return p;
    }

    std::span<const Term> terms() const noexcept { return terms_; }
    std::size_t size() const noexcept { return terms_.size(); }
    bool empty() const noexcept { return terms_.empty(); }

    friend bool operator==(const FieldState&, const FieldState&) = default;

private:
    std::vector<Term> terms_;
};

// 50:50 beam splitter, transmit real, reflect with i.
inline std::pair<Complex, Complex> bs_transform(Complex in_a, Complex in_b) {
    const double r = std::numbers::sqrt2 / 2.0;
    return {r * (in_a + kI * in_b), r * (kI * in_a + in_b)};
}

// Field-level beam splitter: everything in `state` enters port a; port a
// exits as Path1 and port b as Path2. Existing path labels are overwritten.
inline FieldState bs_split(const FieldState& state) {
    FieldState out;
    for (const auto& t : state.terms()) {
        auto [a, b] = bs_transform(t.amp, Complex{});
        out.add({Path::Path1, t.label.pol, t.label.detune}, a);
        out.add({Path::Path2, t.label.pol, t.label.detune}, b);
    }
    return out;
}

// Half-wave plate with its fast axis at 22.5 deg: H -> (H+V)/sqrt2,
// V -> (H-V)/sqrt2. The matrix is its own inverse.
inline FieldState hwp_22_5(const FieldState& state) {
    const double c = std::numbers::sqrt2 / 2.0;
    FieldState out;
    for (const auto& t : state.terms()) {
        const ModeLabel h{t.label.path, Pol::H, t.label.detune};
        const ModeLabel v{t.label.path, Pol::V, t.label.detune};
        if (t.label.pol == Pol::H) {
            out.add(h, c * t.amp);
            out.add(v, c * t.amp);
        } else {
            out.add(h, c * t.amp);
            out.add(v, -c * t.amp);
        }
    }
    return out;
}

struct PbsPorts {
    FieldState a;
    FieldState b;
};

// Polarizing beam splitter recombining the two MZI arms.
//   Path1: V -> A (sign flipped), H -> B
//   Path2: H -> A,                V -> B
inline PbsPorts pbs_route(const FieldState& state) {
    PbsPorts out;
    for (const auto& t : state.terms()) {
        const bool path1 = t.label.path == Path::Path1;
        const bool h = t.label.pol == Pol::H;
        if (path1 && !h)
            out.a.add(t.label, -t.amp);
        else if (!path1 && h)
            out.a.add(t.label, t.amp);
        else
            out.b.add(t.label, t.amp);
    }
    return out;
}

// Fold mirror in one arm: reflection phase i.
inline FieldState mirror(const FieldState& state, Path path) {
    FieldState out;
    for (const auto& t : state.terms())
        out.add(t.label, t.label.path == path ? kI * t.amp : t.amp);
    return out;
}

// AOM on one arm: tags the frequency offset sign and applies the phase that
// offset accumulates over the delay line.
inline FieldState aom_tag(const FieldState& state, Path path, Detune sign, double phase) {
    const Complex rot = std::polar(1.0, phase);
    FieldState out;
    for (const auto& t : state.terms()) {
        if (t.label.path == path)
            out.add({t.label.path, t.label.pol, sign}, rot * t.amp);
        else
            out.add(t.label, t.amp);
    }
    return out;
}

// One term behind an analyzer: the scalar amplitude along the analyzer axis,
// still carrying the label it originated from (path, polarization before the
// analyzer, detuning). Terms behind a common analyzer share its polarization
// and interfere with each other.
struct AnalyzerTerm {
    ModeLabel origin;
    Complex amp;
};

// Malus projection onto the axis (cos angle, sin angle) without merging
// terms: H-origin terms scale by cos(angle), V-origin terms by sin(angle).
inline std::vector<AnalyzerTerm> analyzer_terms(const FieldState& state, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    std::vector<AnalyzerTerm> out;
    out.reserve(state.size());
    for (const auto& t : state.terms())
        out.push_back({t.label, t.amp * (t.label.pol == Pol::H ? c : s)});
    return out;
}

// Coherent intensity behind an analyzer, |sum of amplitudes|^2.
inline double coherent_intensity(std::span<const AnalyzerTerm> terms) {
    Complex sum{};
    for (const auto& t : terms) sum += t.amp;
    return std::norm(sum);
}

// Linear polarizer as a Jones projector. Per (path, detune) group the H/V
// amplitudes collapse to the single analyzer-axis amplitude
// c*cos(angle) + s*sin(angle), re-expressed in the H/V basis. Lossy, idempotent.
inline FieldState polarizer_project(const FieldState& state, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    FieldState out;
    for (const auto& t : state.terms()) {
        const Complex along = t.amp * (t.label.pol == Pol::H ? c : s);
        out.add({t.label.path, Pol::H, t.label.detune}, along * c);
        out.add({t.label.path, Pol::V, t.label.detune}, along * s);
    }
    return out;
}

}  // namespace cesim
