#include <cesim/detection.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace cesim;

namespace {

constexpr double kTol = 1e-12;
constexpr double kPi = std::numbers::pi;

// Port amplitudes written out by hand, per origin:
//   E_s = (-e^{i phi} sin xi V1 + cos xi H2) / 2,  E_i = (e^{i phi} cos theta H1 + sin theta V2) / 2.
struct HandFields {
    Complex v1, h2, h1, v2;
};

HandFields hand_fields(double xi, double theta, double phi) {
    const Complex rot = std::polar(1.0, phi);
    return {-rot * std::sin(xi) / 2.0, std::cos(xi) / 2.0, rot * std::cos(theta) / 2.0, std::sin(theta) / 2.0};
}

// All four (A, B) monomials, keeping those whose verdict matches `keep_accepted`.
Complex monomial_sum(const HandFields& f, bool keep_accepted) {
    struct Mono {
        Complex amp;
        bool accepted;
    };
    const Mono m[4] = {
        {f.v1 * f.h1, false},  // V1 @ A, H1 @ B: cross polarization
        {f.v1 * f.v2, true},   // V1 @ A, V2 @ B
        {f.h2 * f.h1, true},   // H2 @ A, H1 @ B
        {f.h2 * f.v2, false},  // H2 @ A, V2 @ B: cross polarization
    };
    Complex s{};
    for (const auto& x : m)
        if (x.accepted == keep_accepted) s += x.amp;
    return s;
}

// Cross-path pair, one photon per arm. Each photon's conditional amplitudes
// to reach D1 / D2 through the analyzers carry 1/sqrt2 for the PBS split.
// Both orderings (Path1 photon at D1 or at D2) are enumerated; the
// heterodyne-accepted ones are indistinguishable and add coherently.
double accepted_probability_oracle(double xi, double theta, double phi) {
    const Complex rot = std::polar(1.0, phi);
    const double r = std::numbers::sqrt2 / 2.0;
    const Complex p1_at_d1 = -rot * r * std::sin(xi);   // V1 through P1
    const Complex p1_at_d2 = rot * r * std::cos(theta);  // H1 through P2
    const Complex p2_at_d1 = r * std::cos(xi);           // H2 through P1
    const Complex p2_at_d2 = r * std::sin(theta);        // V2 through P2
    const SelectionRule rule;
    Complex amp{};
    // Ordering 1: Path1 photon at D1 (V1), Path2 photon at D2 (V2).
    if (rule.accepts(Pol::V, Detune::Plus, Pol::V, Detune::Minus)) amp += p1_at_d1 * p2_at_d2;
    // Ordering 2: Path2 photon at D1 (H2), Path1 photon at D2 (H1).
    if (rule.accepts(Pol::H, Detune::Minus, Pol::H, Detune::Plus)) amp += p2_at_d1 * p1_at_d2;
    return std::norm(amp);
}

PairEvent cross_pair(double df = 4.0e5, Orientation o = Orientation::PlusMinus) {
    PairEvent ev;
    ev.delta_f = df;
    ev.orientation = o;
    ev.route1 = Path::Path1;
    ev.route2 = Path::Path2;
    return ev;
}

}  // namespace

TEST(SelectionRule, TableOfVerdicts) {
    const SelectionRule het;
    EXPECT_TRUE(het.accepts(Pol::V, Detune::Plus, Pol::V, Detune::Minus));
    EXPECT_TRUE(het.accepts(Pol::H, Detune::Minus, Pol::H, Detune::Plus));
    EXPECT_FALSE(het.accepts(Pol::V, Detune::Plus, Pol::H, Detune::Plus));
    EXPECT_FALSE(het.accepts(Pol::H, Detune::Minus, Pol::V, Detune::Minus));
    EXPECT_FALSE(het.accepts(Pol::H, Detune::Plus, Pol::H, Detune::Plus));
    EXPECT_EQ(SelectionRule::heterodyne_reason(Pol::H, Detune::Plus, Pol::V, Detune::Minus),
              RejectReason::CrossPolarization);
    EXPECT_EQ(SelectionRule::heterodyne_reason(Pol::H, Detune::Plus, Pol::H, Detune::Plus),
              RejectReason::SameDetuning);

    const SelectionRule all{SelectionRule::Kind::CrossPortOnly};
    const SelectionRule inv{SelectionRule::Kind::Complement};
    for (Pol pa : {Pol::H, Pol::V})
        for (Pol pb : {Pol::H, Pol::V})
            for (Detune da : {Detune::Plus, Detune::Minus})
                for (Detune db : {Detune::Plus, Detune::Minus}) {
                    EXPECT_TRUE(all.accepts(pa, da, pb, db));
                    EXPECT_NE(inv.accepts(pa, da, pb, db), het.accepts(pa, da, pb, db));
                }
}

TEST(SelectionRule, PbsPortRouting) {
    EXPECT_EQ(pbs_port(Path::Path1, Pol::V), Port::A);
    EXPECT_EQ(pbs_port(Path::Path2, Pol::H), Port::A);
    EXPECT_EQ(pbs_port(Path::Path1, Pol::H), Port::B);
    EXPECT_EQ(pbs_port(Path::Path2, Pol::V), Port::B);
}

TEST(HeterodyneProduct, PeakAndZero) {
    const PairSetting s{1.0e6, Orientation::PlusMinus, 3e-7};
    const auto peak = eraser_amplitudes(s, {0.0, 0.0});
    EXPECT_NEAR(std::abs(heterodyne_product(peak.s, peak.i)), 0.25, kTol);
    EXPECT_NEAR(std::norm(heterodyne_product(peak.s, peak.i)), kHeterodynePeakPower, kTol);
    const auto zero = eraser_amplitudes(s, {deg_to_rad(30.0), deg_to_rad(60.0)});
    EXPECT_NEAR(std::abs(heterodyne_product(zero.s, zero.i)), 0.0, kTol);
}

TEST(HeterodyneProduct, MatchesBruteForceMonomials) {
    Rng rng(17);
    for (int n = 0; n < 100; ++n) {
        const double xi = 2.0 * kPi * uniform01(rng), theta = 2.0 * kPi * uniform01(rng);
        const PairSetting s{2.0e6 * uniform01(rng), Orientation::PlusMinus, 1e-6 * uniform01(rng)};
        const auto amps = eraser_amplitudes(s, {xi, theta});
        const auto hand = hand_fields(xi, theta, s.phase());
        EXPECT_NEAR(std::norm(heterodyne_product(amps.s, amps.i)), std::norm(monomial_sum(hand, true)), kTol);
        const SelectionRule inv{SelectionRule::Kind::Complement};
        EXPECT_NEAR(std::norm(heterodyne_product(amps.s, amps.i, inv)), std::norm(monomial_sum(hand, false)), kTol);
    }
}

TEST(HeterodyneProduct, RejectedTermsCarryTheDoublePhase) {
    // Kept-rejected sum: -e^{2 i phi} sin xi cos theta / 4 + cos xi sin theta / 4.
    const double xi = 0.3, theta = 1.1;
    for (const double tau : {0.0, 1e-7, 2.3e-7}) {
        const PairSetting s{1.0e6, Orientation::PlusMinus, tau};
        const double phi = s.phase();
        const double a = std::sin(xi) * std::cos(theta) / 4.0, b = std::cos(xi) * std::sin(theta) / 4.0;
        const double expect = a * a + b * b - 2.0 * a * b * std::cos(2.0 * phi);
        const auto amps = eraser_amplitudes(s, {xi, theta});
        EXPECT_NEAR(std::norm(heterodyne_product(amps.s, amps.i, {SelectionRule::Kind::Complement})), expect, kTol);
    }
}

TEST(HeterodyneProduct, IsAFixedPhaseTimesTheFringe) {
    // hp / (e^{i sigma phi} cos(xi + theta)) is one constant of modulus 1/4.
    Rng rng(29);
    std::optional<Complex> c0;
    for (int n = 0; n < 100; ++n) {
        const double xi = kPi * uniform01(rng), theta = kPi * uniform01(rng);
        if (std::abs(std::cos(xi + theta)) < 0.1) continue;
        const auto o = uniform01(rng) < 0.5 ? Orientation::PlusMinus : Orientation::MinusPlus;
        const PairSetting s{2.0e6 * uniform01(rng), o, 1e-6 * uniform01(rng)};
        const auto amps = eraser_amplitudes(s, {xi, theta});
        const Complex c = heterodyne_product(amps.s, amps.i) / (std::polar(1.0, s.path1_phase()) * std::cos(xi + theta));
        EXPECT_NEAR(std::abs(c), 0.25, kTol);
        if (!c0) c0 = c;
        EXPECT_NEAR(std::abs(c - *c0), 0.0, 1e-12);
    }
}

TEST(HeterodyneProduct, RejectsMistaggedTerms) {
    const auto amps = eraser_amplitudes({}, {0.1, 0.2});
    EXPECT_THROW(heterodyne_product(amps.i, amps.s), std::invalid_argument);
}

TEST(CorrelationR, Examples) {
    CoincidenceSetting c;
    EXPECT_EQ(correlation_R({}, {0.0, 0.0}, c), 1.0);
    EXPECT_NEAR(correlation_R({}, {deg_to_rad(22.5), deg_to_rad(22.5)}, c), 0.5, kTol);
    for (const double tsi : {0.0, 1e-7, 5e-6}) {
        c.tau_si = tsi;
        EXPECT_NEAR(correlation_R({}, {deg_to_rad(40.0), deg_to_rad(50.0)}, c), 0.0, kTol);
    }
    c.tau_si = c.tau_c;
    EXPECT_NEAR(correlation_R({}, {deg_to_rad(22.5), deg_to_rad(22.5)}, c), std::exp(-2.0) * 0.5, kTol);
    EXPECT_NEAR(correlation_R({}, {deg_to_rad(22.5), deg_to_rad(22.5)}, c), 0.06767, 1e-5);
}

TEST(CorrelationR, EnvelopeIsSymmetricAndMonotone) {
    CoincidenceSetting c;
    const EraserSetting e{0.2, 0.3};
    double prev = 2.0;
    for (int k = 0; k <= 50; ++k) {
        c.tau_si = k * 0.1e-6;
        const double r = correlation_R({}, e, c);
        EXPECT_LT(r, prev);
        prev = r;
        c.tau_si = -c.tau_si;
        EXPECT_EQ(correlation_R({}, e, c), r);
    }
}

TEST(CorrelationR, DetuningAndOrientationDropOut) {
    const CoincidenceSetting c;
    Rng rng(4);
    for (int n = 0; n < 50; ++n) {
        const EraserSetting e{2.0 * kPi * uniform01(rng), 2.0 * kPi * uniform01(rng)};
        const double ref = correlation_R({}, e, c);
        for (const double df : DetuningGrid::standard(1.0e6).points())
            for (auto o : {Orientation::PlusMinus, Orientation::MinusPlus}) {
                PairEvent ev;
                ev.delta_f = df;
                ev.orientation = o;
                const auto s = ev.setting(3.3e-6);
                EXPECT_NEAR(correlation_R(s, e, c), ref, kTol);
                const auto amps = eraser_amplitudes(s, e);
                EXPECT_NEAR(std::norm(heterodyne_product(amps.s, amps.i)) / kHeterodynePeakPower, ref, kTol);
            }
    }
}

TEST(CoincidenceSetting, Validation) {
    CoincidenceSetting c;
    EXPECT_NO_THROW(c.validate());
    c.resolving_time = c.gate_window;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.tau_c = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.gate_window = -1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_DOUBLE_EQ(CoincidenceSetting::for_bandwidth(2.0e6).tau_c, 5e-7);
}

TEST(ClickProbabilities, CrossPathAcceptanceMatchesOrderingOracle) {
    Rng rng(31);
    for (int n = 0; n < 200; ++n) {
        const double xi = 2.0 * kPi * uniform01(rng), theta = 2.0 * kPi * uniform01(rng);
        const auto ev = cross_pair(2.0e6 * uniform01(rng));
        const double tau = 1e-6 * uniform01(rng);
        const auto d = assign_click_probabilities(ev, EraserSetting{xi, theta}, tau);
        EXPECT_NEAR(d.accepted, accepted_probability_oracle(xi, theta, ev.setting(tau).phase()), kTol);
        EXPECT_NEAR(d.accepted, 0.25 * std::pow(std::cos(xi + theta), 2), kTol);
    }
}

TEST(ClickProbabilities, ZeroAnglesMatchParticleCounting) {
    // Both analyzers pass H only; the accepted class needs H2 at A and H1 at B,
    // i.e. both photons in the H basis: 1/4 of cross-path pairs.
    EXPECT_NEAR(assign_click_probabilities(cross_pair(), EraserSetting{0.0, 0.0}).accepted, 0.25, kTol);
}

TEST(ClickProbabilities, DistributionsAreNormalized) {
    Rng rng(37);
    for (int n = 0; n < 500; ++n) {
        PairEvent ev = cross_pair(2.0e6 * uniform01(rng));
        if (uniform01(rng) < 0.5) ev.route2 = ev.route1;
        std::optional<EraserSetting> e;
        if (uniform01(rng) < 0.8) e = EraserSetting{2.0 * kPi * uniform01(rng), 2.0 * kPi * uniform01(rng)};
        const auto d = assign_click_probabilities(ev, e, 1e-6 * uniform01(rng));
        EXPECT_NEAR(d.total(), 1.0, kTol);
        for (const double p : {d.accepted, d.rejected_coincidence, d.d1_only, d.d2_only, d.none}) {
            EXPECT_GE(p, 0.0);
            EXPECT_LE(p, 1.0);
        }
        if (ev.pair_class() == PairClass::SamePath) {
            EXPECT_EQ(d.accepted, 0.0);
        }
    }
}

TEST(ClickProbabilities, OrthogonalSumIsNeverAccepted) {
    for (const double xi : {0.0, 10.0, 45.0, 80.0})
        EXPECT_NEAR(assign_click_probabilities(cross_pair(), EraserSetting{deg_to_rad(xi), deg_to_rad(90.0 - xi)}).accepted,
                    0.0, kTol);
}

TEST(ClickProbabilities, NoPolarizers) {
    const auto cross = assign_click_probabilities(cross_pair(), std::nullopt);
    EXPECT_DOUBLE_EQ(cross.accepted, 0.5);
    auto same = cross_pair();
    same.route2 = Path::Path1;
    const auto d = assign_click_probabilities(same, std::nullopt);
    EXPECT_EQ(d.accepted, 0.0);
    EXPECT_DOUBLE_EQ(d.rejected_coincidence, 0.5);
}

TEST(SelectionEfficiency, QuarterOfAllPairs) {
    SourceConfig c;
    c.max_pairs = 100'000;
    c.seed = 3;
    const auto pairs = sample_pairs(c);
    EXPECT_NEAR(selection_efficiency(pairs), 0.25, 0.004);
    EXPECT_NEAR(selection_efficiency(pairs, SelectionRule::Kind::CrossPortOnly), 0.5, 0.005);
    EXPECT_NEAR(selection_efficiency(pairs, SelectionRule::Kind::Heterodyne) +
                    selection_efficiency(pairs, SelectionRule::Kind::Complement),
                selection_efficiency(pairs, SelectionRule::Kind::CrossPortOnly), kTol);
}

TEST(SelectionEfficiency, ForcedSamePathIsZero) {
    std::vector<PairEvent> pairs(1000);
    Rng rng(1);
    for (auto& ev : pairs) {
        ev.pol1 = uniform01(rng) < 0.5 ? Pol::H : Pol::V;
        ev.pol2 = uniform01(rng) < 0.5 ? Pol::H : Pol::V;
    }
    EXPECT_EQ(selection_efficiency(pairs), 0.0);
    EXPECT_THROW(selection_efficiency(std::span<const PairEvent>{}), std::domain_error);
}

TEST(Visibility, Examples) {
    std::vector<double> fringe;
    for (int d = 0; d <= 180; d += 5) fringe.push_back(std::pow(std::cos(deg_to_rad(d)), 2));
    EXPECT_NEAR(visibility(fringe), 1.0, 1e-9);
    EXPECT_EQ(visibility(std::vector<double>(10, 0.3)), 0.0);
    EXPECT_THROW(visibility(std::vector<double>(10, 0.0)), std::domain_error);
    EXPECT_THROW(visibility(std::vector<double>{1.0}), std::invalid_argument);
}
