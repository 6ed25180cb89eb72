// Quick invariant sweep behind `cesim selftest`. Each check
// prints one PASS/FAIL line; sizes are chosen to finish in a few seconds.

#pragma once

#include <cesim/detection.hpp>
#include <cesim/eventstream.hpp>
#include <cesim/experiments.hpp>
#include <cesim/interferometer.hpp>
#include <cesim/optics.hpp>
#include <cesim/source.hpp>

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace cesim {

namespace detail {

struct Check {
    std::string name;
    std::function<std::string()> run;  // empty string = pass, otherwise the reason
};

inline std::vector<Check> selftest_checks(std::uint64_t seed, unsigned threads) {
    std::vector<Check> checks;

    checks.push_back({"lossless elements conserve power", [seed] {
        Rng rng(derive_seed(seed, 1));
        for (int n = 0; n < 1000; ++n) {
            FieldState st;
            for (Path p : {Path::Path1, Path::Path2})
                for (Pol q : {Pol::H, Pol::V})
                    st.add({p, q, Detune::Plus}, {standard_normal(rng), standard_normal(rng)});
            const double p0 = st.power();
            const double phase = 10.0 * uniform01(rng);
            for (const auto& out : {hwp_22_5(st), mirror(st, Path::Path2), aom_tag(st, Path::Path1, Detune::Minus, phase)})
                if (std::abs(out.power() - p0) > 1e-12 * std::max(1.0, p0)) return std::string("power drift");
            const auto ports = pbs_route(st);
            if (std::abs(ports.a.power() + ports.b.power() - p0) > 1e-12 * std::max(1.0, p0))
                return std::string("pbs power drift");
        }
        return std::string();
    }});

    checks.push_back({"joint fringe is cos^2(xi+theta) on both routes", [seed] {
        Rng rng(derive_seed(seed, 2));
        const CoincidenceSetting c;
        for (int n = 0; n < 200; ++n) {
            const EraserSetting e{2.0 * std::numbers::pi * uniform01(rng), 2.0 * std::numbers::pi * uniform01(rng)};
            const PairSetting s{1.0e6 * uniform01(rng), Orientation::PlusMinus, 1e-6 * uniform01(rng)};
            const double expect = std::pow(std::cos(e.xi + e.theta), 2);
            if (std::abs(correlation_R(s, e, c) - expect) > 1e-12) return std::string("closed form");
            if (std::abs(joint_correlation_from_network(s, e, c) - expect) > 1e-12) return std::string("network");
        }
        return std::string();
    }});

    checks.push_back({"local intensities are uniform", [] {
        for (const double tau : {0.0, 1e-6, 1e-5, 1e-4})
            for (const double df : DetuningGrid::standard(1e6).points()) {
                const auto ports = output_fields(PairEvent{0, df}.setting(tau));
                if (std::abs(local_intensity(ports.a) - 0.5) > 1e-12 || std::abs(local_intensity(ports.b) - 0.5) > 1e-12)
                    return std::string("I_A or I_B moved");
            }
        return std::string();
    }});

    checks.push_back({"eraser visibilities are |sin 2xi| and |sin 2theta|", [] {
        for (const double deg : {0.0, 15.0, 22.5, 30.0, 45.0}) {
            const double a = deg_to_rad(deg);
            std::vector<double> is, ii;
            for (int k = 0; k <= 72; ++k) {
                const PairSetting s{1.0e6, Orientation::PlusMinus, k / 72.0 * 0.5e-6};
                const auto amps = eraser_amplitudes(s, {a, a});
                is.push_back(eraser_intensity(amps.s));
                ii.push_back(eraser_intensity(amps.i));
            }
            if (std::abs(visibility(is) - std::abs(std::sin(2 * a))) > 1e-9) return "I_s at " + format_number(deg);
            if (std::abs(visibility(ii) - std::abs(std::sin(2 * a))) > 1e-9) return "I_i at " + format_number(deg);
        }
        return std::string();
    }});

    checks.push_back({"selection efficiency is 1/4", [seed] {
        SourceConfig sc;
        sc.seed = seed;
        sc.max_pairs = 100'000;
        const auto pairs = sample_pairs(sc);
        const double eff = selection_efficiency(pairs);
        return std::abs(eff - 0.25) <= 0.004 ? std::string() : "efficiency " + format_number(eff);
    }});

    checks.push_back({"monte carlo fringe agrees with the closed form", [seed, threads] {
        ExperimentConfig cfg;
        cfg.seed = seed;
        cfg.threads = threads;
        cfg.n_pairs = 200'000;
        cfg.mode = RunMode::Both;
        cfg.angles = {{0.0, 0.0}, {deg_to_rad(30.0), 0.0}, {deg_to_rad(45.0), deg_to_rad(45.0)}};
        const auto rep = run_fig2b(cfg);
        return rep.ok() ? std::string() : rep.violations.front();
    }});

    checks.push_back({"CHSH S = 2 sqrt 2 at the canonical angles", [] {
        const auto r = run_chsh(ExperimentConfig{});
        return std::abs(r.s_analytic - 2.0 * std::numbers::sqrt2) <= 1e-9 ? std::string()
                                                                           : "S = " + format_number(r.s_analytic);
    }});

    checks.push_back({"event stream round trip and pair recovery", [seed] {
        StreamConfig sc;
        sc.source.seed = seed;
        sc.source.max_pairs = 20'000;
        sc.source.rate = 1.0e7;
        const auto s = synthesize_stream(sc);
        if (decode_stream(encode_stream(s.records)) != s.records) return std::string("round trip");
        const auto matched = match_coincidences(s.records, 1000);
        const auto rep = recovery_against_truth(s.records, matched);
        return rep.recovery_rate() >= 0.999 ? std::string() : "recovery " + format_number(rep.recovery_rate());
    }});

    return checks;
}

}  // namespace detail

// Returns true when every check passes.
inline bool run_selftest(std::ostream& out, std::uint64_t seed = 1, unsigned threads = 1) {
    bool ok = true;
    for (const auto& c : detail::selftest_checks(seed, threads)) {
        std::string why;
        try {
            why = c.run();
        } catch (const std::exception& e) {
            why = std::string("exception: ") + e.what();
        }
        out << (why.empty() ? "PASS  " : "FAIL  ") << c.name;
        if (!why.empty()) out << "  (" << why << ")";
        out << '\n';
        ok = ok && why.empty();
    }
    return ok;
}

}  // namespace cesim
