// Scenario runners producing CSV-ready tables: detuning
// sweeps of the joint correlation, the joint-phase fringe, local intensities,
// the dephasing limit, and a CHSH combination of the joint fringe.
//
// Every runner has an analytic path (network amplitudes / closed forms) and,
// where it makes sense, a Monte Carlo path built on the pair source and the
// click-probability model. Monte Carlo work is split into fixed-size chunks
// with seeds derived from (seed, setting, chunk), so results do not depend on
// the thread count.

#pragma once

#include <cesim/detection.hpp>
#include <cesim/interferometer.hpp>
#include <cesim/source.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cesim {

// ------------------------------------------------------------------- tables

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw std::out_of_range("Table: no column " + name);
        return static_cast<std::size_t>(it - header.begin());
    }
    std::vector<double> column_values(const std::string& name) const {
        const auto c = column(name);
        std::vector<double> v;
        v.reserve(rows.size());
        for (const auto& r : rows) v.push_back(r[c]);
        return v;
    }
};

inline std::string format_number(double v) {
    if (v == 0.0) v = 0.0;  // no "-0"
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Comma-separated, header row, '.' decimals, 17 significant digits.
inline std::string format_csv(const Table& t) {
    std::string out;
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        if (i) out += ',';
        out += t.header[i];
    }
    out += '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += format_number(row[i]);
        }
        out += '\n';
    }
    return out;
}

inline void emit_csv(const Table& t, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing: " + std::strerror(errno));
    const std::string s = format_csv(t);
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string() + ": " + std::strerror(errno));
}

// ------------------------------------------------------------------- config

enum class RunMode : std::uint8_t { Analytic, MonteCarlo, Both };

struct ExperimentConfig {
    double delta_big = 1.0e6;
    DetuningGrid grid = DetuningGrid::standard(1.0e6);
    // Dephasing averages over this law rather than the standard grid.
    DetuningGrid dephasing_grid = DetuningGrid::uniform(-2.0e6, 2.0e6);
    double tau = 0.0;
    std::vector<double> taus;  // sweeps for run_local / run_dephasing
    std::vector<EraserSetting> angles;
    std::uint64_t n_pairs = 1'000'000;
    std::uint64_t dephasing_samples = 100'000;
    std::uint64_t seed = 1;
    RunMode mode = RunMode::Analytic;
    CoincidenceSetting coincidence = CoincidenceSetting::for_bandwidth(1.0e6);
    bool raw = false;  // report |E_s E_i|^2 instead of peak-normalized values
    unsigned threads = 1;
    double z_limit = 3.0;  // Both mode: max |analytic - mc| / sigma

    bool wants_analytic() const { return mode != RunMode::MonteCarlo; }
    bool wants_mc() const { return mode != RunMode::Analytic; }
};

struct Report {
    Table table;
    std::vector<std::string> violations;  // Both-mode self-check failures
    bool ok() const { return violations.empty(); }
};

// ---------------------------------------------------------------- threading

// Runs fn(0..n-1) on up to `threads` workers. Callers write results by index.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
}

// -------------------------------------------------------------- Monte Carlo

struct McRequest {
    std::optional<EraserSetting> eraser;
    double tau = 0.0;
    double envelope = 1.0;  // survival of an accepted coincidence in the gate
    DetuningGrid grid = DetuningGrid::standard(1.0e6);
    std::uint64_t n_pairs = 0;
    std::uint64_t seed = 1;
    std::uint64_t stream = 0;  // distinguishes settings sharing a seed
    unsigned threads = 1;
};

struct McCounts {
    std::uint64_t generated = 0;
    std::uint64_t accepted = 0;

    double rate() const { return generated ? static_cast<double>(accepted) / static_cast<double>(generated) : 0.0; }
    double rate_error() const {
        if (!generated) return 0.0;
        const double p = rate();
        return std::sqrt(p * (1.0 - p) / static_cast<double>(generated));
    }
    McCounts& operator+=(const McCounts& o) {
        generated += o.generated;
        accepted += o.accepted;
        return *this;
    }
};

inline constexpr std::uint64_t kMcChunk = 1u << 16;

inline McCounts mc_accepted_counts(const McRequest& req) {
    req.grid.validate();
    const std::uint64_t n_chunks = (req.n_pairs + kMcChunk - 1) / kMcChunk;
    std::vector<McCounts> partial(n_chunks);
    parallel_for(n_chunks, req.threads, [&](std::size_t c) {
        Rng rng(derive_seed(req.seed, req.stream, c));
        const std::uint64_t begin = c * kMcChunk;
        const std::uint64_t end = std::min(req.n_pairs, begin + kMcChunk);
        // Distributions depend on (detuning, orientation, class); memoize on
        // grid draws, which repeat.
        struct Memo {
            double delta_f;
            Orientation o;
            OutcomeDistribution cross;
        };
        std::vector<Memo> memo;
        McCounts acc;
        for (std::uint64_t k = begin; k < end; ++k) {
            const PairEvent ev = draw_pair_attributes(rng, req.grid, static_cast<std::uint32_t>(k));
            double p_acc = 0.0;
            if (ev.pair_class() == PairClass::CrossPath) {
                const Memo* hit = nullptr;
                if (req.grid.mode == DetuningGrid::Mode::Grid)
                    for (const auto& m : memo)
                        if (m.delta_f == ev.delta_f && m.o == ev.orientation) hit = &m;
                if (hit) {
                    p_acc = hit->cross.accepted;
                } else {
                    const auto d = assign_click_probabilities(ev, req.eraser, req.tau);
                    if (req.grid.mode == DetuningGrid::Mode::Grid) memo.push_back({ev.delta_f, ev.orientation, d});
                    p_acc = d.accepted;
                }
            }
            const double u = uniform01(rng);
            const double g = uniform01(rng);
            ++acc.generated;
            if (u < p_acc && g < req.envelope) ++acc.accepted;
        }
        partial[c] = acc;
    });
    McCounts total;
    for (const auto& p : partial) total += p;
    return total;
}

// Normalized coincidence rate with its statistical error.
struct CorrelationEstimate {
    double r_normalized = 0.0;
    std::uint64_t n_generated = 0;
    std::uint64_t n_accepted = 0;
    double stat_error = 0.0;
};

// Ratio of two independent binomial rates, first-order error propagation.
inline CorrelationEstimate normalize_counts(const McCounts& num, const McCounts& ref) {
    if (ref.accepted == 0) throw std::domain_error("normalize_counts: reference setting has no coincidences");
    CorrelationEstimate e;
    const double p = num.rate(), p0 = ref.rate();
    const double sp = num.rate_error(), sp0 = ref.rate_error();
    e.r_normalized = p / p0;
    e.n_generated = num.generated;
    e.n_accepted = num.accepted;
    e.stat_error = std::sqrt(sp * sp / (p0 * p0) + p * p * sp0 * sp0 / (p0 * p0 * p0 * p0));
    // A zero count still carries the resolution of one event.
    if (num.accepted == 0) e.stat_error = std::max(e.stat_error, 1.0 / (static_cast<double>(num.generated) * p0));
    return e;
}

namespace detail {

inline McRequest mc_request(const ExperimentConfig& cfg, const EraserSetting& e, std::uint64_t stream) {
    McRequest r;
    r.eraser = e;
    r.tau = cfg.tau;
    r.envelope = cfg.coincidence.envelope();
    r.grid = cfg.grid;
    r.n_pairs = cfg.n_pairs;
    r.seed = cfg.seed;
    r.stream = stream;
    r.threads = cfg.threads;
    return r;
}

// Reference point for normalization: xi + theta = 0 at zero delay.
inline McCounts mc_reference(const ExperimentConfig& cfg) {
    auto r = mc_request(cfg, EraserSetting{0.0, 0.0}, 0xffff'ffffULL);
    r.envelope = 1.0;
    return mc_accepted_counts(r);
}

inline void check_agreement(Report& rep, const std::string& what, double analytic, const CorrelationEstimate& mc,
                            double z_limit) {
    const double z = mc.stat_error > 0.0 ? (mc.r_normalized - analytic) / mc.stat_error
                                         : (mc.r_normalized == analytic ? 0.0 : INFINITY);
    if (!(std::abs(z) <= z_limit))
        rep.violations.push_back(what + ": analytic " + format_number(analytic) + " vs mc " +
                                 format_number(mc.r_normalized) + " +- " + format_number(mc.stat_error));
}

// Degrees for table columns, snapped to 1e-9 so round-tripped inputs print as typed.
inline double deg(double rad) { return std::round(rad_to_deg(rad) * 1e9) / 1e9 + 0.0; }

}  // namespace detail

// |E_s E_i|^2 of the accepted monomials for one pair setting.
inline double raw_joint_power(const PairSetting& s, const EraserSetting& e) {
    const auto amps = eraser_amplitudes(s, e);
    return std::norm(heterodyne_product(amps.s, amps.i));
}

// Peak-normalized R for one detuning, straight from the network amplitudes.
inline double joint_correlation_from_network(const PairSetting& s, const EraserSetting& e,
                                             const CoincidenceSetting& c, bool raw = false) {
    const double p = raw_joint_power(s, e) * c.envelope();
    return raw ? p : p / kHeterodynePeakPower;
}

// ------------------------------------------------------------------ runners

inline Report run_fig2a(const ExperimentConfig& cfg) {
    const auto deltas = cfg.grid.points();
    if (deltas.empty()) throw std::invalid_argument("run_fig2a: detuning grid is empty");
    const auto angles = cfg.angles.empty() ? std::vector<EraserSetting>{{0.0, 0.0}} : cfg.angles;

    Report rep;
    rep.table.header = {"delta_f_hz", "xi_deg", "theta_deg"};
    if (cfg.wants_analytic()) rep.table.header.push_back("r_analytic");
    if (cfg.wants_mc()) rep.table.header.insert(rep.table.header.end(), {"r_mc", "r_mc_err"});

    std::optional<McCounts> ref;
    if (cfg.wants_mc()) ref = detail::mc_reference(cfg);

    for (std::size_t a = 0; a < angles.size(); ++a) {
        for (std::size_t k = 0; k < deltas.size(); ++k) {
            const PairEvent probe{0, deltas[k]};
            const PairSetting s = probe.setting(cfg.tau);
            std::vector<double> row{deltas[k], detail::deg(angles[a].xi), detail::deg(angles[a].theta)};
            const double analytic = joint_correlation_from_network(s, angles[a], cfg.coincidence, cfg.raw);
            if (cfg.wants_analytic()) row.push_back(analytic);
            if (cfg.wants_mc()) {
                auto req = detail::mc_request(cfg, angles[a], a * deltas.size() + k);
                req.grid = DetuningGrid{DetuningGrid::Mode::Grid, deltas[k], deltas[k], 1.0};
                const auto est = normalize_counts(mc_accepted_counts(req), *ref);
                const double scale = cfg.raw ? kHeterodynePeakPower : 1.0;
                row.push_back(est.r_normalized * scale);
                row.push_back(est.stat_error * scale);
                if (cfg.mode == RunMode::Both)
                    detail::check_agreement(rep, "fig2a row " + std::to_string(rep.table.rows.size()),
                                            analytic / scale, est, cfg.z_limit);
            }
            rep.table.rows.push_back(std::move(row));
        }
    }
    return rep;
}

// Default joint-phase sweep: xi = 0..180 deg in 5 deg steps at theta = `theta`.
inline std::vector<EraserSetting> default_fig2b_sweep(double theta = 0.0) {
    std::vector<EraserSetting> out;
    for (int d = 0; d <= 180; d += 5) out.push_back({deg_to_rad(d), theta});
    return out;
}

// Grid-averaged joint correlation versus xi + theta. Monte Carlo averages
// counts over the detuning law, then normalizes.
inline Report run_fig2b(const ExperimentConfig& cfg) {
    const auto deltas = cfg.grid.points();
    if (deltas.empty()) throw std::invalid_argument("run_fig2b: detuning grid is empty");
    const auto angles = cfg.angles.empty() ? default_fig2b_sweep() : cfg.angles;

    Report rep;
    rep.table.header = {"xi_deg", "theta_deg", "sum_deg"};
    if (cfg.wants_analytic()) rep.table.header.push_back("r_analytic");
    if (cfg.wants_mc()) rep.table.header.insert(rep.table.header.end(), {"r_mc", "r_mc_err"});

    std::optional<McCounts> ref;
    if (cfg.wants_mc()) ref = detail::mc_reference(cfg);

    std::vector<std::vector<double>> rows(angles.size());
    for (std::size_t a = 0; a < angles.size(); ++a) {
        const auto& e = angles[a];
        double avg = 0.0;
        for (const double df : deltas)
            for (const auto o : {Orientation::PlusMinus, Orientation::MinusPlus}) {
                const PairEvent probe{0, df, o};
                avg += joint_correlation_from_network(probe.setting(cfg.tau), e, cfg.coincidence, cfg.raw);
            }
        avg /= static_cast<double>(2 * deltas.size());
        std::vector<double> row{detail::deg(e.xi), detail::deg(e.theta), detail::deg(e.xi + e.theta)};
        if (cfg.wants_analytic()) row.push_back(avg);
        if (cfg.wants_mc()) {
            const auto est = normalize_counts(mc_accepted_counts(detail::mc_request(cfg, e, a)), *ref);
            const double scale = cfg.raw ? kHeterodynePeakPower : 1.0;
            row.push_back(est.r_normalized * scale);
            row.push_back(est.stat_error * scale);
            if (cfg.mode == RunMode::Both)
                detail::check_agreement(rep, "fig2b sum=" + format_number(detail::deg(e.xi + e.theta)) + "deg",
                                        avg / scale, est, cfg.z_limit);
        }
        rows[a] = std::move(row);
    }
    rep.table.rows = std::move(rows);
    return rep;
}

// Local intensities at both ports with and without polarizers, for every
// (angle, tau, grid detuning).
inline Report run_local(const ExperimentConfig& cfg) {
    const auto deltas = cfg.grid.points();
    const auto angles = cfg.angles.empty() ? std::vector<EraserSetting>{{0.0, 0.0}} : cfg.angles;
    const auto taus = cfg.taus.empty() ? std::vector<double>{cfg.tau} : cfg.taus;

    Report rep;
    rep.table.header = {"xi_deg", "theta_deg", "tau_s", "delta_f_hz", "phase_rad", "I_A", "I_B", "I_s", "I_i"};
    for (const auto& e : angles)
        for (const double tau : taus)
            for (const double df : deltas) {
                const PairSetting s = PairEvent{0, df}.setting(tau);
                const auto ports = output_fields(s);
                const auto amps = eraser_amplitudes(s, e);
                rep.table.rows.push_back({detail::deg(e.xi), detail::deg(e.theta), tau, df, s.path1_phase(),
                                          local_intensity(ports.a), local_intensity(ports.b),
                                          eraser_intensity(amps.s), eraser_intensity(amps.i)});
            }
    return rep;
}

// Default delay sweep for the dephasing runner, in units of 1 / Delta.
inline std::vector<double> default_dephasing_taus(double delta_big) {
    std::vector<double> out;
    for (const double x : {0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0}) out.push_back(x / delta_big);
    return out;
}

// Eraser intensities averaged over random detunings. The *_rel columns are
// relative to the dephased mean level 1/4.
inline Report run_dephasing(const ExperimentConfig& cfg) {
    if (cfg.dephasing_samples == 0) throw std::invalid_argument("run_dephasing: need at least one sample");
    const auto angles = cfg.angles.empty() ? std::vector<EraserSetting>{{deg_to_rad(45.0), deg_to_rad(45.0)}}
                                           : cfg.angles;
    const auto taus = cfg.taus.empty() ? default_dephasing_taus(cfg.delta_big) : cfg.taus;

    std::vector<double> samples(cfg.dephasing_samples);
    {
        Rng rng(derive_seed(cfg.seed, 0xdef));
        for (auto& s : samples) s = cfg.dephasing_grid.draw(rng);
    }

    Report rep;
    rep.table.header = {"xi_deg", "theta_deg", "tau_s", "tau_delta", "I_s", "I_i", "I_s_rel", "I_i_rel"};
    rep.table.rows.resize(angles.size() * taus.size());
    parallel_for(rep.table.rows.size(), cfg.threads, [&](std::size_t idx) {
        const auto& e = angles[idx / taus.size()];
        const double tau = taus[idx % taus.size()];
        double is = 0.0, ii = 0.0;
        for (const double df : samples) {
            const auto amps = eraser_amplitudes(PairEvent{0, df}.setting(tau), e);
            is += eraser_intensity(amps.s);
            ii += eraser_intensity(amps.i);
        }
        is /= static_cast<double>(samples.size());
        ii /= static_cast<double>(samples.size());
        rep.table.rows[idx] = {detail::deg(e.xi), detail::deg(e.theta), tau, tau * cfg.delta_big,
                               is, ii, is / 0.25, ii / 0.25};
    });
    return rep;
}

// ---------------------------------------------------------------------- CHSH

struct ChshAngles {
    double a = 0.0;
    double a_prime = deg_to_rad(45.0);
    double b = deg_to_rad(-22.5);
    double b_prime = deg_to_rad(-67.5);
};

struct ChshResult {
    double s_analytic = NAN;
    double s_mc = NAN;
    double s_mc_err = NAN;
    std::vector<double> e_analytic;  // E(a,b), E(a,b'), E(a',b), E(a',b')
    std::vector<double> e_mc;
};

namespace detail {

// E = (R(al,be) + R(al+90,be+90) - R(al+90,be) - R(al,be+90)) / sum. A fully
// dephased gate has no coincidences at all; E is then 0.
inline double chsh_e(double r_pp, double r_mm, double r_mp, double r_pm) {
    const double den = r_pp + r_mm + r_mp + r_pm;
    return den > 0.0 ? (r_pp + r_mm - r_mp - r_pm) / den : 0.0;
}

inline double chsh_s(const std::vector<double>& e) { return std::abs(e[0] - e[1] + e[2] + e[3]); }

}  // namespace detail

inline ChshResult run_chsh(const ExperimentConfig& cfg, const ChshAngles& ang = {}) {
    const double q = deg_to_rad(90.0);
    const std::array<std::pair<double, double>, 4> pairs{
        {{ang.a, ang.b}, {ang.a, ang.b_prime}, {ang.a_prime, ang.b}, {ang.a_prime, ang.b_prime}}};
    const PairSetting s{0.0, Orientation::PlusMinus, cfg.tau};

    ChshResult res;
    if (cfg.wants_analytic()) {
        for (const auto& [al, be] : pairs) {
            const auto r = [&](double x, double y) { return correlation_R(s, {x, y}, cfg.coincidence); };
            res.e_analytic.push_back(detail::chsh_e(r(al, be), r(al + q, be + q), r(al + q, be), r(al, be + q)));
        }
        res.s_analytic = detail::chsh_s(res.e_analytic);
    }
    if (cfg.wants_mc()) {
        double var_s = 0.0;
        std::uint64_t stream = 0xc0;
        for (const auto& [al, be] : pairs) {
            std::array<McCounts, 4> n;
            const std::array<EraserSetting, 4> settings{{{al, be}, {al + q, be + q}, {al + q, be}, {al, be + q}}};
            for (std::size_t k = 0; k < 4; ++k) n[k] = mc_accepted_counts(detail::mc_request(cfg, settings[k], stream++));
            const double num = static_cast<double>(n[0].accepted + n[1].accepted) -
                               static_cast<double>(n[2].accepted + n[3].accepted);
            const double den = static_cast<double>(n[0].accepted + n[1].accepted + n[2].accepted + n[3].accepted);
            res.e_mc.push_back(den > 0.0 ? num / den : 0.0);
            if (den > 0.0)
                for (std::size_t k = 0; k < 4; ++k) {
                    const double sign = k < 2 ? 1.0 : -1.0;
                    const double grad = (sign * den - num) / (den * den);
                    const double p = n[k].rate();
                    var_s += grad * grad * static_cast<double>(n[k].generated) * p * (1.0 - p);
                }
        }
        res.s_mc = detail::chsh_s(res.e_mc);
        res.s_mc_err = std::sqrt(var_s);
    }
    return res;
}

// One row per correlator E(alpha, beta); S itself is reported by the caller.
inline Table chsh_table(const ChshResult& r, const ChshAngles& ang) {
    Table t;
    t.header = {"alpha_deg", "beta_deg"};
    if (!r.e_analytic.empty()) t.header.push_back("e_analytic");
    if (!r.e_mc.empty()) t.header.push_back("e_mc");
    const std::array<std::pair<double, double>, 4> pairs{
        {{ang.a, ang.b}, {ang.a, ang.b_prime}, {ang.a_prime, ang.b}, {ang.a_prime, ang.b_prime}}};
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<double> row{detail::deg(pairs[k].first), detail::deg(pairs[k].second)};
        if (!r.e_analytic.empty()) row.push_back(r.e_analytic[k]);
        if (!r.e_mc.empty()) row.push_back(r.e_mc[k]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace cesim
