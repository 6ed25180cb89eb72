// Argument parsing and dispatch for the `cesim` tool.
//
// Options may appear before or after the subcommand. A --config file holds
// plain `key=value` lines using the long option names without dashes
// (e.g. `xi-deg=45`, `mode=both`); command-line flags override it. The
// CESIM_SEED environment variable is consulted only when neither sets --seed.

#pragma once

#include <cesim/detection.hpp>
#include <cesim/eventstream.hpp>
#include <cesim/experiments.hpp>
#include <cesim/interferometer.hpp>
#include <cesim/selftest.hpp>
#include <cesim/source.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cesim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitSelfCheck = 3;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Options {
    std::optional<double> xi_deg, theta_deg;
    std::optional<double> tau_s;
    double tau_si_s = 0.0;
    std::optional<double> tau_c_s;
    double delta_hz = 1.0e6;
    std::optional<std::string> grid;     // lo:hi:step
    std::optional<std::string> uniform;  // lo:hi
    std::optional<std::string> sweep;    // fig2b xi sweep lo:hi:step in degrees
    std::uint64_t pairs = 0;
    std::uint64_t seed = 1;
    std::string mode = "analytic";
    std::uint64_t window_ps = 1000;
    std::string out;
    std::string in;
    std::string hist;
    std::string format = "csv";
    bool raw = false;
    unsigned threads = 0;
    // chsh
    double a_deg = 0.0, a_prime_deg = 45.0, b_deg = -22.5, b_prime_deg = -67.5;
    // events
    double rate = 1.0e7;
    double duration_s = 1.0;
    double mu = 0.1;
    bool polarizers = false;
    bool coherence_jitter = false;
    double detector_jitter_ps = 50.0;
    double tau_si_ps = 0.0;
    std::int64_t bin_ps = 0;
    std::optional<std::string> range_ps;  // lo:hi
    std::uint64_t samples = 100'000;
};

struct CliInvocation {
    std::string subcommand;
    Options options;
    bool help = false;
    std::string help_text;
};

inline const std::vector<std::pair<std::string, std::string>>& subcommands() {
    static const std::vector<std::pair<std::string, std::string>> s{
        {"local", "local intensities I_A, I_B and eraser intensities I_s, I_i over tau and detuning"},
        {"correlation", "normalized joint correlation R at (--xi-deg, --theta-deg, --tau-si-s)"},
        {"fig2a", "R per detuning over the grid (detuning independence)"},
        {"fig2b", "grid-averaged R versus xi + theta (default xi = 0..180 deg step 5)"},
        {"dephasing", "eraser intensities averaged over uniform detunings versus tau"},
        {"chsh", "CHSH S from the joint fringe (default angles 0, 45, -22.5, -67.5 deg)"},
        {"events-generate", "write a synthetic CESIMTT1 time-tag stream to --out"},
        {"events-match", "match coincidences in --in, write CSV to --out and a tau_si histogram to --hist"},
        {"selftest", "run the invariant suite; nonzero exit on any failure"},
    };
    return s;
}

namespace detail {

inline std::vector<double> split_numbers(const std::string& s, std::size_t expected, const std::string& flag) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ':')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(flag + ": malformed number '" + item + "'");
        }
    }
    if (v.size() != expected)
        throw UsageError(flag + ": expected " + std::to_string(expected) + " ':'-separated numbers, got '" + s + "'");
    return v;
}

inline std::unique_ptr<CLI::App> build_app(CliInvocation& inv) {
    auto app = std::make_unique<CLI::App>("cesim: polarization-path correlation simulator");
    auto& o = inv.options;
    app->footer(
        "Config file (--config PATH): one `key=value` per line, keys are long option names\n"
        "without dashes (xi-deg=45). Command-line flags override the file; CESIM_SEED\n"
        "supplies the seed when neither does. Angles are in degrees.");

    app->add_option("--xi-deg", o.xi_deg, "polarizer angle at port A (deg)");
    app->add_option("--theta-deg", o.theta_deg, "polarizer angle at port B (deg)");
    app->add_option("--tau-s", o.tau_s, "MZI delay tau (s)");
    app->add_option("--tau-si-s", o.tau_si_s, "D1-D2 electronic delay (s)");
    app->add_option("--tau-c-s", o.tau_c_s, "ensemble coherence time (s), default 1/Delta");
    app->add_option("--delta-hz", o.delta_hz, "AOM bandwidth Delta (Hz)")->check(CLI::PositiveNumber);
    auto* grid = app->add_option("--grid", o.grid, "detuning grid lo:hi:step (Hz), default -2D:2D:D/5");
    auto* uni = app->add_option("--uniform", o.uniform, "uniform detuning law lo:hi (Hz)");
    grid->excludes(uni);
    app->add_option("--sweep-deg", o.sweep, "fig2b xi sweep lo:hi:step (deg)");
    app->add_option("--pairs", o.pairs, "pairs per Monte Carlo point / stream length");
    app->add_option("--seed", o.seed, "RNG seed");
    app->add_option("--mode", o.mode, "analytic | mc | both")->check(CLI::IsMember({"analytic", "mc", "both"}));
    app->add_option("--window-ps", o.window_ps, "coincidence gate window (ps)");
    app->add_option("--out", o.out, "output path");
    app->add_option("--in", o.in, "input CESIMTT1 stream (events-match)");
    app->add_option("--hist", o.hist, "tau_si histogram CSV (events-match)");
    app->add_option("--format", o.format, "output format")->check(CLI::IsMember({"csv"}));
    app->add_flag("--raw", o.raw, "report |E_s E_i|^2 instead of peak-normalized R");
    app->add_option("--threads", o.threads, "worker cap, default all cores");
    app->add_option("--a-deg", o.a_deg, "CHSH a (deg)");
    app->add_option("--a-prime-deg", o.a_prime_deg, "CHSH a' (deg)");
    app->add_option("--b-deg", o.b_deg, "CHSH b (deg)");
    app->add_option("--b-prime-deg", o.b_prime_deg, "CHSH b' (deg)");
    app->add_option("--rate", o.rate, "coherence-window attempts per second")->check(CLI::PositiveNumber);
    app->add_option("--duration-s", o.duration_s, "stream duration (s) when --pairs is 0")->check(CLI::PositiveNumber);
    app->add_option("--mu", o.mu, "mean photon number per window")->check(CLI::PositiveNumber);
    app->add_flag("--polarizers", o.polarizers, "insert the analyzers in events-generate");
    app->add_flag("--coherence-jitter", o.coherence_jitter, "add Exp(tau_c/2) D2 delay to coincidences");
    app->add_option("--detector-jitter-ps", o.detector_jitter_ps, "Gaussian click jitter sigma (ps)");
    app->add_option("--tau-si-ps", o.tau_si_ps, "fixed D2 delay in generated streams (ps)");
    app->add_option("--bin-ps", o.bin_ps, "histogram bin width (ps)");
    app->add_option("--range-ps", o.range_ps, "histogram range lo:hi (ps)");
    app->add_option("--samples", o.samples, "detuning samples for dephasing");
    app->set_config("--config", "", "key=value configuration file");

    app->require_subcommand(1, 1);
    for (const auto& [name, desc] : subcommands()) app->add_subcommand(name, desc)->fallthrough();
    return app;
}

}  // namespace detail

// Throws UsageError on malformed or conflicting input. --help yields an
// invocation with help = true.
inline CliInvocation parse_args(int argc, const char* const* argv) {
    CliInvocation inv;
    auto app = detail::build_app(inv);
    try {
        app->parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        inv.help = true;
        inv.help_text = app->help();
        return inv;
    } catch (const CLI::CallForAllHelp&) {
        inv.help = true;
        inv.help_text = app->help("", CLI::AppFormatMode::All);
        return inv;
    } catch (const CLI::ParseError& e) {
        throw UsageError(std::string(e.what()) + "\n\n" + app->help());
    }
    inv.subcommand = app->get_subcommands().front()->get_name();
    if (app->get_option("--seed")->count() == 0)
        if (const char* env = std::getenv("CESIM_SEED")) {
            try {
                inv.options.seed = std::stoull(env);
            } catch (const std::exception&) {
                throw UsageError(std::string("CESIM_SEED: not an integer: ") + env);
            }
        }
    if (inv.options.sweep && inv.subcommand != "fig2b") throw UsageError("--sweep-deg only applies to fig2b");
    if (inv.options.raw && inv.options.mode == "mc" && inv.subcommand == "correlation")
        throw UsageError("--raw needs the analytic path");
    return inv;
}

namespace detail {

inline ExperimentConfig experiment_config(const Options& o) {
    ExperimentConfig cfg;
    cfg.delta_big = o.delta_hz;
    cfg.grid = DetuningGrid::standard(o.delta_hz);
    cfg.dephasing_grid = DetuningGrid::uniform(-2.0 * o.delta_hz, 2.0 * o.delta_hz);
    if (o.grid) {
        const auto v = split_numbers(*o.grid, 3, "--grid");
        cfg.grid = {DetuningGrid::Mode::Grid, v[0], v[1], v[2]};
    }
    if (o.uniform) {
        const auto v = split_numbers(*o.uniform, 2, "--uniform");
        cfg.grid = DetuningGrid::uniform(v[0], v[1]);
        cfg.dephasing_grid = cfg.grid;
    }
    try {
        cfg.grid.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    cfg.tau = o.tau_s.value_or(0.0);
    if (o.tau_s) cfg.taus = {*o.tau_s};
    cfg.n_pairs = o.pairs ? o.pairs : 1'000'000;
    cfg.dephasing_samples = o.samples;
    cfg.seed = o.seed;
    cfg.mode = o.mode == "mc" ? RunMode::MonteCarlo : o.mode == "both" ? RunMode::Both : RunMode::Analytic;
    cfg.coincidence.tau_si = o.tau_si_s;
    cfg.coincidence.tau_c = o.tau_c_s.value_or(1.0 / o.delta_hz);
    cfg.raw = o.raw;
    cfg.threads = o.threads ? o.threads : std::max(1u, std::thread::hardware_concurrency());
    return cfg;
}

inline std::vector<EraserSetting> angles_or(const Options& o, std::vector<std::pair<double, double>> fallback_deg) {
    if (o.xi_deg || o.theta_deg)
        return {{deg_to_rad(o.xi_deg.value_or(0.0)), deg_to_rad(o.theta_deg.value_or(0.0))}};
    std::vector<EraserSetting> out;
    for (const auto& [x, t] : fallback_deg) out.push_back({deg_to_rad(x), deg_to_rad(t)});
    return out;
}

inline void write_table(const Table& t, const Options& o, std::ostream& out) {
    if (o.out.empty())
        out << format_csv(t);
    else
        emit_csv(t, o.out);
}

inline int report_result(const Report& rep, const Options& o, std::ostream& out, std::ostream& err) {
    write_table(rep.table, o, out);
    for (const auto& v : rep.violations) err << "self-check failed: " << v << '\n';
    return rep.ok() ? kExitOk : kExitSelfCheck;
}

inline int cmd_correlation(const Options& o, std::ostream& out, std::ostream& err) {
    auto cfg = experiment_config(o);
    cfg.angles = angles_or(o, {{0.0, 0.0}});
    const auto& e = cfg.angles.front();
    const PairSetting s{0.0, Orientation::PlusMinus, cfg.tau};
    Report rep;
    rep.table.header = {"xi_deg", "theta_deg", "tau_si_s"};
    std::vector<double> row{cesim::detail::deg(e.xi), cesim::detail::deg(e.theta), cfg.coincidence.tau_si};
    const double analytic = correlation_R(s, e, cfg.coincidence);
    if (cfg.wants_analytic()) {
        rep.table.header.push_back(o.raw ? "r_raw" : "r_normalized");
        row.push_back(o.raw ? analytic * kHeterodynePeakPower : analytic);
    }
    if (cfg.wants_mc()) {
        rep.table.header.insert(rep.table.header.end(), {"r_mc", "r_mc_err"});
        auto req = cesim::detail::mc_request(cfg, e, 1);
        const auto est = normalize_counts(mc_accepted_counts(req), cesim::detail::mc_reference(cfg));
        row.push_back(est.r_normalized);
        row.push_back(est.stat_error);
        if (cfg.mode == RunMode::Both) cesim::detail::check_agreement(rep, "correlation", analytic, est, cfg.z_limit);
    }
    rep.table.rows.push_back(std::move(row));
    return report_result(rep, o, out, err);
}

inline int cmd_chsh(const Options& o, std::ostream& out, std::ostream& err) {
    auto cfg = experiment_config(o);
    const ChshAngles ang{deg_to_rad(o.a_deg), deg_to_rad(o.a_prime_deg), deg_to_rad(o.b_deg),
                         deg_to_rad(o.b_prime_deg)};
    const auto r = run_chsh(cfg, ang);
    if (!o.out.empty()) emit_csv(chsh_table(r, ang), o.out);
    if (cfg.wants_analytic()) out << "S_analytic," << format_number(r.s_analytic) << '\n';
    if (cfg.wants_mc()) out << "S_mc," << format_number(r.s_mc) << ',' << format_number(r.s_mc_err) << '\n';
    if (cfg.mode == RunMode::Both && !(std::abs(r.s_mc - r.s_analytic) <= cfg.z_limit * r.s_mc_err)) {
        err << "self-check failed: chsh analytic and mc disagree\n";
        return kExitSelfCheck;
    }
    return kExitOk;
}

inline StreamConfig stream_config(const Options& o) {
    StreamConfig sc;
    sc.source.mu = o.mu;
    sc.source.rate = o.rate;
    sc.source.duration = o.duration_s;
    sc.source.delta_big = o.delta_hz;
    sc.source.grid = experiment_config(o).grid;
    sc.source.seed = o.seed;
    sc.source.max_pairs = o.pairs;
    if (o.polarizers || o.xi_deg || o.theta_deg)
        sc.eraser = EraserSetting{deg_to_rad(o.xi_deg.value_or(0.0)), deg_to_rad(o.theta_deg.value_or(0.0))};
    sc.tau = o.tau_s.value_or(0.0);
    sc.tau_si_delay_ps = o.tau_si_ps;
    sc.detector_jitter_ps = o.detector_jitter_ps;
    sc.coherence_jitter = o.coherence_jitter;
    sc.tau_c = o.tau_c_s.value_or(1.0 / o.delta_hz);
    return sc;
}

inline int cmd_events_generate(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw UsageError("events-generate needs --out PATH");
    const auto sc = stream_config(o);
    sc.source.validate();
    const auto s = synthesize_stream(sc);
    write_stream_file(o.out, s.records);
    out << "pairs," << s.pairs.size() << "\nrecords," << s.records.size() << "\nselection_efficiency,"
        << (s.pairs.empty() ? std::string("nan") : format_number(selection_efficiency(s.pairs))) << '\n';
    return kExitOk;
}

inline int cmd_events_match(const Options& o, std::ostream& out) {
    if (o.in.empty()) throw UsageError("events-match needs --in PATH");
    const auto records = read_stream_file(o.in);
    const auto matched = match_coincidences(records, o.window_ps);

    if (!o.out.empty()) {
        Table t;
        t.header = {"t1_ps", "t2_ps", "tau_si_ps", "accepted", "reject_reason", "pair_id1", "pair_id2"};
        for (const auto& c : matched)
            t.rows.push_back({static_cast<double>(c.t1_ps), static_cast<double>(c.t2_ps),
                              static_cast<double>(c.tau_si_ps), c.accepted ? 1.0 : 0.0,
                              static_cast<double>(c.reject_reason), static_cast<double>(c.pair_id1),
                              static_cast<double>(c.pair_id2)});
        emit_csv(t, o.out);
    }
    if (!o.hist.empty()) {
        std::int64_t lo = -static_cast<std::int64_t>(o.window_ps), hi = static_cast<std::int64_t>(o.window_ps) + 1;
        if (o.range_ps) {
            const auto v = split_numbers(*o.range_ps, 2, "--range-ps");
            lo = static_cast<std::int64_t>(v[0]);
            hi = static_cast<std::int64_t>(v[1]);
        }
        const std::int64_t bin = o.bin_ps ? o.bin_ps : std::max<std::int64_t>(1, (hi - lo) / 100);
        const auto h = histogram_tau_si(matched, bin, lo, hi);
        Table t;
        t.header = {"bin_lo_ps", "bin_hi_ps", "count"};
        for (std::size_t k = 0; k < h.counts.size(); ++k)
            t.rows.push_back({static_cast<double>(h.bin_lo(k)), static_cast<double>(h.bin_hi(k)),
                              static_cast<double>(h.counts[k])});
        emit_csv(t, o.hist);
    }

    std::set<std::uint32_t> ids;
    for (const auto& r : records)
        if (r.pair_id != kNoPairId) ids.insert(r.pair_id);
    const auto rec = recovery_against_truth(records, matched);
    std::size_t rejected = 0;
    for (const auto& c : matched) rejected += !c.accepted;
    out << "records," << records.size() << "\ncandidates," << matched.size() << "\naccepted," << rec.accepted_total
        << "\nrejected," << rejected;
    if (!ids.empty())
        out << "\naccepted_per_pair,"
            << format_number(static_cast<double>(rec.accepted_total) / static_cast<double>(ids.size()))
            << "\ntrue_accepted," << rec.true_accepted << "\nrecovered," << rec.recovered << "\nrecovery_rate,"
            << format_number(rec.recovery_rate());
    out << '\n';
    return kExitOk;
}

}  // namespace detail

inline int run(const CliInvocation& inv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    if (inv.help) {
        out << inv.help_text;
        return kExitOk;
    }
    const auto& o = inv.options;
    const auto& cmd = inv.subcommand;
    try {
        if (cmd == "selftest")
            return run_selftest(out, o.seed, detail::experiment_config(o).threads) ? kExitOk : kExitFailure;
        if (cmd == "correlation") return detail::cmd_correlation(o, out, err);
        if (cmd == "chsh") return detail::cmd_chsh(o, out, err);
        if (cmd == "events-generate") return detail::cmd_events_generate(o, out);
        if (cmd == "events-match") return detail::cmd_events_match(o, out);

        auto cfg = detail::experiment_config(o);
        if (cmd == "local") {
            cfg.angles = detail::angles_or(o, {{45.0, 45.0}});
            if (!o.tau_s) cfg.taus = {0.0, 1.0 / o.delta_hz, 10.0 / o.delta_hz, 100.0 / o.delta_hz};
            return detail::report_result(run_local(cfg), o, out, err);
        }
        if (cmd == "fig2a") {
            cfg.angles = detail::angles_or(o, {{0, 0}, {22.5, 0}, {45, 0}, {22.5, 22.5}, {45, 45}});
            return detail::report_result(run_fig2a(cfg), o, out, err);
        }
        if (cmd == "fig2b") {
            const double theta = deg_to_rad(o.theta_deg.value_or(0.0));
            if (o.sweep) {
                const auto v = detail::split_numbers(*o.sweep, 3, "--sweep-deg");
                if (!(v[2] > 0.0) || v[1] < v[0]) throw UsageError("--sweep-deg: need lo <= hi and step > 0");
                const auto n = static_cast<int>(std::floor((v[1] - v[0]) / v[2] + 1e-9));
                for (int k = 0; k <= n; ++k) cfg.angles.push_back({deg_to_rad(v[0] + k * v[2]), theta});
            } else if (o.xi_deg) {
                cfg.angles = {{deg_to_rad(*o.xi_deg), theta}};
            } else {
                cfg.angles = default_fig2b_sweep(theta);
            }
            return detail::report_result(run_fig2b(cfg), o, out, err);
        }
        if (cmd == "dephasing") {
            cfg.angles = detail::angles_or(o, {{45.0, 45.0}});
            return detail::report_result(run_dephasing(cfg), o, out, err);
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    err << "unknown subcommand: " << cmd << '\n';
    return kExitUsage;
}

// parse + run with usage errors mapped to exit code 2.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CliInvocation inv;
    try {
        inv = parse_args(argc, argv);
    } catch (const UsageError& e) {
        err << e.what() << '\n';
        return kExitUsage;
    }
    return run(inv, out, err);
}

}  // namespace cesim::cli
