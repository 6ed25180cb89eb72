// Time-tag records, the CESIMTT1 binary format, synthetic
// click streams, and the two-channel gated coincidence matcher.
//
// File layout (all little-endian):
//   offset 0   8 bytes  magic "CESIMTT1"
//   offset 8   u16      version = 1
//   offset 10  N x 16-byte records:
//                u64 t_ps | u8 channel | u8 flags | u32 pair_id | u16 reserved (0)
//
// Flags: bit0 = detuning sign of the detected component (1 = +delta_f),
//        bit1 = polarization at the analyzer input (1 = V), bit2 reserved.
// The simulator knows the beat sign and polarization origin of each click and
// writes them into the flags; real hardware would infer them from the RF
// waveform.

#pragma once

#include <cesim/detection.hpp>
#include <cesim/source.hpp>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cesim {

enum class Channel : std::uint8_t { D1 = 0, D2 = 1 };

namespace flag {
inline constexpr std::uint8_t kDetunePlus = 0x01;
inline constexpr std::uint8_t kPolV = 0x02;
inline constexpr std::uint8_t kReserved = 0x04;
}  // namespace flag

constexpr std::uint8_t make_flags(Detune d, Pol p) noexcept {
    return static_cast<std::uint8_t>((d == Detune::Plus ? flag::kDetunePlus : 0) |
                                     (p == Pol::V ? flag::kPolV : 0));
}
constexpr Detune flag_detune(std::uint8_t f) noexcept {
    return (f & flag::kDetunePlus) ? Detune::Plus : Detune::Minus;
}
constexpr Pol flag_pol(std::uint8_t f) noexcept { return (f & flag::kPolV) ? Pol::V : Pol::H; }

struct TimeTagRecord {
    std::uint64_t t_ps = 0;
    Channel channel = Channel::D1;
    std::uint8_t flags = 0;
    std::uint32_t pair_id = kNoPairId;

    friend bool operator==(const TimeTagRecord&, const TimeTagRecord&) = default;
};

// Global order used when merging channels: time, then channel, then pair id.
inline bool record_less(const TimeTagRecord& a, const TimeTagRecord& b) {
    if (a.t_ps != b.t_ps) return a.t_ps < b.t_ps;
    if (a.channel != b.channel) return a.channel < b.channel;
    return a.pair_id < b.pair_id;
}

// ------------------------------------------------------------------ format

inline constexpr std::array<char, 8> kStreamMagic{'C', 'E', 'S', 'I', 'M', 'T', 'T', '1'};
inline constexpr std::uint16_t kStreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 10;
inline constexpr std::size_t kRecordBytes = 16;

class DecodeError : public std::runtime_error {
public:
    enum class Kind { TruncatedHeader, BadMagic, VersionMismatch, TruncatedRecord, BadChannel,
                      ReservedNonZero, TimestampRegression };

    DecodeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
}

// Per-channel monotonicity check shared by the encoder, decoder and matcher.
class ChannelClock {
public:
    // Returns false if `r` goes back in time on its channel.
    bool advance(const TimeTagRecord& r) {
        auto& last = last_[static_cast<std::size_t>(r.channel)];
        if (last && r.t_ps < *last) return false;
        last = r.t_ps;
        return true;
    }

private:
    std::array<std::optional<std::uint64_t>, 2> last_{};
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_stream(std::span<const TimeTagRecord> records) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + kRecordBytes * records.size());
    for (const char c : kStreamMagic) out.push_back(static_cast<std::uint8_t>(c));
    detail::put_le<std::uint16_t>(out, kStreamVersion);
    detail::ChannelClock clock;
    for (const auto& r : records) {
        if (r.channel != Channel::D1 && r.channel != Channel::D2)
            throw std::invalid_argument("encode_stream: channel must be D1 or D2");
        if (!clock.advance(r))
            throw std::invalid_argument("encode_stream: records not time-ordered per channel");
        detail::put_le<std::uint64_t>(out, r.t_ps);
        out.push_back(static_cast<std::uint8_t>(r.channel));
        out.push_back(r.flags);
        detail::put_le<std::uint32_t>(out, r.pair_id);
        detail::put_le<std::uint16_t>(out, 0);
    }
    return out;
}

inline std::vector<TimeTagRecord> decode_stream(std::span<const std::uint8_t> bytes) {
    using K = DecodeError::Kind;
    if (bytes.size() < kStreamMagic.size())
        throw DecodeError(K::TruncatedHeader, "decode_stream: file shorter than the magic");
    if (!std::equal(kStreamMagic.begin(), kStreamMagic.end(), bytes.begin(),
                    [](char m, std::uint8_t b) { return static_cast<std::uint8_t>(m) == b; }))
        throw DecodeError(K::BadMagic, "decode_stream: bad magic, not a CESIMTT1 stream");
    if (bytes.size() < kHeaderBytes)
        throw DecodeError(K::TruncatedHeader, "decode_stream: truncated header");
    const auto version = detail::get_le<std::uint16_t>(bytes.data() + 8);
    if (version != kStreamVersion)
        throw DecodeError(K::VersionMismatch,
                          "decode_stream: unsupported version " + std::to_string(version));
    const std::size_t body = bytes.size() - kHeaderBytes;
    if (body % kRecordBytes != 0)
        throw DecodeError(K::TruncatedRecord, "decode_stream: trailing partial record (" +
                                                  std::to_string(body % kRecordBytes) + " bytes)");
    std::vector<TimeTagRecord> out;
    out.reserve(body / kRecordBytes);
    detail::ChannelClock clock;
    for (std::size_t off = kHeaderBytes; off < bytes.size(); off += kRecordBytes) {
        const std::uint8_t* p = bytes.data() + off;
        TimeTagRecord r;
        r.t_ps = detail::get_le<std::uint64_t>(p);
        if (p[8] > 1)
            throw DecodeError(K::BadChannel, "decode_stream: bad channel " + std::to_string(p[8]) +
                                                 " at record " + std::to_string(out.size()));
        r.channel = static_cast<Channel>(p[8]);
        r.flags = p[9];
        r.pair_id = detail::get_le<std::uint32_t>(p + 10);
        if (detail::get_le<std::uint16_t>(p + 14) != 0)
            throw DecodeError(K::ReservedNonZero, "decode_stream: reserved field set at record " +
                                                      std::to_string(out.size()));
        if (!clock.advance(r))
            throw DecodeError(K::TimestampRegression, "decode_stream: timestamp regression at record " +
                                                          std::to_string(out.size()));
        out.push_back(r);
    }
    return out;
}

inline void write_stream_file(const std::filesystem::path& path, std::span<const TimeTagRecord> records) {
    const auto bytes = encode_stream(records);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing: " + std::strerror(errno));
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string() + ": " + std::strerror(errno));
}

inline std::vector<TimeTagRecord> read_stream_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for reading: " + std::strerror(errno));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_stream(bytes);
}

// --------------------------------------------------------------- synthesis

struct StreamConfig {
    SourceConfig source;
    std::optional<EraserSetting> eraser;  // nullopt: no polarizers
    double tau = 0.0;                     // s, MZI delay
    double tau_si_delay_ps = 0.0;         // fixed D2 electronic delay
    double detector_jitter_ps = 50.0;     // Gaussian sigma per click
    bool coherence_jitter = false;        // add Exp(tau_c / 2) to D2 of coincidences
    double tau_c = 1.0e-6;                // s
};

// One pair -> 0, 1 or 2 clicks. `u` drives the outcome; the rest of the
// randomness comes from `rng`.
inline void synthesize_pair_clicks(const PairEvent& ev, const StreamConfig& cfg, Rng& rng,
                                   std::vector<TimeTagRecord>& out) {
    const auto dist = assign_click_probabilities(ev, cfg.eraser, cfg.tau);
    const PairSetting set = ev.setting(cfg.tau);
    const Detune det1 = set.path1_detune();
    const Detune det2 = other(det1);
    const auto detune_of = [&](Path p) { return p == Path::Path1 ? det1 : det2; };

    const auto stamp = [&](double offset_ps) {
        const double t = static_cast<double>(ev.t_emit_ps) + offset_ps +
                         cfg.detector_jitter_ps * standard_normal(rng);
        return static_cast<std::uint64_t>(std::llround(std::max(0.0, t)));
    };
    const auto click = [&](Channel ch, Path origin, Pol pol, double offset_ps) {
        out.push_back({stamp(offset_ps), ch, make_flags(detune_of(origin), pol), ev.pair_id});
    };
    // Picks the contributing photon of a single click; weights are the
    // one-photon probabilities of each origin reaching that detector.
    const auto pick = [&](double w_first) { return uniform01(rng) < w_first; };

    double u = uniform01(rng);
    const double d2_delay = cfg.tau_si_delay_ps;
    if ((u -= dist.accepted) < 0.0) {
        // Same polarization origin on both sides: (V1 @ A, V2 @ B) or (H2 @ A, H1 @ B).
        double wv = 0.5, wh = 0.5;
        if (cfg.eraser) {
            const double sx = std::sin(cfg.eraser->xi), cx = std::cos(cfg.eraser->xi);
            const double st = std::sin(cfg.eraser->theta), ct = std::cos(cfg.eraser->theta);
            wv = sx * sx * st * st;
            wh = cx * cx * ct * ct;
            if (wv + wh == 0.0) wh = 1.0;
        }
        double extra = 0.0;
        if (cfg.coherence_jitter) extra = exponential(rng, 0.5 * cfg.tau_c * 1e12);
        if (uniform01(rng) * (wv + wh) < wv) {
            click(Channel::D1, Path::Path1, Pol::V, 0.0);
            click(Channel::D2, Path::Path2, Pol::V, d2_delay + extra);
        } else {
            click(Channel::D1, Path::Path2, Pol::H, 0.0);
            click(Channel::D2, Path::Path1, Pol::H, d2_delay + extra);
        }
        return;
    }
    const auto a_pol = [](Path p) { return p == Path::Path1 ? Pol::V : Pol::H; };
    const auto b_pol = [](Path p) { return p == Path::Path1 ? Pol::H : Pol::V; };
    if ((u -= dist.rejected_coincidence) < 0.0) {
        // Only same-path pairs land here: both photons share path and detuning.
        const Path p = ev.route1;
        click(Channel::D1, p, a_pol(p), 0.0);
        click(Channel::D2, p, b_pol(p), d2_delay);
        return;
    }
    if ((u -= dist.d1_only) < 0.0) {
        Path p = ev.route1;
        if (ev.pair_class() == PairClass::CrossPath) {
            const auto x = detail::single_photon(Path::Path1, cfg.eraser);
            const auto y = detail::single_photon(Path::Path2, cfg.eraser);
            p = pick(x.d1 / (x.d1 + y.d1)) ? Path::Path1 : Path::Path2;
        }
        click(Channel::D1, p, a_pol(p), 0.0);
        return;
    }
    if ((u -= dist.d2_only) < 0.0) {
        Path p = ev.route1;
        if (ev.pair_class() == PairClass::CrossPath) {
            const auto x = detail::single_photon(Path::Path1, cfg.eraser);
            const auto y = detail::single_photon(Path::Path2, cfg.eraser);
            p = pick(x.d2 / (x.d2 + y.d2)) ? Path::Path1 : Path::Path2;
        }
        click(Channel::D2, p, b_pol(p), d2_delay);
    }
}

struct SyntheticStream {
    std::vector<PairEvent> pairs;
    std::vector<TimeTagRecord> records;  // sorted by record_less
};

inline SyntheticStream synthesize_stream(const StreamConfig& cfg) {
    SyntheticStream s;
    s.pairs = sample_pairs(cfg.source);
    Rng rng(derive_seed(cfg.source.seed, 0xc11c));
    s.records.reserve(s.pairs.size() * 2);
    for (const auto& ev : s.pairs) synthesize_pair_clicks(ev, cfg, rng, s.records);
    std::sort(s.records.begin(), s.records.end(), record_less);
    return s;
}

// ------------------------------------------------------------- coincidences

struct CoincidenceRecord {
    std::uint64_t t1_ps = 0;
    std::uint64_t t2_ps = 0;
    std::int64_t tau_si_ps = 0;  // t2 - t1
    bool accepted = false;
    RejectReason reject_reason = RejectReason::None;
    std::uint32_t pair_id1 = kNoPairId;
    std::uint32_t pair_id2 = kNoPairId;

    friend bool operator==(const CoincidenceRecord&, const CoincidenceRecord&) = default;
};

// Rule verdict for one D1 click and one D2 click.
inline RejectReason evaluate_candidate(const TimeTagRecord& d1, const TimeTagRecord& d2, std::uint64_t window_ps,
                                       const SelectionRule& rule) {
    if (d1.channel == d2.channel) return RejectReason::SamePort;
    const std::uint64_t gap = d1.t_ps > d2.t_ps ? d1.t_ps - d2.t_ps : d2.t_ps - d1.t_ps;
    if (gap > window_ps) return RejectReason::OutOfWindow;
    const Pol pa = flag_pol(d1.flags), pb = flag_pol(d2.flags);
    const Detune da = flag_detune(d1.flags), db = flag_detune(d2.flags);
    if (rule.accepts(pa, da, pb, db)) return RejectReason::None;
    const auto why = SelectionRule::heterodyne_reason(pa, da, pb, db);
    return why == RejectReason::None ? RejectReason::CrossPolarization : why;
}

// Streaming two-channel matcher.
//
// Each D1 click, in time order, is paired with the nearest unused D2 click
// within +-window (ties go to the earlier D2). If the rule accepts, both
// clicks are consumed; otherwise a rejected record is emitted and the D2
// click stays available. A D1 click is resolved once the D2 channel has
// advanced past t1 + window, so results do not depend on how the input is
// chunked.
class CoincidenceMatcher {
public:
    CoincidenceMatcher(std::uint64_t window_ps, SelectionRule rule = {}) : window_(window_ps), rule_(rule) {}

    void push(const TimeTagRecord& r) {
        if (!clock_.advance(r)) throw std::invalid_argument("match_coincidences: input not time-ordered per channel");
        if (r.channel == Channel::D1) {
            pending_d1_.push_back(r);
        } else {
            d2_.push_back({r, false});
            d2_watermark_ = r.t_ps;
        }
        drain(false);
    }

    void push(std::span<const TimeTagRecord> rs) {
        for (const auto& r : rs) push(r);
    }

    // Resolves everything still pending and returns all output so far.
    std::vector<CoincidenceRecord> finish() {
        drain(true);
        return take();
    }

    // Records resolved so far; the matcher keeps running.
    std::vector<CoincidenceRecord> take() { return std::exchange(out_, {}); }

private:
    struct D2Slot {
        TimeTagRecord rec;
        bool used;
    };

    void drain(bool final) {
        while (!pending_d1_.empty()) {
            const TimeTagRecord d1 = pending_d1_.front();
            if (!final && (!d2_watermark_ || *d2_watermark_ <= d1.t_ps + window_))
                break;  // later D2 clicks could still fall inside the window
            pending_d1_.pop_front();
            resolve(d1);
        }
    }

    void resolve(const TimeTagRecord& d1) {
        const std::uint64_t lo = d1.t_ps >= window_ ? d1.t_ps - window_ : 0;
        while (!d2_.empty() && (d2_.front().used || d2_.front().rec.t_ps < lo)) d2_.pop_front();

        D2Slot* best = nullptr;
        std::uint64_t best_gap = 0;
        for (auto& slot : d2_) {
            if (slot.rec.t_ps > d1.t_ps + window_) break;
            if (slot.used) continue;
            const std::uint64_t gap = slot.rec.t_ps > d1.t_ps ? slot.rec.t_ps - d1.t_ps : d1.t_ps - slot.rec.t_ps;
            if (!best || gap < best_gap) {  // strict: the earlier of equal gaps wins
                best = &slot;
                best_gap = gap;
            }
        }
        if (!best) return;

        CoincidenceRecord c;
        c.t1_ps = d1.t_ps;
        c.t2_ps = best->rec.t_ps;
        c.tau_si_ps = static_cast<std::int64_t>(c.t2_ps) - static_cast<std::int64_t>(c.t1_ps);
        c.pair_id1 = d1.pair_id;
        c.pair_id2 = best->rec.pair_id;
        c.reject_reason = evaluate_candidate(d1, best->rec, window_, rule_);
        c.accepted = c.reject_reason == RejectReason::None;
        if (c.accepted) best->used = true;
        out_.push_back(c);
    }

    std::uint64_t window_;
    SelectionRule rule_;
    detail::ChannelClock clock_;
    std::deque<TimeTagRecord> pending_d1_;
    std::deque<D2Slot> d2_;
    std::optional<std::uint64_t> d2_watermark_;
    std::vector<CoincidenceRecord> out_;
};

inline std::vector<CoincidenceRecord> match_coincidences(std::span<const TimeTagRecord> stream, std::uint64_t window_ps,
                                                         const SelectionRule& rule = {}) {
    CoincidenceMatcher m(window_ps, rule);
    m.push(stream);
    return m.finish();
}

// Ground-truth bookkeeping for synthetic streams.
struct RecoveryReport {
    std::size_t true_accepted = 0;     // pairs whose own D1+D2 clicks pass the rule
    std::size_t recovered = 0;         // accepted coincidences joining a true pair
    std::size_t accepted_total = 0;    // all accepted coincidences
    double recovery_rate() const {
        return true_accepted ? static_cast<double>(recovered) / static_cast<double>(true_accepted) : 1.0;
    }
};

inline RecoveryReport recovery_against_truth(std::span<const TimeTagRecord> stream,
                                             std::span<const CoincidenceRecord> matched,
                                             const SelectionRule& rule = {}) {
    struct Seen {
        std::optional<TimeTagRecord> d1, d2;
    };
    std::vector<Seen> by_id;
    for (const auto& r : stream) {
        if (r.pair_id == kNoPairId) continue;
        if (r.pair_id >= by_id.size()) by_id.resize(static_cast<std::size_t>(r.pair_id) + 1);
        (r.channel == Channel::D1 ? by_id[r.pair_id].d1 : by_id[r.pair_id].d2) = r;
    }
    std::vector<bool> truth(by_id.size(), false);
    RecoveryReport rep;
    for (std::size_t id = 0; id < by_id.size(); ++id) {
        const auto& s = by_id[id];
        if (s.d1 && s.d2 &&
            rule.accepts(flag_pol(s.d1->flags), flag_detune(s.d1->flags), flag_pol(s.d2->flags),
                         flag_detune(s.d2->flags))) {
            truth[id] = true;
            ++rep.true_accepted;
        }
    }
    for (const auto& c : matched) {
        if (!c.accepted) continue;
        ++rep.accepted_total;
        if (c.pair_id1 == c.pair_id2 && c.pair_id1 < truth.size() && truth[c.pair_id1]) ++rep.recovered;
    }
    return rep;
}

// --------------------------------------------------------------- histogram

struct TauHistogram {
    std::int64_t lo_ps = 0;
    std::int64_t bin_ps = 1;
    std::vector<std::uint64_t> counts;

    std::int64_t bin_lo(std::size_t k) const { return lo_ps + static_cast<std::int64_t>(k) * bin_ps; }
    std::int64_t bin_hi(std::size_t k) const { return bin_lo(k + 1); }
    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }
};

// Histogram of tau_si over [lo_ps, hi_ps) for accepted coincidences only.
inline TauHistogram histogram_tau_si(std::span<const CoincidenceRecord> records, std::int64_t bin_ps,
                                     std::int64_t lo_ps, std::int64_t hi_ps) {
    if (bin_ps <= 0) throw std::invalid_argument("histogram_tau_si: bin width must be > 0");
    if (hi_ps <= lo_ps) throw std::invalid_argument("histogram_tau_si: empty range");
    TauHistogram h;
    h.lo_ps = lo_ps;
    h.bin_ps = bin_ps;
    h.counts.assign(static_cast<std::size_t>((hi_ps - lo_ps + bin_ps - 1) / bin_ps), 0);
    for (const auto& c : records) {
        if (!c.accepted || c.tau_si_ps < lo_ps || c.tau_si_ps >= hi_ps) continue;
        ++h.counts[static_cast<std::size_t>((c.tau_si_ps - lo_ps) / bin_ps)];
    }
    return h;
}

// Decay constant of counts ~ A exp(-t / T) by count-weighted least squares
// on log(counts) at bin centres. Empty bins are skipped.
inline double fit_exponential_decay(const TauHistogram& h) {
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < h.counts.size(); ++k) {
        if (h.counts[k] == 0) continue;
        const double w = static_cast<double>(h.counts[k]);
        const double x = 0.5 * static_cast<double>(h.bin_lo(k) + h.bin_hi(k));
        const double y = std::log(w);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    const double den = sw * sxx - sx * sx;
    if (sw == 0.0 || den == 0.0) throw std::domain_error("fit_exponential_decay: need two non-empty bins");
    const double slope = (sw * sxy - sx * sy) / den;
    if (!(slope < 0.0)) throw std::domain_error("fit_exponential_decay: histogram is not decaying");
    return -1.0 / slope;
}

}  // namespace cesim
