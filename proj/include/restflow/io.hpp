#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "restflow/common.hpp"

namespace restflow::io {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// One stimulus: (onset, duration, amplitude, condition).
struct RawEvent {
    double onset = 0.0;      // seconds
    double duration = 0.0;   // seconds
    double amplitude = 1.0;  // unitless
    std::string condition;
};

struct EventSchedule {
    std::vector<RawEvent> events;
    std::map<std::string, int> vocab;  // condition label -> dense 0-based id
    double tr = 1.0;                   // seconds

    void validate() const {
        if (tr <= 0.0) throw ValidationError("EventSchedule: tr must be positive");
        std::vector<bool> seen(vocab.size(), false);
        for (const auto& [label, id] : vocab) {
            if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
                throw ValidationError("EventSchedule: vocab ids must be dense from 0, got " +
                                      label + " -> " + std::to_string(id));
            seen[static_cast<std::size_t>(id)] = true;
        }
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (!seen[i]) throw ValidationError("EventSchedule: vocab id gap at " + std::to_string(i));
        for (const auto& e : events)
            if (!vocab.count(e.condition))
                throw ValidationError("EventSchedule: condition '" + e.condition +
                                      "' missing from vocab");
    }
};

// Event with timing in TR units and z-scored amplitude.
struct NormalizedEvent {
    double onset_tr = 0.0;
    double duration_tr = 0.0;
    double amplitude_z = 0.0;
    int condition_id = 0;
};

struct TimeSeries {
    Matrix data;  // T x V
    double tr = 1.0;
    std::vector<std::string> roi_names;  // optional, empty or size V

    std::size_t t_len() const { return data.rows; }
    std::size_t v() const { return data.cols; }

    void validate() const {
        if (data.rows < 2 || data.cols < 2)
            throw ValidationError("TimeSeries: need T >= 2 and V >= 2, got " + shape_str(data));
        if (tr <= 0.0) throw ValidationError("TimeSeries: tr must be positive");
        if (!data.all_finite()) throw ValidationError("TimeSeries: non-finite entries");
        if (!roi_names.empty() && roi_names.size() != data.cols)
            throw ValidationError("TimeSeries: roi_names size mismatch");
    }
};

// Run configuration with documented defaults.
struct RunConfig {
    // model
    std::size_t d_c = 64;        // context embedding dim
    std::size_t enc_layers = 2;
    std::size_t enc_heads = 4;
    std::size_t patch_len = 16;  // TRs per encoder patch
    std::size_t max_patches = 32;
    std::size_t rank_k = 8;      // low-rank spatial factor rank
    std::size_t d_ev = 32;       // event token dim
    std::size_t d_t = 32;        // time embedding dim
    std::size_t ev_hidden = 64;  // event MLP hidden width
    std::size_t vel_hidden = 128;
    bool use_events = true;
    // losses
    double lambda_fc = 1.0;
    double lambda_psd = 0.1;
    Band band{0.01, 0.05};
    // optimizer
    double lr = 1e-3;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 50;
    std::size_t batch = 16;
    // sampling
    std::size_t euler_steps = 50;
    // run
    std::uint64_t seed = 0;
    double train_frac = 0.7;
    double val_frac = 0.15;
    double test_frac = 0.15;

    void validate() const {
        auto positive = [](std::size_t v, const char* what) {
            if (v == 0) throw ConfigError(std::string("config: ") + what + " must be positive");
        };
        positive(d_c, "d_c");
        positive(enc_layers, "enc_layers");
        positive(enc_heads, "enc_heads");
        positive(patch_len, "patch_len");
        positive(max_patches, "max_patches");
        positive(rank_k, "rank_k");
        positive(d_ev, "d_ev");
        positive(d_t, "d_t");
        positive(ev_hidden, "ev_hidden");
        positive(vel_hidden, "vel_hidden");
        // epochs may be 0: an epoch-free run checkpoints the initial parameters
        positive(batch, "batch");
        positive(euler_steps, "euler_steps");
        if (d_c % enc_heads != 0)
            throw ConfigError("config: d_c must be divisible by enc_heads");
        if (lambda_fc < 0.0 || lambda_psd < 0.0)
            throw ConfigError("config: loss weights must be nonnegative");
        if (!(band.lo > 0.0) || !(band.lo < band.hi))
            throw ConfigError("config: need 0 < band_lo < band_hi");
        if (lr <= 0.0 || weight_decay < 0.0) throw ConfigError("config: bad optimizer settings");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || adam_eps <= 0.0)
            throw ConfigError("config: bad Adam settings");
        if (train_frac < 0.0 || val_frac < 0.0 || test_frac < 0.0 ||
            std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
            throw ConfigError("config: split fractions must be nonnegative and sum to 1");
    }
};

// ---------------------------------------------------------------------------
// Event files: FSL-style three numeric columns (onset, duration, amplitude).
// One condition per file; the label comes from the file name stem.
// ---------------------------------------------------------------------------

inline std::vector<RawEvent> parse_event_file(std::string_view text, const std::string& condition) {
    if (condition.empty()) throw ValidationError("parse_event_file: empty condition label");
    std::vector<RawEvent> events;
    std::size_t line_no = 0;
    std::istringstream stream{std::string(text)};
    std::string line;
    while (std::getline(stream, line)) {
        ++line_no;
        std::string_view sv(line);
        auto first = sv.find_first_not_of(" \t\r");
        if (first == std::string_view::npos || sv[first] == '#') continue;

        std::istringstream row(line);
        double onset = 0.0, duration = 0.0, amplitude = 0.0;
        std::string extra;
        if (!(row >> onset >> duration >> amplitude) || (row >> extra))
            throw ParseError("event file line " + std::to_string(line_no) +
                             ": expected 3 numeric columns");
        if (onset < 0.0)
            throw ValidationError("event file line " + std::to_string(line_no) +
                                  ": negative onset");
        if (duration < 0.0)
            throw ValidationError("event file line " + std::to_string(line_no) +
                                  ": negative duration");
        events.push_back(RawEvent{onset, duration, amplitude, condition});
    }
    return events;
}

inline std::string serialize_events(const std::vector<RawEvent>& events) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (const auto& e : events) os << e.onset << " " << e.duration << " " << e.amplitude << "\n";
    return os.str();
}

// Timing to TR units, amplitudes z-scored across the whole schedule with the
// population standard deviation; zero spread maps every amplitude to 0.
inline std::vector<NormalizedEvent> normalize_events(const EventSchedule& schedule) {
    if (schedule.events.empty())
        throw ValidationError("normalize_events: schedule has no events");
    if (schedule.tr <= 0.0) throw ValidationError("normalize_events: tr must be positive");
    schedule.validate();

    double mean = 0.0;
    for (const auto& e : schedule.events) mean += e.amplitude;
    mean /= static_cast<double>(schedule.events.size());
    double var = 0.0;
    for (const auto& e : schedule.events) {
        double d = e.amplitude - mean;
        var += d * d;
    }
    var /= static_cast<double>(schedule.events.size());
    double sd = std::sqrt(var);

    std::vector<NormalizedEvent> out;
    out.reserve(schedule.events.size());
    for (const auto& e : schedule.events) {
        NormalizedEvent n;
        n.onset_tr = e.onset / schedule.tr;
        n.duration_tr = e.duration / schedule.tr;
        n.amplitude_z = sd > 0.0 ? (e.amplitude - mean) / sd : 0.0;
        n.condition_id = schedule.vocab.at(e.condition);
        out.push_back(n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Time-series files: "tr=<seconds> t=<T> v=<V>" header then T rows of V values.
// ---------------------------------------------------------------------------

inline void save_timeseries(const TimeSeries& ts, const std::filesystem::path& path) {
    ts.validate();
    std::ofstream os(path);
    if (!os) throw Error("save_timeseries: cannot open " + path.string());
    os << std::setprecision(17);
    os << "tr=" << ts.tr << " t=" << ts.data.rows << " v=" << ts.data.cols << "\n";
    for (std::size_t i = 0; i < ts.data.rows; ++i) {
        for (std::size_t j = 0; j < ts.data.cols; ++j)
            os << ts.data(i, j) << (j + 1 == ts.data.cols ? "" : " ");
        os << "\n";
    }
    if (!os) throw Error("save_timeseries: write failed for " + path.string());
}

inline TimeSeries load_timeseries(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("load_timeseries: cannot open " + path.string());
    std::string header;
    if (!std::getline(is, header)) throw ParseError(path.string() + ": missing header");

    double tr = 0.0;
    std::size_t t = 0, v = 0;
    if (std::sscanf(header.c_str(), "tr=%lf t=%zu v=%zu", &tr, &t, &v) != 3)
        throw ParseError(path.string() + ": bad header '" + header + "'");

    TimeSeries ts;
    ts.tr = tr;
    ts.data = Matrix(t, v);
    for (std::size_t i = 0; i < t * v; ++i) {
        if (!(is >> ts.data.data[i]))
            throw ParseError(path.string() + ": expected " + std::to_string(t * v) +
                             " values, body ended early");
    }
    double extra;
    if (is >> extra) throw ParseError(path.string() + ": more values than header declares");
    ts.validate();
    return ts;
}

// ---------------------------------------------------------------------------
// Flat key=value configuration files ('#' comments). Unknown keys are errors.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view sv) {
    auto b = sv.find_first_not_of(" \t\r");
    auto e = sv.find_last_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return std::string(sv.substr(b, e - b + 1));
}

}  // namespace detail

class KeyValues {
  public:
    explicit KeyValues(std::string_view text) {
        std::istringstream stream{std::string(text)};
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(stream, line)) {
            ++line_no;
            std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": expected 'key = value'");
            std::string key = detail::trim(std::string_view(t).substr(0, eq));
            std::string val = detail::trim(std::string_view(t).substr(eq + 1));
            if (key.empty() || val.empty())
                throw ParseError("config line " + std::to_string(line_no) +
                                 ": empty key or value");
            if (values_.count(key))
                throw ParseError("config line " + std::to_string(line_no) + ": duplicate key '" +
                                 key + "'");
            values_[key] = val;
        }
    }

    double number(const std::string& key, double fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(consumed_.end(), key);
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(it->second, &pos);
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' has non-numeric value '" + it->second +
                              "'");
        }
        if (pos != it->second.size())
            throw ConfigError("config: key '" + key + "' has trailing junk '" + it->second + "'");
        return v;
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        double v = number(key, static_cast<double>(fallback));
        if (v < 0.0 || v != std::floor(v))
            throw ConfigError("config: key '" + key + "' must be a nonnegative integer");
        return static_cast<std::size_t>(v);
    }

    bool flag(const std::string& key, bool fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        consumed_.insert(consumed_.end(), key);
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config: key '" + key + "' must be true/false/1/0");
    }

    void reject_unknown() const {
        for (const auto& [key, val] : values_) {
            if (std::find(consumed_.begin(), consumed_.end(), key) == consumed_.end())
                throw ConfigError("config: unknown key '" + key + "'");
        }
    }

  private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> consumed_;
};

inline RunConfig parse_config(std::string_view text) {
    KeyValues kv(text);
    RunConfig c;
    c.d_c = kv.count("d_c", c.d_c);
    c.enc_layers = kv.count("enc_layers", c.enc_layers);
    c.enc_heads = kv.count("enc_heads", c.enc_heads);
    c.patch_len = kv.count("patch_len", c.patch_len);
    c.max_patches = kv.count("max_patches", c.max_patches);
    c.rank_k = kv.count("rank_k", c.rank_k);
    c.d_ev = kv.count("d_ev", c.d_ev);
    c.d_t = kv.count("d_t", c.d_t);
    c.ev_hidden = kv.count("ev_hidden", c.ev_hidden);
    c.vel_hidden = kv.count("vel_hidden", c.vel_hidden);
    c.use_events = kv.flag("use_events", c.use_events);
    c.lambda_fc = kv.number("lambda_fc", c.lambda_fc);
    c.lambda_psd = kv.number("lambda_psd", c.lambda_psd);
    c.band.lo = kv.number("band_lo", c.band.lo);
    c.band.hi = kv.number("band_hi", c.band.hi);
    c.lr = kv.number("lr", c.lr);
    c.weight_decay = kv.number("weight_decay", c.weight_decay);
    c.beta1 = kv.number("beta1", c.beta1);
    c.beta2 = kv.number("beta2", c.beta2);
    c.adam_eps = kv.number("adam_eps", c.adam_eps);
    c.epochs = kv.count("epochs", c.epochs);
    c.batch = kv.count("batch", c.batch);
    c.euler_steps = kv.count("euler_steps", c.euler_steps);
    c.seed = kv.count("seed", static_cast<std::size_t>(c.seed));
    c.train_frac = kv.number("train_frac", c.train_frac);
    c.val_frac = kv.number("val_frac", c.val_frac);
    c.test_frac = kv.number("test_frac", c.test_frac);
    kv.reject_unknown();
    c.validate();
    return c;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

inline RunConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_file(path));
}

inline std::string config_to_text(const RunConfig& c) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "d_c = " << c.d_c << "\nenc_layers = " << c.enc_layers
       << "\nenc_heads = " << c.enc_heads << "\npatch_len = " << c.patch_len
       << "\nmax_patches = " << c.max_patches << "\nrank_k = " << c.rank_k
       << "\nd_ev = " << c.d_ev << "\nd_t = " << c.d_t << "\nev_hidden = " << c.ev_hidden
       << "\nvel_hidden = " << c.vel_hidden
       << "\nuse_events = " << (c.use_events ? "true" : "false")
       << "\nlambda_fc = " << c.lambda_fc << "\nlambda_psd = " << c.lambda_psd
       << "\nband_lo = " << c.band.lo << "\nband_hi = " << c.band.hi << "\nlr = " << c.lr
       << "\nweight_decay = " << c.weight_decay << "\nbeta1 = " << c.beta1
       << "\nbeta2 = " << c.beta2 << "\nadam_eps = " << c.adam_eps << "\nepochs = " << c.epochs
       << "\nbatch = " << c.batch << "\neuler_steps = " << c.euler_steps
       << "\nseed = " << c.seed << "\ntrain_frac = " << c.train_frac
       << "\nval_frac = " << c.val_frac << "\ntest_frac = " << c.test_frac << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Subject-disjoint splits. Validation/test sizes round to nearest; training
// takes the remainder. Deterministic for a given seed.
// ---------------------------------------------------------------------------

struct SplitResult {
    std::vector<std::string> train, val, test;
};

inline SplitResult split_subjects(std::vector<std::string> ids,
                                  const std::array<double, 3>& fractions, std::uint64_t seed) {
    {
        std::vector<std::string> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ValidationError("split_subjects: duplicate subject ids");
    }
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw ValidationError("split_subjects: fractions must sum to 1");

    Rng rng(seed);
    rng.shuffle(ids);

    const std::size_t n = ids.size();
    std::size_t n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
    std::size_t n_test = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
    if (n_val + n_test > n) throw ValidationError("split_subjects: splits exceed population");

    SplitResult out;
    out.train.assign(ids.begin(), ids.end() - static_cast<long>(n_val + n_test));
    out.val.assign(ids.end() - static_cast<long>(n_val + n_test), ids.end() - static_cast<long>(n_test));
    out.test.assign(ids.end() - static_cast<long>(n_test), ids.end());
    return out;
}

}  // namespace restflow::io
