#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "restflow/common.hpp"
#include "restflow/io.hpp"
#include "restflow/noise.hpp"

// Synthetic paired-data oracle with a known rest->task mapping: rest is 1/f
// noise mixed through a subject-specific matrix, task is the rest-derived
// baseline (same mixing) plus condition-specific smoothed-boxcar responses at
// scheduled onsets plus observation noise. Deliberately learnable by the
// model class so end-to-end training tests are meaningful.

namespace restflow::data {

struct SynthSpec {
    std::size_t v = 10;
    std::size_t t_rest = 128;
    std::size_t t_task = 128;
    double tr = 0.72;
    std::size_t n_subjects = 8;
    std::size_t n_conditions = 2;
    std::size_t events_per_run = 4;
    std::uint64_t mix_seed = 7;    // controls shared mixing, patterns, per-subject latents
    double noise_level = 0.1;
    double kernel_width = 1.5;     // Gaussian kernel sigma, TR units

    void validate() const {
        if (v < 2) throw ValidationError("synth spec: v must be >= 2");
        if (t_rest < 8 || t_task < 8) throw ValidationError("synth spec: t_rest/t_task too small");
        if (tr <= 0.0) throw ValidationError("synth spec: tr must be positive");
        if (n_subjects == 0) throw ValidationError("synth spec: n_subjects must be positive");
        if (n_conditions == 0) throw ValidationError("synth spec: n_conditions must be >= 1");
        if (noise_level < 0.0) throw ValidationError("synth spec: noise_level must be >= 0");
        if (kernel_width <= 0.0) throw ValidationError("synth spec: kernel_width must be positive");
    }
};

inline SynthSpec parse_synth_spec(std::string_view text) {
    io::KeyValues kv(text);
    SynthSpec s;
    s.v = kv.count("v", s.v);
    s.t_rest = kv.count("t_rest", s.t_rest);
    s.t_task = kv.count("t_task", s.t_task);
    s.tr = kv.number("tr", s.tr);
    s.n_subjects = kv.count("n_subjects", s.n_subjects);
    s.n_conditions = kv.count("n_conditions", s.n_conditions);
    s.events_per_run = kv.count("events_per_run", s.events_per_run);
    s.mix_seed = kv.count("mix_seed", static_cast<std::size_t>(s.mix_seed));
    s.noise_level = kv.number("noise_level", s.noise_level);
    s.kernel_width = kv.number("kernel_width", s.kernel_width);
    kv.reject_unknown();
    s.validate();
    return s;
}

inline SynthSpec load_synth_spec(const std::filesystem::path& path) {
    return parse_synth_spec(io::read_file(path));
}

struct SubjectPair {
    std::string subject_id;
    io::TimeSeries rest;
    io::TimeSeries task;
    io::EventSchedule schedule;
};

// Internals exposed for verification: per-subject baselines, the condition
// response patterns and the canonical injected response curve (unit
// amplitude, boxcar duration kEventDurationTr).
struct SynthDebug {
    std::vector<Matrix> baselines;
    Matrix patterns;               // n_conditions x V
    std::vector<double> response;  // smoothed boxcar, length duration + 2*radius
    std::size_t kernel_radius = 0;
};

constexpr std::size_t kEventDurationTr = 3;

// Overall amplitude of the synthetic signals. Chosen well away from the
// model's initialization scale so an untrained checkpoint is spectrally
// miscalibrated and the scale heads have something real to learn.
constexpr double kSignalScale = 3.0;

namespace detail {

inline std::vector<double> gaussian_kernel(double width, std::size_t radius) {
    std::vector<double> g(2 * radius + 1);
    double total = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double d = static_cast<double>(i) - static_cast<double>(radius);
        g[i] = std::exp(-0.5 * d * d / (width * width));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// boxcar of n_box samples convolved (full) with the kernel
inline std::vector<double> smoothed_boxcar(const std::vector<double>& kernel, std::size_t n_box) {
    std::vector<double> out(n_box + kernel.size() - 1, 0.0);
    for (std::size_t b = 0; b < n_box; ++b)
        for (std::size_t k = 0; k < kernel.size(); ++k) out[b + k] += kernel[k];
    return out;
}

inline Matrix matmul_plain(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            double av = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += av * b(k, j);
        }
    return c;
}

}  // namespace detail

inline std::vector<SubjectPair> gen_dataset(const SynthSpec& spec, std::uint64_t seed,
                                            SynthDebug* debug = nullptr) {
    spec.validate();

    // shared structure drawn from the latent mixing seed
    Rng mix_rng = Rng(spec.mix_seed).derive(11);
    const double base_scale = 0.8 / std::sqrt(static_cast<double>(spec.v));
    Matrix base_mix(spec.v, spec.v);
    for (std::size_t i = 0; i < spec.v; ++i) {
        for (std::size_t j = 0; j < spec.v; ++j) base_mix(i, j) = base_scale * mix_rng.gauss();
        base_mix(i, i) += 1.0;
    }
    Matrix patterns(spec.n_conditions, spec.v);
    for (std::size_t cidx = 0; cidx < spec.n_conditions; ++cidx) {
        double norm = 0.0;
        for (std::size_t j = 0; j < spec.v; ++j) {
            patterns(cidx, j) = mix_rng.gauss();
            norm += patterns(cidx, j) * patterns(cidx, j);
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < spec.v; ++j)
            patterns(cidx, j) *= 1.5 * kSignalScale / norm;
    }

    const std::size_t radius =
        static_cast<std::size_t>(std::ceil(3.0 * spec.kernel_width));
    std::vector<double> kernel = detail::gaussian_kernel(spec.kernel_width, radius);
    std::vector<double> response = detail::smoothed_boxcar(kernel, kEventDurationTr);

    // non-overlapping onset slots, responses fully inside the run
    const std::size_t span = kEventDurationTr + 2 * radius + 1;
    if (spec.t_task < kEventDurationTr + 2 * radius + 1)
        throw ValidationError("gen_dataset: schedule infeasible, run too short for one event");
    const std::size_t n_slots = (spec.t_task - kEventDurationTr - 2 * radius - 1) / span + 1;
    if (n_slots < spec.events_per_run)
        throw ValidationError("gen_dataset: schedule infeasible, " +
                              std::to_string(spec.events_per_run) + " events need " +
                              std::to_string(spec.events_per_run * span) + " TRs, have " +
                              std::to_string(spec.t_task));

    std::map<std::string, int> vocab;
    for (std::size_t cidx = 0; cidx < spec.n_conditions; ++cidx)
        vocab["cond" + std::to_string(cidx)] = static_cast<int>(cidx);

    if (debug) {
        debug->patterns = patterns;
        debug->response = response;
        debug->kernel_radius = radius;
        debug->baselines.clear();
    }

    std::vector<SubjectPair> out;
    out.reserve(spec.n_subjects);
    for (std::size_t s = 0; s < spec.n_subjects; ++s) {
        // per-subject mixing = shared base + latent perturbation (mix_seed stream)
        Rng latent_rng = Rng(spec.mix_seed).derive(1000 + s);
        Matrix mix = base_mix;
        const double pert_scale = 0.25 / std::sqrt(static_cast<double>(spec.v));
        for (double& mval : mix.data) mval += pert_scale * latent_rng.gauss();
        for (double& mval : mix.data) mval *= kSignalScale;

        Rng run_rng = Rng(seed).derive(s);

        SubjectPair pair;
        char name[16];
        std::snprintf(name, sizeof(name), "sub%03zu", s);
        pair.subject_id = name;

        Matrix rest_noise = colored_noise(spec.t_rest, spec.v, run_rng);
        pair.rest.data = detail::matmul_plain(rest_noise, mix);
        pair.rest.tr = spec.tr;

        Matrix baseline(spec.t_task, spec.v);
        for (std::size_t t = 0; t < spec.t_task; ++t)
            for (std::size_t j = 0; j < spec.v; ++j)
                baseline(t, j) = pair.rest.data(t % spec.t_rest, j);
        if (debug) debug->baselines.push_back(baseline);

        // schedule: pick event slots, then conditions and amplitudes
        std::vector<std::size_t> slots(n_slots);
        for (std::size_t i = 0; i < n_slots; ++i) slots[i] = i;
        run_rng.shuffle(slots);
        slots.resize(spec.events_per_run);
        std::sort(slots.begin(), slots.end());

        pair.schedule.tr = spec.tr;
        pair.schedule.vocab = vocab;
        Matrix task = baseline;
        for (std::size_t e = 0; e < spec.events_per_run; ++e) {
            const std::size_t onset_tr = radius + slots[e] * span;
            const std::size_t cond = static_cast<std::size_t>(run_rng.integer(spec.n_conditions));
            const double amplitude = 0.5 + run_rng.uniform();

            io::RawEvent ev;
            ev.onset = static_cast<double>(onset_tr) * spec.tr;
            ev.duration = static_cast<double>(kEventDurationTr) * spec.tr;
            ev.amplitude = amplitude;
            ev.condition = "cond" + std::to_string(cond);
            pair.schedule.events.push_back(ev);

            for (std::size_t u = 0; u < response.size(); ++u) {
                std::size_t t = onset_tr - radius + u;
                for (std::size_t j = 0; j < spec.v; ++j)
                    task(t, j) += amplitude * response[u] * patterns(cond, j);
            }
        }

        if (spec.noise_level > 0.0)
            for (double& tval : task.data) tval += spec.noise_level * run_rng.gauss();

        pair.task.data = std::move(task);
        pair.task.tr = spec.tr;
        out.push_back(std::move(pair));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Directory layout: <root>/<subject>/{rest.ts, task.ts, events/<condition>.ev}
// ---------------------------------------------------------------------------

inline void write_dataset(const std::vector<SubjectPair>& pairs,
                          const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root);
    for (const auto& pair : pairs) {
        fs::path dir = root / pair.subject_id;
        fs::create_directories(dir / "events");
        io::save_timeseries(pair.rest, dir / "rest.ts");
        io::save_timeseries(pair.task, dir / "task.ts");

        std::map<std::string, std::vector<io::RawEvent>> by_condition;
        for (const auto& e : pair.schedule.events) by_condition[e.condition].push_back(e);
        for (const auto& [condition, events] : by_condition) {
            std::ofstream os(dir / "events" / (condition + ".ev"));
            if (!os) throw Error("write_dataset: cannot write events for " + pair.subject_id);
            os << io::serialize_events(events);
        }
    }
}

inline std::vector<SubjectPair> load_dataset(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw Error("load_dataset: not a directory: " + root.string());

    std::vector<std::string> subjects;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) subjects.push_back(entry.path().filename().string());
    std::sort(subjects.begin(), subjects.end());
    if (subjects.empty()) throw Error("load_dataset: no subject directories in " + root.string());

    // cohort-wide vocabulary from all condition labels, sorted for stable ids
    std::vector<SubjectPair> out;
    std::map<std::string, int> vocab;
    std::vector<std::string> labels;
    for (const auto& subject : subjects) {
        fs::path evdir = root / subject / "events";
        if (!fs::is_directory(evdir)) continue;
        for (const auto& f : fs::directory_iterator(evdir))
            if (f.path().extension() == ".ev") labels.push_back(f.path().stem().string());
    }
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    for (std::size_t i = 0; i < labels.size(); ++i) vocab[labels[i]] = static_cast<int>(i);

    for (const auto& subject : subjects) {
        fs::path dir = root / subject;
        SubjectPair pair;
        pair.subject_id = subject;
        pair.rest = io::load_timeseries(dir / "rest.ts");
        pair.task = io::load_timeseries(dir / "task.ts");
        pair.schedule.tr = pair.task.tr;
        pair.schedule.vocab = vocab;
        fs::path evdir = dir / "events";
        if (fs::is_directory(evdir)) {
            std::vector<fs::path> files;
            for (const auto& f : fs::directory_iterator(evdir))
                if (f.path().extension() == ".ev") files.push_back(f.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                auto events = io::parse_event_file(io::read_file(f), f.stem().string());
                pair.schedule.events.insert(pair.schedule.events.end(), events.begin(),
                                            events.end());
            }
        }
        out.push_back(std::move(pair));
    }
    return out;
}

}  // namespace restflow::data
