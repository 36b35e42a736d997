#include <catch2/catch.hpp>

#include <filesystem>

#include "restflow/data.hpp"
#include "restflow/metrics.hpp"

using namespace restflow;
using namespace restflow::data;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
    SynthSpec spec;
    spec.v = 6;
    spec.t_rest = 96;
    spec.t_task = 96;
    spec.tr = 0.72;
    spec.n_subjects = 4;
    spec.n_conditions = 2;
    spec.events_per_run = 3;
    spec.mix_seed = 9;
    spec.noise_level = 0.1;
    spec.kernel_width = 1.5;
    return spec;
}

}  // namespace

TEST_CASE("noise-free event-free task equals the rest-derived baseline", "[data]") {
    SynthSpec spec = small_spec();
    spec.noise_level = 0.0;
    spec.events_per_run = 0;
    auto pairs = gen_dataset(spec, 1);
    for (const auto& p : pairs) {
        REQUIRE(p.schedule.events.empty());
        for (std::size_t t = 0; t < spec.t_task; ++t)
            for (std::size_t j = 0; j < spec.v; ++j)
                REQUIRE(p.task.data(t, j) == p.rest.data(t % spec.t_rest, j));
    }
}

TEST_CASE("generation is bit-identical for a fixed seed", "[data]") {
    SynthSpec spec = small_spec();
    auto a = gen_dataset(spec, 42);
    auto b = gen_dataset(spec, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].rest.data.data == b[i].rest.data.data);
        REQUIRE(a[i].task.data.data == b[i].task.data.data);
        REQUIRE(a[i].schedule.events.size() == b[i].schedule.events.size());
        for (std::size_t e = 0; e < a[i].schedule.events.size(); ++e) {
            REQUIRE(a[i].schedule.events[e].onset == b[i].schedule.events[e].onset);
            REQUIRE(a[i].schedule.events[e].condition == b[i].schedule.events[e].condition);
        }
    }
    auto c = gen_dataset(spec, 43);
    REQUIRE(a[0].task.data.data != c[0].task.data.data);
}

TEST_CASE("infeasible schedules are rejected", "[data]") {
    SynthSpec spec = small_spec();
    spec.t_task = 24;
    spec.events_per_run = 10;
    REQUIRE_THROWS_AS(gen_dataset(spec, 1), ValidationError);
}

TEST_CASE("event-locked averages recover the injected response", "[data]") {
    SynthSpec spec = small_spec();
    spec.n_subjects = 6;
    spec.noise_level = 0.1;
    SynthDebug debug;
    auto pairs = gen_dataset(spec, 7, &debug);

    const std::size_t resp_len = debug.response.size();
    std::vector<double> recovered(resp_len, 0.0);
    std::size_t n_events = 0;
    for (std::size_t s = 0; s < pairs.size(); ++s) {
        const auto& p = pairs[s];
        const Matrix& baseline = debug.baselines[s];
        for (const auto& ev : p.schedule.events) {
            std::size_t onset_tr = static_cast<std::size_t>(std::llround(ev.onset / spec.tr));
            int cond = p.schedule.vocab.at(ev.condition);
            double norm = 0.0;
            for (std::size_t j = 0; j < spec.v; ++j)
                norm += debug.patterns(cond, j) * debug.patterns(cond, j);
            for (std::size_t u = 0; u < resp_len; ++u) {
                std::size_t t = onset_tr - debug.kernel_radius + u;
                double proj = 0.0;
                for (std::size_t j = 0; j < spec.v; ++j)
                    proj += (p.task.data(t, j) - baseline(t, j)) * debug.patterns(cond, j);
                recovered[u] += proj / (norm * ev.amplitude);
            }
            ++n_events;
        }
    }
    for (double& v : recovered) v /= static_cast<double>(n_events);

    // correlation between the recovered curve and the injected one
    double mr = 0.0, mt = 0.0;
    for (std::size_t u = 0; u < resp_len; ++u) {
        mr += recovered[u];
        mt += debug.response[u];
    }
    mr /= static_cast<double>(resp_len);
    mt /= static_cast<double>(resp_len);
    double num = 0.0, dr = 0.0, dt = 0.0;
    for (std::size_t u = 0; u < resp_len; ++u) {
        num += (recovered[u] - mr) * (debug.response[u] - mt);
        dr += (recovered[u] - mr) * (recovered[u] - mr);
        dt += (debug.response[u] - mt) * (debug.response[u] - mt);
    }
    double corr = num / std::sqrt(dr * dt);
    INFO("event-locked correlation = " << corr);
    REQUIRE(corr >= 0.95);
}

TEST_CASE("shared latents give higher fc similarity than independent ones", "[data]") {
    SynthSpec spec = small_spec();
    spec.n_subjects = 20;
    SynthSpec other = spec;
    other.mix_seed = spec.mix_seed + 1;

    auto same_a = gen_dataset(spec, 100);
    auto same_b = gen_dataset(spec, 200);   // same latents, fresh noise
    auto indep = gen_dataset(other, 300);   // different latents

    double sim_same = 0.0, sim_indep = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        Matrix fa = metrics::fc_matrix(same_a[i].task.data);
        sim_same += *metrics::fc_similarity(fa, metrics::fc_matrix(same_b[i].task.data));
        sim_indep += *metrics::fc_similarity(fa, metrics::fc_matrix(indep[i].task.data));
    }
    INFO("same=" << sim_same / 20.0 << " indep=" << sim_indep / 20.0);
    REQUIRE(sim_same >= sim_indep);
}

TEST_CASE("datasets round-trip through the io layout", "[data]") {
    SynthSpec spec = small_spec();
    auto pairs = gen_dataset(spec, 11);

    fs::path root = fs::temp_directory_path() / "restflow_data_test";
    fs::remove_all(root);
    write_dataset(pairs, root);
    auto loaded = load_dataset(root);

    REQUIRE(loaded.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        REQUIRE(loaded[i].subject_id == pairs[i].subject_id);
        REQUIRE(loaded[i].rest.data.data == pairs[i].rest.data.data);
        REQUIRE(loaded[i].task.data.data == pairs[i].task.data.data);
        REQUIRE(loaded[i].rest.tr == pairs[i].rest.tr);

        // events regroup by condition on disk; compare as sorted sets
        auto key = [](const io::RawEvent& e) {
            return std::make_tuple(e.condition, e.onset, e.duration, e.amplitude);
        };
        auto orig = pairs[i].schedule.events;
        auto back = loaded[i].schedule.events;
        REQUIRE(orig.size() == back.size());
        std::sort(orig.begin(), orig.end(),
                  [&](const auto& a, const auto& b) { return key(a) < key(b); });
        std::sort(back.begin(), back.end(),
                  [&](const auto& a, const auto& b) { return key(a) < key(b); });
        for (std::size_t e = 0; e < orig.size(); ++e) {
            REQUIRE(orig[e].condition == back[e].condition);
            REQUIRE(orig[e].onset == back[e].onset);
            REQUIRE(orig[e].duration == back[e].duration);
            REQUIRE(orig[e].amplitude == back[e].amplitude);
        }
        REQUIRE(loaded[i].schedule.vocab == pairs[i].schedule.vocab);
    }
}

TEST_CASE("synth spec parsing applies overrides and validation", "[data]") {
    SynthSpec spec = parse_synth_spec("v = 12\nn_subjects = 3\nnoise_level = 0.2\n");
    REQUIRE(spec.v == 12);
    REQUIRE(spec.n_subjects == 3);
    REQUIRE(spec.noise_level == 0.2);
    REQUIRE_THROWS_AS(parse_synth_spec("bogus = 1\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_synth_spec("v = 1\n"), ValidationError);
}
