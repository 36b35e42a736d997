#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "restflow/common.hpp"
#include "restflow/encoder.hpp"
#include "restflow/events.hpp"
#include "restflow/io.hpp"
#include "restflow/optim.hpp"
#include "restflow/prior.hpp"
#include "restflow/velocity.hpp"

namespace restflow {

// rng substreams derived from the run seed
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;

struct LossBreakdown {
    double fm = 0.0;
    double fc = 0.0;
    double psd = 0.0;
    double total = 0.0;
};

// All trainable state plus the dataset-derived dimensions needed to rebuild
// the network from a checkpoint.
struct Model {
    io::RunConfig cfg;
    std::size_t v = 0;
    std::size_t t_task = 0;
    std::map<std::string, int> vocab;

    ParamStore params;
    Encoder enc;
    PriorHeads prior;
    EventEmbed events;
    VelocityNet vel;

    Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
};

inline Model build_model(const io::RunConfig& cfg, std::size_t v, std::size_t t_task,
                         const std::map<std::string, int>& vocab) {
    cfg.validate();
    if (v < 2) throw ValidationError("build_model: need V >= 2");
    if (vocab.empty()) throw ValidationError("build_model: empty condition vocabulary");

    Model m;
    m.cfg = cfg;
    m.v = v;
    m.t_task = t_task;
    m.vocab = vocab;

    Rng init_rng = Rng(cfg.seed).derive(kInitStream);
    EncoderConfig ec{v, cfg.d_c, cfg.enc_layers, cfg.enc_heads, cfg.patch_len, cfg.max_patches};
    m.enc = make_encoder(m.params, "enc", ec, init_rng);
    m.prior = make_prior(m.params, "prior", cfg.d_c, v, cfg.rank_k, init_rng);
    m.events = make_event_embed(m.params, "event", cfg.d_ev, cfg.ev_hidden, vocab.size(), init_rng);
    m.vel = make_velocity(m.params, "vel", v, cfg.d_c, cfg.d_ev, cfg.d_t, cfg.vel_hidden, init_rng);
    return m;
}

// ---------------------------------------------------------------------------
// Checkpoint: parameter payload + config echo + vocabulary + loss history.
// ---------------------------------------------------------------------------

struct Checkpoint {
    Model model;
    std::vector<LossBreakdown> history;
};

inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const std::vector<LossBreakdown>& history) {
    std::ofstream os(path);
    if (!os) throw Error("save_checkpoint: cannot open " + path.string());
    os << std::setprecision(17);
    os << "restflow-checkpoint 1\n";
    os << "v " << model.v << "\n";
    os << "t_task " << model.t_task << "\n";

    // vocab, ordered by id
    std::vector<std::string> labels(model.vocab.size());
    for (const auto& [label, id] : model.vocab) labels[static_cast<std::size_t>(id)] = label;
    os << "vocab " << labels.size() << "\n";
    for (std::size_t i = 0; i < labels.size(); ++i) os << i << " " << labels[i] << "\n";

    os << "config-begin\n" << io::config_to_text(model.cfg) << "config-end\n";
    model.params.save(os);

    os << "history " << history.size() << "\n";
    os << "epoch,fm,fc,psd,total\n";
    for (std::size_t i = 0; i < history.size(); ++i)
        os << (i + 1) << "," << history[i].fm << "," << history[i].fc << "," << history[i].psd
           << "," << history[i].total << "\n";
    if (!os) throw Error("save_checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("load_checkpoint: cannot open " + path.string());

    std::string tag;
    int version = 0;
    if (!(is >> tag >> version) || tag != "restflow-checkpoint" || version != 1)
        throw ParseError(path.string() + ": not a restflow checkpoint");

    std::size_t v = 0, t_task = 0, vocab_n = 0;
    if (!(is >> tag >> v) || tag != "v") throw ParseError(path.string() + ": missing v");
    if (!(is >> tag >> t_task) || tag != "t_task")
        throw ParseError(path.string() + ": missing t_task");
    if (!(is >> tag >> vocab_n) || tag != "vocab")
        throw ParseError(path.string() + ": missing vocab");

    std::map<std::string, int> vocab;
    for (std::size_t i = 0; i < vocab_n; ++i) {
        int id = 0;
        if (!(is >> id)) throw ParseError(path.string() + ": bad vocab entry");
        std::string label;
        std::getline(is, label);
        label = io::detail::trim(label);
        if (label.empty()) throw ParseError(path.string() + ": empty vocab label");
        vocab[label] = id;
    }

    std::string line;
    if (vocab_n == 0) std::getline(is, line);  // finish the vocab count line
    if (!std::getline(is, line) || io::detail::trim(line) != "config-begin")
        throw ParseError(path.string() + ": missing config block");
    std::string config_text;
    while (std::getline(is, line)) {
        if (io::detail::trim(line) == "config-end") break;
        config_text += line;
        config_text += "\n";
    }
    io::RunConfig cfg = io::parse_config(config_text);

    Checkpoint out;
    out.model = build_model(cfg, v, t_task, vocab);
    out.model.params.load(is);

    std::size_t hist_n = 0;
    if (!(is >> tag >> hist_n) || tag != "history")
        throw ParseError(path.string() + ": missing history block");
    std::getline(is, line);  // end of count line
    std::getline(is, line);  // csv header
    for (std::size_t i = 0; i < hist_n; ++i) {
        if (!std::getline(is, line)) throw ParseError(path.string() + ": short history block");
        LossBreakdown lb;
        std::size_t epoch = 0;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &epoch, &lb.fm, &lb.fc, &lb.psd,
                        &lb.total) != 5)
            throw ParseError(path.string() + ": bad history row '" + line + "'");
        out.history.push_back(lb);
    }
    return out;
}

}  // namespace restflow
