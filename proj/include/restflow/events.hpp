#pragma once

#include <string>
#include <vector>

#include "restflow/autodiff.hpp"
#include "restflow/common.hpp"
#include "restflow/io.hpp"
#include "restflow/nn.hpp"
#include "restflow/optim.hpp"

// Event tokens: token_k = MLP([onset_tr, duration_tr, amplitude_z]) +
// table[condition_id]. Rows beyond the real events are zero with mask false.

namespace restflow {

struct EventEmbed {
    std::size_t d_ev = 32;
    std::size_t hidden = 64;
    std::size_t vocab_size = 0;
    nn::LinearParams mlp1;  // 3 -> hidden, tanh
    nn::LinearParams mlp2;  // hidden -> d_ev
    ad::Value table;        // vocab_size x d_ev
};

inline EventEmbed make_event_embed(ParamStore& store, const std::string& prefix,
                                   std::size_t d_ev, std::size_t hidden, std::size_t vocab_size,
                                   Rng& rng) {
    if (vocab_size == 0) throw ConfigError("event embed: vocabulary is empty");
    EventEmbed e;
    e.d_ev = d_ev;
    e.hidden = hidden;
    e.vocab_size = vocab_size;
    e.mlp1 = nn::make_linear(store, prefix + ".mlp1", 3, hidden, rng);
    e.mlp2 = nn::make_linear(store, prefix + ".mlp2", hidden, d_ev, rng);
    e.table = store.add(prefix + ".table", nn::uniform_init(rng, vocab_size, d_ev, d_ev));
    return e;
}

struct EventTokens {
    ad::Value tokens;        // K_ev x d_ev
    std::vector<bool> mask;  // true = real event

    std::size_t count() const { return mask.size(); }
    bool any_real() const {
        for (bool b : mask)
            if (b) return true;
        return false;
    }
};

inline EventTokens embed_events(const EventEmbed& embed,
                                const std::vector<io::NormalizedEvent>& events,
                                std::size_t pad_to) {
    if (events.size() > pad_to)
        throw ValidationError("embed_events: " + std::to_string(events.size()) +
                              " events exceed pad_to=" + std::to_string(pad_to));
    if (pad_to == 0) throw ValidationError("embed_events: pad_to must be positive");

    EventTokens out;
    out.mask.assign(pad_to, false);
    for (std::size_t k = 0; k < events.size(); ++k) out.mask[k] = true;

    if (events.empty()) {
        out.tokens = ad::constant(Matrix(pad_to, embed.d_ev));
        return out;
    }

    Matrix feats(events.size(), 3);
    std::vector<ad::Value> cond_rows;
    cond_rows.reserve(events.size());
    for (std::size_t k = 0; k < events.size(); ++k) {
        const auto& e = events[k];
        if (e.condition_id < 0 || static_cast<std::size_t>(e.condition_id) >= embed.vocab_size)
            throw ValidationError("embed_events: condition id " + std::to_string(e.condition_id) +
                                  " outside vocab of size " + std::to_string(embed.vocab_size));
        feats(k, 0) = e.onset_tr;
        feats(k, 1) = e.duration_tr;
        feats(k, 2) = e.amplitude_z;
        cond_rows.push_back(ad::slice_rows(embed.table, static_cast<std::size_t>(e.condition_id),
                                           static_cast<std::size_t>(e.condition_id) + 1));
    }

    ad::Value timing = nn::linear(ad::tanh(nn::linear(ad::constant(feats), embed.mlp1.w,
                                                      embed.mlp1.b)),
                                  embed.mlp2.w, embed.mlp2.b);
    ad::Value cond = cond_rows.size() == 1 ? cond_rows[0] : ad::concat_rows(cond_rows);
    ad::Value real = ad::add(timing, cond);

    if (events.size() == pad_to) {
        out.tokens = real;
    } else {
        ad::Value padding = ad::constant(Matrix(pad_to - events.size(), embed.d_ev));
        out.tokens = ad::concat_rows({real, padding});
    }
    return out;
}

}  // namespace restflow
