#pragma once

#include <string>
#include <vector>

#include "restflow/flow.hpp"
#include "restflow/model.hpp"

// Full-pipeline gradient verification on a fixed micro model (V=3, T=8, two
// events): the total training loss is differentiated analytically and against
// central finite differences for every parameter. The micro model pins its
// own tr and spectral band so the PSD loss has in-band bins at T=8.

namespace restflow {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_err = 0.0;
    std::string worst_param;
    double threshold = 1e-4;
    bool pass = false;
};

namespace gradcheck_detail {

inline double rel_err(double a, double f) {
    return std::abs(a - f) / std::max({1.0, std::abs(a), std::abs(f)});
}

}  // namespace gradcheck_detail

inline GradCheckReport gradcheck_pipeline(double lambda_fc, double lambda_psd,
                                          std::uint64_t seed, double h = 1e-5,
                                          double threshold = 1e-4) {
    constexpr std::size_t v = 3, t_task = 8, t_rest = 8;
    const double tr = 1.0;
    const Band band{0.1, 0.4};  // bins k=1..3 of an 8-point series at tr=1

    io::RunConfig cfg;
    cfg.d_c = 8;
    cfg.enc_layers = 1;
    cfg.enc_heads = 2;
    cfg.patch_len = 4;
    cfg.max_patches = 4;
    cfg.rank_k = 2;
    cfg.d_ev = 8;
    cfg.d_t = 8;
    cfg.ev_hidden = 8;
    cfg.vel_hidden = 12;
    cfg.lambda_fc = lambda_fc;
    cfg.lambda_psd = lambda_psd;
    cfg.band = band;
    cfg.seed = seed;

    std::map<std::string, int> vocab{{"a", 0}, {"b", 1}};
    Model model = build_model(cfg, v, t_task, vocab);

    Rng rng = Rng(seed).derive(77);
    Matrix x_rest = rng.gauss_matrix(t_rest, v);
    Matrix x1 = rng.gauss_matrix(t_task, v);
    Matrix eps = colored_noise(t_task, v, rng);
    Matrix z = rng.gauss_matrix(t_task, cfg.rank_k);
    const double t_flow = 0.35;

    io::EventSchedule schedule;
    schedule.tr = tr;
    schedule.vocab = vocab;
    schedule.events.push_back({2.0, 1.0, 1.0, "a"});
    schedule.events.push_back({5.0, 2.0, 2.0, "b"});
    std::vector<io::NormalizedEvent> events = io::normalize_events(schedule);

    auto loss_graph = [&]() -> ad::Value {
        ad::Value c = encode_rest(model.enc, x_rest);
        PriorSample prior = sample_prior_fixed(model.prior, c, eps, z);
        Interpolant interp = make_interpolant(prior.x0, x1, t_flow);
        EventTokens tokens = embed_events(model.events, events, events.size());
        ad::Value v_pred = predict_velocity(model.vel, t_flow, interp.x_t, c, tokens);
        ad::Value total = fm_loss(v_pred, interp.v_star);
        if (lambda_fc != 0.0)
            total = ad::add(total, ad::scale(fc_loss(one_step_x1(interp.x_t, t_flow, v_pred), x1),
                                             lambda_fc));
        if (lambda_psd != 0.0)
            total = ad::add(total, ad::scale(psd_loss(one_step_x1(interp.x_t, t_flow, v_pred), x1,
                                                      tr, band),
                                             lambda_psd));
        return total;
    };

    // analytic gradients
    model.params.zero_grads();
    ad::backward(loss_graph());
    std::vector<std::vector<double>> analytic;
    for (const auto& e : model.params.entries()) analytic.push_back(e.value.n->grad_buf().data);

    GradCheckReport report;
    report.threshold = threshold;
    auto& entries = model.params.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
        auto& values = entries[p].value.n->val.data;
        GradCheckGroup group{entries[p].name, 0.0};
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            double up = loss_graph().scalar();
            values[i] = saved - h;
            double down = loss_graph().scalar();
            values[i] = saved;
            double fd = (up - down) / (2.0 * h);
            double err = gradcheck_detail::rel_err(analytic[p][i], fd);
            group.max_rel_err = std::max(group.max_rel_err, err);
        }
        if (group.max_rel_err > report.max_rel_err) {
            report.max_rel_err = group.max_rel_err;
            report.worst_param = group.name;
        }
        report.groups.push_back(std::move(group));
    }
    report.pass = report.max_rel_err <= threshold;
    return report;
}

}  // namespace restflow
