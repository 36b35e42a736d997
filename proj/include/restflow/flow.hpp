#pragma once

#include <functional>
#include <iostream>
#include <vector>

#include "restflow/autodiff.hpp"
#include "restflow/common.hpp"
#include "restflow/metrics.hpp"
#include "restflow/model.hpp"

// Flow-matching training with connectivity- and spectrum-aware auxiliary
// losses, and fixed-step Euler sampling of the learned ODE.

namespace restflow {

// ---------------------------------------------------------------------------
// Interpolant x_t = (1-t) x0 + t x1 with target velocity x1 - x0. Gradients
// flow into x0 (the prior heads are trained jointly).
// ---------------------------------------------------------------------------

struct Interpolant {
    double t = 0.0;
    ad::Value x_t;
    ad::Value v_star;
};

inline Interpolant make_interpolant(const ad::Value& x0, const Matrix& x1, double t) {
    if (x0.rows() != x1.rows || x0.cols() != x1.cols)
        throw ShapeError("interpolant: " + shape_str(x0.m()) + " vs " + shape_str(x1));
    if (t < 0.0 || t > 1.0) throw ValidationError("interpolant: t must be in [0,1]");
    Interpolant out;
    out.t = t;
    ad::Value x1c = ad::constant(x1);
    out.x_t = ad::add(ad::scale(x0, 1.0 - t), ad::scale(x1c, t));
    out.v_star = ad::sub(x1c, x0);
    return out;
}

// Mean squared velocity error over all T*V entries.
inline ad::Value fm_loss(const ad::Value& v_pred, const ad::Value& v_star) {
    if (v_pred.rows() != v_star.rows() || v_pred.cols() != v_star.cols())
        throw ShapeError("fm_loss: " + shape_str(v_pred.m()) + " vs " + shape_str(v_star.m()));
    return ad::mean(ad::square(ad::sub(v_pred, v_star)));
}

// Euler extrapolation of the interpolant to t=1; at t=1 the state is returned
// unchanged.
inline ad::Value one_step_x1(const ad::Value& x_t, double t, const ad::Value& v_pred) {
    if (t < 0.0 || t > 1.0) throw ValidationError("one_step_x1: t must be in [0,1]");
    if (t == 1.0) return x_t;
    return ad::add(x_t, ad::scale(v_pred, 1.0 - t));
}

// ---------------------------------------------------------------------------
// Weighted FC loss: sum_{i<j} |R_ij(x1)|^2 (R_ij(xhat) - R_ij(x1))^2 with the
// prediction-side correlations built in-graph from means and stds. Pairs
// touching a zero-variance ROI (in either input) contribute 0.
// ---------------------------------------------------------------------------

struct FcLossInfo {
    std::vector<std::size_t> zero_variance_rois;
};

inline ad::Value fc_loss(const ad::Value& x_hat1, const Matrix& x1, FcLossInfo* info = nullptr) {
    const std::size_t t_len = x_hat1.rows(), v = x_hat1.cols();
    if (x1.rows != t_len || x1.cols != v)
        throw ShapeError("fc_loss: " + shape_str(x_hat1.m()) + " vs " + shape_str(x1));
    if (t_len < 3) throw ValidationError("fc_loss: need T >= 3");

    Matrix r_target = metrics::fc_matrix(x1);

    // zero-variance ROIs in either input drop out of the loss
    std::vector<bool> degenerate(v, false);
    for (std::size_t j = 0; j < v; ++j) {
        double m = 0.0, ss_pred = 0.0, ss_targ = 0.0;
        for (std::size_t i = 0; i < t_len; ++i) m += x_hat1.m()(i, j);
        m /= static_cast<double>(t_len);
        for (std::size_t i = 0; i < t_len; ++i) {
            double dp = x_hat1.m()(i, j) - m;
            ss_pred += dp * dp;
        }
        double mt = 0.0;
        for (std::size_t i = 0; i < t_len; ++i) mt += x1(i, j);
        mt /= static_cast<double>(t_len);
        for (std::size_t i = 0; i < t_len; ++i) {
            double dt_ = x1(i, j) - mt;
            ss_targ += dt_ * dt_;
        }
        if (ss_pred == 0.0 || ss_targ == 0.0) {
            degenerate[j] = true;
            if (info) info->zero_variance_rois.push_back(j);
            std::cerr << "warning: fc_loss: zero-variance ROI " << j
                      << ", its pairs contribute 0\n";
        }
    }

    Matrix weights(v, v);  // upper triangle only; rest stays 0
    for (std::size_t i = 0; i < v; ++i)
        for (std::size_t j = i + 1; j < v; ++j)
            if (!degenerate[i] && !degenerate[j])
                weights(i, j) = r_target(i, j) * r_target(i, j);

    // in-graph Pearson of the prediction
    ad::Value mu = ad::col_mean(x_hat1);
    ad::Value xc = ad::sub(x_hat1, ad::broadcast_rows(mu, t_len));
    ad::Value gram = ad::matmul(ad::transpose(xc), xc);  // V x V sums of products
    ad::Value ss = ad::scale(ad::col_mean(ad::square(xc)), static_cast<double>(t_len));  // 1 x V
    ad::Value sd = ad::sqrt(ad::add_scalar(ss, 1e-24));
    ad::Value denom = ad::matmul(ad::transpose(sd), sd);  // outer product
    ad::Value r_pred = ad::div(gram, denom);

    ad::Value diff = ad::sub(r_pred, ad::constant(r_target));
    return ad::sum(ad::mul(ad::constant(weights), ad::square(diff)));
}

// ---------------------------------------------------------------------------
// PSD loss: squared log-power differences over the in-band DFT bins,
// differentiable through constant cosine/sine bases. Power is floored at
// 1e-12 before the log.
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> psd_band_bins(std::size_t t_len, double tr, Band band) {
    if (tr <= 0.0) throw ValidationError("psd_band_bins: tr must be positive");
    if (!(band.lo > 0.0) || !(band.lo < band.hi) || !(band.hi < 0.5 / tr))
        throw ConfigError("psd_band_bins: need 0 < band_lo < band_hi < Nyquist (" +
                          std::to_string(0.5 / tr) + " Hz at tr=" + std::to_string(tr) + ")");
    std::vector<std::size_t> bins;
    for (std::size_t k = 1; k <= t_len / 2; ++k) {
        double f = static_cast<double>(k) / (static_cast<double>(t_len) * tr);
        if (f >= band.lo && f <= band.hi) bins.push_back(k);
    }
    return bins;
}

namespace detail {

inline void dft_bases(std::size_t t_len, const std::vector<std::size_t>& bins, Matrix& cos_b,
                      Matrix& sin_b) {
    cos_b = Matrix(bins.size(), t_len);
    sin_b = Matrix(bins.size(), t_len);
    for (std::size_t b = 0; b < bins.size(); ++b)
        for (std::size_t t = 0; t < t_len; ++t) {
            double ang = 2.0 * M_PI * static_cast<double>(bins[b]) * static_cast<double>(t) /
                         static_cast<double>(t_len);
            cos_b(b, t) = std::cos(ang);
            sin_b(b, t) = std::sin(ang);
        }
}

}  // namespace detail

inline ad::Value psd_loss(const ad::Value& x_hat1, const Matrix& x1, double tr, Band band) {
    const std::size_t t_len = x_hat1.rows(), v = x_hat1.cols();
    if (x1.rows != t_len || x1.cols != v)
        throw ShapeError("psd_loss: " + shape_str(x_hat1.m()) + " vs " + shape_str(x1));
    if (t_len < 8) throw ValidationError("psd_loss: need T >= 8");

    std::vector<std::size_t> bins = psd_band_bins(t_len, tr, band);
    if (bins.empty())
        throw ConfigError("psd_loss: no DFT bins inside band [" + std::to_string(band.lo) + ", " +
                          std::to_string(band.hi) + "] Hz at T=" + std::to_string(t_len) +
                          ", tr=" + std::to_string(tr));

    Matrix cos_b, sin_b;
    detail::dft_bases(t_len, bins, cos_b, sin_b);

    // target log powers (plain arithmetic, same bases)
    Matrix log_p1(bins.size(), v);
    for (std::size_t b = 0; b < bins.size(); ++b)
        for (std::size_t j = 0; j < v; ++j) {
            double re = 0.0, im = 0.0;
            for (std::size_t t = 0; t < t_len; ++t) {
                re += cos_b(b, t) * x1(t, j);
                im += sin_b(b, t) * x1(t, j);
            }
            log_p1(b, j) = std::log(std::max(re * re + im * im, metrics::kPsdFloor));
        }

    ad::Value re = ad::matmul(ad::constant(cos_b), x_hat1);  // |B| x V
    ad::Value im = ad::matmul(ad::constant(sin_b), x_hat1);
    ad::Value power = ad::add(ad::square(re), ad::square(im));
    ad::Value log_p = ad::log(ad::clamp_min(power, metrics::kPsdFloor));
    return ad::sum(ad::square(ad::sub(log_p, ad::constant(log_p1))));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainingExample {
    std::string subject_id;
    io::TimeSeries rest;
    io::TimeSeries task;
    io::EventSchedule schedule;
};

// One run over the dataset per the configured protocol: per item draw t and a
// prior sample, build the interpolant, predict the velocity, assemble
// L = L_FM + lambda_fc L_FC + lambda_psd L_PSD, accumulate gradients over the
// batch and take an Adam step. Deterministic given the config seed.
inline std::vector<LossBreakdown> train(Model& model, const std::vector<TrainingExample>& items,
                                        std::ostream* log = nullptr) {
    if (items.empty()) throw ValidationError("train: empty training set");
    const io::RunConfig& cfg = model.cfg;
    for (const auto& it : items) {
        if (it.rest.v() != model.v || it.task.v() != model.v)
            throw ValidationError("train: subject " + it.subject_id + " has inconsistent V");
        if (it.task.t_len() != model.t_task)
            throw ValidationError("train: subject " + it.subject_id + " has T=" +
                                  std::to_string(it.task.t_len()) + ", model expects " +
                                  std::to_string(model.t_task));
        if (!it.schedule.events.empty() && it.schedule.vocab != model.vocab)
            throw ValidationError("train: subject " + it.subject_id +
                                  " has a schedule vocabulary differing from the model's");
    }

    std::vector<std::vector<io::NormalizedEvent>> normalized(items.size());
    for (std::size_t i = 0; i < items.size(); ++i)
        if (!items[i].schedule.events.empty()) normalized[i] = io::normalize_events(items[i].schedule);

    Rng rng = Rng(cfg.seed).derive(kTrainStream);
    AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};

    std::vector<LossBreakdown> history;
    if (log) *log << "epoch,fm,fc,psd,total\n";

    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        LossBreakdown acc;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch);
            const double inv_batch = 1.0 / static_cast<double>(stop - start);

            std::size_t pad_to = 1;
            for (std::size_t b = start; b < stop; ++b)
                pad_to = std::max(pad_to, normalized[order[b]].size());

            for (std::size_t b = start; b < stop; ++b) {
                const TrainingExample& item = items[order[b]];
                const auto& events = normalized[order[b]];

                ad::Value c = encode_rest(model.enc, item.rest.data);
                PriorSample prior = sample_prior(model.prior, c, model.t_task, rng);
                double t = rng.uniform();
                Interpolant interp = make_interpolant(prior.x0, item.task.data, t);

                EventTokens tokens =
                    cfg.use_events
                        ? embed_events(model.events, events, pad_to)
                        : embed_events(model.events, {}, pad_to);

                ad::Value v_pred = predict_velocity(model.vel, t, interp.x_t, c, tokens);
                ad::Value fm = fm_loss(v_pred, interp.v_star);
                ad::Value x_hat1 = one_step_x1(interp.x_t, t, v_pred);
                ad::Value fc = fc_loss(x_hat1, item.task.data);
                ad::Value psd = psd_loss(x_hat1, item.task.data, item.task.tr, cfg.band);

                auto check = [&](double value, const char* component) {
                    if (!std::isfinite(value))
                        throw NumericalError("train: non-finite " + std::string(component) +
                                             " loss at epoch " + std::to_string(epoch) +
                                             ", subject " + item.subject_id);
                };
                check(fm.scalar(), "fm");
                check(fc.scalar(), "fc");
                check(psd.scalar(), "psd");

                ad::Value total = fm;
                if (cfg.lambda_fc != 0.0) total = ad::add(total, ad::scale(fc, cfg.lambda_fc));
                if (cfg.lambda_psd != 0.0) total = ad::add(total, ad::scale(psd, cfg.lambda_psd));

                ad::backward(ad::scale(total, inv_batch));

                acc.fm += fm.scalar();
                acc.fc += fc.scalar();
                acc.psd += psd.scalar();
                acc.total += fm.scalar() + cfg.lambda_fc * fc.scalar() +
                             cfg.lambda_psd * psd.scalar();
            }
            model.params.adam_step(adam);
        }

        const double inv_n = 1.0 / static_cast<double>(items.size());
        LossBreakdown epoch_loss{acc.fm * inv_n, acc.fc * inv_n, acc.psd * inv_n,
                                 acc.total * inv_n};
        history.push_back(epoch_loss);
        if (log)
            *log << epoch << "," << epoch_loss.fm << "," << epoch_loss.fc << "," << epoch_loss.psd
                 << "," << epoch_loss.total << "\n";
    }
    return history;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

// Explicit fixed-step Euler from t=0 to 1.
inline Matrix euler_integrate(Matrix x0, std::size_t steps,
                              const std::function<Matrix(double, const Matrix&)>& field) {
    if (steps < 1) throw ValidationError("euler_integrate: need steps >= 1");
    Matrix x = std::move(x0);
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::size_t n = 0; n < steps; ++n) {
        double t = static_cast<double>(n) * dt;
        Matrix v = field(t, x);
        if (!v.same_shape(x))
            throw ShapeError("euler_integrate: field returned " + shape_str(v) + " for state " +
                             shape_str(x));
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += dt * v.data[i];
        if (!x.all_finite())
            throw NumericalError("euler_integrate: non-finite state after step " +
                                 std::to_string(n));
    }
    return x;
}

// Generate a task series by integrating the learned field from a prior draw.
inline io::TimeSeries sample(const Model& model, const io::TimeSeries& rest,
                             const io::EventSchedule& schedule, std::size_t steps, Rng& rng) {
    if (steps < 1) throw ValidationError("sample: need steps >= 1");
    if (rest.v() != model.v)
        throw ValidationError("sample: rest has V=" + std::to_string(rest.v()) +
                              ", model expects " + std::to_string(model.v));
    if (!schedule.events.empty() && schedule.vocab != model.vocab)
        throw ValidationError("sample: schedule vocabulary differs from the model's");

    std::vector<io::NormalizedEvent> events;
    if (!schedule.events.empty()) events = io::normalize_events(schedule);
    EventTokens tokens = model.cfg.use_events
                             ? embed_events(model.events, events,
                                            std::max<std::size_t>(1, events.size()))
                             : embed_events(model.events, {}, 1);

    ad::Value c = encode_rest(model.enc, rest.data);
    PriorSample prior = sample_prior(model.prior, c, model.t_task, rng);

    Matrix x1 = euler_integrate(prior.x0.m(), steps, [&](double t, const Matrix& x) {
        return predict_velocity(model.vel, t, ad::constant(x), c, tokens).m();
    });

    io::TimeSeries out;
    out.data = std::move(x1);
    out.tr = rest.tr;
    return out;
}

}  // namespace restflow
