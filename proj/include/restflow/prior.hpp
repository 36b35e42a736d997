#pragma once

#include <string>

#include "restflow/autodiff.hpp"
#include "restflow/common.hpp"
#include "restflow/nn.hpp"
#include "restflow/noise.hpp"
#include "restflow/optim.hpp"

// Structured prior: x0 = mu(c) + sigma(c) * eps_colored + U(c) z with
// rest-conditioned per-ROI mean and scale heads, 1/f temporal noise and a
// rank-K spatial factor. z is drawn independently per timepoint, so U(c) z is
// spatially structured and temporally white.

namespace restflow {

struct PriorHeads {
    std::size_t v = 0;
    std::size_t rank_k = 8;
    nn::LinearParams mu;      // d_c -> V
    nn::LinearParams sigma;   // d_c -> V, softplus applied on top
    nn::LinearParams factor;  // d_c -> V*K, reshaped to V x K
};

inline PriorHeads make_prior(ParamStore& store, const std::string& prefix, std::size_t d_c,
                             std::size_t v, std::size_t rank_k, Rng& rng) {
    PriorHeads p;
    p.v = v;
    p.rank_k = rank_k;
    p.mu = nn::make_linear(store, prefix + ".mu", d_c, v, rng);
    p.sigma = nn::make_linear(store, prefix + ".sigma", d_c, v, rng);
    p.factor = nn::make_linear(store, prefix + ".factor", d_c, v * rank_k, rng);
    return p;
}

struct PriorSample {
    ad::Value x0;        // T x V, differentiable w.r.t. the heads
    Matrix eps_colored;  // T x V draw actually used
    Matrix z;            // T x K draw actually used
};

// Head evaluations for a given context.
inline ad::Value prior_mu(const PriorHeads& p, const ad::Value& c) {
    return nn::linear(c, p.mu.w, p.mu.b);
}

inline ad::Value prior_sigma(const PriorHeads& p, const ad::Value& c) {
    return ad::softplus(nn::linear(c, p.sigma.w, p.sigma.b));
}

inline ad::Value prior_factor(const PriorHeads& p, const ad::Value& c) {
    return ad::reshape(nn::linear(c, p.factor.w, p.factor.b), p.v, p.rank_k);
}

// Reparameterized sample with caller-provided draws; gradients flow to the
// heads while the draws stay fixed.
inline PriorSample sample_prior_fixed(const PriorHeads& p, const ad::Value& c, Matrix eps_colored,
                                      Matrix z) {
    const std::size_t t_len = eps_colored.rows;
    if (eps_colored.cols != p.v)
        throw ShapeError("sample_prior: eps is " + shape_str(eps_colored) + ", expected V=" +
                         std::to_string(p.v));
    if (z.rows != t_len || z.cols != p.rank_k)
        throw ShapeError("sample_prior: z is " + shape_str(z) + ", expected " +
                         shape_str(t_len, p.rank_k));

    ad::Value mu_rows = ad::broadcast_rows(prior_mu(p, c), t_len);
    ad::Value sig_rows = ad::broadcast_rows(prior_sigma(p, c), t_len);
    ad::Value u = prior_factor(p, c);  // V x K

    PriorSample out;
    out.eps_colored = std::move(eps_colored);
    out.z = std::move(z);
    ad::Value noise_term = ad::mul(sig_rows, ad::constant(out.eps_colored));
    ad::Value factor_term = ad::matmul(ad::constant(out.z), ad::transpose(u));  // T x V
    out.x0 = ad::add(ad::add(mu_rows, noise_term), factor_term);
    return out;
}

inline PriorSample sample_prior(const PriorHeads& p, const ad::Value& c, std::size_t t_len,
                                Rng& rng) {
    if (t_len < 4) throw ValidationError("sample_prior: need T >= 4");
    Matrix eps = colored_noise(t_len, p.v, rng);
    Matrix z = rng.gauss_matrix(t_len, p.rank_k);
    return sample_prior_fixed(p, c, std::move(eps), std::move(z));
}

}  // namespace restflow
