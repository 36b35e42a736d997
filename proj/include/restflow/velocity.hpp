#pragma once

#include <string>
#include <vector>

#include "restflow/autodiff.hpp"
#include "restflow/common.hpp"
#include "restflow/events.hpp"
#include "restflow/nn.hpp"
#include "restflow/optim.hpp"

// Conditional velocity field v(t, x_t, c, e). Each timepoint builds a query
// from its own state row, cross-attends over the event tokens (single head),
// and a pointwise MLP maps concat(x_t row, c, psi(t), e_ctx row) to the
// velocity row. With every token masked the event context is zero and
// attention is skipped, so rest-only generation stays well-posed.

namespace restflow {

struct VelocityNet {
    std::size_t v = 0;
    std::size_t d_c = 64;
    std::size_t d_ev = 32;
    std::size_t d_t = 32;
    std::size_t hidden = 128;
    static constexpr std::size_t n_freq = 8;  // sinusoidal feature pairs for psi(t)

    ad::Value wq;           // V -> d_ev (no bias, a projection of the state row)
    nn::LinearParams wk;    // d_ev -> d_ev
    nn::LinearParams wv;    // d_ev -> d_ev
    nn::LinearParams time;  // 2*n_freq -> d_t
    nn::LinearParams mlp1, mlp2, mlp3;
};

inline VelocityNet make_velocity(ParamStore& store, const std::string& prefix, std::size_t v,
                                 std::size_t d_c, std::size_t d_ev, std::size_t d_t,
                                 std::size_t hidden, Rng& rng) {
    VelocityNet net;
    net.v = v;
    net.d_c = d_c;
    net.d_ev = d_ev;
    net.d_t = d_t;
    net.hidden = hidden;
    net.wq = store.add(prefix + ".wq", nn::uniform_init(rng, v, d_ev, v));
    net.wk = nn::make_linear(store, prefix + ".wk", d_ev, d_ev, rng);
    net.wv = nn::make_linear(store, prefix + ".wv", d_ev, d_ev, rng);
    net.time = nn::make_linear(store, prefix + ".time", 2 * VelocityNet::n_freq, d_t, rng);
    const std::size_t in_dim = v + d_c + d_t + d_ev;
    net.mlp1 = nn::make_linear(store, prefix + ".mlp1", in_dim, hidden, rng);
    net.mlp2 = nn::make_linear(store, prefix + ".mlp2", hidden, hidden, rng);
    net.mlp3 = nn::make_linear(store, prefix + ".mlp3", hidden, v, rng);
    return net;
}

// Sinusoidal features of flow time t: [sin(w_j t), cos(w_j t)] with geometric
// frequencies w_j = pi * 2^j.
inline Matrix time_features(double t, std::size_t n_freq = VelocityNet::n_freq) {
    Matrix f(1, 2 * n_freq);
    for (std::size_t j = 0; j < n_freq; ++j) {
        double w = M_PI * std::pow(2.0, static_cast<double>(j));
        f(0, 2 * j) = std::sin(w * t);
        f(0, 2 * j + 1) = std::cos(w * t);
    }
    return f;
}

// Learned time embedding psi(t), t in [0, 1].
inline ad::Value time_embedding(const VelocityNet& net, double t) {
    if (t < 0.0 || t > 1.0)
        throw ValidationError("time_embedding: t must be in [0,1], got " + std::to_string(t));
    return nn::linear(ad::constant(time_features(t)), net.time.w, net.time.b);
}

// Full velocity field; optionally exposes the attention weights.
inline ad::Value predict_velocity(const VelocityNet& net, double t, const ad::Value& x_t,
                                  const ad::Value& c, const EventTokens& tokens,
                                  Matrix* attn_out = nullptr) {
    const std::size_t t_len = x_t.rows();
    if (x_t.cols() != net.v)
        throw ShapeError("predict_velocity: state is " + shape_str(x_t.m()) + ", expected V=" +
                         std::to_string(net.v));
    if (c.rows() != 1 || c.cols() != net.d_c)
        throw ShapeError("predict_velocity: context is " + shape_str(c.m()));

    ad::Value e_ctx;
    if (tokens.any_real()) {
        if (tokens.tokens.cols() != net.d_ev)
            throw ShapeError("predict_velocity: tokens are " + shape_str(tokens.tokens.m()));
        ad::Value q = ad::matmul(x_t, net.wq);                            // T x d_ev
        ad::Value k = nn::linear(tokens.tokens, net.wk.w, net.wk.b);      // K_ev x d_ev
        ad::Value val = nn::linear(tokens.tokens, net.wv.w, net.wv.b);    // K_ev x d_ev
        ad::Value logits = ad::scale(ad::matmul(q, ad::transpose(k)),
                                     1.0 / std::sqrt(static_cast<double>(net.d_ev)));
        Matrix addmask(1, tokens.count());
        for (std::size_t j = 0; j < tokens.count(); ++j)
            addmask(0, j) = tokens.mask[j] ? 0.0 : -1e30;
        ad::Value attn = ad::softmax_rows(logits, &addmask);
        if (attn_out) *attn_out = attn.m();
        e_ctx = ad::matmul(attn, val);  // T x d_ev
    } else {
        e_ctx = ad::constant(Matrix(t_len, net.d_ev));
        if (attn_out) *attn_out = Matrix(t_len, tokens.count());
    }

    ad::Value psi = ad::broadcast_rows(time_embedding(net, t), t_len);
    ad::Value ctx = ad::broadcast_rows(c, t_len);
    ad::Value feat = ad::concat_cols({x_t, ctx, psi, e_ctx});

    ad::Value h = ad::gelu(nn::linear(feat, net.mlp1.w, net.mlp1.b));
    h = ad::gelu(nn::linear(h, net.mlp2.w, net.mlp2.b));
    return nn::linear(h, net.mlp3.w, net.mlp3.b);  // T x V
}

}  // namespace restflow
