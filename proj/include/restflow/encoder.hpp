#pragma once

#include <string>
#include <vector>

#include "restflow/autodiff.hpp"
#include "restflow/common.hpp"
#include "restflow/nn.hpp"
#include "restflow/optim.hpp"

// Resting-state encoder: the series is cut into fixed-length temporal patches
// (last patch zero-padded), each patch is linearly projected, a CLS token is
// prepended, and pre-layer-norm transformer blocks mix the sequence. The final
// CLS representation is the subject context embedding.

namespace restflow {

struct EncoderConfig {
    std::size_t v = 0;
    std::size_t d_c = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t patch_len = 16;
    std::size_t max_patches = 32;
};

struct Encoder {
    EncoderConfig cfg;
    nn::LinearParams patch_proj;     // (patch_len * v) -> d_c
    ad::Value cls;                   // 1 x d_c
    ad::Value pos;                   // (1 + max_patches) x d_c, row 0 is the CLS slot
    struct Layer {
        nn::LayerNormParams ln1, ln2;
        nn::LinearParams wq, wk, wv, wo;
        nn::LinearParams mlp1, mlp2;
    };
    std::vector<Layer> layers;
    nn::LayerNormParams ln_final;
};

inline Encoder make_encoder(ParamStore& store, const std::string& prefix,
                            const EncoderConfig& cfg, Rng& rng) {
    if (cfg.d_c % cfg.heads != 0)
        throw ConfigError("encoder: d_c must be divisible by head count");
    Encoder enc;
    enc.cfg = cfg;
    enc.patch_proj = nn::make_linear(store, prefix + ".patch", cfg.patch_len * cfg.v, cfg.d_c, rng);
    enc.cls = store.add(prefix + ".cls", nn::uniform_init(rng, 1, cfg.d_c, cfg.d_c));
    enc.pos = store.add(prefix + ".pos",
                        nn::uniform_init(rng, 1 + cfg.max_patches, cfg.d_c, cfg.d_c));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::string base = prefix + ".layer" + std::to_string(l);
        Encoder::Layer layer;
        layer.ln1 = nn::make_layer_norm(store, base + ".ln1", cfg.d_c);
        layer.ln2 = nn::make_layer_norm(store, base + ".ln2", cfg.d_c);
        layer.wq = nn::make_linear(store, base + ".wq", cfg.d_c, cfg.d_c, rng);
        layer.wk = nn::make_linear(store, base + ".wk", cfg.d_c, cfg.d_c, rng);
        layer.wv = nn::make_linear(store, base + ".wv", cfg.d_c, cfg.d_c, rng);
        layer.wo = nn::make_linear(store, base + ".wo", cfg.d_c, cfg.d_c, rng);
        layer.mlp1 = nn::make_linear(store, base + ".mlp1", cfg.d_c, 4 * cfg.d_c, rng);
        layer.mlp2 = nn::make_linear(store, base + ".mlp2", 4 * cfg.d_c, cfg.d_c, rng);
        enc.layers.push_back(std::move(layer));
    }
    enc.ln_final = nn::make_layer_norm(store, prefix + ".lnf", cfg.d_c);
    return enc;
}

namespace detail {

inline ad::Value multi_head_self_attention(const Encoder::Layer& layer, const ad::Value& h,
                                           std::size_t heads) {
    const std::size_t d = h.cols();
    const std::size_t dh = d / heads;
    ad::Value q = nn::linear(h, layer.wq.w, layer.wq.b);
    ad::Value k = nn::linear(h, layer.wk.w, layer.wk.b);
    ad::Value v = nn::linear(h, layer.wv.w, layer.wv.b);

    std::vector<ad::Value> head_outs;
    head_outs.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
        ad::Value qh = ad::slice_cols(q, hd * dh, (hd + 1) * dh);
        ad::Value kh = ad::slice_cols(k, hd * dh, (hd + 1) * dh);
        ad::Value vh = ad::slice_cols(v, hd * dh, (hd + 1) * dh);
        ad::Value logits =
            ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        ad::Value attn = ad::softmax_rows(logits);
        head_outs.push_back(ad::matmul(attn, vh));
    }
    ad::Value cat = heads == 1 ? head_outs[0] : ad::concat_cols(head_outs);
    return nn::linear(cat, layer.wo.w, layer.wo.b);
}

}  // namespace detail

// Patch rows of a T x V series into ceil(T/P) rows of length P*V, zero-padding
// the tail of the final patch.
inline Matrix patchify(const Matrix& x, std::size_t patch_len) {
    const std::size_t n_patches = (x.rows + patch_len - 1) / patch_len;
    Matrix out(n_patches, patch_len * x.cols);
    for (std::size_t p = 0; p < n_patches; ++p)
        for (std::size_t r = 0; r < patch_len; ++r) {
            std::size_t t = p * patch_len + r;
            if (t >= x.rows) break;
            for (std::size_t j = 0; j < x.cols; ++j) out(p, r * x.cols + j) = x(t, j);
        }
    return out;
}

// Differentiable path from an in-graph resting series (used by gradient
// checks); the x_rest value must already be patched.
inline ad::Value encode_rest_patches(const Encoder& enc, const ad::Value& patches) {
    const std::size_t n_patches = patches.rows();
    if (n_patches > enc.cfg.max_patches)
        throw ValidationError("encode_rest: " + std::to_string(n_patches) +
                              " patches exceed max_patches=" + std::to_string(enc.cfg.max_patches));
    ad::Value tokens = nn::linear(patches, enc.patch_proj.w, enc.patch_proj.b);
    ad::Value h = ad::concat_rows({enc.cls, tokens});
    h = ad::add(h, ad::slice_rows(enc.pos, 0, 1 + n_patches));

    for (const auto& layer : enc.layers) {
        ad::Value attn_in = ad::layer_norm(h, layer.ln1.gamma, layer.ln1.beta);
        h = ad::add(h, detail::multi_head_self_attention(layer, attn_in, enc.cfg.heads));
        ad::Value mlp_in = ad::layer_norm(h, layer.ln2.gamma, layer.ln2.beta);
        ad::Value mlp = nn::linear(ad::gelu(nn::linear(mlp_in, layer.mlp1.w, layer.mlp1.b)),
                                   layer.mlp2.w, layer.mlp2.b);
        h = ad::add(h, mlp);
    }
    h = ad::layer_norm(h, enc.ln_final.gamma, enc.ln_final.beta);
    return ad::slice_rows(h, 0, 1);  // CLS readout, 1 x d_c
}

// Subject context embedding c = CLS representation of the patched series.
inline ad::Value encode_rest(const Encoder& enc, const Matrix& x_rest) {
    if (x_rest.rows < 1) throw ValidationError("encode_rest: empty series");
    if (x_rest.cols != enc.cfg.v)
        throw ValidationError("encode_rest: expected V=" + std::to_string(enc.cfg.v) + ", got " +
                              std::to_string(x_rest.cols) + " ROIs");
    return encode_rest_patches(enc, ad::constant(patchify(x_rest, enc.cfg.patch_len)));
}

}  // namespace restflow
