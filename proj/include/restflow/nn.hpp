#pragma once

#include "restflow/autodiff.hpp"
#include "restflow/common.hpp"
#include "restflow/optim.hpp"

namespace restflow::nn {

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); the init used for every weight,
// bias and embedding table in the model.
inline Matrix uniform_init(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return rng.uniform_matrix(rows, cols, -bound, bound);
}

// x: NxIn, w: InxOut, b: 1xOut -> NxOut
inline ad::Value linear(const ad::Value& x, const ad::Value& w, const ad::Value& b) {
    return ad::add(ad::matmul(x, w), ad::broadcast_rows(b, x.rows()));
}

struct LinearParams {
    ad::Value w, b;
};

inline LinearParams make_linear(ParamStore& store, const std::string& name, std::size_t in,
                                std::size_t out, Rng& rng) {
    LinearParams p;
    p.w = store.add(name + ".w", uniform_init(rng, in, out, in));
    p.b = store.add(name + ".b", uniform_init(rng, 1, out, in));
    return p;
}

struct LayerNormParams {
    ad::Value gamma, beta;
};

inline LayerNormParams make_layer_norm(ParamStore& store, const std::string& name,
                                       std::size_t dim) {
    LayerNormParams p;
    p.gamma = store.add(name + ".g", Matrix(1, dim, 1.0));
    p.beta = store.add(name + ".b", Matrix(1, dim, 0.0));
    return p;
}

}  // namespace restflow::nn
