#include <catch2/catch.hpp>

#include "restflow/encoder.hpp"
#include "test_util.hpp"

using namespace restflow;
using rf_test::max_fd_rel_err;
using rf_test::probe;

namespace {

Encoder micro_encoder(ParamStore& store, std::size_t v, std::size_t seed = 5) {
    Rng rng(seed);
    EncoderConfig cfg;
    cfg.v = v;
    cfg.d_c = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.patch_len = 4;
    cfg.max_patches = 8;
    return make_encoder(store, "enc", cfg, rng);
}

// in-graph patching so the input itself can carry gradients
ad::Value patch_graph(const ad::Value& x, std::size_t patch_len) {
    const std::size_t n_patches = x.rows() / patch_len;
    std::vector<ad::Value> patches;
    for (std::size_t p = 0; p < n_patches; ++p)
        patches.push_back(
            ad::reshape(ad::slice_rows(x, p * patch_len, (p + 1) * patch_len), 1,
                        patch_len * x.cols()));
    return ad::concat_rows(patches);
}

}  // namespace

TEST_CASE("context embedding has the configured dimension", "[encoder]") {
    ParamStore store;
    Encoder enc = micro_encoder(store, 3);
    Rng rng(2);
    for (std::size_t t_rest : {1ul, 5ul, 16ul, 31ul}) {
        Matrix x = rng.gauss_matrix(t_rest, 3);
        ad::Value c = encode_rest(enc, x);
        REQUIRE(c.rows() == 1);
        REQUIRE(c.cols() == 8);
        REQUIRE(c.m().all_finite());
    }
}

TEST_CASE("encoding is deterministic", "[encoder]") {
    ParamStore store;
    Encoder enc = micro_encoder(store, 3);
    Rng rng(3);
    Matrix x = rng.gauss_matrix(12, 3);
    ad::Value a = encode_rest(enc, x);
    ad::Value b = encode_rest(enc, x);
    REQUIRE(a.m().data == b.m().data);
}

TEST_CASE("roi count mismatches are rejected", "[encoder]") {
    ParamStore store;
    Encoder enc = micro_encoder(store, 3);
    Rng rng(4);
    REQUIRE_THROWS_AS(encode_rest(enc, rng.gauss_matrix(8, 4)), ValidationError);
}

TEST_CASE("patch count beyond the positional table is rejected", "[encoder]") {
    ParamStore store;
    Encoder enc = micro_encoder(store, 3);
    Rng rng(4);
    REQUIRE_THROWS_AS(encode_rest(enc, rng.gauss_matrix(4 * 8 + 1, 3)), ValidationError);
}

TEST_CASE("gradient w.r.t. the resting input matches finite differences", "[encoder]") {
    ParamStore store;
    Encoder enc = micro_encoder(store, 3);
    Rng rng(6);
    ad::Value x_rest = ad::leaf(rng.gauss_matrix(8, 3));
    double err = max_fd_rel_err({x_rest}, [&] {
        return probe(encode_rest_patches(enc, patch_graph(x_rest, 4)), 31);
    });
    REQUIRE(err <= 1e-4);
}

TEST_CASE("shuffling patches changes the context", "[encoder]") {
    ParamStore store;
    Encoder enc = micro_encoder(store, 3);
    Rng rng(7);
    Matrix x = rng.gauss_matrix(8, 3);  // two patches of 4
    Matrix shuffled(8, 3);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t j = 0; j < 3; ++j) {
            shuffled(t, j) = x(t + 4, j);
            shuffled(t + 4, j) = x(t, j);
        }
    ad::Value a = encode_rest(enc, x);
    ad::Value b = encode_rest(enc, shuffled);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.m().size(); ++i)
        diff = std::max(diff, std::abs(a.m().data[i] - b.m().data[i]));
    REQUIRE(diff > 1e-8);
}

TEST_CASE("zero timepoints inside the padded tail do not change the context", "[encoder]") {
    ParamStore store;
    Encoder enc = micro_encoder(store, 3);
    Rng rng(8);
    Matrix x = rng.gauss_matrix(10, 3);  // 3 patches, last has 2 real rows + 2 pad
    Matrix padded(11, 3);
    for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t j = 0; j < 3; ++j) padded(t, j) = x(t, j);
    ad::Value a = encode_rest(enc, x);
    ad::Value b = encode_rest(enc, padded);
    REQUIRE(a.m().data == b.m().data);
}
