#include <catch2/catch.hpp>

#include "restflow/velocity.hpp"
#include "test_util.hpp"

using namespace restflow;
using rf_test::max_fd_rel_err;
using rf_test::probe;

namespace {

struct VelFixture {
    ParamStore store;
    VelocityNet net;
    EventEmbed embed;
    ad::Value c;

    VelFixture(std::size_t v, std::uint64_t seed) {
        Rng rng(seed);
        net = make_velocity(store, "vel", v, 6, 5, 4, 8, rng);
        embed = make_event_embed(store, "ev", 5, 6, 2, rng);
        c = ad::constant(rng.gauss_matrix(1, 6));
    }
};

io::NormalizedEvent ev(double onset, double duration, double amp, int cond) {
    return io::NormalizedEvent{onset, duration, amp, cond};
}

}  // namespace

TEST_CASE("time embedding has the configured dimension and is deterministic", "[velocity]") {
    VelFixture fix(3, 1);
    ad::Value a = time_embedding(fix.net, 0.3);
    ad::Value b = time_embedding(fix.net, 0.3);
    REQUIRE(a.rows() == 1);
    REQUIRE(a.cols() == 4);
    REQUIRE(a.m().data == b.m().data);
    REQUIRE_THROWS_AS(time_embedding(fix.net, -0.1), ValidationError);
    REQUIRE_THROWS_AS(time_embedding(fix.net, 1.1), ValidationError);
}

TEST_CASE("dpsi/dt matches the analytic chain rule", "[velocity]") {
    VelFixture fix(3, 2);
    const double t = 0.37, h = 1e-6;
    Matrix up = time_embedding(fix.net, t + h).m();
    Matrix down = time_embedding(fix.net, t - h).m();

    // analytic: dfeats/dt . W with dsin = w cos, dcos = -w sin
    const std::size_t n_freq = VelocityNet::n_freq;
    Matrix dfeats(1, 2 * n_freq);
    for (std::size_t j = 0; j < n_freq; ++j) {
        double w = M_PI * std::pow(2.0, static_cast<double>(j));
        dfeats(0, 2 * j) = w * std::cos(w * t);
        dfeats(0, 2 * j + 1) = -w * std::sin(w * t);
    }
    const Matrix& wmat = fix.net.time.w.m();
    for (std::size_t k = 0; k < 4; ++k) {
        double analytic = 0.0;
        for (std::size_t f = 0; f < 2 * n_freq; ++f) analytic += dfeats(0, f) * wmat(f, k);
        double fd = (up(0, k) - down(0, k)) / (2.0 * h);
        REQUIRE(std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)}) <=
                1e-4);
    }
}

TEST_CASE("all-masked tokens reduce to the event-free path", "[velocity]") {
    VelFixture fix(3, 3);
    Rng rng(4);
    ad::Value x_t = ad::constant(rng.gauss_matrix(6, 3));

    EventTokens none = embed_events(fix.embed, {}, 1);
    EventTokens padded_only = embed_events(fix.embed, {}, 4);
    ad::Value a = predict_velocity(fix.net, 0.4, x_t, fix.c, none);
    ad::Value b = predict_velocity(fix.net, 0.4, x_t, fix.c, padded_only);
    REQUIRE(a.m().data == b.m().data);
}

TEST_CASE("a single unmasked token receives attention weight one", "[velocity]") {
    VelFixture fix(3, 5);
    Rng rng(6);
    ad::Value x_t = ad::constant(rng.gauss_matrix(5, 3));
    EventTokens tokens = embed_events(fix.embed, {ev(2, 1, 0.3, 0)}, 3);

    Matrix attn;
    predict_velocity(fix.net, 0.2, x_t, fix.c, tokens, &attn);
    for (std::size_t t = 0; t < 5; ++t) {
        REQUIRE(attn(t, 0) == Approx(1.0).margin(1e-12));
        REQUIRE(attn(t, 1) <= 1e-12);
        REQUIRE(attn(t, 2) <= 1e-12);
    }
}

TEST_CASE("attention rows sum to one over unmasked tokens", "[velocity]") {
    VelFixture fix(3, 7);
    Rng rng(8);
    ad::Value x_t = ad::constant(rng.gauss_matrix(6, 3));
    EventTokens tokens =
        embed_events(fix.embed, {ev(1, 1, 0.5, 0), ev(6, 2, -0.3, 1)}, 4);

    Matrix attn;
    predict_velocity(fix.net, 0.6, x_t, fix.c, tokens, &attn);
    for (std::size_t t = 0; t < 6; ++t) {
        double unmasked = attn(t, 0) + attn(t, 1);
        REQUIRE(unmasked == Approx(1.0).margin(1e-12));
        REQUIRE(attn(t, 2) <= 1e-12);
        REQUIRE(attn(t, 3) <= 1e-12);
    }
}

TEST_CASE("output row depends only on its own state row", "[velocity]") {
    VelFixture fix(3, 9);
    Rng rng(10);
    Matrix base = rng.gauss_matrix(6, 3);
    EventTokens tokens = embed_events(fix.embed, {ev(1, 1, 0.5, 0), ev(4, 1, 0.2, 1)}, 2);

    ad::Value out_a = predict_velocity(fix.net, 0.3, ad::constant(base), fix.c, tokens);
    Matrix perturbed = base;
    perturbed(2, 0) += 10.0;
    perturbed(2, 2) -= 3.0;
    ad::Value out_b = predict_velocity(fix.net, 0.3, ad::constant(perturbed), fix.c, tokens);

    for (std::size_t t = 0; t < 6; ++t) {
        if (t == 2) continue;
        for (std::size_t j = 0; j < 3; ++j) REQUIRE(out_a.m()(t, j) == out_b.m()(t, j));
    }
}

TEST_CASE("velocity gradients match finite differences", "[velocity]") {
    VelFixture fix(2, 11);
    Rng rng(12);
    ad::Value x_t = ad::leaf(rng.gauss_matrix(8, 2));
    EventTokens tokens = embed_events(fix.embed, {ev(2, 1, 1.0, 0), ev(5, 2, -1.0, 1)}, 2);

    std::vector<ad::Value> leaves{x_t};
    for (const auto& e : fix.store.entries()) leaves.push_back(e.value);
    double err = max_fd_rel_err(leaves, [&] {
        EventTokens toks = embed_events(fix.embed, {ev(2, 1, 1.0, 0), ev(5, 2, -1.0, 1)}, 2);
        return probe(predict_velocity(fix.net, 0.45, x_t, fix.c, toks), 55);
    });
    REQUIRE(err <= 1e-4);
}
