#include <catch2/catch.hpp>

#include <chrono>

#include "restflow/data.hpp"
#include "restflow/flow.hpp"
#include "restflow/gradcheck.hpp"
#include "test_util.hpp"

using namespace restflow;
using rf_test::max_fd_rel_err;
using rf_test::probe;

namespace {

Matrix columns2(std::initializer_list<double> a, std::initializer_list<double> b) {
    Matrix m(a.size(), 2);
    std::size_t i = 0;
    for (double v : a) m(i++, 0) = v;
    i = 0;
    for (double v : b) m(i++, 1) = v;
    return m;
}

io::RunConfig tiny_config() {
    io::RunConfig cfg;
    cfg.d_c = 8;
    cfg.enc_layers = 1;
    cfg.enc_heads = 2;
    cfg.patch_len = 8;
    cfg.max_patches = 8;
    cfg.rank_k = 2;
    cfg.d_ev = 8;
    cfg.d_t = 8;
    cfg.ev_hidden = 8;
    cfg.vel_hidden = 16;
    cfg.batch = 4;
    cfg.epochs = 6;
    cfg.band = Band{0.01, 0.05};
    cfg.seed = 3;
    return cfg;
}

std::vector<TrainingExample> tiny_dataset(std::size_t n_subjects, std::uint64_t seed) {
    data::SynthSpec spec;
    spec.v = 6;
    spec.t_rest = 48;
    spec.t_task = 48;
    spec.tr = 0.72;
    spec.n_subjects = n_subjects;
    spec.n_conditions = 2;
    spec.events_per_run = 2;
    spec.mix_seed = 5;
    std::vector<TrainingExample> items;
    for (auto& p : data::gen_dataset(spec, seed))
        items.push_back(TrainingExample{p.subject_id, p.rest, p.task, p.schedule});
    return items;
}

}  // namespace

TEST_CASE("interpolant hits both endpoints exactly", "[flow]") {
    Rng rng(1);
    ad::Value x0 = ad::constant(rng.gauss_matrix(6, 3));
    Matrix x1 = rng.gauss_matrix(6, 3);

    Interpolant at0 = make_interpolant(x0, x1, 0.0);
    REQUIRE(at0.x_t.m().data == x0.m().data);
    Interpolant at1 = make_interpolant(x0, x1, 1.0);
    REQUIRE(at1.x_t.m().data == x1.data);
}

TEST_CASE("fm loss identities", "[flow]") {
    Rng rng(2);
    ad::Value a = ad::constant(rng.gauss_matrix(4, 3));
    REQUIRE(fm_loss(a, a).scalar() == 0.0);

    Matrix shifted = a.m();
    for (double& v : shifted.data) v += 1.0;
    REQUIRE(fm_loss(ad::constant(shifted), a).scalar() == Approx(1.0).margin(1e-12));

    Matrix p(2, 2), q(2, 2);
    p.data = {0.5, -1.0, 2.0, 0.0};
    q.data = {1.0, 1.0, -1.0, 0.25};
    double hand = 0.0;
    for (std::size_t i = 0; i < 4; ++i) hand += (p.data[i] - q.data[i]) * (p.data[i] - q.data[i]);
    hand /= 4.0;
    REQUIRE(fm_loss(ad::constant(p), ad::constant(q)).scalar() == Approx(hand).margin(1e-15));
}

TEST_CASE("fm loss is zero only at the target", "[flow]") {
    Rng rng(3);
    ad::Value a = ad::constant(rng.gauss_matrix(3, 3));
    Matrix other = a.m();
    other.data[4] += 1e-5;
    REQUIRE(fm_loss(ad::constant(other), a).scalar() > 1e-12);
}

TEST_CASE("one-step extrapolation recovers x1 from the exact field", "[flow]") {
    Rng rng(4);
    Matrix x0m = rng.gauss_matrix(5, 4);
    Matrix x1 = rng.gauss_matrix(5, 4);
    ad::Value x0 = ad::constant(x0m);

    for (double t : {0.0, 0.25, 0.7, 0.99}) {
        Interpolant interp = make_interpolant(x0, x1, t);
        ad::Value xhat = one_step_x1(interp.x_t, t, interp.v_star);
        for (std::size_t i = 0; i < x1.size(); ++i)
            REQUIRE(xhat.m().data[i] == Approx(x1.data[i]).margin(1e-12));
    }

    // boundary: t=1 returns the state unchanged
    Interpolant interp = make_interpolant(x0, x1, 1.0);
    ad::Value xhat = one_step_x1(interp.x_t, 1.0, ad::constant(Matrix(5, 4, 123.0)));
    REQUIRE(xhat.m().data == interp.x_t.m().data);

    // random instance against the direct formula
    double t = 0.4;
    Interpolant i2 = make_interpolant(x0, x1, t);
    Matrix v = rng.gauss_matrix(5, 4);
    ad::Value got = one_step_x1(i2.x_t, t, ad::constant(v));
    for (std::size_t i = 0; i < v.size(); ++i)
        REQUIRE(got.m().data[i] ==
                Approx(i2.x_t.m().data[i] + (1.0 - t) * v.data[i]).margin(1e-15));
}

TEST_CASE("fc loss identities and the hand-computed case", "[flow]") {
    Rng rng(5);
    Matrix x1 = rng.gauss_matrix(12, 4);
    REQUIRE(fc_loss(ad::constant(x1), x1).scalar() <= 1e-12);

    // R(x1) = 0.5, R(xhat) = 0 -> w * diff^2 = 0.25 * 0.25
    Matrix target = columns2({1, 2, 3}, {1, 3, 2});   // correlation 0.5
    Matrix pred = columns2({1, 2, 3}, {1, 2, 1});     // correlation 0
    REQUIRE(fc_loss(ad::constant(pred), target).scalar() == Approx(0.0625).margin(1e-12));
}

TEST_CASE("fc loss zeroes pairs touching zero-variance rois", "[flow]") {
    Matrix target(8, 3);
    Rng rng(6);
    target = rng.gauss_matrix(8, 3);
    for (std::size_t t = 0; t < 8; ++t) target(t, 1) = 2.0;  // constant roi in the target

    Matrix pred = rng.gauss_matrix(8, 3);
    FcLossInfo info;
    double loss = fc_loss(ad::constant(pred), target, &info).scalar();
    REQUIRE(info.zero_variance_rois == std::vector<std::size_t>{1});

    // only the (0,2) pair can contribute
    Matrix t2(8, 2), p2(8, 2);
    for (std::size_t t = 0; t < 8; ++t) {
        t2(t, 0) = target(t, 0);
        t2(t, 1) = target(t, 2);
        p2(t, 0) = pred(t, 0);
        p2(t, 1) = pred(t, 2);
    }
    REQUIRE(loss == Approx(fc_loss(ad::constant(p2), t2).scalar()).margin(1e-12));
}

TEST_CASE("fc loss gradients match finite differences", "[flow]") {
    Rng rng(7);
    ad::Value pred = ad::leaf(rng.gauss_matrix(8, 3));
    Matrix target = rng.gauss_matrix(8, 3);
    double err = max_fd_rel_err({pred}, [&] { return fc_loss(pred, target); });
    REQUIRE(err <= 1e-4);
}

TEST_CASE("psd loss identities and analytic scaling", "[flow]") {
    // bins for T=128, tr=0.72, band 0.01-0.05 Hz
    std::vector<std::size_t> bins = psd_band_bins(128, 0.72, Band{0.01, 0.05});
    REQUIRE(bins == std::vector<std::size_t>{1, 2, 3, 4});

    Rng rng(8);
    Matrix x1 = rng.gauss_matrix(128, 3);
    REQUIRE(psd_loss(ad::constant(x1), x1, 0.72, Band{0.01, 0.05}).scalar() <= 1e-12);

    Matrix doubled = x1;
    for (double& v : doubled.data) v *= 2.0;
    double expected = 3.0 * 4.0 * std::log(4.0) * std::log(4.0);  // V * |B| * ln(4)^2
    REQUIRE(psd_loss(ad::constant(doubled), x1, 0.72, Band{0.01, 0.05}).scalar() ==
            Approx(expected).margin(1e-9));
}

TEST_CASE("psd loss is shift-invariant at in-band bins", "[flow]") {
    Rng rng(9);
    Matrix x1 = rng.gauss_matrix(64, 3);
    Matrix pred = rng.gauss_matrix(64, 3);
    double base = psd_loss(ad::constant(pred), x1, 1.0, Band{0.05, 0.2}).scalar();

    Matrix x1s = x1, preds = pred;
    for (std::size_t t = 0; t < 64; ++t)
        for (std::size_t j = 0; j < 3; ++j) {
            x1s(t, j) += 5.0 + static_cast<double>(j);
            preds(t, j) += 5.0 + static_cast<double>(j);
        }
    double shifted = psd_loss(ad::constant(preds), x1s, 1.0, Band{0.05, 0.2}).scalar();
    REQUIRE(base == Approx(shifted).margin(1e-9));
}

TEST_CASE("psd loss rejects an empty band", "[flow]") {
    Matrix x(16, 2, 1.0);
    REQUIRE_THROWS_AS(psd_loss(ad::constant(x), x, 0.72, Band{1e-6, 2e-6}), ConfigError);
}

TEST_CASE("psd loss gradients match finite differences", "[flow]") {
    Rng rng(10);
    ad::Value pred = ad::leaf(rng.gauss_matrix(16, 3));
    Matrix target = rng.gauss_matrix(16, 3);
    double err =
        max_fd_rel_err({pred}, [&] { return psd_loss(pred, target, 1.0, Band{0.05, 0.3}); });
    REQUIRE(err <= 1e-4);
}

TEST_CASE("euler integration is exact on constant fields", "[flow]") {
    Rng rng(11);
    Matrix x0 = rng.gauss_matrix(6, 4);
    Matrix x1 = rng.gauss_matrix(6, 4);
    Matrix field(6, 4);
    for (std::size_t i = 0; i < field.size(); ++i) field.data[i] = x1.data[i] - x0.data[i];

    for (std::size_t steps : {1ul, 10ul, 50ul}) {
        Matrix got = euler_integrate(x0, steps, [&](double, const Matrix&) { return field; });
        for (std::size_t i = 0; i < got.size(); ++i)
            REQUIRE(got.data[i] == Approx(x1.data[i]).margin(1e-10));
    }
}

TEST_CASE("one euler step is x0 plus the t=0 field", "[flow]") {
    Rng rng(12);
    Matrix x0 = rng.gauss_matrix(4, 3);
    auto field = [](double t, const Matrix& x) {
        Matrix v = x;
        for (double& val : v.data) val = std::sin(val) + t;
        return v;
    };
    Matrix got = euler_integrate(x0, 1, field);
    Matrix v0 = field(0.0, x0);
    for (std::size_t i = 0; i < got.size(); ++i)
        REQUIRE(got.data[i] == Approx(x0.data[i] + v0.data[i]).margin(1e-15));
}

TEST_CASE("euler error halves when steps double", "[flow]") {
    Rng rng(13);
    Matrix x0 = rng.gauss_matrix(4, 3);
    // Lipschitz contraction toward a fixed point
    Matrix target = rng.gauss_matrix(4, 3);
    auto field = [&](double, const Matrix& x) {
        Matrix v = x;
        for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = 1.5 * (target.data[i] - x.data[i]);
        return v;
    };
    auto diff = [](const Matrix& a, const Matrix& b) {
        double d = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
        return d;
    };
    Matrix e50 = euler_integrate(x0, 50, field);
    Matrix e100 = euler_integrate(x0, 100, field);
    Matrix e200 = euler_integrate(x0, 200, field);
    double d1 = diff(e50, e100);
    double d2 = diff(e100, e200);
    REQUIRE(d1 / d2 == Approx(2.0).epsilon(0.25));  // first-order convergence
}

TEST_CASE("non-finite states abort integration with the step index", "[flow]") {
    Matrix x0(2, 2, 1.0);
    auto field = [](double t, const Matrix& x) {
        Matrix v = x;
        if (t > 0.4) v.data[0] = std::numeric_limits<double>::infinity();
        return v;
    };
    try {
        euler_integrate(x0, 10, field);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        REQUIRE(std::string(e.what()).find("step 5") != std::string::npos);
    }
}

TEST_CASE("training reduces the loss on learnable synthetic data", "[flow]") {
    auto items = tiny_dataset(8, 21);
    io::RunConfig cfg = tiny_config();
    Model model = build_model(cfg, 6, 48, items[0].schedule.vocab);
    auto history = train(model, items);
    REQUIRE(history.size() == cfg.epochs);
    REQUIRE(history.back().total < history.front().total);
    for (const auto& h : history) {
        REQUIRE(h.fm >= 0.0);
        REQUIRE(h.fc >= 0.0);
        REQUIRE(h.psd >= 0.0);
        REQUIRE(h.total == Approx(h.fm + cfg.lambda_fc * h.fc + cfg.lambda_psd * h.psd)
                               .margin(1e-12));
    }
}

TEST_CASE("zero loss weights reduce the objective to flow matching", "[flow]") {
    auto items = tiny_dataset(4, 22);
    io::RunConfig cfg = tiny_config();
    cfg.epochs = 2;
    cfg.lambda_fc = 0.0;
    cfg.lambda_psd = 0.0;
    Model model = build_model(cfg, 6, 48, items[0].schedule.vocab);
    auto history = train(model, items);
    for (const auto& h : history) REQUIRE(h.total == Approx(h.fm).margin(1e-12));
}

TEST_CASE("training is deterministic for a fixed seed", "[flow]") {
    auto items = tiny_dataset(4, 23);
    io::RunConfig cfg = tiny_config();
    cfg.epochs = 2;

    Model a = build_model(cfg, 6, 48, items[0].schedule.vocab);
    auto ha = train(a, items);
    Model b = build_model(cfg, 6, 48, items[0].schedule.vocab);
    auto hb = train(b, items);

    REQUIRE(ha.size() == hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) REQUIRE(ha[i].total == hb[i].total);
    for (std::size_t p = 0; p < a.params.entries().size(); ++p)
        REQUIRE(a.params.entries()[p].value.m().data == b.params.entries()[p].value.m().data);
}

TEST_CASE("diverging training aborts with a named component", "[flow]") {
    auto items = tiny_dataset(4, 24);
    io::RunConfig cfg = tiny_config();
    cfg.lr = 1e14;
    cfg.epochs = 50;
    Model model = build_model(cfg, 6, 48, items[0].schedule.vocab);
    try {
        train(model, items);
        WARN("training survived lr=1e14; no abort to test");
    } catch (const NumericalError& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("epoch") != std::string::npos);
        bool names_component = msg.find("fm") != std::string::npos ||
                               msg.find("fc") != std::string::npos ||
                               msg.find("psd") != std::string::npos;
        REQUIRE(names_component);
    }
}

TEST_CASE("sampling is deterministic and reproducible", "[flow]") {
    auto items = tiny_dataset(4, 25);
    io::RunConfig cfg = tiny_config();
    cfg.epochs = 1;
    Model model = build_model(cfg, 6, 48, items[0].schedule.vocab);
    train(model, items);

    Rng r1(9), r2(9), r3(10);
    io::TimeSeries a = sample(model, items[0].rest, items[0].schedule, 10, r1);
    io::TimeSeries b = sample(model, items[0].rest, items[0].schedule, 10, r2);
    io::TimeSeries c = sample(model, items[0].rest, items[0].schedule, 10, r3);
    REQUIRE(a.data.data == b.data.data);
    REQUIRE(a.data.data != c.data.data);
    REQUIRE(a.data.rows == 48);
    REQUIRE(a.tr == items[0].rest.tr);
}

TEST_CASE("full-pipeline gradcheck passes on the micro model", "[flow]") {
    auto start = std::chrono::steady_clock::now();
    GradCheckReport report = gradcheck_pipeline(1.0, 0.1, 0);
    auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    INFO("max_rel_err=" << report.max_rel_err << " worst=" << report.worst_param
                        << " elapsed=" << elapsed << "s");
    REQUIRE(report.pass);
    REQUIRE(report.max_rel_err <= 1e-4);
    REQUIRE(elapsed < 60.0);

    // every parameter group is reported
    REQUIRE(report.groups.size() >= 30);
}

TEST_CASE("a corrupted backward rule is caught by the checker", "[flow]") {
    Rng rng(14);
    ad::Value x = ad::leaf(rng.gauss_matrix(2, 3));

    // identity forward whose backward inflates the gradient by 2%
    auto corrupt = [](const ad::Value& a) {
        auto node = std::make_shared<ad::Node>();
        node->val = a.m();
        node->parents = {a.n};
        node->needs_grad = true;
        node->op = "corrupt";
        ad::Node* self = node.get();
        ad::Node* parent = a.n.get();
        node->backprop = [self, parent] {
            auto& g = parent->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += 1.02 * self->grad.data[i];
        };
        return ad::Value(node);
    };

    double err = max_fd_rel_err({x}, [&] { return ad::sum(ad::square(corrupt(x))); });
    REQUIRE(err > 1e-4);
}
