#include <doctest.h>

#include <cmath>

#include "lrco/model.hpp"

using namespace lrco;

namespace {

ModelConfig small(std::size_t k = 3, std::size_t fd = 4) {
    ModelConfig c;
    c.input_dim = 3;
    c.hidden = {5};
    c.feature_dim = fd;
    c.num_classes = k;
    c.t_ce = 0.1;
    c.t_re = 0.1;
    return c;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("init is deterministic and counts parameters") {
    SeededRng a(1), b(1);
    CHECK(init_model(small(), a) == init_model(small(), b));

    ModelConfig lin = small(4, 6);
    lin.hidden = {};
    SeededRng r(0);
    const ModelState m = init_model(lin, r);
    CHECK(m.params().size() == lin.input_dim * lin.feature_dim + lin.feature_dim + lin.num_classes * lin.feature_dim);
}

TEST_CASE("init weights are centered Glorot uniform") {
    ModelConfig c = small(5, 100);
    c.input_dim = 100;
    c.hidden = {};
    SeededRng r(4);
    const ModelState m = init_model(c, r);
    const auto& slot = m.layout().layers[0];
    const double bound = std::sqrt(6.0 / 200.0);
    double mean = 0.0;
    for (std::size_t i = 0; i < slot.in * slot.out; ++i) {
        const double w = m.params()[slot.weight_offset + i];
        CHECK(std::abs(w) <= bound);
        mean += w;
    }
    mean /= 10000.0;
    const double sigma = bound / std::sqrt(3.0);
    CHECK(std::abs(mean) < 3.0 * sigma / 100.0);
    for (std::size_t i = 0; i < slot.out; ++i) CHECK(m.params()[slot.bias_offset + i] == 0.0);
}

TEST_CASE("forward examples") {
    ModelConfig c = small(2, 3);
    c.hidden = {};
    ModelState zero(c);
    CHECK(forward_features(zero, Vector{1, 2, 3}) == Vector{0, 0, 0});

    ModelState ident(c);
    const auto& slot = ident.layout().layers[0];
    for (std::size_t i = 0; i < 3; ++i) ident.params()[slot.weight_offset + i * 3 + i] = 1.0;
    CHECK(forward_features(ident, Vector{0.5, -2, 7}) == Vector{0.5, -2, 7});

    SeededRng r(6);
    const ModelState m = init_model(small(), r);
    CHECK(forward_features(m, Vector{0.1, 0.2, 0.3}) == forward_features(m, Vector{0.1, 0.2, 0.3}));
    CHECK_THROWS_AS(forward_features(m, Vector{1, 2}), ShapeError);
}

TEST_CASE("classify_probs examples") {
    ModelConfig c = small(2, 3);
    c.t_ce = 1.0;
    ModelState m(c);
    auto w = m.classifier();
    w[0] = 2.0;  // row 0 = 2 e1
    w[4] = 5.0;  // row 1 = 5 e2
    const Vector p = classify_probs(m, Vector{3, 0, 0});
    CHECK(std::abs(p[0] - 0.731058578630004879) < 1e-15);
    const Vector q = classify_probs(m, Vector{0, 0, 4});
    CHECK(q[0] == doctest::Approx(0.5));
    CHECK_THROWS_AS(classify_probs(m, Vector{0, 0, 0}), NumericError);
}

TEST_CASE("classify_probs scale invariance") {
    SeededRng r(13);
    ModelState m = init_model(small(5, 6), r);
    for (int trial = 0; trial < 20; ++trial) {
        Vector f(6);
        for (double& x : f) x = r.normal();
        const Vector p = classify_probs(m, f);
        const Vector ps = classify_probs(m, scaled(f, r.uniform(0.01, 100.0)));
        ModelState m2 = m;
        for (std::size_t k = 0; k < 5; ++k) {
            const double s = r.uniform(0.1, 10.0);
            for (std::size_t j = 0; j < 6; ++j) m2.classifier()[k * 6 + j] *= s;
        }
        const Vector pr = classify_probs(m2, f);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(std::abs(ps[i] - p[i]) < 1e-12);
            CHECK(std::abs(pr[i] - p[i]) < 1e-12);
        }
    }
}

TEST_CASE("feature and classifier backward match finite differences") {
    SeededRng r(17);
    for (std::size_t k : {2u, 5u}) {
        for (std::size_t fd : {3u, 8u}) {
            const ModelState m = init_model(small(k, fd), r);
            Vector x(3), dz(k);
            for (double& v : x) v = r.normal();
            for (double& v : dz) v = r.normal();
            GradientTape tape(m.layout());
            const ClassifierView view = ClassifierView::of(m);
            const FeatureTrace ft = forward_features_traced(m, x);
            const ClassifierTrace ct = classify_traced(view, ft.output, m.config().t_ce);
            const Vector df = classifier_backward(view, ct, dz, &tape);
            backward_features(m, ft, df, tape);
            ModelState probe = m;
            const auto f = [&](std::span<const double> p) {
                std::copy(p.begin(), p.end(), probe.params().begin());
                const ClassifierView v = ClassifierView::of(probe);
                return dot(dz, v.cosines(l2_normalize(forward_features(probe, x))));
            };
            CHECK(relative_error(tape.values(), finite_diff_grad(f, m.params())) < 1e-6);
        }
    }
}

TEST_CASE("constant loss leaves a zero tape") {
    SeededRng r(1);
    const ModelState m = init_model(small(), r);
    GradientTape tape(m.layout());
    const FeatureTrace ft = forward_features_traced(m, Vector{1, 2, 3});
    backward_features(m, ft, Vector(4, 0.0), tape);
    for (double g : tape.values()) CHECK(g == 0.0);
}

TEST_CASE("ema examples") {
    SeededRng r(2);
    const ModelState s = init_model(small(), r);
    TeacherState same{s};
    ema_update(same, s, 0.99);
    CHECK(same.model == s);

    ModelState one = s;
    for (double& p : one.params()) p = 1.0;
    TeacherState t{s};
    for (double& p : t.model.params()) p = 0.0;
    ema_update(t, one, 0.99);
    for (double p : t.model.params()) CHECK(std::abs(p - 0.01) < 1e-15);

    CHECK_THROWS(ema_update(t, one, 1.0));
    CHECK_THROWS(ema_update(t, one, -0.1));
    SeededRng r2(3);
    const ModelState other = init_model(small(4, 4), r2);
    CHECK_THROWS(ema_update(t, other, 0.5));
}

TEST_CASE("ema geometric decay") {
    SeededRng r(4);
    const ModelState s = init_model(small(), r);
    TeacherState t{init_model(small(), r)};
    Vector gap0(s.params().size());
    for (std::size_t i = 0; i < gap0.size(); ++i) gap0[i] = std::abs(t.model.params()[i] - s.params()[i]);
    for (int n = 1; n <= 500; ++n) {
        ema_update(t, s, 0.99);
        if (n % 50 != 0) continue;
        const double factor = std::pow(0.99, n);
        for (std::size_t i = 0; i < gap0.size(); ++i) {
            CHECK(std::abs(std::abs(t.model.params()[i] - s.params()[i]) - factor * gap0[i]) < 1e-10);
        }
    }
}

TEST_CASE("model json round trip is bit exact") {
    SeededRng r(5);
    const ModelState m = init_model(small(5, 8), r);
    const ModelState back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
    CHECK(back == m);
}

TEST_CASE("config validation") {
    ModelConfig c = small();
    c.num_classes = 1;
    CHECK_THROWS(c.validate());
    c = small();
    c.feature_dim = 1;
    CHECK_THROWS(c.validate());
    c = small();
    c.t_ce = 0.0;
    CHECK_THROWS(c.validate());
    c = small();
    c.t_re = -1.0;
    CHECK_THROWS(c.validate());
}

}  // TEST_SUITE
