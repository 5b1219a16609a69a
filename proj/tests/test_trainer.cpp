#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrco/trainer.hpp"

using namespace lrco;

namespace {

struct Setup {
    Benchmark bench;
    Dataset target_eval;
    TrainConfig config;
};

Setup setup(Method method, std::size_t steps = 40) {
    Setup s;
    BenchmarkSpec spec;
    spec.source_per_class = 30;
    spec.target_per_class = 30;
    s.bench = generate_shift_benchmark(spec);
    s.target_eval = s.bench.target.evaluation_set();
    s.config.method = method;
    s.config.model.input_dim = spec.input_dim;
    s.config.model.num_classes = spec.num_classes;
    s.config.model.hidden = {16};
    s.config.model.feature_dim = 8;
    s.config.labeled_batch = 16;
    s.config.unlabeled_batch = 32;
    s.config.total_steps = steps;
    s.config.eval_interval = 10;
    s.config.checkpoint_interval = 0;
    s.config.tau = 0.6;
    return s;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("lrco_trainer_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("source only has no target terms") {
    Setup s = setup(Method::source_only);
    Trainer tr(s.config, s.bench.source, s.bench.target);
    for (int i = 0; i < 10; ++i) {
        const StepReport r = tr.step();
        CHECK(r.terms.align == 0.0);
        CHECK(r.terms.fixmatch == 0.0);
        CHECK(r.terms.kld == 0.0);
        CHECK(r.terms.contrastive == 0.0);
        CHECK(r.terms.ce > 0.0);
    }
    CHECK(tr.bank().empty());
}

TEST_CASE("zero contrastive weight reproduces the strong baseline") {
    Setup base = setup(Method::strong);
    Trainer ref(base.config, base.bench.source, base.bench.target);
    for (int i = 0; i < 15; ++i) ref.step();
    for (Method m : {Method::lrco, Method::mixlrco}) {
        Setup s = setup(m);
        s.config.lambda_co = 0.0;
        Trainer tr(s.config, s.bench.source, s.bench.target);
        for (int i = 0; i < 15; ++i) tr.step();
        CHECK(tr.student() == ref.student());
        CHECK(tr.teacher().model == ref.teacher().model);
    }
}

TEST_CASE("one small step decreases the objective on its batch") {
    for (Method m : {Method::strong, Method::lrco, Method::mixlrco}) {
        Setup s = setup(m);
        s.config.lr = 1e-3;
        Trainer tr(s.config, s.bench.source, s.bench.target);
        for (int i = 0; i < 5; ++i) tr.step();
        const ModelState before = tr.student();
        tr.step();
        const ObjectiveWeights w = s.config.weights();
        const double f0 = evaluate_objective(before, tr.last_batch(), w).terms.total;
        const double f1 = evaluate_objective(tr.student(), tr.last_batch(), w).terms.total;
        CHECK(f1 < f0);
    }
}

TEST_CASE("teacher only moves through the EMA") {
    Setup s = setup(Method::mixlrco);
    s.config.ema_enabled = false;
    Trainer frozen(s.config, s.bench.source, s.bench.target);
    const ModelState t0 = frozen.teacher().model;
    for (int i = 0; i < 10; ++i) frozen.step();
    CHECK(frozen.teacher().model == t0);
    CHECK_FALSE(frozen.student() == t0);

    s.config.ema_enabled = true;
    Trainer tr(s.config, s.bench.source, s.bench.target);
    TeacherState shadow = tr.teacher();
    for (int i = 0; i < 10; ++i) {
        tr.step();
        ema_update(shadow, tr.student(), s.config.ema_decay);
        CHECK(shadow.model == tr.teacher().model);
    }
}

TEST_CASE("mix coefficients keep the target dominant") {
    Setup s = setup(Method::mixlrco);
    s.config.tau = 0.9;
    Trainer tr(s.config, s.bench.source, s.bench.target);
    std::size_t mixes = 0;
    for (int i = 0; i < 20; ++i) {
        const StepReport r = tr.step();
        CHECK(r.terms.n_high + r.terms.n_low == r.unlabeled);
        for (const MixItem& m : tr.last_batch().mixes) {
            CHECK(m.coefficient >= 0.5);
            CHECK_FALSE(tr.last_batch().unlabeled[m.target].pseudo.confident);
            ++mixes;
        }
    }
    CHECK(mixes > 0);
}

TEST_CASE("bank stores low-confidence teacher keys only") {
    Setup s = setup(Method::lrco);
    s.config.bank_capacity = 1000;
    Trainer tr(s.config, s.bench.source, s.bench.target);
    std::size_t low = 0;
    for (int i = 0; i < 10; ++i) low += tr.step().terms.n_low;
    CHECK(tr.bank().size() == low);
    const BankSnapshot snap = tr.bank().snapshot();
    for (const BankEntry& e : snap.entries()) {
        CHECK_FALSE(e.confident);
        CHECK(std::abs(norm(e.key) - 1.0) < 1e-9);
    }
}

TEST_CASE("evaluate examples") {
    ModelConfig c;
    c.input_dim = 2;
    c.hidden = {};
    c.feature_dim = 2;
    c.num_classes = 2;
    ModelState m(c);
    const auto& slot = m.layout().layers[0];
    m.params()[slot.weight_offset + 0] = 1.0;
    m.params()[slot.weight_offset + 3] = 1.0;
    m.classifier()[0] = 1.0;
    m.classifier()[3] = 1.0;
    Dataset d{2, 2, "-", {{{1, 0.1}, 0, Domain::source}, {{0.2, 1}, 1, Domain::source}, {{3, 0}, 0, Domain::source}}};
    const EvalMetrics perfect = evaluate(m, d);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.count == 3);

    // Zero weights plus a bias: every input maps to class 0.
    ModelState constant(c);
    constant.params()[constant.layout().layers[0].bias_offset] = 1.0;
    constant.classifier()[0] = 1.0;
    constant.classifier()[3] = 1.0;
    Dataset balanced{2, 2, "-", {}};
    for (int i = 0; i < 10; ++i) balanced.samples.push_back({{double(i), 1.0}, std::size_t(i % 2), Domain::target});
    const EvalMetrics e = evaluate(constant, balanced);
    CHECK(e.accuracy == 0.5);
    CHECK((e.per_class[0] + e.per_class[1]) / 2.0 == e.accuracy);
    CHECK_THROWS(evaluate(m, Dataset{2, 2, "-", {}}));
}

TEST_CASE("per-class accuracies average to the overall on a balanced set") {
    Setup s = setup(Method::strong, 30);
    const FitResult r = fit(s.config, {&s.bench.source, &s.bench.target, nullptr, &s.target_eval});
    const EvalMetrics e = evaluate(r.teacher.model, s.target_eval);
    double mean = 0.0;
    for (double a : e.per_class) mean += a;
    CHECK(mean / static_cast<double>(e.per_class.size()) == doctest::Approx(e.accuracy).epsilon(1e-12));
}

TEST_CASE("adjust_tau examples") {
    TauSchedule s;
    s.dynamic = true;
    CHECK(adjust_tau(0.7, 0.95, s) == 0.95);
    CHECK(adjust_tau(0.95, 0.95, s) == doctest::Approx(0.95 + s.step));
    CHECK(adjust_tau(0.95, 0.979, s) == 0.98);
    CHECK(adjust_tau(0.1, 0.931, s) == 0.93);
    TauSchedule fixed;
    CHECK(adjust_tau(0.99, 0.95, fixed) == 0.95);
    SeededRng rng(1);
    double tau = 0.95;
    for (int i = 0; i < 1000; ++i) {
        tau = adjust_tau(rng.uniform(), tau, s);
        CHECK_UNARY(tau >= 0.93 && tau <= 0.98);
    }
}

TEST_CASE("dynamic tau stays inside its bounds during training") {
    Setup s = setup(Method::lrco, 60);
    s.config.tau = 0.95;
    s.config.tau_schedule.dynamic = true;
    s.config.tau_schedule.window = 5;
    Trainer tr(s.config, s.bench.source, s.bench.target);
    for (int i = 0; i < 60; ++i) {
        tr.step();
        CHECK_UNARY(tr.tau() >= 0.93 && tr.tau() <= 0.98);
    }
}

TEST_CASE("fit with zero steps returns the initial model") {
    Setup s = setup(Method::mixlrco, 0);
    const FitResult r = fit(s.config, {&s.bench.source, &s.bench.target, &s.bench.source, &s.target_eval});
    CHECK(r.history.empty());
    Trainer fresh(s.config, s.bench.source, s.bench.target);
    CHECK(r.student == fresh.student());
    CHECK(r.final_checkpoint["trainer"]["step"] == 0);
}

TEST_CASE("identical runs write identical metric files") {
    const auto dir = temp_dir("determinism");
    Setup s = setup(Method::mixlrco);
    const FitData data{&s.bench.source, &s.bench.target, &s.bench.source, &s.target_eval};
    FitOptions a, b;
    a.metrics_path = (dir / "a.jsonl").string();
    b.metrics_path = (dir / "b.jsonl").string();
    a.config_hash = b.config_hash = "h";
    const FitResult ra = fit(s.config, data, a);
    const FitResult rb = fit(s.config, data, b);
    CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
    CHECK_FALSE(slurp(a.metrics_path).empty());
    CHECK(ra.final_checkpoint.dump() == rb.final_checkpoint.dump());

    s.config.execution = Execution::serial;
    FitOptions c;
    c.metrics_path = (dir / "c.jsonl").string();
    c.config_hash = "h";
    fit(s.config, data, c);
    CHECK(slurp(c.metrics_path) == slurp(a.metrics_path));
}

TEST_CASE("resume equals an uninterrupted run") {
    const auto dir = temp_dir("resume");
    for (Method m : {Method::strong, Method::lrco, Method::mixlrco}) {
        Setup s = setup(m, 40);
        s.config.tau_schedule.dynamic = true;
        s.config.tau_schedule.window = 7;
        s.config.tau = 0.95;
        const FitData data{&s.bench.source, &s.bench.target, &s.bench.source, &s.target_eval};
        FitOptions full;
        full.metrics_path = (dir / "full.jsonl").string();
        full.config_hash = "h";
        const FitResult whole = fit(s.config, data, full);

        FitOptions first;
        first.config_hash = "h";
        first.stop_after = 17;
        const FitResult part = fit(s.config, data, first);
        FitOptions second;
        second.metrics_path = (dir / "resumed.jsonl").string();
        second.config_hash = "h";
        second.resume = nlohmann::json::parse(part.final_checkpoint.dump());
        const FitResult resumed = fit(s.config, data, second);

        CHECK(resumed.final_checkpoint.dump() == whole.final_checkpoint.dump());
        CHECK(slurp(second.metrics_path) == slurp(full.metrics_path));
    }
}

TEST_CASE("periodic checkpoints are written") {
    const auto dir = temp_dir("ckpt");
    Setup s = setup(Method::lrco, 20);
    s.config.checkpoint_interval = 10;
    FitOptions o;
    o.checkpoint_dir = dir.string();
    o.config_hash = "h";
    fit(s.config, {&s.bench.source, &s.bench.target, nullptr, nullptr}, o);
    CHECK(std::filesystem::exists(dir / "ckpt_step10.json"));
    CHECK(std::filesystem::exists(dir / "ckpt_step20.json"));
}

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.tau = 1.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.alpha = 0.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.lambda_co = -1.0;
    CHECK_THROWS(c.validate());
    c = {};
    c.ema_decay = 1.0;
    CHECK_THROWS(c.validate());
    CHECK(parse_method("mixlrco") == Method::mixlrco);
    CHECK_THROWS(parse_method("moco"));
    CHECK(parse_feature_mode(feature_mode_name(FeatureMode::rerep_attached)) == FeatureMode::rerep_attached);
}

TEST_CASE("metric records carry hash and seed") {
    MetricRecord r;
    r.step = 5;
    r.split = "target";
    const nlohmann::json j = metric_to_json(r, "abc", 3);
    CHECK(j["config_hash"] == "abc");
    CHECK(j["seed"] == 3);
}

}  // TEST_SUITE
