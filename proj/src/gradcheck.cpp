#include "lrco/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "lrco/data.hpp"
#include "lrco/objective.hpp"
#include "lrco/trainer.hpp"

namespace lrco {

bool GradcheckReport::passed(double tolerance) const {
    if (detached_classifier_grad != 0.0) return false;
    return std::all_of(terms.begin(), terms.end(), [&](const GradcheckTerm& t) {
        return t.instances > 0 && t.max_rel_error < tolerance;
    });
}

namespace {

struct Instance {
    ModelState student;
    StepBatch batch;
};

struct TermSpec {
    const char* name;
    ObjectiveWeights weights;
};

ObjectiveWeights only(double ce, double align, double fm, double kld, ContrastiveKind kind, double co,
                      FeatureMode feature = FeatureMode::rerep_detached) {
    ObjectiveWeights w;
    w.ce = ce;
    w.align = align;
    w.fm = fm;
    w.kld = kld;
    w.contrastive = kind;
    w.co = co;
    w.t_co = 0.3;
    w.feature = feature;
    return w;
}

std::vector<TermSpec> term_specs() {
    using C = ContrastiveKind;
    return {
        {"ce", only(1, 0, 0, 0, C::none, 0)},
        {"align", only(0, 1, 0, 0, C::none, 0)},
        {"baseline", only(1, 0.1, 0, 0, C::none, 0)},
        {"fixmatch", only(0, 0, 1, 0, C::none, 0)},
        {"kld", only(0, 0, 0, 1, C::none, 0)},
        {"naive_contrastive", only(0, 0, 0, 0, C::lrco, 1, FeatureMode::raw)},
        {"lrco", only(0, 0, 0, 0, C::lrco, 1)},
        {"lrco_attached", only(0, 0, 0, 0, C::lrco, 1, FeatureMode::rerep_attached)},
        {"mixlrco", only(0, 0, 0, 0, C::mixlrco, 1)},
        {"total_strong", only(1, 0.1, 1, 0.1, C::none, 0)},
        {"total_lrco", only(1, 0.1, 1, 0.1, C::lrco, 0.5)},
        {"total_mixlrco", only(1, 0.1, 1, 0.1, C::mixlrco, 0.5)},
    };
}

Vector random_vector(std::size_t n, SeededRng& rng) {
    Vector v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

Instance make_instance(std::size_t k, std::size_t fd, SeededRng& rng) {
    ModelConfig mc;
    mc.input_dim = 3;
    mc.hidden = {4};
    mc.feature_dim = fd;
    mc.num_classes = k;
    // Milder than the training temperatures so the log clamp stays inactive.
    mc.t_ce = 0.1;
    mc.t_re = 0.1;
    SeededRng init = rng.derive("init");
    ModelState student = init_model(mc, init);
    TeacherState teacher{student};
    for (double& p : teacher.model.params()) p += 0.05 * rng.normal();

    std::vector<Sample> labeled;
    for (std::size_t i = 0; i < 4; ++i) {
        labeled.push_back({random_vector(mc.input_dim, rng), i % k, Domain::source});
    }
    std::vector<Vector> unlabeled;
    for (std::size_t i = 0; i < 6; ++i) unlabeled.push_back(random_vector(mc.input_dim, rng));

    // Threshold at the median teacher confidence so both groups are populated.
    const ClassifierView tview = ClassifierView::of(teacher.model);
    std::vector<double> conf;
    for (const Vector& x : unlabeled) {
        const Vector p = classify_traced(tview, forward_features(teacher.model, x), mc.t_ce).probs;
        conf.push_back(p[argmax(p)]);
    }
    std::sort(conf.begin(), conf.end());
    const double tau = 0.5 * (conf[2] + conf[3]);

    MemoryBank bank(8);
    std::vector<BankEntry> entries;
    for (std::size_t i = 0; i < 6; ++i) {
        entries.push_back({l2_normalize(random_vector(fd, rng)), i % k, i % 2 == 0});
    }
    bank.push_batch(entries);

    TrainConfig tc;
    tc.method = Method::mixlrco;
    tc.model = mc;
    tc.augment.weak_noise = 0.0;
    tc.augment.strong_noise = 0.3;
    tc.augment.mask_prob = 0.0;  // a fully masked 3-d input has a zero feature
    tc.ablation.negatives = SampleGroup::all;
    tc.ablation.mix_targets = SampleGroup::all;
    StepInputs inputs;
    for (const Sample& s : labeled) inputs.labeled.push_back(&s);
    for (const Vector& x : unlabeled) inputs.unlabeled.push_back(&x);
    SeededRng aug = rng.derive("augment");
    SeededRng mix = rng.derive("mix");
    StepBatch batch = prepare_step(tc, teacher, bank, inputs, tau, aug, mix);
    // One batch serves both contrastive kinds: every unlabeled item is a query too.
    for (UnlabeledItem& u : batch.unlabeled) u.query = true;
    return {std::move(student), std::move(batch)};
}

double check_term(const Instance& inst, const ObjectiveWeights& w, double h, double& detached_w) {
    const ObjectiveResult analytic = evaluate_objective(inst.student, inst.batch, w, Execution::serial);
    const ClassifierView frozen = ClassifierView::of(inst.student);
    ModelState probe = inst.student;
    const auto f = [&](std::span<const double> p) {
        std::copy(p.begin(), p.end(), probe.params().begin());
        return objective_reference(probe, inst.batch, w, &frozen).total;
    };
    const Vector numeric = finite_diff_grad(f, inst.student.params(), h);
    const bool contrastive_only = w.ce == 0.0 && w.align == 0.0 && w.fm == 0.0 && w.kld == 0.0;
    if (contrastive_only && w.feature != FeatureMode::rerep_attached) {
        for (double g : analytic.grad.classifier_block()) detached_w = std::max(detached_w, std::abs(g));
    }
    return relative_error(analytic.grad.values(), numeric);
}

// Re-representation composed with the extractor, classifier attached:
// L = sum_i v_i . r(F(x_i)).
double check_rerep(std::size_t k, std::size_t fd, SeededRng& rng, double h) {
    ModelConfig mc;
    mc.input_dim = 3;
    mc.hidden = {4};
    mc.feature_dim = fd;
    mc.num_classes = k;
    mc.t_ce = 0.1;
    mc.t_re = 0.1;
    SeededRng init = rng.derive("init");
    const ModelState m = init_model(mc, init);
    std::vector<Vector> xs, vs;
    for (int i = 0; i < 3; ++i) {
        xs.push_back(random_vector(mc.input_dim, rng));
        vs.push_back(random_vector(fd, rng));
    }
    GradientTape tape(m.layout());
    const ClassifierView view = ClassifierView::of(m);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const FeatureTrace ft = forward_features_traced(m, xs[i]);
        const ReRepTrace rt = re_represent_traced(view, ft.output, mc.t_re);
        const Vector df = re_represent_backward(view, rt, vs[i], mc.t_re, &tape);
        backward_features(m, ft, df, tape);
    }
    ModelState probe = m;
    const auto f = [&](std::span<const double> p) {
        std::copy(p.begin(), p.end(), probe.params().begin());
        const ClassifierView v = ClassifierView::of(probe);
        double total = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            total += dot(vs[i], re_represent(v, forward_features(probe, xs[i]), mc.t_re));
        }
        return total;
    };
    return relative_error(tape.values(), finite_diff_grad(f, m.params(), h));
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<TermSpec> specs = term_specs();
    GradcheckReport report;
    for (const TermSpec& s : specs) report.terms.push_back({s.name, 0.0, 0});
    report.terms.push_back({"rerep_composed", 0.0, 0});

    SeededRng root(options.seed);
    std::size_t index = 0;
    for (std::size_t k : {2u, 5u}) {
        for (std::size_t fd : {3u, 8u}) {
            for (std::size_t rep = 0; rep < options.instances_per_shape; ++rep, ++index) {
                SeededRng rng = root.derive(index);
                const Instance inst = make_instance(k, fd, rng);
                for (std::size_t t = 0; t < specs.size(); ++t) {
                    const double e = check_term(inst, specs[t].weights, options.h, report.detached_classifier_grad);
                    report.terms[t].max_rel_error = std::max(report.terms[t].max_rel_error, e);
                    report.terms[t].instances += 1;
                }
                SeededRng rr = rng.derive("rerep");
                GradcheckTerm& rt = report.terms.back();
                rt.max_rel_error = std::max(rt.max_rel_error, check_rerep(k, fd, rr, options.h));
                rt.instances += 1;
            }
        }
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace lrco
