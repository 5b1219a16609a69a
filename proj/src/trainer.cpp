#include "lrco/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace lrco {

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<const char*, E> (&table)[N], const char* what) {
    for (const auto& [name, value] : table) {
        if (s == name) return value;
    }
    throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

template <typename E, std::size_t N>
const char* enum_name(E v, const std::pair<const char*, E> (&table)[N]) {
    for (const auto& [name, value] : table) {
        if (v == value) return name;
    }
    return "?";
}

constexpr std::pair<const char*, Method> kMethods[] = {
    {"source_only", Method::source_only}, {"baseline", Method::baseline}, {"strong", Method::strong},
    {"lrco", Method::lrco},               {"mixlrco", Method::mixlrco},
};
constexpr std::pair<const char*, SampleGroup> kGroups[] = {
    {"low", SampleGroup::low}, {"high", SampleGroup::high}, {"all", SampleGroup::all}};
constexpr std::pair<const char*, FeatureMode> kFeatureModes[] = {
    {"rerep", FeatureMode::rerep_detached}, {"raw", FeatureMode::raw}, {"rerep_attached", FeatureMode::rerep_attached}};

bool in_group(SampleGroup g, bool confident) {
    switch (g) {
        case SampleGroup::low: return !confident;
        case SampleGroup::high: return confident;
        case SampleGroup::all: return true;
    }
    return false;
}

}  // namespace

const char* method_name(Method m) { return enum_name(m, kMethods); }
Method parse_method(const std::string& s) { return parse_enum(s, kMethods, "method"); }
const char* group_name(SampleGroup g) { return enum_name(g, kGroups); }
SampleGroup parse_group(const std::string& s) { return parse_enum(s, kGroups, "sample group"); }
const char* feature_mode_name(FeatureMode m) { return enum_name(m, kFeatureModes); }
FeatureMode parse_feature_mode(const std::string& s) { return parse_enum(s, kFeatureModes, "feature mode"); }

void TrainConfig::validate() const {
    model.validate();
    augment.validate();
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0,1)");
    if (!(t_co > 0.0)) throw std::invalid_argument("t_co must be positive");
    if (bank_capacity < 1) throw std::invalid_argument("bank_capacity must be >= 1");
    if (lambda_co < 0.0 || lambda_kld < 0.0 || lambda_align < 0.0) {
        throw std::invalid_argument("loss weights must be non-negative");
    }
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("ema_decay must lie in [0,1)");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
    if (labeled_batch < 1 || unlabeled_batch < 1) throw std::invalid_argument("batch sizes must be >= 1");
    if (eval_interval < 1) throw std::invalid_argument("eval_interval must be >= 1");
    if (tau_schedule.dynamic) {
        const auto& s = tau_schedule;
        if (!(s.band_lo <= s.band_hi) || !(s.min <= s.max) || !(s.min > 0.0 && s.max < 1.0) || s.window < 1) {
            throw std::invalid_argument("invalid dynamic tau schedule");
        }
    }
}

ObjectiveWeights TrainConfig::weights() const {
    ObjectiveWeights w;
    w.ce = 1.0;
    w.t_co = t_co;
    w.feature = ablation.feature;
    if (method == Method::source_only) return w;
    w.align = lambda_align;
    if (method == Method::baseline) return w;
    w.fm = 1.0;
    w.kld = lambda_kld;
    if (method == Method::strong || lambda_co == 0.0) return w;
    w.contrastive = method == Method::lrco ? ContrastiveKind::lrco : ContrastiveKind::mixlrco;
    w.co = lambda_co;
    return w;
}

EvalMetrics evaluate(const ModelState& m, const Dataset& labeled) {
    if (labeled.empty()) throw std::invalid_argument("evaluate: empty set");
    const std::size_t k = m.config().num_classes;
    const ClassifierView view = ClassifierView::of(m);
    std::vector<std::size_t> hits(k, 0), totals(k, 0);
    EvalMetrics out;
    std::size_t correct = 0;
    double conf = 0.0;
    for (const Sample& s : labeled.samples) {
        if (!s.label) throw std::invalid_argument("evaluate: unlabeled sample");
        const Vector p = classify_traced(view, forward_features(m, s.x), m.config().t_ce).probs;
        const std::size_t pred = argmax(p);
        conf += p[pred];
        totals.at(*s.label) += 1;
        if (pred == *s.label) {
            ++correct;
            hits[*s.label] += 1;
        }
    }
    out.count = labeled.size();
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.count);
    out.mean_confidence = conf / static_cast<double>(out.count);
    out.per_class.resize(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        if (totals[c] > 0) out.per_class[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
    }
    return out;
}

double adjust_tau(double high_fraction, double tau, const TauSchedule& schedule) {
    if (!schedule.dynamic) return tau;
    if (high_fraction > schedule.band_hi) {
        tau += schedule.step;
    } else if (high_fraction < schedule.band_lo) {
        tau -= schedule.step;
    }
    return std::clamp(tau, schedule.min, schedule.max);
}

StepBatch prepare_step(const TrainConfig& config, const TeacherState& teacher, const MemoryBank& bank,
                       const StepInputs& inputs, double tau, SeededRng& augment_rng, SeededRng& mix_rng) {
    const ModelState& tm = teacher.model;
    const ClassifierView tview = ClassifierView::of(tm);
    const double t_ce = tm.config().t_ce;
    const double t_re = tm.config().t_re;
    const ObjectiveWeights w = config.weights();
    const bool needs_keys = w.contrastive != ContrastiveKind::none;

    StepBatch batch;
    for (const Sample* s : inputs.labeled) {
        batch.labeled.push_back({weak_augment(s->x, config.augment, augment_rng), s->label.value()});
    }
    for (const Vector* x : inputs.unlabeled) {
        UnlabeledItem item;
        const Vector weak = weak_augment(*x, config.augment, augment_rng);
        item.x_strong = strong_augment(*x, config.augment, augment_rng);
        const Vector tf = forward_features(tm, weak);
        item.pseudo = make_pseudo_label(classify_traced(tview, tf, t_ce).probs, tau);
        if (needs_keys) item.key = contrastive_key(tview, tf, config.ablation.feature, t_re);
        item.query = w.contrastive == ContrastiveKind::lrco && in_group(config.ablation.positives, item.pseudo.confident);
        batch.unlabeled.push_back(std::move(item));
    }

    if (w.contrastive == ContrastiveKind::mixlrco) {
        std::vector<std::size_t> sources;
        for (std::size_t i = 0; i < inputs.labeled.size(); ++i) {
            if (inputs.labeled[i]->domain == Domain::source) sources.push_back(i);
        }
        for (std::size_t i = 0; i < batch.unlabeled.size() && !sources.empty(); ++i) {
            if (!in_group(config.ablation.mix_targets, batch.unlabeled[i].pseudo.confident)) continue;
            const std::size_t j = sources[mix_rng.uniform_index(sources.size())];
            const MixDraw draw = draw_mix(config.alpha, mix_rng);
            const double coefficient = config.ablation.mix_dominant ? draw.lambda_prime : draw.lambda;
            const Vector xs1 = strong_augment(inputs.labeled[j]->x, config.augment, mix_rng);
            const Vector ks = contrastive_key(tview, forward_features(tm, batch.labeled[j].x),
                                              config.ablation.feature, t_re);
            const UnlabeledItem& u = batch.unlabeled[i];
            MixPair pair = build_mix_pair(u.x_strong, xs1, u.key, ks, coefficient);
            batch.mixes.push_back({i, std::move(pair.x_mix), std::move(pair.key_mix), u.key, ks, coefficient});
        }
    }

    if (needs_keys) batch.bank = bank.snapshot();
    batch.negatives_low = config.ablation.negatives != SampleGroup::high;
    batch.negatives_high = config.ablation.negatives != SampleGroup::low;
    return batch;
}

Trainer::Trainer(TrainConfig config, const Dataset& labeled, const UnlabeledSet& target)
    : config_(std::move(config)),
      labeled_(&labeled),
      target_(&target),
      root_(config_.seed),
      bank_(config_.bank_capacity),
      tau_(config_.tau),
      labeled_it_(labeled.size(), config_.labeled_batch, root_.derive("shuffle-labeled")),
      unlabeled_it_(target.size(), config_.unlabeled_batch, root_.derive("shuffle-unlabeled")) {
    config_.validate();
    for (const Sample& s : labeled.samples) {
        if (!s.label) throw std::invalid_argument("trainer: labeled set contains an unlabeled sample");
        if (s.x.size() != config_.model.input_dim) throw ShapeError("trainer: labeled input dimension mismatch");
    }
    if (target.input_dim() != config_.model.input_dim) throw ShapeError("trainer: target input dimension mismatch");
    SeededRng init_rng = root_.derive("init");
    student_ = init_model(config_.model, init_rng);
    teacher_.model = student_;
    velocity_.assign(student_.params().size(), 0.0);
    if (config_.tau_schedule.dynamic) tau_ = std::clamp(tau_, config_.tau_schedule.min, config_.tau_schedule.max);
}

const ModelState& Trainer::eval_model() const {
    return config_.eval_model == EvalModel::teacher ? teacher_.model : student_;
}

StepInputs Trainer::gather() {
    StepInputs in;
    for (std::size_t i : labeled_it_.next()) in.labeled.push_back(&labeled_->samples[i]);
    for (std::size_t i : unlabeled_it_.next()) in.unlabeled.push_back(&target_->input(i));
    return in;
}

StepReport Trainer::step() {
    const StepInputs inputs = gather();
    SeededRng augment_rng = root_.derive("augment").derive(static_cast<std::uint64_t>(step_));
    SeededRng mix_rng = root_.derive("mixup").derive(static_cast<std::uint64_t>(step_));
    last_batch_ = prepare_step(config_, teacher_, bank_, inputs, tau_, augment_rng, mix_rng);

    const ObjectiveWeights w = config_.weights();
    const ObjectiveResult res = evaluate_objective(student_, last_batch_, w, config_.execution);
    if (!std::isfinite(res.terms.total) || !all_finite(res.grad.values())) {
        throw TrainingError("non-finite objective at step " + std::to_string(step_) +
                            ": total=" + std::to_string(res.terms.total) + " ce=" + std::to_string(res.terms.ce) +
                            " fm=" + std::to_string(res.terms.fixmatch) +
                            " co=" + std::to_string(res.terms.contrastive));
    }

    auto params = student_.params();
    auto g = res.grad.values();
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity_[i] = config_.momentum * velocity_[i] + g[i];
        params[i] -= config_.lr * velocity_[i];
    }
    if (config_.ema_enabled) ema_update(teacher_, student_, config_.ema_decay);

    if (w.contrastive != ContrastiveKind::none) {
        std::vector<BankEntry> push;
        for (const UnlabeledItem& u : last_batch_.unlabeled) {
            if (in_group(config_.ablation.negatives, u.pseudo.confident)) {
                push.push_back({u.key, u.pseudo.label, u.pseudo.confident});
            }
        }
        bank_.push_batch(std::span<const BankEntry>(push));
    }

    StepReport report;
    report.step = step_;
    report.terms = res.terms;
    report.unlabeled = last_batch_.unlabeled.size();
    report.bank_size = bank_.size();
    report.tau = tau_;

    if (config_.tau_schedule.dynamic && report.unlabeled > 0) {
        high_fractions_.push_back(static_cast<double>(res.terms.n_high) / static_cast<double>(report.unlabeled));
        if (high_fractions_.size() >= config_.tau_schedule.window) {
            double mean = 0.0;
            for (double f : high_fractions_) mean += f;
            mean /= static_cast<double>(high_fractions_.size());
            tau_ = adjust_tau(mean, tau_, config_.tau_schedule);
            high_fractions_.clear();
        }
    }
    ++step_;
    return report;
}

StepReport train_step(Trainer& trainer) { return trainer.step(); }

nlohmann::json Trainer::checkpoint() const {
    return {
        {"step", step_},
        {"tau", tau_},
        {"seed", config_.seed},
        {"rng", root_.state()},
        {"student", model_to_json(student_)},
        {"teacher", model_to_json(teacher_.model)},
        {"velocity", velocity_},
        {"bank", bank_to_json(bank_)},
        {"labeled_cursor", {labeled_it_.epoch(), labeled_it_.position()}},
        {"unlabeled_cursor", {unlabeled_it_.epoch(), unlabeled_it_.position()}},
        {"high_fractions", std::vector<double>(high_fractions_.begin(), high_fractions_.end())},
    };
}

void Trainer::restore(const nlohmann::json& j) {
    ModelState student = model_from_json(j.at("student"));
    ModelState teacher = model_from_json(j.at("teacher"));
    if (!(student.layout() == student_.layout()) || !(teacher.layout() == student_.layout())) {
        throw ShapeError("checkpoint: model shape does not match config");
    }
    Vector velocity = j.at("velocity").get<Vector>();
    if (velocity.size() != velocity_.size()) throw ShapeError("checkpoint: optimizer state size mismatch");
    student_ = std::move(student);
    teacher_.model = std::move(teacher);
    velocity_ = std::move(velocity);
    bank_ = bank_from_json(j.at("bank"));
    step_ = j.at("step").get<std::size_t>();
    tau_ = j.at("tau").get<double>();
    root_.restore(j.at("rng").get<std::string>());
    const auto lc = j.at("labeled_cursor");
    labeled_it_.seek(lc.at(0).get<std::size_t>(), lc.at(1).get<std::size_t>());
    const auto uc = j.at("unlabeled_cursor");
    unlabeled_it_.seek(uc.at(0).get<std::size_t>(), uc.at(1).get<std::size_t>());
    const auto hf = j.at("high_fractions").get<std::vector<double>>();
    high_fractions_.assign(hf.begin(), hf.end());
}

nlohmann::json metric_to_json(const MetricRecord& r, const std::string& config_hash, std::uint64_t seed) {
    return {
        {"config_hash", config_hash},
        {"seed", seed},
        {"step", r.step},
        {"split", r.split},
        {"accuracy", r.metrics.accuracy},
        {"per_class", r.metrics.per_class},
        {"mean_confidence", r.metrics.mean_confidence},
        {"tau", r.tau},
        {"loss",
         {{"ce", r.terms.ce},
          {"align", r.terms.align},
          {"fixmatch", r.terms.fixmatch},
          {"kld", r.terms.kld},
          {"contrastive", r.terms.contrastive},
          {"total", r.terms.total}}},
        {"n_high", r.terms.n_high},
        {"n_low", r.terms.n_low},
    };
}

namespace {

MetricRecord metric_from_json(const nlohmann::json& j) {
    MetricRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.split = j.at("split").get<std::string>();
    r.metrics.accuracy = j.at("accuracy").get<double>();
    r.metrics.per_class = j.at("per_class").get<std::vector<double>>();
    r.metrics.mean_confidence = j.at("mean_confidence").get<double>();
    r.tau = j.at("tau").get<double>();
    const auto& l = j.at("loss");
    r.terms.ce = l.at("ce").get<double>();
    r.terms.align = l.at("align").get<double>();
    r.terms.fixmatch = l.at("fixmatch").get<double>();
    r.terms.kld = l.at("kld").get<double>();
    r.terms.contrastive = l.at("contrastive").get<double>();
    r.terms.total = l.at("total").get<double>();
    r.terms.n_high = j.at("n_high").get<std::size_t>();
    r.terms.n_low = j.at("n_low").get<std::size_t>();
    return r;
}

nlohmann::json full_checkpoint(const Trainer& tr, const std::vector<MetricRecord>& history, const std::string& hash) {
    nlohmann::json h = nlohmann::json::array();
    for (const MetricRecord& r : history) h.push_back(metric_to_json(r, hash, tr.config().seed));
    return {{"format", "lrco-checkpoint-1"}, {"config_hash", hash}, {"trainer", tr.checkpoint()}, {"history", h}};
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << j.dump() << '\n';
}

}  // namespace

FitResult fit(const TrainConfig& config, const FitData& data, const FitOptions& options) {
    if (data.labeled == nullptr || data.target == nullptr) throw std::invalid_argument("fit: missing datasets");
    Trainer tr(config, *data.labeled, *data.target);
    std::vector<MetricRecord> history;
    if (options.resume) {
        tr.restore(options.resume->at("trainer"));
        for (const auto& r : options.resume->at("history")) history.push_back(metric_from_json(r));
    }

    std::ofstream metrics_out;
    if (!options.metrics_path.empty()) {
        metrics_out.open(options.metrics_path, std::ios::binary | std::ios::trunc);
        if (!metrics_out) throw std::runtime_error("cannot open '" + options.metrics_path + "' for writing");
        for (const MetricRecord& r : history) metrics_out << metric_to_json(r, options.config_hash, config.seed).dump() << '\n';
    }

    auto record = [&](const ObjectiveTerms& terms) {
        const std::pair<const char*, const Dataset*> splits[] = {{"source", data.source_eval},
                                                                  {"target", data.target_eval}};
        for (const auto& [name, set] : splits) {
            if (set == nullptr || set->empty()) continue;
            MetricRecord r{tr.step_index(), name, evaluate(tr.eval_model(), *set), terms, tr.tau()};
            if (metrics_out.is_open()) metrics_out << metric_to_json(r, options.config_hash, config.seed).dump() << '\n';
            history.push_back(std::move(r));
        }
    };

    const std::size_t stop = options.stop_after > 0 ? std::min(options.stop_after, config.total_steps) : config.total_steps;
    while (tr.step_index() < stop) {
        const StepReport rep = tr.step();
        const std::size_t done = tr.step_index();
        if (done % config.eval_interval == 0 || done == config.total_steps) record(rep.terms);
        if (config.checkpoint_interval > 0 && !options.checkpoint_dir.empty() && done % config.checkpoint_interval == 0) {
            write_json_file(std::filesystem::path(options.checkpoint_dir) / ("ckpt_step" + std::to_string(done) + ".json"),
                            full_checkpoint(tr, history, options.config_hash));
        }
    }

    FitResult result{tr.student(), tr.teacher(), std::move(history), {}};
    result.final_checkpoint = full_checkpoint(tr, result.history, options.config_hash);
    return result;
}

}  // namespace lrco
