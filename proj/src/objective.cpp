#include "lrco/objective.hpp"

#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lrco {

namespace {

bool entry_allowed(const StepBatch& batch, const BankEntry& e, const PseudoLabel& query) {
    if (e.confident ? !batch.negatives_high : !batch.negatives_low) return false;
    return !(query.confident && e.confident && e.pseudo_label == query.label);
}

struct Scales {
    double ce = 0.0;
    double align = 0.0;
    double fixmatch = 0.0;
    double kld = 0.0;
    double co = 0.0;
    bool contrastive_on = false;
};

Scales scales_for(const StepBatch& batch, const ObjectiveWeights& w, ObjectiveTerms& counts) {
    for (const UnlabeledItem& u : batch.unlabeled) {
        (u.pseudo.confident ? counts.n_high : counts.n_low) += 1;
    }
    Scales s;
    if (w.ce != 0.0 && !batch.labeled.empty()) s.ce = 1.0 / static_cast<double>(batch.labeled.size());
    const std::size_t n_align = batch.labeled.size() + batch.unlabeled.size();
    if (w.align != 0.0 && n_align > 0) s.align = 1.0 / static_cast<double>(n_align);
    if ((w.fm != 0.0 || w.kld != 0.0) && counts.n_high > 0) {
        s.fixmatch = 1.0 / static_cast<double>(counts.n_high);
        s.kld = s.fixmatch;
    }
    if (w.contrastive != ContrastiveKind::none && !batch.bank.empty()) {
        std::size_t n = 0;
        if (w.contrastive == ContrastiveKind::lrco) {
            for (const UnlabeledItem& u : batch.unlabeled) n += u.query ? 1 : 0;
        } else {
            n = batch.mixes.size();
        }
        counts.n_queries = n;
        if (n > 0) {
            s.co = 1.0 / static_cast<double>(n);
            s.contrastive_on = true;
        }
    }
    return s;
}

// Per-item unweighted-sum contributions; each already carries its mean scale.
struct ItemLoss {
    double ce = 0.0;
    double align = 0.0;
    double fixmatch = 0.0;
    double kld = 0.0;
    double contrastive = 0.0;
};

// Query side of the contrastive branch: forward record plus backward hook.
struct QueryTrace {
    FeatureMode mode;
    ReRepTrace rerep;
    Vector unit;
    double feature_norm = 0.0;

    const Vector& output() const { return mode == FeatureMode::raw ? unit : rerep.output; }
};

QueryTrace query_forward(const ClassifierView& view, std::span<const double> feature, FeatureMode mode, double t_re) {
    QueryTrace q{mode, {}, {}, 0.0};
    if (mode == FeatureMode::raw) {
        q.feature_norm = norm(feature);
        q.unit = l2_normalize(feature);
    } else {
        q.rerep = re_represent_traced(view, feature, t_re);
    }
    return q;
}

Vector query_backward(const ClassifierView& view, const QueryTrace& q, std::span<const double> dq, double t_re,
                      GradientTape& tape) {
    switch (q.mode) {
        case FeatureMode::raw:
            return l2_normalize_vjp(q.unit, q.feature_norm, dq);
        case FeatureMode::rerep_attached:
            return re_represent_backward(view, q.rerep, dq, t_re, &tape);
        case FeatureMode::rerep_detached:
        default:
            return re_represent_backward(view, q.rerep, dq, t_re, nullptr);
    }
}

class Kernel {
public:
    Kernel(const ModelState& student, const StepBatch& batch, const ObjectiveWeights& w)
        : student_(student), batch_(batch), w_(w), view_(ClassifierView::of(student)) {
        scales_ = scales_for(batch, w, counts_);
        if (scales_.contrastive_on) {
            // Shared by every low-confidence query; high-confidence queries filter their own.
            PseudoLabel low;
            low.confident = false;
            shared_negatives_ = negatives_for(batch, low);
        }
    }

    std::size_t item_count() const {
        return batch_.labeled.size() + batch_.unlabeled.size() +
               (w_.contrastive == ContrastiveKind::mixlrco ? batch_.mixes.size() : 0);
    }

    void run_item(std::size_t i, ItemLoss& loss, GradientTape& tape) const {
        const std::size_t nl = batch_.labeled.size();
        const std::size_t nu = batch_.unlabeled.size();
        if (i < nl) {
            labeled_item(batch_.labeled[i], loss, tape);
        } else if (i < nl + nu) {
            unlabeled_item(batch_.unlabeled[i - nl], loss, tape);
        } else {
            mix_item(batch_.mixes[i - nl - nu], loss, tape);
        }
    }

    const ObjectiveTerms& counts() const { return counts_; }
    const ModelState& student() const { return student_; }

private:
    double t_ce() const { return student_.config().t_ce; }
    double t_re() const { return student_.config().t_re; }

    void labeled_item(const LabeledItem& item, ItemLoss& loss, GradientTape& tape) const {
        if (scales_.ce == 0.0 && scales_.align == 0.0) return;
        const FeatureTrace ft = forward_features_traced(student_, item.x);
        const ClassifierTrace ct = classify_traced(view_, ft.output, t_ce());
        Vector dz(view_.num_classes(), 0.0);
        if (scales_.ce != 0.0) {
            loss.ce = scales_.ce * cross_entropy(ct.probs, item.label);
            axpy(w_.ce * scales_.ce, cross_entropy_grad(ct.probs, item.label, t_ce()), dz);
        }
        if (scales_.align != 0.0) {
            loss.align = scales_.align * entropy(ct.probs);
            axpy(w_.align * scales_.align, entropy_grad(ct.probs, t_ce()), dz);
        }
        const Vector df = classifier_backward(view_, ct, dz, &tape);
        backward_features(student_, ft, df, tape);
    }

    void unlabeled_item(const UnlabeledItem& item, ItemLoss& loss, GradientTape& tape) const {
        const bool high_terms = scales_.fixmatch != 0.0 && item.pseudo.confident;
        const bool query = scales_.contrastive_on && w_.contrastive == ContrastiveKind::lrco && item.query;
        if (scales_.align == 0.0 && !high_terms && !query) return;

        const FeatureTrace ft = forward_features_traced(student_, item.x_strong);
        const ClassifierTrace ct = classify_traced(view_, ft.output, t_ce());
        Vector dz(view_.num_classes(), 0.0);
        if (scales_.align != 0.0) {
            loss.align = scales_.align * entropy(ct.probs);
            axpy(w_.align * scales_.align, entropy_grad(ct.probs, t_ce()), dz);
        }
        if (high_terms) {
            if (w_.fm != 0.0) {
                loss.fixmatch = scales_.fixmatch * fixmatch_loss(item.pseudo, ct.probs);
                axpy(w_.fm * scales_.fixmatch, cross_entropy_grad(ct.probs, item.pseudo.label, t_ce()), dz);
            }
            if (w_.kld != 0.0) {
                loss.kld = scales_.kld * kld_reg(item.pseudo, ct.probs, view_.num_classes());
                axpy(w_.kld * scales_.kld, uniform_log_grad(ct.probs, t_ce()), dz);
            }
        }
        Vector df = classifier_backward(view_, ct, dz, &tape);
        if (query) {
            const QueryTrace q = query_forward(view_, ft.output, w_.feature, t_re());
            std::vector<Vector> own;
            if (item.pseudo.confident) own = negatives_for(batch_, item.pseudo);
            const std::vector<Vector>& negs = item.pseudo.confident ? own : shared_negatives_;
            const ContrastiveResult r = lrco_loss(q.output(), item.key, negs, w_.t_co);
            loss.contrastive = scales_.co * r.loss;
            const Vector dq = scaled(r.dquery, w_.co * scales_.co);
            axpy(1.0, query_backward(view_, q, dq, t_re(), tape), df);
        }
        backward_features(student_, ft, df, tape);
    }

    void mix_item(const MixItem& item, ItemLoss& loss, GradientTape& tape) const {
        if (!scales_.contrastive_on) return;
        const PseudoLabel& target = batch_.unlabeled.at(item.target).pseudo;
        const FeatureTrace ft = forward_features_traced(student_, item.x_mix);
        const QueryTrace q = query_forward(view_, ft.output, w_.feature, t_re());
        std::vector<Vector> own;
        if (target.confident) own = negatives_for(batch_, target);
        const std::vector<Vector>& negs = target.confident ? own : shared_negatives_;
        const ContrastiveResult r =
            mixlrco_loss(q.output(), item.key_mix, item.key_target, item.key_source, negs, w_.t_co);
        loss.contrastive = scales_.co * r.loss;
        const Vector dq = scaled(r.dquery, w_.co * scales_.co);
        const Vector df = query_backward(view_, q, dq, t_re(), tape);
        backward_features(student_, ft, df, tape);
    }

    const ModelState& student_;
    const StepBatch& batch_;
    const ObjectiveWeights& w_;
    ClassifierView view_;
    Scales scales_;
    ObjectiveTerms counts_;
    std::vector<Vector> shared_negatives_;
};

ObjectiveTerms finish_terms(const ObjectiveTerms& counts, const std::vector<ItemLoss>& losses,
                            const ObjectiveWeights& w) {
    ObjectiveTerms t = counts;
    for (const ItemLoss& l : losses) {
        t.ce += l.ce;
        t.align += l.align;
        t.fixmatch += l.fixmatch;
        t.kld += l.kld;
        t.contrastive += l.contrastive;
    }
    t.total = w.ce * t.ce + w.align * t.align + w.fm * t.fixmatch + w.kld * t.kld + w.co * t.contrastive;
    return t;
}

}  // namespace

std::vector<Vector> negatives_for(const StepBatch& batch, const PseudoLabel& query) {
    std::vector<Vector> out;
    for (const BankEntry& e : batch.bank.entries()) {
        if (entry_allowed(batch, e, query)) out.push_back(e.key);
    }
    return out;
}

Vector contrastive_key(const ClassifierView& view, std::span<const double> feature, FeatureMode mode, double t_re) {
    if (mode == FeatureMode::raw) return l2_normalize(feature);
    return re_represent(view, feature, t_re);
}

ObjectiveResult evaluate_objective(const ModelState& student, const StepBatch& batch, const ObjectiveWeights& w,
                                   Execution exec) {
    const Kernel kernel(student, batch, w);
    const std::size_t n = kernel.item_count();
    std::vector<ItemLoss> losses(n);
    std::vector<GradientTape> tapes(n, GradientTape(student.layout()));

    if (exec == Execution::parallel) {
        std::vector<std::exception_ptr> errors(n);
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < count; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            try {
                kernel.run_item(idx, losses[idx], tapes[idx]);
            } catch (...) {
                errors[idx] = std::current_exception();
            }
        }
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) kernel.run_item(i, losses[i], tapes[i]);
    }

    ObjectiveResult result{finish_terms(kernel.counts(), losses, w), GradientTape(student.layout())};
    for (const GradientTape& t : tapes) result.grad.add(t);
    return result;
}

ObjectiveTerms objective_reference(const ModelState& student, const StepBatch& batch, const ObjectiveWeights& w,
                                   const ClassifierView* detached) {
    const ClassifierView own = ClassifierView::of(student);
    const ClassifierView& rerep_view =
        (w.feature == FeatureMode::rerep_detached && detached != nullptr) ? *detached : own;
    const double t_ce = student.config().t_ce;
    const double t_re = student.config().t_re;

    ObjectiveTerms t;
    std::vector<Vector> all_probs;
    std::vector<Vector> strong_probs;
    double ce_sum = 0.0;
    for (const LabeledItem& item : batch.labeled) {
        const Vector p = classify_traced(own, forward_features(student, item.x), t_ce).probs;
        ce_sum += cross_entropy(p, item.label);
        all_probs.push_back(p);
    }
    if (w.ce != 0.0 && !batch.labeled.empty()) t.ce = ce_sum / static_cast<double>(batch.labeled.size());

    std::vector<PseudoLabel> pls;
    std::vector<Vector> strong_features;
    for (const UnlabeledItem& item : batch.unlabeled) {
        strong_features.push_back(forward_features(student, item.x_strong));
        const Vector p = classify_traced(own, strong_features.back(), t_ce).probs;
        all_probs.push_back(p);
        strong_probs.push_back(p);
        pls.push_back(item.pseudo);
    }
    if (w.align != 0.0) t.align = entropy_alignment(all_probs);

    const ConfidenceSplit split = confidence_split(pls);
    t.n_high = split.high.size();
    t.n_low = split.low.size();
    if (!split.high.empty()) {
        double fm = 0.0, kl = 0.0;
        for (std::size_t i : split.high) {
            fm += fixmatch_loss(pls[i], strong_probs[i]);
            kl += kld_reg(pls[i], strong_probs[i], own.num_classes());
        }
        if (w.fm != 0.0) t.fixmatch = fm / static_cast<double>(split.high.size());
        if (w.kld != 0.0) t.kld = kl / static_cast<double>(split.high.size());
    }

    if (w.contrastive != ContrastiveKind::none && !batch.bank.empty()) {
        double sum = 0.0;
        std::size_t n = 0;
        if (w.contrastive == ContrastiveKind::lrco) {
            for (std::size_t i = 0; i < batch.unlabeled.size(); ++i) {
                const UnlabeledItem& item = batch.unlabeled[i];
                if (!item.query) continue;
                const Vector q = contrastive_key(rerep_view, strong_features[i], w.feature, t_re);
                const auto negs = negatives_for(batch, item.pseudo);
                sum += w.feature == FeatureMode::raw ? naive_contrastive(q, item.key, negs, w.t_co).loss
                                                     : lrco_loss(q, item.key, negs, w.t_co).loss;
                ++n;
            }
        } else {
            for (const MixItem& item : batch.mixes) {
                const Vector q = contrastive_key(rerep_view, forward_features(student, item.x_mix), w.feature, t_re);
                const auto negs = negatives_for(batch, batch.unlabeled.at(item.target).pseudo);
                sum += mixlrco_loss(q, item.key_mix, item.key_target, item.key_source, negs, w.t_co).loss;
                ++n;
            }
        }
        t.n_queries = n;
        if (n > 0) t.contrastive = sum / static_cast<double>(n);
    }
    t.total = w.ce * t.ce + w.align * t.align + w.fm * t.fixmatch + w.kld * t.kld + w.co * t.contrastive;
    return t;
}

}  // namespace lrco
