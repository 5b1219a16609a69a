#include "lrco/losses.hpp"

#include <algorithm>
#include <cmath>

namespace lrco {

PseudoLabel make_pseudo_label(Vector teacher_probs, double tau) {
    PseudoLabel pl;
    pl.label = argmax(teacher_probs);
    pl.max_prob = teacher_probs[pl.label];
    pl.confident = pl.max_prob > tau;
    pl.probs = std::move(teacher_probs);
    return pl;
}

namespace {

double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

void check_class(std::span<const double> p, std::size_t y) {
    if (y >= p.size()) throw std::out_of_range("class index out of range");
}

void check_unit(std::span<const double> v, const char* what) {
    if (std::abs(norm(v) - 1.0) > kUnitTolerance) {
        throw NumericError(std::string("contrastive loss: non-unit ") + what);
    }
}

// -s_pos/T + LSE(s_den/T), dq = (sum_j w_j k_j - k_pos) / T.
ContrastiveResult contrastive_core(std::span<const double> query, std::span<const double> positive,
                                   std::span<const std::span<const double>> denominator, double t_co) {
    if (!(t_co > 0.0)) throw std::invalid_argument("contrastive loss: temperature must be positive");
    Vector logits(denominator.size());
    for (std::size_t j = 0; j < denominator.size(); ++j) logits[j] = dot(query, denominator[j]) / t_co;
    const double pos = dot(query, positive) / t_co;
    ContrastiveResult r;
    r.loss = log_sum_exp(logits) - pos;
    const Vector w = softmax_t(logits, 1.0);
    r.dquery.assign(query.size(), 0.0);
    for (std::size_t j = 0; j < denominator.size(); ++j) axpy(w[j] / t_co, denominator[j], r.dquery);
    axpy(-1.0 / t_co, positive, r.dquery);
    return r;
}

}  // namespace

double cross_entropy(std::span<const double> p, std::size_t y) {
    check_class(p, y);
    return -clamped_log(p[y]);
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * clamped_log(x);
    }
    return h;
}

double entropy_alignment(std::span<const Vector> p_batch) {
    if (p_batch.empty()) return 0.0;
    double s = 0.0;
    for (const Vector& p : p_batch) s += entropy(p);
    return s / static_cast<double>(p_batch.size());
}

double fixmatch_loss(const PseudoLabel& pl, std::span<const double> p_strong) {
    if (!pl.confident) return 0.0;
    return cross_entropy(p_strong, pl.label);
}

double kld_reg(const PseudoLabel& pl, std::span<const double> p_strong, std::size_t num_classes) {
    if (!pl.confident) return 0.0;
    if (num_classes != p_strong.size()) throw ShapeError("kld_reg: class count mismatch");
    double s = 0.0;
    for (double x : p_strong) s += clamped_log(x);
    return -s / static_cast<double>(num_classes);
}

Vector cross_entropy_grad(std::span<const double> p, std::size_t y, double temperature) {
    check_class(p, y);
    Vector dz(p.size(), 0.0);
    if (p[y] <= kLogClamp) return dz;
    for (std::size_t j = 0; j < p.size(); ++j) dz[j] = (p[j] - (j == y ? 1.0 : 0.0)) / temperature;
    return dz;
}

Vector entropy_grad(std::span<const double> p, double temperature) {
    // dH/dp_j = -(log p_j + 1) where unclamped, -log(clamp) where clamped.
    Vector g(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
        g[j] = p[j] > kLogClamp ? -(std::log(p[j]) + 1.0) : -std::log(kLogClamp);
    }
    return softmax_t_vjp(p, g, temperature);
}

Vector uniform_log_grad(std::span<const double> p, double temperature) {
    // L = -(1/K) sum_{j unclamped} log p_j  =>  dL/dz = ((|U|/K) p - 1_U/K) / T.
    const double k = static_cast<double>(p.size());
    double unclamped = 0.0;
    for (double x : p) unclamped += x > kLogClamp ? 1.0 : 0.0;
    Vector dz(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
        dz[j] = ((unclamped / k) * p[j] - (p[j] > kLogClamp ? 1.0 / k : 0.0)) / temperature;
    }
    return dz;
}

ConfidenceSplit confidence_split(std::span<const PseudoLabel> batch) {
    ConfidenceSplit split;
    for (std::size_t i = 0; i < batch.size(); ++i) (batch[i].confident ? split.high : split.low).push_back(i);
    return split;
}

ReRepTrace re_represent_traced(const ClassifierView& view, std::span<const double> feature, double t_re) {
    ReRepTrace t;
    t.feature_norm = norm(feature);
    t.unit = l2_normalize(feature);
    t.attention = softmax_t(view.cosines(t.unit), t_re);
    t.combined.assign(view.feature_dim(), 0.0);
    for (std::size_t c = 0; c < view.num_classes(); ++c) axpy(t.attention[c], view.normalized.row(c), t.combined);
    t.combined_norm = norm(t.combined);
    if (!(t.combined_norm > kDegenerateNorm)) throw NumericError("re_represent: degenerate output norm");
    t.output = scaled(t.combined, 1.0 / t.combined_norm);
    return t;
}

Vector re_represent(const ClassifierView& view, std::span<const double> feature, double t_re) {
    return re_represent_traced(view, feature, t_re).output;
}

Vector re_represent_backward(const ClassifierView& view, const ReRepTrace& trace,
                             std::span<const double> doutput, double t_re, GradientTape* tape) {
    const std::size_t k = view.num_classes();
    const std::size_t d = view.feature_dim();
    const Vector dcombined = l2_normalize_vjp(trace.output, trace.combined_norm, doutput);
    Vector dattention(k);
    for (std::size_t c = 0; c < k; ++c) dattention[c] = dot(view.normalized.row(c), dcombined);
    const Vector dcos = softmax_t_vjp(trace.attention, dattention, t_re);
    Vector du(d, 0.0);
    for (std::size_t c = 0; c < k; ++c) axpy(dcos[c], view.normalized.row(c), du);
    if (tape != nullptr) {
        Vector dwn(k * d);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t j = 0; j < d; ++j) {
                dwn[c * d + j] = trace.attention[c] * dcombined[j] + dcos[c] * trace.unit[j];
            }
        }
        view.accumulate_row_grad(dwn, *tape);
    }
    return l2_normalize_vjp(trace.unit, trace.feature_norm, du);
}

ContrastiveResult naive_contrastive(std::span<const double> query, std::span<const double> key,
                                    std::span<const Vector> negatives, double t_co) {
    check_unit(query, "query");
    check_unit(key, "key");
    if (negatives.empty()) return {0.0, Vector(query.size(), 0.0)};
    std::vector<std::span<const double>> den;
    den.reserve(negatives.size() + 1);
    den.emplace_back(key);
    for (const Vector& n : negatives) {
        check_unit(n, "negative");
        den.emplace_back(n);
    }
    return contrastive_core(query, key, den, t_co);
}

ContrastiveResult lrco_loss(std::span<const double> query, std::span<const double> key,
                            std::span<const Vector> negatives, double t_co) {
    return naive_contrastive(query, key, negatives, t_co);
}

ContrastiveResult mixlrco_loss(std::span<const double> query, std::span<const double> key_mix,
                               std::span<const double> key_target, std::span<const double> key_source,
                               std::span<const Vector> negatives, double t_co) {
    check_unit(query, "query");
    check_unit(key_target, "target key");
    check_unit(key_source, "source key");
    if (norm(key_mix) > 1.0 + kUnitTolerance) throw NumericError("mixlrco_loss: blended key outside the unit ball");
    std::vector<std::span<const double>> den;
    den.reserve(negatives.size() + 2);
    den.emplace_back(key_target);
    den.emplace_back(key_source);
    for (const Vector& n : negatives) {
        check_unit(n, "negative");
        den.emplace_back(n);
    }
    return contrastive_core(query, key_mix, den, t_co);
}

MixDraw mix_from_lambda(double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("mix lambda must lie in (0,1)");
    return {lambda, std::max(lambda, 1.0 - lambda)};
}

MixDraw draw_mix(double alpha, SeededRng& rng) { return mix_from_lambda(sample_beta(alpha, rng)); }

MixPair build_mix_pair(std::span<const double> x_target, std::span<const double> x_source,
                       std::span<const double> key_target, std::span<const double> key_source,
                       double coefficient) {
    if (x_target.size() != x_source.size() || key_target.size() != key_source.size()) {
        throw ShapeError("build_mix_pair: shape mismatch");
    }
    MixPair pair{Vector(x_target.size()), Vector(key_target.size())};
    for (std::size_t i = 0; i < x_target.size(); ++i) {
        pair.x_mix[i] = coefficient * x_target[i] + (1.0 - coefficient) * x_source[i];
    }
    for (std::size_t i = 0; i < key_target.size(); ++i) {
        pair.key_mix[i] = coefficient * key_target[i] + (1.0 - coefficient) * key_source[i];
    }
    return pair;
}

MixPair build_mix_pair(std::span<const double> x_target, std::span<const double> x_source,
                       std::span<const double> teacher_feature_target,
                       std::span<const double> teacher_feature_source, const MixDraw& draw,
                       const ClassifierView& teacher_view, double t_re) {
    const Vector rt = re_represent(teacher_view, teacher_feature_target, t_re);
    const Vector rs = re_represent(teacher_view, teacher_feature_source, t_re);
    return build_mix_pair(x_target, x_source, rt, rs, draw.lambda_prime);
}

}  // namespace lrco
