#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lrco/model.hpp"
#include "lrco/numerics.hpp"

namespace lrco {

// Lower clamp on log arguments so a saturated softmax never yields -inf.
inline constexpr double kLogClamp = 1e-12;

// Tolerance on the unit-norm precondition of the contrastive losses.
inline constexpr double kUnitTolerance = 1e-6;

struct PseudoLabel {
    Vector probs;
    std::size_t label = 0;
    double max_prob = 0.0;
    bool confident = false;
};

PseudoLabel make_pseudo_label(Vector teacher_probs, double tau);

double cross_entropy(std::span<const double> p, std::size_t y);

/// Mean Shannon entropy over a batch of probability vectors; the default
/// pluggable alignment term.
double entropy_alignment(std::span<const Vector> p_batch);
double entropy(std::span<const double> p);

double fixmatch_loss(const PseudoLabel& pl, std::span<const double> p_strong);
double kld_reg(const PseudoLabel& pl, std::span<const double> p_strong, std::size_t num_classes);

// dL/dz for p = softmax_t(z, T). These are the gradients of the clamped
// losses above, so they vanish on clamped coordinates.
Vector cross_entropy_grad(std::span<const double> p, std::size_t y, double temperature);
Vector entropy_grad(std::span<const double> p, double temperature);
Vector uniform_log_grad(std::span<const double> p, double temperature);  // of -(1/K) sum log p_j

struct ConfidenceSplit {
    std::vector<std::size_t> high;
    std::vector<std::size_t> low;
};

/// Partitions batch indices by the confident flag, preserving order.
ConfidenceSplit confidence_split(std::span<const PseudoLabel> batch);

// Forward record of r = l2(softmax_t(Wn u, T_re) . Wn) with u = l2(f).
struct ReRepTrace {
    Vector unit;           // u
    double feature_norm = 0.0;
    Vector attention;      // softmax over classes
    Vector combined;       // attention . Wn, before normalization
    double combined_norm = 0.0;
    Vector output;         // r
};

ReRepTrace re_represent_traced(const ClassifierView& view, std::span<const double> feature, double t_re);
Vector re_represent(const ClassifierView& view, std::span<const double> feature, double t_re);

/// Backward of re_represent. Returns dL/df. The classifier receives gradient
/// only when tape is non-null, which is the non-detached ablation.
Vector re_represent_backward(const ClassifierView& view, const ReRepTrace& trace,
                             std::span<const double> doutput, double t_re, GradientTape* tape);

// -log[h(q,k+) / sum_{k in denominator} h(q,k)] with h(a,b) = exp(a.b / T).
struct ContrastiveResult {
    double loss = 0.0;
    Vector dquery;
};

/// Instance-discrimination loss over a (|M|+1)-way softmax: the positive key
/// plus every bank negative.
ContrastiveResult naive_contrastive(std::span<const double> query, std::span<const double> key,
                                    std::span<const Vector> negatives, double t_co);

/// Same functional form as naive_contrastive, applied to re-represented features.
ContrastiveResult lrco_loss(std::span<const double> query, std::span<const double> key,
                            std::span<const Vector> negatives, double t_co);

/// Mixed-query loss: numerator uses the blended key, the (|M|+2)-way
/// denominator uses the target key, the source key and the negatives. The
/// blended key itself is not part of the denominator.
ContrastiveResult mixlrco_loss(std::span<const double> query, std::span<const double> key_mix,
                               std::span<const double> key_target, std::span<const double> key_source,
                               std::span<const Vector> negatives, double t_co);

struct MixDraw {
    double lambda = 0.5;
    double lambda_prime = 0.5;
};

MixDraw draw_mix(double alpha, SeededRng& rng);
MixDraw mix_from_lambda(double lambda);

struct MixPair {
    Vector x_mix;
    Vector key_mix;
};

/// x_mix = c x_t + (1 - c) x_s and key_mix = c r_t + (1 - c) r_s with
/// c = coefficient (lambda' in the default design). key_mix is not renormalized.
MixPair build_mix_pair(std::span<const double> x_target, std::span<const double> x_source,
                       std::span<const double> key_target, std::span<const double> key_source,
                       double coefficient);

/// Convenience overload starting from teacher raw features.
MixPair build_mix_pair(std::span<const double> x_target, std::span<const double> x_source,
                       std::span<const double> teacher_feature_target,
                       std::span<const double> teacher_feature_source, const MixDraw& draw,
                       const ClassifierView& teacher_view, double t_re);

}  // namespace lrco
