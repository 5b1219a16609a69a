#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "lrco/losses.hpp"
#include "lrco/membank.hpp"
#include "lrco/model.hpp"

namespace lrco {

enum class ContrastiveKind { none, lrco, mixlrco };

// Feature space used by the contrastive branch.
enum class FeatureMode {
    rerep_detached,  // default: classifier-weight re-representation, W_C detached
    raw,             // plain l2(F(x)) features
    rerep_attached,  // re-representation with gradient flowing into W_C
};

enum class Execution { serial, parallel };

// Which terms enter the objective and with what weight.
// A zero weight removes the term entirely.
struct ObjectiveWeights {
    double ce = 1.0;
    double align = 0.0;  // lambda_align
    double fm = 0.0;
    double kld = 0.0;    // lambda_kld
    ContrastiveKind contrastive = ContrastiveKind::none;
    double co = 0.0;  // lambda_co
    double t_co = 0.3;
    FeatureMode feature = FeatureMode::rerep_detached;
};

// Everything about one step that does not depend on the student: augmented
// views, teacher pseudo labels and keys, mix pairs and the bank negatives.
struct LabeledItem {
    Vector x;  // weak view
    std::size_t label = 0;
};

struct UnlabeledItem {
    Vector x_strong;
    PseudoLabel pseudo;
    bool query = false;  // participates in the single-sample contrastive loss
    Vector key;          // teacher key of the weak view
};

struct MixItem {
    std::size_t target = 0;  // index into unlabeled
    Vector x_mix;
    Vector key_mix;
    Vector key_target;
    Vector key_source;
    double coefficient = 1.0;  // target weight
};

struct StepBatch {
    std::vector<LabeledItem> labeled;
    std::vector<UnlabeledItem> unlabeled;
    std::vector<MixItem> mixes;
    BankSnapshot bank;
    // Negative-set filtering for the sample-selection ablation.
    bool negatives_low = true;
    bool negatives_high = false;
};

struct ObjectiveTerms {
    double ce = 0.0;
    double align = 0.0;
    double fixmatch = 0.0;
    double kld = 0.0;
    double contrastive = 0.0;
    double total = 0.0;
    std::size_t n_high = 0;
    std::size_t n_low = 0;
    std::size_t n_queries = 0;
};

struct ObjectiveResult {
    ObjectiveTerms terms;
    GradientTape grad;
};

/// Objective value and exact gradient. Each sample is an independent work
/// item; per-item gradients are reduced in index order, so serial and
/// parallel execution are bit-identical.
ObjectiveResult evaluate_objective(const ModelState& student, const StepBatch& batch, const ObjectiveWeights& w,
                                   Execution exec = Execution::parallel);

/// Forward-only reference built from the loss functions directly. When the
/// feature mode detaches W_C, re-representation uses `detached` instead of
/// the student's own classifier so finite differences see the stop-gradient.
ObjectiveTerms objective_reference(const ModelState& student, const StepBatch& batch, const ObjectiveWeights& w,
                                   const ClassifierView* detached = nullptr);

/// Negatives for one query after group filtering. A high-confidence query
/// drops high-confidence bank entries sharing its pseudo label.
std::vector<Vector> negatives_for(const StepBatch& batch, const PseudoLabel& query);

/// Contrastive key of a raw feature under the given feature mode.
Vector contrastive_key(const ClassifierView& view, std::span<const double> feature, FeatureMode mode, double t_re);

}  // namespace lrco
