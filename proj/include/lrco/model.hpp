#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "lrco/numerics.hpp"

namespace lrco {

struct ModelConfig {
    std::size_t input_dim = 8;
    std::vector<std::size_t> hidden{32};
    std::size_t feature_dim = 16;
    std::size_t num_classes = 5;
    double t_ce = 0.05;
    double t_re = 0.05;

    void validate() const;
};

// Dense layer y = act(W x + b) with W stored row-major (out x in).
struct LayerSlot {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    bool tanh = false;

    friend bool operator==(const LayerSlot&, const LayerSlot&) = default;
};

// Where every parameter block lives inside the flat parameter vector.
struct ParamLayout {
    std::vector<LayerSlot> layers;
    std::size_t classifier_offset = 0;
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    std::size_t total = 0;

    static ParamLayout build(const ModelConfig& config);
    std::size_t classifier_size() const { return num_classes * feature_dim; }

    friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

// Student or teacher network: MLP feature extractor followed by a cosine
// classifier whose stored rows are raw and normalized at use time.
class ModelState {
public:
    ModelState() = default;
    explicit ModelState(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    const ParamLayout& layout() const { return layout_; }

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    std::span<const double> classifier() const {
        return {params_.data() + layout_.classifier_offset, layout_.classifier_size()};
    }
    std::span<double> classifier() {
        return {params_.data() + layout_.classifier_offset, layout_.classifier_size()};
    }
    std::span<const double> classifier_row(std::size_t k) const {
        return classifier().subspan(k * layout_.feature_dim, layout_.feature_dim);
    }

    void set_temperatures(double t_ce, double t_re);

    friend bool operator==(const ModelState& a, const ModelState& b) {
        return a.layout_ == b.layout_ && a.params_ == b.params_ &&
               a.config_.t_ce == b.config_.t_ce && a.config_.t_re == b.config_.t_re;
    }

private:
    ModelConfig config_;
    ParamLayout layout_;
    Vector params_;
};

// EMA copy of the student. Only ema_update writes to it.
struct TeacherState {
    ModelState model;
};

// Gradient accumulator sharing the ModelState layout.
class GradientTape {
public:
    GradientTape() = default;
    explicit GradientTape(const ParamLayout& layout) : layout_(layout), values_(layout.total, 0.0) {}

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<const double> classifier_block() const {
        return {values_.data() + layout_.classifier_offset, layout_.classifier_size()};
    }
    std::span<double> classifier_block() {
        return {values_.data() + layout_.classifier_offset, layout_.classifier_size()};
    }
    const ParamLayout& layout() const { return layout_; }

    void zero();
    void add(const GradientTape& other, double scale = 1.0);

private:
    ParamLayout layout_;
    Vector values_;
};

ModelState init_model(const ModelConfig& config, SeededRng& rng);

// Per-layer inputs and outputs kept for the backward pass.
struct FeatureTrace {
    std::vector<Vector> inputs;
    Vector output;
};

Vector forward_features(const ModelState& m, std::span<const double> x);
FeatureTrace forward_features_traced(const ModelState& m, std::span<const double> x);

/// Backpropagates dL/dF(x) through the extractor, accumulating into the tape.
void backward_features(const ModelState& m, const FeatureTrace& trace,
                       std::span<const double> dfeature, GradientTape& tape);

// Classifier rows normalized once per evaluation and shared read-only.
struct ClassifierView {
    Matrix normalized;  // K x feature_dim
    Vector row_norms;

    static ClassifierView of(const ModelState& m);
    std::size_t num_classes() const { return normalized.rows(); }
    std::size_t feature_dim() const { return normalized.cols(); }

    /// Cosine similarities Wn u for a unit vector u.
    Vector cosines(std::span<const double> unit) const;

    /// Converts dL/dWn (K x fd, row-major) into dL/dW and adds it to the tape.
    void accumulate_row_grad(std::span<const double> d_normalized, GradientTape& tape) const;
};

// Forward record of p = softmax(Wn l2(f) / T_ce).
struct ClassifierTrace {
    Vector unit;      // l2(f)
    double feature_norm = 0.0;
    Vector probs;
};

ClassifierTrace classify_traced(const ClassifierView& view, std::span<const double> feature, double t_ce);

Vector classify_probs(const ModelState& m, std::span<const double> feature);

/// Given dL/dz for the cosines z = Wn l2(f), returns dL/df and, unless tape
/// is null, accumulates dL/dW_C.
Vector classifier_backward(const ClassifierView& view, const ClassifierTrace& trace,
                           std::span<const double> dcosines, GradientTape* tape);

void ema_update(TeacherState& teacher, const ModelState& student, double decay);

nlohmann::json model_to_json(const ModelState& m);
ModelState model_from_json(const nlohmann::json& j);

}  // namespace lrco
