#include "lrco/model.hpp"

#include <cmath>

namespace lrco {

void ModelConfig::validate() const {
    if (input_dim < 1) throw std::invalid_argument("model: input_dim must be >= 1");
    if (feature_dim < 2) throw std::invalid_argument("model: feature_dim must be >= 2");
    if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
    for (std::size_t h : hidden) {
        if (h < 1) throw std::invalid_argument("model: hidden widths must be >= 1");
    }
    if (!(t_ce > 0.0) || !(t_re > 0.0)) throw std::invalid_argument("model: temperatures must be positive");
}

ParamLayout ParamLayout::build(const ModelConfig& config) {
    ParamLayout layout;
    std::size_t offset = 0;
    std::size_t in = config.input_dim;
    std::vector<std::size_t> widths = config.hidden;
    widths.push_back(config.feature_dim);
    for (std::size_t i = 0; i < widths.size(); ++i) {
        LayerSlot slot;
        slot.in = in;
        slot.out = widths[i];
        slot.weight_offset = offset;
        offset += slot.in * slot.out;
        slot.bias_offset = offset;
        offset += slot.out;
        slot.tanh = i + 1 < widths.size();
        layout.layers.push_back(slot);
        in = widths[i];
    }
    layout.classifier_offset = offset;
    layout.feature_dim = config.feature_dim;
    layout.num_classes = config.num_classes;
    layout.total = offset + config.num_classes * config.feature_dim;
    return layout;
}

ModelState::ModelState(ModelConfig config)
    : config_(std::move(config)), layout_(ParamLayout::build(config_)), params_(layout_.total, 0.0) {
    config_.validate();
}

void ModelState::set_temperatures(double t_ce, double t_re) {
    if (!(t_ce > 0.0) || !(t_re > 0.0)) throw std::invalid_argument("model: temperatures must be positive");
    config_.t_ce = t_ce;
    config_.t_re = t_re;
}

void GradientTape::zero() { std::fill(values_.begin(), values_.end(), 0.0); }

void GradientTape::add(const GradientTape& other, double scale) {
    if (other.values_.size() != values_.size()) throw ShapeError("GradientTape::add: layout mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

ModelState init_model(const ModelConfig& config, SeededRng& rng) {
    ModelState m(config);
    auto p = m.params();
    const auto& layout = m.layout();
    auto fill_glorot = [&](std::size_t offset, std::size_t fan_in, std::size_t fan_out) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (std::size_t i = 0; i < fan_in * fan_out; ++i) p[offset + i] = rng.uniform(-limit, limit);
    };
    for (const LayerSlot& slot : layout.layers) fill_glorot(slot.weight_offset, slot.in, slot.out);
    fill_glorot(layout.classifier_offset, layout.feature_dim, layout.num_classes);
    return m;
}

namespace {

Vector dense_forward(std::span<const double> params, const LayerSlot& slot, std::span<const double> x) {
    Vector y(slot.out);
    const double* w = params.data() + slot.weight_offset;
    const double* b = params.data() + slot.bias_offset;
    for (std::size_t o = 0; o < slot.out; ++o) {
        double s = b[o];
        const double* row = w + o * slot.in;
        for (std::size_t i = 0; i < slot.in; ++i) s += row[i] * x[i];
        y[o] = slot.tanh ? std::tanh(s) : s;
    }
    return y;
}

void check_input(const ModelState& m, std::span<const double> x) {
    if (x.size() != m.config().input_dim) throw ShapeError("forward_features: input dimension mismatch");
}

}  // namespace

Vector forward_features(const ModelState& m, std::span<const double> x) {
    check_input(m, x);
    Vector h(x.begin(), x.end());
    for (const LayerSlot& slot : m.layout().layers) h = dense_forward(m.params(), slot, h);
    return h;
}

FeatureTrace forward_features_traced(const ModelState& m, std::span<const double> x) {
    check_input(m, x);
    FeatureTrace trace;
    Vector h(x.begin(), x.end());
    for (const LayerSlot& slot : m.layout().layers) {
        Vector next = dense_forward(m.params(), slot, h);
        trace.inputs.push_back(std::move(h));
        h = std::move(next);
    }
    trace.output = std::move(h);
    return trace;
}

void backward_features(const ModelState& m, const FeatureTrace& trace,
                       std::span<const double> dfeature, GradientTape& tape) {
    const auto& layers = m.layout().layers;
    auto params = m.params();
    auto grad = tape.values();
    Vector upstream(dfeature.begin(), dfeature.end());
    for (std::size_t li = layers.size(); li-- > 0;) {
        const LayerSlot& slot = layers[li];
        const Vector& x = trace.inputs[li];
        const Vector& y = li + 1 < layers.size() ? trace.inputs[li + 1] : trace.output;
        Vector dpre(slot.out);
        for (std::size_t o = 0; o < slot.out; ++o) {
            dpre[o] = slot.tanh ? upstream[o] * (1.0 - y[o] * y[o]) : upstream[o];
        }
        const double* w = params.data() + slot.weight_offset;
        double* gw = grad.data() + slot.weight_offset;
        double* gb = grad.data() + slot.bias_offset;
        Vector dx(slot.in, 0.0);
        for (std::size_t o = 0; o < slot.out; ++o) {
            gb[o] += dpre[o];
            for (std::size_t i = 0; i < slot.in; ++i) {
                gw[o * slot.in + i] += dpre[o] * x[i];
                dx[i] += w[o * slot.in + i] * dpre[o];
            }
        }
        upstream = std::move(dx);
    }
}

ClassifierView ClassifierView::of(const ModelState& m) {
    const std::size_t k = m.layout().num_classes;
    const std::size_t d = m.layout().feature_dim;
    ClassifierView view{Matrix(k, d), Vector(k)};
    for (std::size_t c = 0; c < k; ++c) {
        auto row = m.classifier_row(c);
        const double n = norm(row);
        if (!(n > kDegenerateNorm)) throw NumericError("classifier row has degenerate norm");
        view.row_norms[c] = n;
        for (std::size_t j = 0; j < d; ++j) view.normalized(c, j) = row[j] / n;
    }
    return view;
}

Vector ClassifierView::cosines(std::span<const double> unit) const {
    if (unit.size() != feature_dim()) throw ShapeError("classifier: feature dimension mismatch");
    Vector z(num_classes());
    for (std::size_t c = 0; c < num_classes(); ++c) z[c] = dot(normalized.row(c), unit);
    return z;
}

void ClassifierView::accumulate_row_grad(std::span<const double> d_normalized, GradientTape& tape) const {
    const std::size_t d = feature_dim();
    auto block = tape.classifier_block();
    for (std::size_t c = 0; c < num_classes(); ++c) {
        auto wn = normalized.row(c);
        auto g = d_normalized.subspan(c * d, d);
        const double proj = dot(wn, g);
        for (std::size_t j = 0; j < d; ++j) block[c * d + j] += (g[j] - wn[j] * proj) / row_norms[c];
    }
}

ClassifierTrace classify_traced(const ClassifierView& view, std::span<const double> feature, double t_ce) {
    ClassifierTrace trace;
    trace.feature_norm = norm(feature);
    trace.unit = l2_normalize(feature);
    trace.probs = softmax_t(view.cosines(trace.unit), t_ce);
    return trace;
}

Vector classify_probs(const ModelState& m, std::span<const double> feature) {
    return classify_traced(ClassifierView::of(m), feature, m.config().t_ce).probs;
}

Vector classifier_backward(const ClassifierView& view, const ClassifierTrace& trace,
                           std::span<const double> dcosines, GradientTape* tape) {
    const std::size_t k = view.num_classes();
    const std::size_t d = view.feature_dim();
    Vector du(d, 0.0);
    for (std::size_t c = 0; c < k; ++c) axpy(dcosines[c], view.normalized.row(c), du);
    if (tape != nullptr) {
        Vector dwn(k * d);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t j = 0; j < d; ++j) dwn[c * d + j] = dcosines[c] * trace.unit[j];
        }
        view.accumulate_row_grad(dwn, *tape);
    }
    return l2_normalize_vjp(trace.unit, trace.feature_norm, du);
}

void ema_update(TeacherState& teacher, const ModelState& student, double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("ema_update: decay must lie in [0,1)");
    if (!(teacher.model.layout() == student.layout())) throw ShapeError("ema_update: shape mismatch");
    auto t = teacher.model.params();
    auto s = student.params();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = decay * t[i] + (1.0 - decay) * s[i];
}

nlohmann::json model_to_json(const ModelState& m) {
    const auto& c = m.config();
    return {
        {"input_dim", c.input_dim},
        {"hidden", c.hidden},
        {"feature_dim", c.feature_dim},
        {"num_classes", c.num_classes},
        {"t_ce", c.t_ce},
        {"t_re", c.t_re},
        {"params", Vector(m.params().begin(), m.params().end())},
    };
}

ModelState model_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.t_ce = j.at("t_ce").get<double>();
    c.t_re = j.at("t_re").get<double>();
    ModelState m(c);
    const auto params = j.at("params").get<Vector>();
    if (params.size() != m.params().size()) throw ShapeError("checkpoint: parameter count mismatch");
    std::copy(params.begin(), params.end(), m.params().begin());
    return m;
}

}  // namespace lrco
