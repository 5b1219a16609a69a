#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace lrco {

struct GradcheckTerm {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t instances = 0;
};

struct GradcheckReport {
    std::vector<GradcheckTerm> terms;
    // Largest |dL/dW_C| seen from the contrastive terms in detached mode.
    double detached_classifier_grad = 0.0;
    double seconds = 0.0;

    bool passed(double tolerance = 1e-4) const;
};

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::size_t instances_per_shape = 5;  // shapes: K in {2,5} x feature_dim in {3,8}
    double h = 1e-5;
};

/// Analytic gradients of every loss term and total objective against central
/// finite differences on randomized small models and batches.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace lrco
