#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "lrco/data.hpp"
#include "lrco/model.hpp"
#include "lrco/objective.hpp"

namespace lrco {

struct GroupSimilarity {
    double within = 0.0;  // mean pairwise cosine, same class
    double cross = 0.0;   // mean pairwise cosine, different classes
    std::size_t within_pairs = 0;
    std::size_t cross_pairs = 0;
    bool degenerate = false;  // fewer than 2 samples or fewer than 2 classes
};

// Confidence-grouped similarity statistics; scaled values are divided by the
// all-sample value so the "all" group reads exactly 1.
struct SimilarityReport {
    GroupSimilarity high;
    GroupSimilarity low;
    GroupSimilarity all;
    double within_scale = 1.0;
    double cross_scale = 1.0;

    double scaled_within(const GroupSimilarity& g) const { return g.within / within_scale; }
    double scaled_cross(const GroupSimilarity& g) const { return g.cross / cross_scale; }
};

SimilarityReport similarity_stats(std::span<const Vector> features, std::span<const std::size_t> labels,
                                  const std::vector<bool>& confident, Execution exec = Execution::parallel);

/// Mean over samples of the sum of the k largest probabilities, k = 1..k_max.
std::vector<double> topk_accumulation(std::span<const Vector> probs, std::size_t k_max = 10);

/// Projection onto the top two principal components. Each component's
/// largest-magnitude loading is made positive.
std::vector<std::array<double, 2>> project_2d(std::span<const Vector> features);

// Inputs for the similarity diagnostic taken from a trained model.
struct FeatureSnapshot {
    std::vector<Vector> features;
    std::vector<std::size_t> labels;
    std::vector<bool> confident;
    std::vector<Vector> probs;
};

/// Unit features of a labeled set under the model: re-represented by
/// default, or plain l2(F(x)) with FeatureMode::raw.
FeatureSnapshot snapshot_features(const ModelState& m, const Dataset& labeled, double tau,
                                  FeatureMode mode = FeatureMode::rerep_detached);

struct MixTopkCurves {
    std::vector<double> high;  // high-confidence target mixed with source
    std::vector<double> low;   // low-confidence target mixed with source
    std::size_t n_high = 0;
    std::size_t n_low = 0;
};

/// Mixes each target sample with a random source sample (target weight
/// lambda' = max(lambda, 1 - lambda)) and accumulates the model's top-k
/// probabilities on the mix, grouped by the target's confidence.
MixTopkCurves mix_topk_curves(const ModelState& m, const Dataset& target, const Dataset& source, double tau,
                              double alpha, std::uint64_t seed, std::size_t k_max);

std::string analysis_file_name(const std::string& run_id, std::size_t step, const std::string& split,
                               const std::string& kind);

void write_similarity_csv(const std::string& path, const SimilarityReport& r, const std::string& feature_space,
                          const std::string& config_hash, std::uint64_t seed);
void write_topk_csv(const std::string& path, const MixTopkCurves& c, const std::string& config_hash,
                    std::uint64_t seed);
void write_projection_csv(const std::string& path, std::span<const std::array<double, 2>> coords,
                          std::span<const Domain> domains, std::span<const std::size_t> labels,
                          const std::vector<bool>& confident,
                          const std::string& config_hash, std::uint64_t seed);

}  // namespace lrco
