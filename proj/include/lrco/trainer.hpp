#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrco/data.hpp"
#include "lrco/membank.hpp"
#include "lrco/model.hpp"
#include "lrco/objective.hpp"

namespace lrco {

enum class Method { source_only, baseline, strong, lrco, mixlrco };

// Sample group used by the selection ablations.
enum class SampleGroup { low, high, all };

enum class EvalModel { teacher, student };

const char* method_name(Method m);
Method parse_method(const std::string& s);
const char* group_name(SampleGroup g);
SampleGroup parse_group(const std::string& s);
const char* feature_mode_name(FeatureMode m);
FeatureMode parse_feature_mode(const std::string& s);

struct AblationSwitches {
    SampleGroup positives = SampleGroup::low;    // single-sample contrastive queries
    SampleGroup negatives = SampleGroup::low;    // bank contents
    FeatureMode feature = FeatureMode::rerep_detached;
    SampleGroup mix_targets = SampleGroup::low;  // target side of cross-domain mixup
    bool mix_dominant = true;                    // lambda' = max(lambda, 1 - lambda) vs raw lambda
};

struct TauSchedule {
    bool dynamic = false;
    double band_lo = 0.6;
    double band_hi = 0.8;
    double min = 0.93;
    double max = 0.98;
    double step = 0.005;
    std::size_t window = 50;
};

struct TrainConfig {
    Method method = Method::mixlrco;
    ModelConfig model;
    AugmentSpec augment;
    double tau = 0.95;
    double t_co = 0.3;
    std::size_t bank_capacity = 512;
    double lambda_co = 0.5;
    double lambda_kld = 0.1;
    double lambda_align = 0.1;
    double alpha = 1.0;
    double ema_decay = 0.99;
    bool ema_enabled = true;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t labeled_batch = 32;
    std::size_t unlabeled_batch = 64;
    std::size_t total_steps = 2000;
    std::size_t eval_interval = 250;
    std::size_t checkpoint_interval = 0;
    std::uint64_t seed = 0;
    AblationSwitches ablation;
    TauSchedule tau_schedule;
    EvalModel eval_model = EvalModel::teacher;
    Execution execution = Execution::parallel;

    void validate() const;
    ObjectiveWeights weights() const;
};

struct StepReport {
    std::size_t step = 0;
    ObjectiveTerms terms;
    std::size_t unlabeled = 0;
    std::size_t bank_size = 0;
    double tau = 0.0;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EvalMetrics {
    double accuracy = 0.0;
    std::vector<double> per_class;
    double mean_confidence = 0.0;
    std::size_t count = 0;
};

EvalMetrics evaluate(const ModelState& m, const Dataset& labeled);

/// Nudges tau toward keeping the high-confidence fraction inside the band.
/// Fixed-tau schedules return tau unchanged.
double adjust_tau(double high_fraction, double tau, const TauSchedule& schedule);

// Inputs for one step, already gathered from the datasets.
struct StepInputs {
    std::vector<const Sample*> labeled;
    std::vector<const Vector*> unlabeled;
};

/// Builds the student-independent part of a step: augmentations, teacher
/// pseudo labels and keys, mix pairs, bank snapshot.
StepBatch prepare_step(const TrainConfig& config, const TeacherState& teacher, const MemoryBank& bank,
                       const StepInputs& inputs, double tau, SeededRng& augment_rng, SeededRng& mix_rng);

class Trainer {
public:
    /// labeled holds D_s (plus the target shots in SSDA mode).
    Trainer(TrainConfig config, const Dataset& labeled, const UnlabeledSet& target);

    StepReport step();

    const TrainConfig& config() const { return config_; }
    const ModelState& student() const { return student_; }
    const TeacherState& teacher() const { return teacher_; }
    const MemoryBank& bank() const { return bank_; }
    const ModelState& eval_model() const;
    double tau() const { return tau_; }
    std::size_t step_index() const { return step_; }
    const StepBatch& last_batch() const { return last_batch_; }

    nlohmann::json checkpoint() const;
    void restore(const nlohmann::json& j);

private:
    StepInputs gather();

    TrainConfig config_;
    const Dataset* labeled_;
    const UnlabeledSet* target_;
    SeededRng root_;
    ModelState student_;
    TeacherState teacher_;
    MemoryBank bank_;
    Vector velocity_;
    double tau_;
    std::size_t step_ = 0;
    BatchIterator labeled_it_;
    BatchIterator unlabeled_it_;
    std::deque<double> high_fractions_;
    StepBatch last_batch_;
};

/// One optimizer step of the configured method, followed by the EMA update
/// and the bank push of this step's teacher keys.
StepReport train_step(Trainer& trainer);

struct MetricRecord {
    std::size_t step = 0;
    std::string split;
    EvalMetrics metrics;
    ObjectiveTerms terms;
    double tau = 0.0;
};

nlohmann::json metric_to_json(const MetricRecord& r, const std::string& config_hash, std::uint64_t seed);

struct FitOptions {
    std::string metrics_path;     // JSON-lines stream, empty to skip
    std::string checkpoint_dir;   // periodic checkpoints, empty to skip
    std::string config_hash;
    std::optional<nlohmann::json> resume;  // checkpoint to continue from
    std::size_t stop_after = 0;            // stop early at this step (0 = run to total_steps)
};

struct FitResult {
    ModelState student;
    TeacherState teacher;
    std::vector<MetricRecord> history;
    nlohmann::json final_checkpoint;
};

struct FitData {
    const Dataset* labeled = nullptr;
    const UnlabeledSet* target = nullptr;
    const Dataset* source_eval = nullptr;  // optional
    const Dataset* target_eval = nullptr;  // optional
};

FitResult fit(const TrainConfig& config, const FitData& data, const FitOptions& options = {});

}  // namespace lrco
