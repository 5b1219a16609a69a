#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lrco/numerics.hpp"

namespace lrco {

enum class Domain { source, target };

const char* domain_name(Domain d);

struct Sample {
    Vector x;
    std::optional<std::size_t> label;
    Domain domain = Domain::source;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::string spec_hash;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Target samples whose labels are hidden from training code. Labels are
// reachable only through evaluation_set().
class UnlabeledSet {
public:
    UnlabeledSet() = default;
    UnlabeledSet(std::size_t input_dim, std::size_t num_classes, std::string spec_hash,
                 std::vector<Vector> inputs, std::vector<std::size_t> evaluation_labels);

    std::size_t size() const { return inputs_.size(); }
    bool empty() const { return inputs_.empty(); }
    std::size_t input_dim() const { return input_dim_; }
    const Vector& input(std::size_t i) const { return inputs_.at(i); }
    const std::vector<Vector>& inputs() const { return inputs_; }

    /// Unlabeled view, labels written as absent.
    Dataset as_dataset() const;
    /// Evaluation-only channel carrying the ground-truth labels.
    Dataset evaluation_set() const;

    static UnlabeledSet from_evaluation_set(const Dataset& labeled);

private:
    std::size_t input_dim_ = 0;
    std::size_t num_classes_ = 0;
    std::string spec_hash_;
    std::vector<Vector> inputs_;
    std::vector<std::size_t> labels_;
};

struct BenchmarkSpec {
    std::size_t num_classes = 5;
    std::size_t input_dim = 8;
    std::size_t source_per_class = 100;
    std::size_t target_per_class = 100;
    std::size_t target_labeled_per_class = 0;  // 0 = UDA, 1 or 3 = SSDA shots
    double radius = 3.0;
    double noise = 1.2;
    double shift_degrees = 50.0;
    Vector translation{};  // padded with zeros to input_dim
    std::uint64_t seed = 0;

    void validate() const;
    std::string canonical() const;
    std::string hash() const;
};

struct Benchmark {
    Dataset source;
    UnlabeledSet target;
    Dataset target_labeled;  // empty in UDA mode
};

Benchmark generate_shift_benchmark(const BenchmarkSpec& spec);

struct AugmentSpec {
    double weak_noise = 0.1;
    double strong_noise = 0.4;
    double mask_prob = 0.2;
    double scale_jitter = 0.2;  // scale drawn from U(1 - j, 1 + j)

    void validate() const;
};

Vector weak_augment(std::span<const double> x, const AugmentSpec& spec, SeededRng& rng);
Vector strong_augment(std::span<const double> x, const AugmentSpec& spec, SeededRng& rng);

// Endless epoch-wise shuffled index stream. Each epoch's order depends only
// on (stream seed, epoch), so the cursor state is two integers.
class BatchIterator {
public:
    BatchIterator(std::size_t dataset_size, std::size_t batch_size, SeededRng stream);

    /// Next batch of indices. The final batch of an epoch may be short.
    std::vector<std::size_t> next();

    std::size_t epoch() const { return epoch_; }
    std::size_t position() const { return position_; }
    void seek(std::size_t epoch, std::size_t position);

    std::vector<std::size_t> epoch_order(std::size_t epoch) const;

private:
    std::size_t n_;
    std::size_t batch_size_;
    SeededRng stream_;
    std::size_t epoch_ = 0;
    std::size_t position_ = 0;
    std::vector<std::size_t> order_;
};

/// All batches of one epoch.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t dataset_size, std::size_t batch_size,
                                                 const SeededRng& epoch_stream);

class DatasetParseError : public std::runtime_error {
public:
    DatasetParseError(std::size_t line, std::string field, const std::string& message);
    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

// File could not be opened or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_dataset(const std::string& path, const Dataset& set);
Dataset load_dataset(const std::string& path);
std::string format_dataset(const Dataset& set);
Dataset parse_dataset(const std::string& text);

}  // namespace lrco
