#include "lrco/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace lrco {

const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

UnlabeledSet::UnlabeledSet(std::size_t input_dim, std::size_t num_classes, std::string spec_hash,
                           std::vector<Vector> inputs, std::vector<std::size_t> evaluation_labels)
    : input_dim_(input_dim),
      num_classes_(num_classes),
      spec_hash_(std::move(spec_hash)),
      inputs_(std::move(inputs)),
      labels_(std::move(evaluation_labels)) {
    if (!labels_.empty() && labels_.size() != inputs_.size()) {
        throw ShapeError("UnlabeledSet: label count does not match input count");
    }
}

Dataset UnlabeledSet::as_dataset() const {
    Dataset d{input_dim_, num_classes_, spec_hash_, {}};
    for (const Vector& x : inputs_) d.samples.push_back({x, std::nullopt, Domain::target});
    return d;
}

Dataset UnlabeledSet::evaluation_set() const {
    if (labels_.size() != inputs_.size()) throw std::logic_error("UnlabeledSet: no evaluation labels attached");
    Dataset d{input_dim_, num_classes_, spec_hash_, {}};
    for (std::size_t i = 0; i < inputs_.size(); ++i) d.samples.push_back({inputs_[i], labels_[i], Domain::target});
    return d;
}

UnlabeledSet UnlabeledSet::from_evaluation_set(const Dataset& labeled) {
    std::vector<Vector> xs;
    std::vector<std::size_t> ys;
    for (const Sample& s : labeled.samples) {
        xs.push_back(s.x);
        if (s.label) ys.push_back(*s.label);
    }
    if (!ys.empty() && ys.size() != xs.size()) throw ShapeError("UnlabeledSet: partially labeled input");
    return UnlabeledSet(labeled.input_dim, labeled.num_classes, labeled.spec_hash, std::move(xs), std::move(ys));
}

void BenchmarkSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("benchmark: num_classes must be >= 2");
    if (input_dim < 2) throw std::invalid_argument("benchmark: input_dim must be >= 2");
    if (!(noise > 0.0)) throw std::invalid_argument("benchmark: noise must be positive");
    if (!(radius > 0.0)) throw std::invalid_argument("benchmark: radius must be positive");
    if (source_per_class < 1 || target_per_class < 1) {
        throw std::invalid_argument("benchmark: per-class counts must be >= 1");
    }
    if (translation.size() > input_dim) throw std::invalid_argument("benchmark: translation longer than input_dim");
}

std::string BenchmarkSpec::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "K=" << num_classes << ";dim=" << input_dim << ";ns=" << source_per_class << ";nt=" << target_per_class
       << ";ntl=" << target_labeled_per_class << ";radius=" << radius << ";noise=" << noise
       << ";shift=" << shift_degrees << ";seed=" << seed << ";translation=";
    for (double t : translation) os << t << ',';
    return os.str();
}

std::string BenchmarkSpec::hash() const { return hex64(fnv1a64(canonical())); }

namespace {

std::vector<Vector> class_centers(const BenchmarkSpec& spec, SeededRng rng) {
    const std::size_t k = spec.num_classes;
    const std::size_t d = spec.input_dim;
    std::vector<Vector> centers;
    if (d == 2) {
        for (std::size_t c = 0; c < k; ++c) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
            centers.push_back({spec.radius * std::cos(a), spec.radius * std::sin(a)});
        }
        return centers;
    }
    // Random orthonormal frame by Gram-Schmidt; random unit directions when K > d.
    for (std::size_t c = 0; c < k; ++c) {
        for (;;) {
            Vector v(d);
            for (double& x : v) x = rng.normal();
            if (c < d) {
                for (const Vector& u : centers) axpy(-dot(u, v) / (spec.radius * spec.radius), u, v);
            }
            const double n = norm(v);
            if (n < 1e-6) continue;
            centers.push_back(scaled(v, spec.radius / n));
            break;
        }
    }
    return centers;
}

Vector shift_to_target(const Vector& x, const BenchmarkSpec& spec) {
    const double a = spec.shift_degrees * std::numbers::pi / 180.0;
    Vector y = x;
    y[0] = std::cos(a) * x[0] - std::sin(a) * x[1];
    y[1] = std::sin(a) * x[0] + std::cos(a) * x[1];
    for (std::size_t i = 0; i < spec.translation.size(); ++i) y[i] += spec.translation[i];
    return y;
}

Vector draw_point(const Vector& center, double noise, SeededRng& rng) {
    Vector x = center;
    for (double& v : x) v += noise * rng.normal();
    return x;
}

}  // namespace

Benchmark generate_shift_benchmark(const BenchmarkSpec& spec) {
    spec.validate();
    const SeededRng root(spec.seed);
    const auto centers = class_centers(spec, root.derive("centers"));
    const std::string hash = spec.hash();

    Benchmark b;
    b.source = Dataset{spec.input_dim, spec.num_classes, hash, {}};
    SeededRng src_rng = root.derive("source");
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t i = 0; i < spec.source_per_class; ++i) {
            b.source.samples.push_back({draw_point(centers[c], spec.noise, src_rng), c, Domain::source});
        }
    }

    SeededRng tgt_rng = root.derive("target");
    std::vector<Vector> xs;
    std::vector<std::size_t> ys;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t i = 0; i < spec.target_per_class; ++i) {
            xs.push_back(shift_to_target(draw_point(centers[c], spec.noise, tgt_rng), spec));
            ys.push_back(c);
        }
    }
    b.target = UnlabeledSet(spec.input_dim, spec.num_classes, hash, std::move(xs), std::move(ys));

    b.target_labeled = Dataset{spec.input_dim, spec.num_classes, hash, {}};
    SeededRng shot_rng = root.derive("target-labeled");
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t i = 0; i < spec.target_labeled_per_class; ++i) {
            b.target_labeled.samples.push_back(
                {shift_to_target(draw_point(centers[c], spec.noise, shot_rng), spec), c, Domain::target});
        }
    }
    return b;
}

void AugmentSpec::validate() const {
    if (!(weak_noise >= 0.0) || !(strong_noise >= weak_noise)) {
        throw std::invalid_argument("augment: need strong_noise >= weak_noise >= 0");
    }
    if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw std::invalid_argument("augment: mask_prob must lie in [0,1)");
    if (!(scale_jitter >= 0.0 && scale_jitter < 1.0)) {
        throw std::invalid_argument("augment: scale_jitter must lie in [0,1)");
    }
}

Vector weak_augment(std::span<const double> x, const AugmentSpec& spec, SeededRng& rng) {
    Vector y(x.begin(), x.end());
    if (spec.weak_noise == 0.0) return y;
    for (double& v : y) v += spec.weak_noise * rng.normal();
    return y;
}

Vector strong_augment(std::span<const double> x, const AugmentSpec& spec, SeededRng& rng) {
    Vector y(x.begin(), x.end());
    for (double& v : y) v += spec.strong_noise * rng.normal();
    if (spec.mask_prob > 0.0) {
        for (double& v : y) {
            if (rng.uniform() < spec.mask_prob) v = 0.0;
        }
    }
    if (spec.scale_jitter > 0.0) {
        const double s = rng.uniform(1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter);
        for (double& v : y) v *= s;
    }
    return y;
}

BatchIterator::BatchIterator(std::size_t dataset_size, std::size_t batch_size, SeededRng stream)
    : n_(dataset_size), batch_size_(batch_size), stream_(std::move(stream)) {
    if (n_ == 0) throw std::invalid_argument("batch_iter: empty dataset");
    if (batch_size_ == 0) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
    order_ = epoch_order(0);
}

std::vector<std::size_t> BatchIterator::epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(n_);
    for (std::size_t i = 0; i < n_; ++i) order[i] = i;
    SeededRng rng = stream_.derive(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n_; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    return order;
}

std::vector<std::size_t> BatchIterator::next() {
    if (position_ >= n_) {
        ++epoch_;
        position_ = 0;
        order_ = epoch_order(epoch_);
    }
    const std::size_t end = std::min(n_, position_ + batch_size_);
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(position_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    position_ = end;
    return batch;
}

void BatchIterator::seek(std::size_t epoch, std::size_t position) {
    if (position > n_) throw std::invalid_argument("BatchIterator::seek: position past end of epoch");
    epoch_ = epoch;
    position_ = position;
    order_ = epoch_order(epoch_);
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t dataset_size, std::size_t batch_size,
                                                 const SeededRng& epoch_stream) {
    BatchIterator it(dataset_size, batch_size, epoch_stream);
    std::vector<std::vector<std::size_t>> batches;
    while (it.epoch() == 0 && it.position() < dataset_size) batches.push_back(it.next());
    return batches;
}

DatasetParseError::DatasetParseError(std::size_t line, std::string field, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", field " + field + ": " + message),
      line_(line),
      field_(std::move(field)) {}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line, const std::string& field) {
    T value{};
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last || s.empty()) {
        throw DatasetParseError(line, field, "cannot parse '" + s + "'");
    }
    return value;
}

constexpr const char* kHeaderTag = "# lrco-dataset";

}  // namespace

std::string format_dataset(const Dataset& set) {
    std::string out;
    out += std::string(kHeaderTag) + " input_dim=" + std::to_string(set.input_dim) +
           " num_classes=" + std::to_string(set.num_classes) +
           " spec_hash=" + (set.spec_hash.empty() ? "-" : set.spec_hash) + "\n";
    char buf[40];
    for (const Sample& s : set.samples) {
        if (s.x.size() != set.input_dim) throw ShapeError("save_dataset: sample dimension mismatch");
        out += domain_name(s.domain);
        out += ',';
        out += s.label ? std::to_string(*s.label) : "-";
        for (double v : s.x) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

Dataset parse_dataset(const std::string& text) {
    Dataset set;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.rfind(kHeaderTag, 0) == 0) {
            std::istringstream hs(line.substr(std::string(kHeaderTag).size()));
            std::string kv;
            while (hs >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw DatasetParseError(lineno, "header", "expected key=value");
                const std::string key = kv.substr(0, eq);
                const std::string value = kv.substr(eq + 1);
                if (key == "input_dim") {
                    set.input_dim = parse_number<std::size_t>(value, lineno, key);
                } else if (key == "num_classes") {
                    set.num_classes = parse_number<std::size_t>(value, lineno, key);
                } else if (key == "spec_hash") {
                    set.spec_hash = value == "-" ? "" : value;
                } else {
                    throw DatasetParseError(lineno, key, "unknown header key");
                }
            }
            have_header = true;
            continue;
        }
        if (line[0] == '#') continue;
        if (!have_header) throw DatasetParseError(lineno, "header", "sample before header line");
        const auto fields = split_commas(line);
        if (fields.size() != set.input_dim + 2) {
            throw DatasetParseError(lineno, "field_count",
                                    "expected " + std::to_string(set.input_dim + 2) + " fields, got " +
                                        std::to_string(fields.size()));
        }
        Sample s;
        if (fields[0] == "source") {
            s.domain = Domain::source;
        } else if (fields[0] == "target") {
            s.domain = Domain::target;
        } else {
            throw DatasetParseError(lineno, "domain", "unknown domain tag '" + fields[0] + "'");
        }
        if (fields[1] != "-") {
            s.label = parse_number<std::size_t>(fields[1], lineno, "label");
            if (set.num_classes > 0 && *s.label >= set.num_classes) {
                throw DatasetParseError(lineno, "label", "label out of range");
            }
        }
        s.x.resize(set.input_dim);
        for (std::size_t i = 0; i < set.input_dim; ++i) {
            s.x[i] = parse_number<double>(fields[i + 2], lineno, "x" + std::to_string(i));
        }
        set.samples.push_back(std::move(s));
    }
    return set;
}

void save_dataset(const std::string& path, const Dataset& set) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << format_dataset(set);
    if (!out) throw IoError("write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_dataset(ss.str());
}

}  // namespace lrco
