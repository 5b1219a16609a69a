#include "lrco/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>

#include <Eigen/Dense>

#include "lrco/losses.hpp"

namespace lrco {

namespace {

struct PairSums {
    double within = 0.0;
    double cross = 0.0;
    std::size_t n_within = 0;
    std::size_t n_cross = 0;
};

// Row i accumulates the pairs (i, j) with j > i, so rows are independent.
PairSums row_pairs(std::size_t i, std::span<const Vector> features, std::span<const std::size_t> labels,
                   const std::vector<std::size_t>& members) {
    PairSums s;
    const std::size_t a = members[i];
    for (std::size_t jj = i + 1; jj < members.size(); ++jj) {
        const std::size_t b = members[jj];
        const double c = dot(features[a], features[b]);
        if (labels[a] == labels[b]) {
            s.within += c;
            ++s.n_within;
        } else {
            s.cross += c;
            ++s.n_cross;
        }
    }
    return s;
}

GroupSimilarity group_similarity(std::span<const Vector> features, std::span<const std::size_t> labels,
                                 const std::vector<std::size_t>& members, Execution exec) {
    GroupSimilarity g;
    std::set<std::size_t> classes;
    for (std::size_t m : members) classes.insert(labels[m]);
    const std::size_t n = members.size();
    if (n < 2 || classes.size() < 2) {
        g.degenerate = true;
        g.within = g.cross = std::numeric_limits<double>::quiet_NaN();
        return g;
    }
    std::vector<PairSums> rows(n);
    if (exec == Execution::parallel) {
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
        for (std::ptrdiff_t i = 0; i < count; ++i) {
            rows[static_cast<std::size_t>(i)] = row_pairs(static_cast<std::size_t>(i), features, labels, members);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) rows[i] = row_pairs(i, features, labels, members);
    }
    PairSums total;
    for (const PairSums& r : rows) {
        total.within += r.within;
        total.cross += r.cross;
        total.n_within += r.n_within;
        total.n_cross += r.n_cross;
    }
    g.within_pairs = total.n_within;
    g.cross_pairs = total.n_cross;
    g.within = total.n_within > 0 ? total.within / static_cast<double>(total.n_within)
                                  : std::numeric_limits<double>::quiet_NaN();
    g.cross = total.cross / static_cast<double>(total.n_cross);
    g.degenerate = total.n_within == 0;
    return g;
}

}  // namespace

SimilarityReport similarity_stats(std::span<const Vector> features, std::span<const std::size_t> labels,
                                  const std::vector<bool>& confident, Execution exec) {
    if (features.size() != labels.size() || features.size() != confident.size()) {
        throw ShapeError("similarity_stats: input lengths differ");
    }
    std::vector<std::size_t> high, low, all;
    for (std::size_t i = 0; i < features.size(); ++i) {
        all.push_back(i);
        (confident[i] ? high : low).push_back(i);
    }
    SimilarityReport r;
    r.high = group_similarity(features, labels, high, exec);
    r.low = group_similarity(features, labels, low, exec);
    r.all = group_similarity(features, labels, all, exec);
    r.within_scale = r.all.within;
    r.cross_scale = r.all.cross;
    return r;
}

std::vector<double> topk_accumulation(std::span<const Vector> probs, std::size_t k_max) {
    if (probs.empty()) throw std::invalid_argument("topk_accumulation: no samples");
    if (k_max < 1) throw std::invalid_argument("topk_accumulation: k_max must be >= 1");
    std::vector<double> curve(k_max, 0.0);
    for (const Vector& p : probs) {
        if (p.size() < k_max) throw std::invalid_argument("topk_accumulation: fewer classes than k_max");
        Vector sorted = p;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        double acc = 0.0;
        for (std::size_t k = 0; k < k_max; ++k) {
            acc += sorted[k];
            curve[k] += acc;
        }
    }
    for (double& c : curve) c /= static_cast<double>(probs.size());
    return curve;
}

std::vector<std::array<double, 2>> project_2d(std::span<const Vector> features) {
    const std::size_t n = features.size();
    if (n < 3) throw std::invalid_argument("project_2d: need at least 3 samples");
    const std::size_t d = features[0].size();
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        if (features[i].size() != d) throw ShapeError("project_2d: ragged features");
        for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = features[i][j];
    }
    x.rowwise() -= x.colwise().mean();

    std::vector<std::array<double, 2>> out(n, {0.0, 0.0});
    if (d < 2) {
        for (std::size_t i = 0; i < n; ++i) out[i][0] = d == 1 ? x(static_cast<Eigen::Index>(i), 0) : 0.0;
        return out;
    }
    const Eigen::MatrixXd cov = x.transpose() * x;
    if (cov.norm() == 0.0) return out;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    // Eigenvalues ascend; the last two columns are the leading components.
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(d), 2);
    for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd v = eig.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - c);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        basis.col(c) = v;
    }
    const Eigen::MatrixXd proj = x * basis;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = {proj(static_cast<Eigen::Index>(i), 0), proj(static_cast<Eigen::Index>(i), 1)};
    }
    return out;
}

FeatureSnapshot snapshot_features(const ModelState& m, const Dataset& labeled, double tau, FeatureMode mode) {
    const ClassifierView view = ClassifierView::of(m);
    FeatureSnapshot s;
    for (const Sample& sample : labeled.samples) {
        if (!sample.label) throw std::invalid_argument("snapshot_features: unlabeled sample");
        const Vector f = forward_features(m, sample.x);
        Vector p = classify_traced(view, f, m.config().t_ce).probs;
        s.confident.push_back(p[argmax(p)] > tau);
        s.probs.push_back(std::move(p));
        s.features.push_back(contrastive_key(view, f, mode, m.config().t_re));
        s.labels.push_back(*sample.label);
    }
    return s;
}

MixTopkCurves mix_topk_curves(const ModelState& m, const Dataset& target, const Dataset& source, double tau,
                              double alpha, std::uint64_t seed, std::size_t k_max) {
    if (target.empty() || source.empty()) throw std::invalid_argument("mix_topk_curves: empty input");
    const ClassifierView view = ClassifierView::of(m);
    const double t_ce = m.config().t_ce;
    SeededRng rng = SeededRng(seed).derive("analysis-mix");
    std::vector<Vector> high, low;
    for (const Sample& t : target.samples) {
        const Vector pt = classify_traced(view, forward_features(m, t.x), t_ce).probs;
        const bool confident = pt[argmax(pt)] > tau;
        const Sample& s = source.samples[rng.uniform_index(source.size())];
        const MixDraw draw = draw_mix(alpha, rng);
        Vector x(t.x.size());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = draw.lambda_prime * t.x[i] + (1.0 - draw.lambda_prime) * s.x[i];
        (confident ? high : low).push_back(classify_traced(view, forward_features(m, x), t_ce).probs);
    }
    MixTopkCurves c;
    c.n_high = high.size();
    c.n_low = low.size();
    if (!high.empty()) c.high = topk_accumulation(high, k_max);
    if (!low.empty()) c.low = topk_accumulation(low, k_max);
    return c;
}

std::string analysis_file_name(const std::string& run_id, std::size_t step, const std::string& split,
                               const std::string& kind) {
    return run_id + "_step" + std::to_string(step) + "_" + split + "_" + kind + ".csv";
}

namespace {

std::ofstream open_csv(const std::string& path, const std::string& config_hash, std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << "# config_hash=" << config_hash << " seed=" << seed << '\n';
    return out;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_similarity_csv(const std::string& path, const SimilarityReport& r, const std::string& feature_space,
                          const std::string& config_hash, std::uint64_t seed) {
    auto out = open_csv(path, config_hash, seed);
    out << "group,feature_space,within,cross,within_scaled,cross_scaled,within_pairs,cross_pairs,degenerate\n";
    const std::pair<const char*, const GroupSimilarity*> rows[] = {{"high", &r.high}, {"low", &r.low}, {"all", &r.all}};
    for (const auto& [name, g] : rows) {
        out << name << ',' << feature_space << ',' << num(g->within) << ',' << num(g->cross) << ','
            << num(r.scaled_within(*g)) << ',' << num(r.scaled_cross(*g)) << ',' << g->within_pairs << ','
            << g->cross_pairs << ',' << (g->degenerate ? 1 : 0) << '\n';
    }
}

void write_topk_csv(const std::string& path, const MixTopkCurves& c, const std::string& config_hash,
                    std::uint64_t seed) {
    auto out = open_csv(path, config_hash, seed);
    out << "k,high_mix,low_mix\n";
    const std::size_t n = std::max(c.high.size(), c.low.size());
    for (std::size_t k = 0; k < n; ++k) {
        out << (k + 1) << ',' << (k < c.high.size() ? num(c.high[k]) : "") << ','
            << (k < c.low.size() ? num(c.low[k]) : "") << '\n';
    }
}

void write_projection_csv(const std::string& path, std::span<const std::array<double, 2>> coords,
                          std::span<const Domain> domains, std::span<const std::size_t> labels,
                          const std::vector<bool>& confident, const std::string& config_hash, std::uint64_t seed) {
    auto out = open_csv(path, config_hash, seed);
    out << "x,y,domain,label,confident\n";
    for (std::size_t i = 0; i < coords.size(); ++i) {
        out << num(coords[i][0]) << ',' << num(coords[i][1]) << ',' << domain_name(domains[i]) << ',' << labels[i]
            << ',' << (confident[i] ? 1 : 0) << '\n';
    }
}

}  // namespace lrco
