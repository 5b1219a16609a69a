#include "lrco/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace lrco {

Matrix::Matrix(std::size_t rows, std::size_t cols, Vector data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data size does not match shape");
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw ShapeError("axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vector scaled(std::span<const double> v, double s) {
    Vector out(v.begin(), v.end());
    for (double& x : out) x *= s;
    return out;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vector softmax_t(std::span<const double> v, double temperature) {
    if (v.empty()) throw std::invalid_argument("softmax_t: empty vector");
    if (!(temperature > 0.0)) throw std::invalid_argument("softmax_t: temperature must be positive");
    Vector p(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) p[i] = v[i] / temperature;
    const double m = *std::max_element(p.begin(), p.end());
    double z = 0.0;
    for (double& x : p) {
        x = std::exp(x - m);
        z += x;
    }
    for (double& x : p) x /= z;
    return p;
}

Vector softmax_t_vjp(std::span<const double> p, std::span<const double> g, double temperature) {
    const double pg = dot(p, g);
    Vector dz(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (g[i] - pg) / temperature;
    return dz;
}

Vector l2_normalize(std::span<const double> v) {
    const double n = norm(v);
    if (!(n > kDegenerateNorm)) throw NumericError("l2_normalize: degenerate feature norm");
    return scaled(v, 1.0 / n);
}

Vector l2_normalize_vjp(std::span<const double> u, double input_norm, std::span<const double> g) {
    const double ug = dot(u, g);
    Vector dv(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) dv[i] = (g[i] - u[i] * ug) / input_norm;
    return dv;
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("log_sum_exp: empty vector");
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax: empty vector");
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(make_engine(seed)) {}

SeededRng SeededRng::derive(std::string_view stream) const {
    return SeededRng(splitmix64(seed_ ^ fnv1a64(stream)));
}

SeededRng SeededRng::derive(std::uint64_t index) const {
    return SeededRng(splitmix64(splitmix64(seed_) + index));
}

std::uint64_t SeededRng::next_u64() { return engine_(); }

double SeededRng::uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t SeededRng::uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

double SeededRng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double SeededRng::gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
        // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
        const double g = gamma(shape + 1.0);
        return g * std::pow(uniform(), 1.0 / shape);
    }
    // Marsaglia-Tsang.
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::string SeededRng::state() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_;
    return os.str();
}

void SeededRng::restore(const std::string& state) {
    std::istringstream is(state);
    std::uint64_t seed;
    std::mt19937_64 engine;
    is >> seed >> engine;
    if (!is) throw std::invalid_argument("SeededRng: malformed state string");
    seed_ = seed;
    engine_ = engine;
}

double sample_beta(double alpha, SeededRng& rng) {
    if (!(alpha > 0.0)) throw std::invalid_argument("sample_beta: alpha must be positive");
    if (alpha == 1.0) return rng.uniform();
    for (;;) {
        const double a = rng.gamma(alpha);
        const double b = rng.gamma(alpha);
        const double s = a + b;
        if (s <= 0.0) continue;
        const double x = a / s;
        // Keep the draw inside the open interval.
        if (x > 0.0 && x < 1.0) return x;
    }
}

Vector finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> p, double h) {
    Vector work(p.begin(), p.end());
    Vector g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = work[i];
        work[i] = orig + h;
        const double fp = f(work);
        work[i] = orig - h;
        const double fm = f(work);
        work[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
    if (a.size() != b.size()) throw ShapeError("relative_error: size mismatch");
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double denom = std::max({norm(a), norm(b), floor});
    return std::sqrt(diff) / denom;
}

}  // namespace lrco
