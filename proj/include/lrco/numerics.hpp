#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lrco {

using Vector = std::vector<double>;

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Norms below this are treated as degenerate features, never clamped.
inline constexpr double kDegenerateNorm = 1e-12;

// Row-major dense matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, Vector data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    const Vector& data() const { return data_; }
    Vector& data() { return data_; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vector data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector scaled(std::span<const double> v, double s);
bool all_finite(std::span<const double> v);

/// Temperature-scaled softmax, max-shifted. Throws on T <= 0 or empty input.
Vector softmax_t(std::span<const double> v, double temperature);

/// Vector-Jacobian product of softmax_t: given p = softmax_t(z, T) and
/// g = dL/dp, returns dL/dz.
Vector softmax_t_vjp(std::span<const double> p, std::span<const double> g, double temperature);

/// Throws NumericError when ||v|| <= kDegenerateNorm.
Vector l2_normalize(std::span<const double> v);

/// Given u = v/||v|| and g = dL/du, returns dL/dv = (g - u<u,g>)/||v||.
Vector l2_normalize_vjp(std::span<const double> u, double input_norm, std::span<const double> g);

double log_sum_exp(std::span<const double> v);

std::size_t argmax(std::span<const double> v);

/// Deterministic random source. Consumers derive named sub-streams so that
/// adding or reordering consumers never perturbs another consumer's draws.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }

    SeededRng derive(std::string_view stream) const;
    SeededRng derive(std::uint64_t index) const;

    std::uint64_t next_u64();
    /// Uniform on the open interval (0,1).
    double uniform();
    double uniform(double lo, double hi);
    std::size_t uniform_index(std::size_t n);
    double normal();
    double gamma(double shape);

    std::string state() const;
    void restore(const std::string& state);

    friend bool operator==(const SeededRng& a, const SeededRng& b) {
        return a.seed_ == b.seed_ && a.engine_ == b.engine_;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

/// Stable 64-bit FNV-1a, used for stream ids and content hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Beta(alpha, alpha) via two Gamma draws; alpha == 1 is sampled directly as a uniform.
double sample_beta(double alpha, SeededRng& rng);

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h per coordinate.
Vector finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> p, double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor). The floor keeps round-off on an
/// identically zero gradient from reading as a large relative error.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6);

}  // namespace lrco
