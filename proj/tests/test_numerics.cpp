#include <doctest.h>

#include <cmath>

#include "lrco/numerics.hpp"

using namespace lrco;

TEST_SUITE("numerics") {

TEST_CASE("softmax examples") {
    const Vector a = softmax_t(Vector{0, 0}, 1.0);
    CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-15));
    const Vector b = softmax_t(Vector{3, 3, 3, 3}, 0.7);
    for (double v : b) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    // e / (e + 1)
    const Vector c = softmax_t(Vector{1, 0}, 1.0);
    CHECK(std::abs(c[0] - 0.731058578630004879) < 1e-15);
    CHECK(std::abs(c[1] - 0.268941421369995121) < 1e-15);
}

TEST_CASE("softmax rejects bad input") {
    CHECK_THROWS(softmax_t(Vector{}, 1.0));
    CHECK_THROWS(softmax_t(Vector{1.0}, 0.0));
    CHECK_THROWS(softmax_t(Vector{1.0}, -1.0));
}

TEST_CASE("softmax properties on random inputs") {
    SeededRng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(12);
        Vector v(n);
        for (double& x : v) x = 20.0 * rng.normal();
        const double t = rng.uniform(0.01, 3.0);
        const Vector p = softmax_t(v, t);
        double sum = 0.0;
        for (double x : p) {
            CHECK(x >= 0.0);
            sum += x;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);

        const double c = 50.0 * rng.normal();
        Vector shifted = v;
        for (double& x : shifted) x += c;
        const Vector ps = softmax_t(shifted, t);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(ps[i] - p[i]) < 1e-12);

        Vector divided = v;
        for (double& x : divided) x /= t;
        const Vector pd = softmax_t(divided, 1.0);
        for (std::size_t i = 0; i < n; ++i) CHECK(pd[i] == p[i]);
    }
}

TEST_CASE("softmax survives huge logits") {
    const Vector p = softmax_t(Vector{1e300, 0.0}, 1e-3);
    CHECK(p[0] == 1.0);
    CHECK(all_finite(p));
}

TEST_CASE("l2_normalize examples and errors") {
    const Vector a = l2_normalize(Vector{3, 4});
    CHECK(a[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(a[1] == doctest::Approx(0.8).epsilon(1e-15));
    const Vector b = l2_normalize(Vector{2, 0, 0});
    CHECK(b == Vector{1, 0, 0});
    const Vector u{0.6, 0.8};
    const Vector c = l2_normalize(u);
    CHECK(std::abs(c[0] - 0.6) < 1e-15);
    CHECK_THROWS_AS(l2_normalize(Vector{0, 0}), NumericError);
    CHECK_THROWS_AS(l2_normalize(Vector{1e-13, 0}), NumericError);
}

TEST_CASE("l2_normalize is idempotent and unit") {
    SeededRng rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        Vector v(1 + rng.uniform_index(10));
        for (double& x : v) x = rng.normal() * std::pow(10.0, rng.uniform(-5.0, 5.0));
        const Vector u = l2_normalize(v);
        CHECK(std::abs(norm(u) - 1.0) < 1e-12);
        const Vector uu = l2_normalize(u);
        for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::abs(uu[i] - u[i]) < 1e-12);
    }
}

TEST_CASE("log_sum_exp examples") {
    CHECK(std::abs(log_sum_exp(Vector{0, 0}) - std::log(2.0)) < 1e-15);
    CHECK(std::abs(log_sum_exp(Vector{1000, 1000}) - (1000.0 + std::log(2.0))) < 1e-12);
    CHECK(std::abs(log_sum_exp(Vector{1, 2, 3}) - 3.40760596444438030) < 1e-14);
    CHECK_THROWS(log_sum_exp(Vector{}));
}

TEST_CASE("sample_beta moments") {
    SeededRng rng(5);
    constexpr int n = 100000;
    double mean = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = sample_beta(1.0, rng);
        CHECK_UNARY(x > 0.0 && x < 1.0);
        mean += x;
        sq += x * x;
    }
    mean /= n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean - 0.5) < 0.005);
    CHECK(std::abs(var - 1.0 / 12.0) < 0.003);

    double mean_half = 0.0, sq_half = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = sample_beta(0.5, rng);
        mean_half += x;
        sq_half += x * x;
    }
    mean_half /= n;
    CHECK(std::abs(mean_half - 0.5) < 0.005);
    // Var Beta(a,a) = 1 / (4 (2a + 1)) = 1/8 at a = 0.5
    CHECK(std::abs(sq_half / n - mean_half * mean_half - 0.125) < 0.003);
    CHECK_THROWS(sample_beta(0.0, rng));
}

TEST_CASE("sample_beta is reproducible") {
    SeededRng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(sample_beta(0.7, a) == sample_beta(0.7, b));
}

TEST_CASE("rng streams") {
    SeededRng root(9);
    SeededRng x1 = root.derive("augment"), x2 = root.derive("augment");
    SeededRng y = root.derive("mixup");
    CHECK(x1.next_u64() == x2.next_u64());
    CHECK(root.derive("augment").next_u64() != y.next_u64());
    CHECK(root.derive(std::uint64_t{1}).next_u64() != root.derive(std::uint64_t{2}).next_u64());

    SeededRng s(1);
    for (int i = 0; i < 17; ++i) s.normal();
    const std::string st = s.state();
    const double next = s.uniform();
    SeededRng r(0);
    r.restore(st);
    CHECK(r == SeededRng(r));
    CHECK(r.uniform() == next);
}

TEST_CASE("uniform_index is unbiased enough") {
    SeededRng rng(2);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) counts[rng.uniform_index(7)] += 1;
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("finite_diff_grad examples") {
    const auto quad = [](std::span<const double> p) { return dot(p, p); };
    const Vector g = finite_diff_grad(quad, Vector{1, 2}, 1e-5);
    CHECK(std::abs(g[0] - 2.0) < 1e-6);
    CHECK(std::abs(g[1] - 4.0) < 1e-6);

    const Vector z = finite_diff_grad([](std::span<const double>) { return 3.0; }, Vector{1, 2, 3});
    for (double v : z) CHECK(v == 0.0);

    // softmax cross-entropy: d/dz[-log softmax(z)_y] = p - e_y
    SeededRng rng(8);
    Vector logits(3);
    for (double& x : logits) x = rng.normal();
    const std::size_t y = 1;
    const auto ce = [&](std::span<const double> z) { return -std::log(softmax_t(z, 1.0)[y]); };
    const Vector num = finite_diff_grad(ce, logits);
    Vector analytic = softmax_t(logits, 1.0);
    analytic[y] -= 1.0;
    CHECK(relative_error(analytic, num) < 1e-6);
}

TEST_CASE("softmax and l2 vector-Jacobian products") {
    SeededRng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(6);
        Vector z(n), g(n);
        for (double& x : z) x = rng.normal();
        for (double& x : g) x = rng.normal();
        const double t = rng.uniform(0.1, 2.0);
        const Vector p = softmax_t(z, t);
        const Vector analytic = softmax_t_vjp(p, g, t);
        const Vector num = finite_diff_grad([&](std::span<const double> v) { return dot(g, softmax_t(v, t)); }, z);
        CHECK(relative_error(analytic, num) < 1e-6);

        const Vector u = l2_normalize(z);
        const Vector a2 = l2_normalize_vjp(u, norm(z), g);
        const Vector n2 = finite_diff_grad([&](std::span<const double> v) { return dot(g, l2_normalize(v)); }, z);
        CHECK(relative_error(a2, n2) < 1e-6);
    }
}

TEST_CASE("relative_error floor") {
    CHECK(relative_error(Vector{0, 0}, Vector{1e-9, 0}) == doctest::Approx(1e-3));
    CHECK(relative_error(Vector{1, 0}, Vector{1, 0}) == 0.0);
}

}  // TEST_SUITE
