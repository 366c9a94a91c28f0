#include <cmath>

#include "doctest.h"
#include "ewe/rng.hpp"
#include "ewe/snnl.hpp"

using namespace ewe;

namespace {

// Independent direct evaluation of the loss definition in 64-bit arithmetic;
// the reference the tensor-engine path is checked against.
double snnl_reference(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                      double temperature, double eps = 1e-12) {
    const size_t n = x.size();
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double num = 0.0, den = 0.0;
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = 0.0;
            for (size_t c = 0; c < x[i].size(); ++c) {
                const double diff = x[i][c] - x[j][c];
                d += diff * diff;
            }
            const double w = std::exp(-d / temperature);
            den += w;
            if (y[i] == y[j]) num += w;
        }
        total += std::log((num + eps) / den);
    }
    return -total / static_cast<double>(n);
}

SnnlBatch make_batch(const std::vector<std::vector<double>>& x, std::vector<int> y, double t) {
    const int n = static_cast<int>(x.size());
    const int d = static_cast<int>(x[0].size());
    Tensor pts = zeros({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            (*pts.data)[i * d + j] = static_cast<float>(x[i][j]);
    return SnnlBatch{pts, std::move(y), t};
}

std::vector<std::vector<double>> random_points(int n, int d, Rng& rng) {
    std::vector<std::vector<double>> x(n, std::vector<double>(d));
    for (auto& row : x)
        for (auto& v : row) v = rng.uniform(-1.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("frozen values from the direct-formula oracle") {
    // single same-group pair: numerator equals denominator
    CHECK(snnl(make_batch({{0.0}, {1.0}}, {0, 0}, 1.0)) == doctest::Approx(0.0).epsilon(1e-6));

    // two singleton groups: only the eps floor survives in the numerator,
    // -log(eps / e^{-1}) = 26.6310211159...
    CHECK(snnl(make_batch({{0.0}, {1.0}}, {0, 1}, 1.0)) ==
          doctest::Approx(26.6310211159).epsilon(1e-5));

    // two tight clusters; value frozen from the 64-bit reference
    const std::vector<std::vector<double>> x{{0.0}, {0.1}, {1.0}, {1.1}};
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(snnl_reference(x, y, 1.0) == doctest::Approx(0.5569077324).epsilon(1e-9));
    CHECK(snnl(make_batch(x, y, 1.0)) == doctest::Approx(0.5569077324).epsilon(1e-5));
}

TEST_CASE("engine value matches the reference on random batches") {
    Rng rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(8));
        const int d = 1 + static_cast<int>(rng.below(5));
        auto x = random_points(n, d, rng);
        std::vector<int> y(n);
        for (auto& g : y) g = static_cast<int>(rng.below(3));
        const double t = rng.uniform(0.2, 8.0);
        const double ref = snnl_reference(x, y, t);
        const double got = snnl(make_batch(x, y, t));
        CHECK(got == doctest::Approx(ref).epsilon(1e-4));
    }
}

TEST_CASE("contract errors") {
    CHECK_THROWS_AS(snnl(make_batch({{0.0}}, {0}, 1.0)), ContractError);
    CHECK_THROWS_AS(snnl(make_batch({{0.0}, {1.0}}, {0, 1}, 0.0)), ContractError);
    CHECK_THROWS_AS(snnl(make_batch({{0.0}, {1.0}}, {0, 1}, -2.0)), ContractError);
    CHECK_THROWS_AS(snnl(make_batch({{0.0}, {1.0}}, {0}, 1.0)), ContractError);
}

TEST_CASE("input gradient: symmetry, finite differences, permutation") {
    // coincident same-group points sit at a stationary point
    Tensor g0 = snnl_grad_input(make_batch({{0.5, 0.5}, {0.5, 0.5}}, {0, 0}, 2.0));
    for (long i = 0; i < g0.numel(); ++i) CHECK((*g0.data)[i] == doctest::Approx(0.0));

    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_points(8, 3, rng);
        std::vector<int> y{0, 0, 0, 1, 1, 1, 2, 2};
        const double t = rng.uniform(0.5, 4.0);
        SnnlBatch batch = make_batch(x, y, t);

        Tensor temp = full({1}, static_cast<float>(t));
        auto f = [&](Tape* tape, const Tensor& z) { return snnl_value(tape, z, y, temp); };
        auto res = grad_check(f, batch.points, 1e-3, 1e-3);
        CAPTURE(res.max_err);
        CHECK(res.pass);
    }

    // permuting rows permutes gradient rows identically
    auto x = random_points(6, 2, rng);
    std::vector<int> y{0, 1, 0, 1, 2, 2};
    Tensor g = snnl_grad_input(make_batch(x, y, 1.5));
    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    std::vector<std::vector<double>> xp;
    std::vector<int> yp;
    for (int p : perm) {
        xp.push_back(x[p]);
        yp.push_back(y[p]);
    }
    Tensor gp = snnl_grad_input(make_batch(xp, yp, 1.5));
    for (int i = 0; i < 6; ++i)
        for (int c = 0; c < 2; ++c)
            CHECK((*gp.data)[i * 2 + c] ==
                  doctest::Approx((*g.data)[perm[i] * 2 + c]).epsilon(1e-6));
}

TEST_CASE("temperature gradient") {
    // constant loss (single same-group pair) has zero temperature gradient
    CHECK(snnl_grad_temperature(make_batch({{0.0}, {1.0}}, {0, 0}, 3.0)) ==
          doctest::Approx(0.0).epsilon(1e-7));

    Rng rng(29);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_points(7, 2, rng);
        std::vector<int> y{0, 1, 0, 1, 0, 1, 0};
        const double t = rng.uniform(0.5, 4.0);
        const double got = snnl_grad_temperature(make_batch(x, y, t));
        const double h = 1e-3 * t;
        const double fd = (snnl_reference(x, y, t + h) - snnl_reference(x, y, t - h)) / (2 * h);
        CHECK(got == doctest::Approx(fd).epsilon(2e-3).scale(1.0));
    }

    // chain rule through the exact scale invariance:
    // dSNNL/dT at (X,T) = c^2 * dSNNL/dT at (cX, c^2 T)
    auto x = random_points(6, 3, rng);
    std::vector<int> y{0, 0, 1, 1, 2, 2};
    const double t = 1.7, c = 2.0;
    std::vector<std::vector<double>> xs = x;
    for (auto& row : xs)
        for (auto& v : row) v *= c;
    const double lhs = snnl_grad_temperature(make_batch(x, y, t));
    const double rhs = c * c * snnl_grad_temperature(make_batch(xs, y, c * c * t));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-3).scale(1.0));
}

TEST_CASE("invariances of the loss") {
    Rng rng(31);
    auto x = random_points(8, 4, rng);
    std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
    const double t = 2.5;
    const double base = snnl(make_batch(x, y, t));

    SUBCASE("scale invariance snnl(cX, c^2 T) == snnl(X, T)") {
        for (double c : {0.5, 2.0, 10.0}) {
            auto xs = x;
            for (auto& row : xs)
                for (auto& v : row) v *= c;
            CHECK(snnl(make_batch(xs, y, c * c * t)) ==
                  doctest::Approx(base).epsilon(1e-5).scale(1.0));
        }
    }

    SUBCASE("joint permutation invariance") {
        std::vector<int> perm{7, 2, 5, 0, 3, 6, 1, 4};
        std::vector<std::vector<double>> xp;
        std::vector<int> yp;
        for (int p : perm) {
            xp.push_back(x[p]);
            yp.push_back(y[p]);
        }
        CHECK(snnl(make_batch(xp, yp, t)) == doctest::Approx(base).epsilon(1e-6).scale(1.0));
    }

    SUBCASE("group relabel invariance") {
        std::vector<int> relabeled;
        for (int g : y) relabeled.push_back(g == 0 ? 7 : g == 1 ? 42 : -3);
        CHECK(snnl(make_batch(x, relabeled, t)) == doctest::Approx(base).epsilon(1e-6).scale(1.0));
    }

    SUBCASE("nonnegativity up to eps effects") {
        for (int trial = 0; trial < 20; ++trial) {
            auto xr = random_points(6, 2, rng);
            std::vector<int> yr{0, 0, 1, 1, 0, 1};
            CHECK(snnl(make_batch(xr, yr, rng.uniform(0.3, 5.0))) >= -1e-6);
        }
    }

    SUBCASE("moving clusters together decreases the loss") {
        auto clusters_at = [&](double sep) {
            std::vector<std::vector<double>> pts;
            std::vector<int> groups;
            Rng local(5);
            for (int i = 0; i < 6; ++i) {
                const double jitter = local.uniform(-0.05, 0.05);
                const bool second = i >= 3;
                pts.push_back({(second ? sep : 0.0) + jitter});
                groups.push_back(second ? 1 : 0);
            }
            return snnl(make_batch(pts, groups, 1.0));
        };
        CHECK(clusters_at(10.0) > clusters_at(0.1));
    }
}
