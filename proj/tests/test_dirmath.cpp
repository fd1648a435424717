#include <doctest.h>

#include <cmath>

#include "endd/dirmath.hpp"
#include "endd/rng.hpp"
#include "test_oracles.hpp"

using namespace endd;
using dirmath::Categorical;
using dirmath::DirichletParams;
using dirmath::TokenPosteriorSet;

namespace {

Categorical cat(std::vector<double> p) { return Categorical(std::move(p)); }
DirichletParams dir(std::vector<double> a) { return DirichletParams(std::move(a)); }

}  // namespace

TEST_SUITE("dirmath") {

TEST_CASE("log_gamma matches arbitrary-precision references") {
    // Reference values computed with mpmath at 30 digits.
    const struct { double x, ref; } cases[] = {
        {0.001, 6.9071788853838537},
        {0.01, 4.5994798780420217},
        {0.1, 2.2527126517342060},
        {0.5, 0.57236494292470009},
        {1.0, 0.0},
        {1.5, -0.12078223763524522},
        {2.0, 0.0},
        {3.7, 1.4280723266653879},
        {4.0, 1.7917594692280550},
        {10.0, 12.801827480081470},
        {100.0, 359.13420536957540},
        {1234.5, 7550.5509010778949},
        {10000.0, 82099.717496442377},
    };
    for (const auto& c : cases)
        CHECK(std::abs(dirmath::log_gamma(c.x) - c.ref) < 1e-10);
    // Above ~1e4 a 1e-10 absolute error is below the spacing of doubles at
    // the result's magnitude; the contract degrades to relative accuracy.
    CHECK(std::abs(dirmath::log_gamma(1e5) - 1051287.7089736569) <
          1e-13 * 1051287.7089736569);
    CHECK(std::abs(dirmath::log_gamma(1e6) - 12815504.569147612) <
          1e-13 * 12815504.569147612);
    CHECK(dirmath::log_gamma(4.0) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    CHECK_THROWS_AS((void)dirmath::log_gamma(0.0), std::domain_error);
    CHECK_THROWS_AS((void)dirmath::log_gamma(-1.0), std::domain_error);
}

TEST_CASE("digamma matches references and the recurrence") {
    const struct { double x, ref; } cases[] = {
        {0.001, -1000.5755719318103},
        {0.01, -100.56088545786867},
        {0.1, -10.423754940411077},
        {0.5, -1.9635100260214235},
        {1.0, -0.57721566490153286},
        {1.5, 0.036489973978576521},
        {2.0, 0.42278433509846714},
        {4.0, 1.2561176684318005},
        {10.0, 2.2517525890667211},
        {100.0, 4.6001618527380874},
        {12345.6, 9.4210145024653966},
    };
    for (const auto& c : cases)
        CHECK(std::abs(dirmath::digamma(c.x) - c.ref) < 1e-9);
    // psi(x+1) = psi(x) + 1/x on a grid over [0.01, 100]
    for (double x = 0.01; x <= 100.0; x *= 1.37)
        CHECK(std::abs(dirmath::digamma(x + 1.0) - dirmath::digamma(x) - 1.0 / x) < 1e-9);
    CHECK(dirmath::digamma(2.0) ==
          doctest::Approx(dirmath::digamma(1.0) + 1.0).epsilon(1e-9));
    CHECK(dirmath::digamma(4.0) ==
          doctest::Approx(dirmath::digamma(1.0) + 1.0 + 0.5 + 1.0 / 3.0).epsilon(1e-9));
    CHECK_THROWS_AS((void)dirmath::digamma(0.0), std::domain_error);
}

TEST_CASE("trigamma and its inverse-digamma consumer") {
    const struct { double x, ref; } cases[] = {
        {0.5, 4.9348022005446793},
        {1.0, 1.6449340668482264},
        {2.0, 0.64493406684822644},
        {10.0, 0.10516633568168575},
        {100.0, 0.010050166663333571},
    };
    for (const auto& c : cases)
        CHECK(std::abs(dirmath::trigamma(c.x) - c.ref) < 1e-10);

    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double x = std::exp(rng.uniform(std::log(1e-2), std::log(1e4)));
        const double y = dirmath::digamma(x);
        CHECK(std::abs(dirmath::inverse_digamma(y) - x) < 1e-8 * std::max(1.0, x));
    }
}

TEST_CASE("dirichlet_log_pdf closed form") {
    CHECK(dirmath::dirichlet_log_pdf(dir({1, 1, 1}), cat({0.2, 0.3, 0.5})) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(dirmath::dirichlet_log_pdf(dir({1, 1}), cat({0.5, 0.5})) ==
          doctest::Approx(0.0).epsilon(1e-12));

    // Quadrature oracle on the 1-simplex: density of Dir([2,6]) at (0.25,
    // 0.75) is p q^5 / B(2,6) with B evaluated by Simpson's rule.
    const int n = 20000;
    double beta = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) / n;
        const double f = t * std::pow(1.0 - t, 5.0);
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        beta += w * f;
    }
    beta /= 3.0 * n;
    const double expected = std::log(0.25 * std::pow(0.75, 5.0) / beta);
    CHECK(std::abs(dirmath::dirichlet_log_pdf(dir({2, 6}), cat({0.25, 0.75})) - expected) <
          1e-6);
    // mpmath reference for the same value
    CHECK(dirmath::dirichlet_log_pdf(dir({2, 6}), cat({0.25, 0.75})) ==
          doctest::Approx(0.91296489490457305).epsilon(1e-12));

    CHECK_THROWS_AS(
        (void)dirmath::dirichlet_log_pdf(dir({1, 1, 1}), cat({0.5, 0.5})),
        std::invalid_argument);
}

TEST_CASE("dirichlet_kl closed form, self-divergence and Monte-Carlo oracle") {
    CHECK(dirmath::dirichlet_kl(dir({2, 5, 0.3}), dir({2, 5, 0.3})) <= 1e-10);
    CHECK(dirmath::dirichlet_kl(dir({1, 1, 1}), dir({1, 1, 1})) == doctest::Approx(0.0));
    CHECK(dirmath::dirichlet_kl(dir({2, 2}), dir({1, 1})) ==
          doctest::Approx(0.12509280256138833).epsilon(1e-10));

    auto est = oracles::mc_dirichlet_kl({2, 2}, {1, 1}, 1000000, 424243);
    CHECK(std::abs(dirmath::dirichlet_kl(dir({2, 2}), dir({1, 1})) - est.mean) <
          3.0 * est.std_err);

    Rng rng(99);
    for (int i = 0; i < 10; ++i) {
        const int k = 2 + static_cast<int>(rng.uniform_int(4));
        std::vector<double> a(k), b(k);
        for (int c = 0; c < k; ++c) {
            a[c] = rng.uniform(0.4, 8.0);
            b[c] = rng.uniform(0.4, 8.0);
        }
        const double kl = dirmath::dirichlet_kl(dir(a), dir(b));
        CHECK(kl >= -1e-10);
        auto e = oracles::mc_dirichlet_kl(a, b, 200000, 1000 + i);
        CHECK(std::abs(kl - e.mean) < 3.0 * e.std_err);
    }
}

TEST_CASE("dirichlet_mean") {
    auto m = dirmath::dirichlet_mean(dir({2, 6}));
    CHECK(m.probs[0] == doctest::Approx(0.25));
    CHECK(m.probs[1] == doctest::Approx(0.75));
    auto u = dirmath::dirichlet_mean(dir({1, 1, 1}));
    for (double v : u.probs) CHECK(v == doctest::Approx(1.0 / 3.0));
    auto m2 = dirmath::dirichlet_mean(dir({3, 7}));
    CHECK(m2.probs[0] == doctest::Approx(0.3));
    CHECK(m2.probs[1] == doctest::Approx(0.7));
}

TEST_CASE("categorical_entropy") {
    CHECK(dirmath::categorical_entropy(cat({1.0, 0.0})) == 0.0);
    CHECK(dirmath::categorical_entropy(cat({0.5, 0.5})) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(dirmath::categorical_entropy(cat({0.25, 0.25, 0.25, 0.25})) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("expected_categorical_entropy: exact, concentrated and sampled") {
    CHECK(dirmath::expected_categorical_entropy(dir({1, 1})) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(dirmath::expected_categorical_entropy(dir({1000, 1000})) -
                   std::log(2.0)) < 1e-3);
    // mpmath reference
    CHECK(dirmath::expected_categorical_entropy(dir({2, 6})) ==
          doctest::Approx(0.50535714285714286).epsilon(1e-12));

    // Monotone decrease toward 0 for Dir([t,t]) as t -> 0+.
    const double h1 = dirmath::expected_categorical_entropy(dir({0.1, 0.1}));
    const double h2 = dirmath::expected_categorical_entropy(dir({0.01, 0.01}));
    CHECK(h1 < dirmath::expected_categorical_entropy(dir({1, 1})));
    CHECK(h2 < h1);
    CHECK(h2 < 0.02);

    auto e = oracles::mc_expected_entropy({1, 1}, 1000000, 31337);
    CHECK(std::abs(0.5 - e.mean) < 3.0 * e.std_err);
    Rng rng(1234);
    for (int i = 0; i < 10; ++i) {
        const int k = 2 + static_cast<int>(rng.uniform_int(4));
        std::vector<double> a(k);
        for (int c = 0; c < k; ++c) a[c] = rng.uniform(0.4, 8.0);
        auto est = oracles::mc_expected_entropy(a, 200000, 5000 + i);
        CHECK(std::abs(dirmath::expected_categorical_entropy(dir(a)) - est.mean) <
              3.0 * est.std_err);
    }
}

TEST_CASE("mutual_information triple") {
    auto t = dirmath::mutual_information(dir({1000, 1000}));
    CHECK(std::abs(t.knowledge) < 1e-3);

    auto u = dirmath::mutual_information(dir({1, 1}));
    CHECK(u.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(u.data == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(u.knowledge == doctest::Approx(0.19314718055994531).epsilon(1e-10));

    Rng rng(555);
    for (int i = 0; i < 50; ++i) {
        const int k = 2 + static_cast<int>(rng.uniform_int(8));
        std::vector<double> a(k);
        for (int c = 0; c < k; ++c) a[c] = std::exp(rng.uniform(-2.0, 3.0));
        auto tr = dirmath::mutual_information(dir(a));
        CHECK(tr.total - tr.data - tr.knowledge == 0.0);  // definitional identity
        CHECK(std::abs(tr.total - (tr.data + tr.knowledge)) <= 1e-9);
        CHECK(tr.knowledge >= -1e-9);
        CHECK(dirmath::expected_categorical_entropy(dir(a)) <=
              dirmath::categorical_entropy(dirmath::dirichlet_mean(dir(a))) + 1e-9);
    }
}

TEST_CASE("ensemble_uncertainties") {
    TokenPosteriorSet same;
    for (int m = 0; m < 5; ++m) same.members.push_back(cat({0.7, 0.2, 0.1}));
    auto t = dirmath::ensemble_uncertainties(same);
    CHECK(std::abs(t.knowledge) <= 1e-10);

    TokenPosteriorSet disagree;
    disagree.members.push_back(cat({1.0, 0.0}));
    disagree.members.push_back(cat({0.0, 1.0}));
    auto d = dirmath::ensemble_uncertainties(disagree);
    CHECK(d.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(d.data == doctest::Approx(0.0));
    CHECK(d.knowledge == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    TokenPosteriorSet mild;
    mild.members.push_back(cat({0.6, 0.4}));
    mild.members.push_back(cat({0.4, 0.6}));
    auto m = dirmath::ensemble_uncertainties(mild);
    CHECK(m.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(m.data == doctest::Approx(0.67301166700925644).epsilon(1e-12));
    CHECK(m.knowledge == doctest::Approx(0.020135513550688873).epsilon(1e-9));

    CHECK_THROWS_AS((void)dirmath::ensemble_uncertainties(TokenPosteriorSet{}),
                    std::invalid_argument);
}

TEST_CASE("dirichlet_sample: determinism, concentration, law of large numbers") {
    Rng a(42), b(42);
    auto s1 = a.dirichlet({1000, 1000});
    auto s2 = b.dirichlet({1000, 1000});
    CHECK(s1 == s2);

    Rng rng(43);
    int within = 0;
    for (int i = 0; i < 200; ++i) {
        auto s = rng.dirichlet({1000, 1000});
        if (std::abs(s[0] - 0.5) < 0.05) ++within;
    }
    CHECK(within >= 198);  // concentration: P(|x-0.5|<0.05) > 0.99

    std::vector<double> alpha{3, 7};
    std::vector<double> mean(2, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        auto s = rng.dirichlet(alpha);
        mean[0] += s[0];
        mean[1] += s[1];
    }
    CHECK(std::abs(mean[0] / n - 0.3) < 0.01);
    CHECK(std::abs(mean[1] / n - 0.7) < 0.01);
}

TEST_CASE("dirichlet_mle_fit round-trips the generating parameters") {
    Rng rng(2024);
    std::vector<double> alpha{3, 7};
    std::vector<Categorical> samples;
    samples.reserve(100000);
    for (int i = 0; i < 100000; ++i) {
        auto x = rng.dirichlet(alpha);
        samples.push_back(cat(std::move(x)));
    }
    auto fit = dirmath::dirichlet_mle_fit(samples);
    CHECK(fit.converged);
    CHECK(std::abs(fit.params.alpha[0] - 3.0) < 0.15);
    CHECK(std::abs(fit.params.alpha[1] - 7.0) < 0.35);

    // K = 3 uniform generator: fitted mean within 1e-2 of uniform.
    std::vector<Categorical> usamples;
    for (int i = 0; i < 100000; ++i) usamples.push_back(cat(rng.dirichlet({1, 1, 1})));
    auto ufit = dirmath::dirichlet_mle_fit(usamples);
    auto umean = dirmath::dirichlet_mean(ufit.params);
    for (double v : umean.probs) CHECK(std::abs(v - 1.0 / 3.0) < 1e-2);
}

TEST_CASE("dirichlet_mle_fit flags the zero-variance limit") {
    std::vector<Categorical> same(50, cat({0.25, 0.25, 0.25, 0.25}));
    auto fit = dirmath::dirichlet_mle_fit(same);
    CHECK_FALSE(fit.converged);  // alpha0 diverges upward until clamped/max_iter
    auto mean = dirmath::dirichlet_mean(fit.params);
    for (double v : mean.probs) CHECK(v == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(fit.params.alpha0 > 1e4);

    std::vector<Categorical> masses(10, cat({1.0, 0.0}));
    auto degenerate = dirmath::dirichlet_mle_fit(masses);  // must not throw
    CHECK_FALSE(degenerate.converged);
}

TEST_CASE("dirichlet_mle_fit property: random alpha round-trips within 5%") {
    Rng rng(77);
    for (int rep = 0; rep < 4; ++rep) {
        const int k = 2 + static_cast<int>(rng.uniform_int(9));
        std::vector<double> alpha(k);
        for (int c = 0; c < k; ++c) alpha[c] = rng.uniform(0.5, 20.0);
        std::vector<Categorical> samples;
        samples.reserve(100000);
        for (int i = 0; i < 100000; ++i) samples.push_back(cat(rng.dirichlet(alpha)));
        auto fit = dirmath::dirichlet_mle_fit(samples);
        for (int c = 0; c < k; ++c)
            CHECK(std::abs(fit.params.alpha[c] - alpha[c]) / alpha[c] < 0.05);
    }
}

TEST_CASE("temper_categorical") {
    Categorical p = cat({0.9, 0.1});
    Categorical t1 = dirmath::temper_categorical(p, 1.0);
    CHECK(t1.probs == p.probs);  // exact identity at T = 1

    Categorical flat = dirmath::temper_categorical(p, 1e6);
    CHECK(std::abs(flat.probs[0] - 0.5) < 1e-5);
    CHECK(std::abs(flat.probs[1] - 0.5) < 1e-5);

    Categorical t3 = dirmath::temper_categorical(p, 3.0);
    CHECK(t3.probs[0] == doctest::Approx(0.67533351121296790).epsilon(1e-12));
    CHECK(t3.probs[1] == doctest::Approx(0.32466648878703210).epsilon(1e-12));

    // argmax preserved for arbitrary untied inputs and temperatures
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const int k = 2 + static_cast<int>(rng.uniform_int(10));
        std::vector<double> v(k);
        double sum = 0.0;
        for (double& x : v) { x = rng.uniform(1e-6, 1.0); sum += x; }
        for (double& x : v) x /= sum;
        Categorical q = cat(v);
        const double temp = std::exp(rng.uniform(std::log(0.2), std::log(50.0)));
        Categorical tq = dirmath::temper_categorical(q, temp);
        const auto am = [](const std::vector<double>& u) {
            return std::distance(u.begin(), std::max_element(u.begin(), u.end()));
        };
        CHECK(am(q.probs) == am(tq.probs));
    }
    CHECK_THROWS_AS((void)dirmath::temper_categorical(p, 0.0), std::domain_error);
}

TEST_CASE("type invariants are enforced") {
    CHECK_THROWS_AS(cat({0.5, 0.6}), std::invalid_argument);       // sum != 1
    CHECK_THROWS_AS(cat({1.0}), std::invalid_argument);            // K < 2
    CHECK_THROWS_AS(cat({-0.1, 1.1}), std::invalid_argument);      // negative
    CHECK_THROWS_AS(dir({1.0}), std::invalid_argument);            // K < 2
    CHECK_THROWS_AS(dir({1.0, 0.0}), std::invalid_argument);       // non-positive
    CHECK_THROWS_AS(dir({1.0, std::nan("")}), std::invalid_argument);
    DirichletParams d = dir({2, 6});
    CHECK(d.alpha0 == doctest::Approx(8.0).epsilon(1e-12));
}

}  // TEST_SUITE
