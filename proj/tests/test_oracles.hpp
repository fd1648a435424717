#ifndef ENDD_TESTS_ORACLES_HPP
#define ENDD_TESTS_ORACLES_HPP

// Test-only reference implementations, deliberately independent of the
// library code paths they are used to check (libm special functions, direct
// sampling estimates, brute-force counting).

#include <cmath>
#include <vector>

#include "endd/rng.hpp"

namespace oracles {

// ln Dir(p; alpha) via std::lgamma (not the library's Lanczos routine).
inline double ref_dirichlet_log_pdf(const std::vector<double>& alpha,
                                    const std::vector<double>& p) {
    double a0 = 0.0, v = 0.0;
    for (double a : alpha) a0 += a;
    v = std::lgamma(a0);
    for (std::size_t c = 0; c < alpha.size(); ++c)
        v += (alpha[c] - 1.0) * std::log(p[c]) - std::lgamma(alpha[c]);
    return v;
}

struct McEstimate {
    double mean = 0.0;
    double std_err = 0.0;
};

// E_{Dir(p)}[ln Dir(x;p) - ln Dir(x;q)] by direct sampling.
inline McEstimate mc_dirichlet_kl(const std::vector<double>& p,
                                  const std::vector<double>& q, int n_samples,
                                  std::uint64_t seed) {
    endd::Rng rng(seed);
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        std::vector<double> x = rng.dirichlet(p);
        for (double& v : x) v = std::max(v, 1e-12);
        const double d = ref_dirichlet_log_pdf(p, x) - ref_dirichlet_log_pdf(q, x);
        sum += d;
        sum_sq += d * d;
    }
    McEstimate e;
    e.mean = sum / n_samples;
    const double var = (sum_sq / n_samples - e.mean * e.mean) / (n_samples - 1.0);
    e.std_err = std::sqrt(std::max(var, 0.0));
    return e;
}

// E_{Dir(alpha)}[H(x)] by direct sampling.
inline McEstimate mc_expected_entropy(const std::vector<double>& alpha, int n_samples,
                                      std::uint64_t seed) {
    endd::Rng rng(seed);
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n_samples; ++i) {
        std::vector<double> x = rng.dirichlet(alpha);
        double h = 0.0;
        for (double v : x)
            if (v > 0.0) h -= v * std::log(v);
        sum += h;
        sum_sq += h * h;
    }
    McEstimate e;
    e.mean = sum / n_samples;
    const double var = (sum_sq / n_samples - e.mean * e.mean) / (n_samples - 1.0);
    e.std_err = std::sqrt(std::max(var, 0.0));
    return e;
}

}  // namespace oracles

#endif
