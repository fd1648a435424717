#ifndef ENDD_DIRMATH_HPP
#define ENDD_DIRMATH_HPP

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace endd::dirmath {

// Probability floor applied before any logarithm of a categorical entry.
inline constexpr double kProbFloor = 1e-10;

// Clamp range for fitted Dirichlet concentrations.
inline constexpr double kAlphaMin = 1e-3;
inline constexpr double kAlphaMax = 1e5;

/// A probability vector over K >= 2 classes.
struct Categorical {
    std::vector<double> probs;

    Categorical() = default;
    explicit Categorical(std::vector<double> p);

    std::size_t size() const { return probs.size(); }
    double operator[](std::size_t i) const { return probs[i]; }

    static void validate(const std::vector<double>& p);
};

/// Dirichlet concentration parameters; alpha0 is kept equal to the sum.
struct DirichletParams {
    std::vector<double> alpha;
    double alpha0 = 0.0;

    DirichletParams() = default;
    explicit DirichletParams(std::vector<double> a);

    std::size_t size() const { return alpha.size(); }

    static void validate(const std::vector<double>& a);
};

/// Total / expected-data / knowledge uncertainty, all in nats.
/// knowledge = total - data by construction.
struct UncertaintyTriple {
    double total = 0.0;
    double data = 0.0;
    double knowledge = 0.0;
};

/// Ensemble member posteriors for a single token position.
struct TokenPosteriorSet {
    std::vector<Categorical> members;
};

/// Result of a Dirichlet maximum-likelihood fit. Non-convergence (alpha at a
/// clamp bound or max_iter exhausted) is reported, never fatal.
struct DirichletFit {
    DirichletParams params;
    bool converged = false;
    int iterations = 0;
};

// Special functions. Implemented locally (Lanczos ln-gamma, asymptotic
// digamma/trigamma with recurrence shift) so results are identical on every
// platform the toolkit builds on.
double log_gamma(double x);
double digamma(double x);
double trigamma(double x);
double inverse_digamma(double y);

// Elementwise clamp to [kProbFloor, 1] followed by renormalization.
Categorical floored(const Categorical& p);

double dirichlet_log_pdf(const DirichletParams& d, const Categorical& p);
double dirichlet_kl(const DirichletParams& p, const DirichletParams& q);
Categorical dirichlet_mean(const DirichletParams& d);

double categorical_entropy(const Categorical& p);
double expected_categorical_entropy(const DirichletParams& d);

// total = H[mean], data = E[H], knowledge = total - data.
UncertaintyTriple mutual_information(const DirichletParams& d);
UncertaintyTriple ensemble_uncertainties(const TokenPosteriorSet& s);

// Fixed-point MLE (digamma inversion by Newton, moment-matched init).
DirichletFit dirichlet_mle_fit(const std::vector<Categorical>& samples,
                               double tol = 1e-8, int max_iter = 200);

// Target tempering: p_c^(1/T), renormalized. T = 1 returns the input.
Categorical temper_categorical(const Categorical& p, double temperature);

}  // namespace endd::dirmath

#endif
