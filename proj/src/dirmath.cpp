#include "endd/dirmath.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace endd::dirmath {

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace

Categorical::Categorical(std::vector<double> p) : probs(std::move(p)) {
    validate(probs);
}

void Categorical::validate(const std::vector<double>& p) {
    require(p.size() >= 2, "Categorical: needs K >= 2");
    double sum = 0.0;
    for (double v : p) {
        require(std::isfinite(v) && v >= 0.0, "Categorical: entries must be finite and >= 0");
        sum += v;
    }
    require(std::abs(sum - 1.0) <= 1e-9, "Categorical: entries must sum to 1");
}

DirichletParams::DirichletParams(std::vector<double> a) : alpha(std::move(a)) {
    validate(alpha);
    alpha0 = 0.0;
    for (double v : alpha) alpha0 += v;
}

void DirichletParams::validate(const std::vector<double>& a) {
    require(a.size() >= 2, "DirichletParams: needs K >= 2");
    for (double v : a)
        require(std::isfinite(v) && v > 0.0, "DirichletParams: concentrations must be finite and > 0");
}

// Lanczos approximation (g = 7, 9 coefficients), reflection below 0.5.
double log_gamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x))
        throw std::domain_error("log_gamma: x must be positive and finite");
    static const double c[9] = {
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    };
    if (x < 0.5) {
        // ln Gamma(x) = ln(pi / sin(pi x)) - ln Gamma(1 - x)
        return std::log(kPi / std::sin(kPi * x)) - log_gamma(1.0 - x);
    }
    double z = x - 1.0;
    double a = c[0];
    for (int i = 1; i < 9; ++i) a += c[i] / (z + i);
    double t = z + 7.5;
    return 0.5 * std::log(2.0 * kPi) + (z + 0.5) * std::log(t) - t + std::log(a);
}

// Recurrence shift to x >= 6, then the asymptotic Bernoulli series.
double digamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x))
        throw std::domain_error("digamma: x must be positive and finite");
    double acc = 0.0;
    while (x < 6.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    double inv = 1.0 / x;
    double inv2 = inv * inv;
    // psi(x) ~ ln x - 1/(2x) - sum B_2k / (2k x^2k)
    double series = inv2 * (1.0 / 12.0
                  - inv2 * (1.0 / 120.0
                  - inv2 * (1.0 / 252.0
                  - inv2 * (1.0 / 240.0
                  - inv2 * (1.0 / 132.0
                  - inv2 * (691.0 / 32760.0
                  - inv2 * (1.0 / 12.0)))))));
    return acc + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
    if (!(x > 0.0) || !std::isfinite(x))
        throw std::domain_error("trigamma: x must be positive and finite");
    double acc = 0.0;
    while (x < 6.0) {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    double inv = 1.0 / x;
    double inv2 = inv * inv;
    // psi'(x) ~ 1/x + 1/(2x^2) + sum B_2k / x^(2k+1)
    double series = inv * (1.0
                  + inv * (0.5
                  + inv * (1.0 / 6.0
                  - inv2 * (1.0 / 30.0
                  - inv2 * (1.0 / 42.0
                  - inv2 * (1.0 / 30.0
                  - inv2 * (5.0 / 66.0)))))));
    return acc + series;
}

// Newton inversion of digamma (Minka's initialization).
double inverse_digamma(double y) {
    double x = y >= -2.22 ? std::exp(y) + 0.5 : -1.0 / (y + 0.57721566490153286);
    for (int i = 0; i < 6; ++i) {
        double f = digamma(x) - y;
        double step = f / trigamma(x);
        if (step >= x) step = 0.5 * x;  // keep the iterate positive
        x -= step;
        if (std::abs(f) < 1e-13) break;
    }
    return x;
}

Categorical floored(const Categorical& p) {
    std::vector<double> q(p.probs);
    double sum = 0.0;
    for (double& v : q) {
        if (v < kProbFloor) v = kProbFloor;
        sum += v;
    }
    for (double& v : q) v /= sum;
    return Categorical(std::move(q));
}

double dirichlet_log_pdf(const DirichletParams& d, const Categorical& p) {
    require(d.size() == p.size(), "dirichlet_log_pdf: dimension mismatch");
    Categorical q = floored(p);
    double v = log_gamma(d.alpha0);
    for (std::size_t c = 0; c < d.size(); ++c)
        v += (d.alpha[c] - 1.0) * std::log(q.probs[c]) - log_gamma(d.alpha[c]);
    return v;
}

double dirichlet_kl(const DirichletParams& p, const DirichletParams& q) {
    require(p.size() == q.size(), "dirichlet_kl: dimension mismatch");
    double v = log_gamma(p.alpha0) - log_gamma(q.alpha0);
    double psi0 = digamma(p.alpha0);
    for (std::size_t c = 0; c < p.size(); ++c) {
        v -= log_gamma(p.alpha[c]) - log_gamma(q.alpha[c]);
        v += (p.alpha[c] - q.alpha[c]) * (digamma(p.alpha[c]) - psi0);
    }
    return v;
}

Categorical dirichlet_mean(const DirichletParams& d) {
    std::vector<double> m(d.size());
    for (std::size_t c = 0; c < d.size(); ++c) m[c] = d.alpha[c] / d.alpha0;
    return Categorical(std::move(m));
}

double categorical_entropy(const Categorical& p) {
    double h = 0.0;
    for (double v : p.probs)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

double expected_categorical_entropy(const DirichletParams& d) {
    double psi0 = digamma(d.alpha0 + 1.0);
    double h = 0.0;
    for (std::size_t c = 0; c < d.size(); ++c)
        h -= d.alpha[c] / d.alpha0 * (digamma(d.alpha[c] + 1.0) - psi0);
    return h;
}

UncertaintyTriple mutual_information(const DirichletParams& d) {
    UncertaintyTriple t;
    t.total = categorical_entropy(dirichlet_mean(d));
    t.data = expected_categorical_entropy(d);
    t.knowledge = t.total - t.data;
    return t;
}

UncertaintyTriple ensemble_uncertainties(const TokenPosteriorSet& s) {
    require(!s.members.empty(), "ensemble_uncertainties: empty member set");
    const std::size_t k = s.members.front().size();
    std::vector<double> mean(k, 0.0);
    double data = 0.0;
    for (const Categorical& m : s.members) {
        require(m.size() == k, "ensemble_uncertainties: member dimension mismatch");
        for (std::size_t c = 0; c < k; ++c) mean[c] += m.probs[c];
        data += categorical_entropy(m);
    }
    const double inv_m = 1.0 / static_cast<double>(s.members.size());
    for (double& v : mean) v *= inv_m;
    UncertaintyTriple t;
    t.total = categorical_entropy(Categorical(std::move(mean)));
    t.data = data * inv_m;
    t.knowledge = t.total - t.data;
    return t;
}

DirichletFit dirichlet_mle_fit(const std::vector<Categorical>& samples,
                               double tol, int max_iter) {
    require(samples.size() >= 2, "dirichlet_mle_fit: needs >= 2 samples");
    const std::size_t k = samples.front().size();
    const double n = static_cast<double>(samples.size());

    // Sufficient statistics on floored samples.
    std::vector<double> mean(k, 0.0), mean_sq(k, 0.0), mean_log(k, 0.0);
    for (const Categorical& s : samples) {
        require(s.size() == k, "dirichlet_mle_fit: sample dimension mismatch");
        Categorical q = floored(s);
        for (std::size_t c = 0; c < k; ++c) {
            mean[c] += q.probs[c];
            mean_sq[c] += q.probs[c] * q.probs[c];
            mean_log[c] += std::log(q.probs[c]);
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        mean[c] /= n;
        mean_sq[c] /= n;
        mean_log[c] /= n;
    }

    // Moment-matching initialization: alpha0 + 1 = sum p(1-p) / sum Var[p].
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        num += mean[c] * (1.0 - mean[c]);
        den += mean_sq[c] - mean[c] * mean[c];
    }
    double alpha0 = den > 1e-14 ? std::max(num / den - 1.0, 1e-2) : kAlphaMax;
    std::vector<double> alpha(k);
    for (std::size_t c = 0; c < k; ++c)
        alpha[c] = std::clamp(alpha0 * mean[c], kAlphaMin, kAlphaMax);

    DirichletFit fit;
    for (fit.iterations = 0; fit.iterations < max_iter; ++fit.iterations) {
        double a0 = 0.0;
        for (double a : alpha) a0 += a;
        double psi_a0 = digamma(a0);
        double delta = 0.0;
        bool clamped = false;
        for (std::size_t c = 0; c < k; ++c) {
            double next = inverse_digamma(psi_a0 + mean_log[c]);
            if (next < kAlphaMin || next > kAlphaMax) {
                next = std::clamp(next, kAlphaMin, kAlphaMax);
                clamped = true;
            }
            delta = std::max(delta, std::abs(next - alpha[c]) / std::max(1.0, alpha[c]));
            alpha[c] = next;
        }
        if (delta < tol) {
            fit.converged = !clamped;
            ++fit.iterations;
            break;
        }
    }
    fit.params = DirichletParams(std::move(alpha));
    return fit;
}

Categorical temper_categorical(const Categorical& p, double temperature) {
    if (!(temperature > 0.0))
        throw std::domain_error("temper_categorical: temperature must be > 0");
    if (temperature == 1.0) return p;
    Categorical q = floored(p);
    double max_log = -std::numeric_limits<double>::infinity();
    std::vector<double> lp(q.size());
    for (std::size_t c = 0; c < q.size(); ++c) {
        lp[c] = std::log(q.probs[c]) / temperature;
        max_log = std::max(max_log, lp[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) {
        lp[c] = std::exp(lp[c] - max_log);
        sum += lp[c];
    }
    for (double& v : lp) v /= sum;
    return Categorical(std::move(lp));
}

}  // namespace endd::dirmath
