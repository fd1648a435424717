#ifndef ENDD_RNG_HPP
#define ENDD_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace endd {

// Deterministic RNG. The mt19937_64 engine is fully specified by the
// standard; the distributions below are implemented here because the
// standard library's are not bit-stable across implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in the open interval (0, 1).
    double u01() {
        return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    std::uint64_t uniform_int(std::uint64_t n) {
        // Rejection sampling on the top bits; unbiased and portable.
        std::uint64_t mask = n - 1;
        mask |= mask >> 1; mask |= mask >> 2; mask |= mask >> 4;
        mask |= mask >> 8; mask |= mask >> 16; mask |= mask >> 32;
        std::uint64_t v;
        do { v = eng_() & mask; } while (v >= n);
        return v;
    }

    bool bernoulli(double p) { return u01() < p; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = u01();
        double u2 = u01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * kPi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Marsaglia-Tsang; shape < 1 handled by the boost identity.
    double gamma(double shape) {
        if (shape < 1.0) {
            double g = gamma(shape + 1.0);
            return g * std::pow(u01(), 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double t = 1.0 + c * x;
            if (t <= 0.0) continue;
            double v = t * t * t;
            double u = u01();
            double x2 = x * x;
            if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
            if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::vector<double> dirichlet(const std::vector<double>& alpha) {
        std::vector<double> g(alpha.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < alpha.size(); ++i) {
            g[i] = gamma(alpha[i]);
            sum += g[i];
        }
        if (sum <= 0.0) {
            // All draws underflowed (tiny alphas): fall back to a point mass.
            g.assign(alpha.size(), 0.0);
            g[uniform_int(alpha.size())] = 1.0;
            return g;
        }
        for (double& v : g) v /= sum;
        return g;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static constexpr double kPi = 3.14159265358979323846;
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64; used to derive independent stream seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace endd

#endif
