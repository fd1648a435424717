#ifndef ENDD_SRC_KERNELS_HPP
#define ENDD_SRC_KERNELS_HPP

#include <cmath>
#include <vector>

// Dense kernels shared by the tape ops and the no-grad inference path, so
// both compute bit-identical values.
namespace endd::kern {

// Dot product with four independent accumulators; the fixed re-association
// lets the compiler vectorize the reduction without altering FP semantics
// from run to run.
inline double dot_n(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    for (; j < n; ++j) s0 += a[j] * b[j];
    return (s0 + s1) + (s2 + s3);
}

inline void matvec(double* y, const double* w, const double* x, int m, int n) {
    for (int i = 0; i < m; ++i)
        y[i] = dot_n(w + static_cast<std::size_t>(i) * n, x, n);
}

// y += W^T g  (accumulating transpose product, used in backward passes)
inline void matvec_t_acc(double* y, const double* w, const double* g, int m, int n) {
    for (int i = 0; i < m; ++i) {
        const double* row = w + static_cast<std::size_t>(i) * n;
        const double gi = g[i];
        if (gi == 0.0) continue;
        for (int j = 0; j < n; ++j) y[j] += row[j] * gi;
    }
}

// W += g x^T (rank-one accumulate)
inline void outer_acc(double* w, const double* g, const double* x, int m, int n) {
    for (int i = 0; i < m; ++i) {
        double* row = w + static_cast<std::size_t>(i) * n;
        const double gi = g[i];
        for (int j = 0; j < n; ++j) row[j] += gi * x[j];
    }
}

inline void affine(double* y, const double* w, const double* x, const double* b,
                   int m, int n) {
    matvec(y, w, x, m, n);
    for (int i = 0; i < m; ++i) y[i] += b[i];
}

// y = W1 x1 + W2 x2 + b
inline void affine2(double* y, const double* w1, const double* x1, int n1,
                    const double* w2, const double* x2, int n2,
                    const double* b, int m) {
    for (int i = 0; i < m; ++i) {
        y[i] = b[i] + dot_n(w1 + static_cast<std::size_t>(i) * n1, x1, n1) +
               dot_n(w2 + static_cast<std::size_t>(i) * n2, x2, n2);
    }
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Gated recurrent unit step. wx is [3H x in], wh is [3H x H], b is [3H],
// gate order z, r, n. Writes the new state into h_new and stashes
// (z, r, n, Wh_n h) into gates[4H] for the backward pass.
inline void gru_step(double* h_new, double* gates, const double* wx,
                     const double* wh, const double* b, const double* x,
                     const double* h, int hidden, int in) {
    thread_local std::vector<double> scratch;
    scratch.resize(static_cast<std::size_t>(6) * hidden);
    double* ax = scratch.data();            // Wx x   (3H)
    double* ah = ax + 3 * hidden;           // Wh h   (3H)
    matvec(ax, wx, x, 3 * hidden, in);
    matvec(ah, wh, h, 3 * hidden, hidden);
    double* z = gates;
    double* r = gates + hidden;
    double* n = gates + 2 * hidden;
    double* uhn = gates + 3 * hidden;
    for (int i = 0; i < hidden; ++i) {
        z[i] = sigmoid(ax[i] + ah[i] + b[i]);
        r[i] = sigmoid(ax[hidden + i] + ah[hidden + i] + b[hidden + i]);
        uhn[i] = ah[2 * hidden + i];
        n[i] = std::tanh(ax[2 * hidden + i] + r[i] * uhn[i] + b[2 * hidden + i]);
        h_new[i] = (1.0 - z[i]) * n[i] + z[i] * h[i];
    }
}

// Additive attention scores e_i = v . tanh(u_i + q) over n rows of u.
// Stashes the tanh activations (n x H) for backward.
inline void attn_scores(double* e, double* tanh_buf, const double* u_rows,
                        const double* q, const double* v, int n, int hidden) {
    for (int i = 0; i < n; ++i) {
        const double* u = u_rows + static_cast<std::size_t>(i) * hidden;
        double* t = tanh_buf + static_cast<std::size_t>(i) * hidden;
        for (int j = 0; j < hidden; ++j) t[j] = std::tanh(u[j] + q[j]);
        e[i] = dot_n(v, t, hidden);
    }
}

inline void softmax(double* p, const double* logits, int n) {
    double mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    double inv = 1.0 / sum;
    for (int i = 0; i < n; ++i) p[i] *= inv;
}

// ctx = sum_i a_i h_i over n rows of h (n x d).
inline void weighted_sum_rows(double* ctx, const double* h_rows, const double* a,
                              int n, int d) {
    for (int j = 0; j < d; ++j) ctx[j] = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* h = h_rows + static_cast<std::size_t>(i) * d;
        const double ai = a[i];
        for (int j = 0; j < d; ++j) ctx[j] += ai * h[j];
    }
}

inline constexpr double kConcentrationClampLo = -15.0;
inline constexpr double kConcentrationClampHi = 15.0;

// alpha = exp(clamp(z, -15, 15))
inline void concentration_head(double* alpha, const double* logits, int n) {
    for (int i = 0; i < n; ++i) {
        double z = logits[i];
        if (z < kConcentrationClampLo) z = kConcentrationClampLo;
        if (z > kConcentrationClampHi) z = kConcentrationClampHi;
        alpha[i] = std::exp(z);
    }
}

}  // namespace endd::kern

#endif
