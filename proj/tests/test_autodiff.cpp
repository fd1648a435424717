#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "endd/autodiff.hpp"
#include "endd/rng.hpp"

using endd::Rng;
using endd::autodiff::Tape;
using NodeId = Tape::NodeId;

namespace {

struct LeafSpec {
    int rows;
    int cols;
    std::vector<double> v;
};

// Central finite differences against the tape gradients for every element of
// every leaf.
void fd_check(std::vector<LeafSpec> leaves,
              const std::function<NodeId(Tape&, const std::vector<NodeId>&)>& build,
              double eps = 1e-5, double tol = 1e-6) {
    auto eval = [&](const std::vector<LeafSpec>& ls) {
        Tape tape;
        std::vector<NodeId> ids;
        for (const LeafSpec& l : ls) ids.push_back(tape.leaf(l.v.data(), l.rows, l.cols));
        return tape.value(build(tape, ids))[0];
    };

    Tape tape;
    std::vector<NodeId> ids;
    for (const LeafSpec& l : leaves) ids.push_back(tape.leaf(l.v.data(), l.rows, l.cols));
    NodeId loss = build(tape, ids);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (NodeId id : ids) {
        auto g = tape.grad(id);
        analytic.emplace_back(g.begin(), g.end());
    }

    for (std::size_t i = 0; i < leaves.size(); ++i) {
        for (std::size_t j = 0; j < leaves[i].v.size(); ++j) {
            std::vector<LeafSpec> plus = leaves, minus = leaves;
            plus[i].v[j] += eps;
            minus[i].v[j] -= eps;
            const double numeric = (eval(plus) - eval(minus)) / (2.0 * eps);
            const double a = analytic[i][j];
            const double denom = std::max({1e-3, std::abs(a), std::abs(numeric)});
            CHECK(std::abs(a - numeric) / denom < tol);
        }
    }
}

std::vector<double> randv(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

std::vector<double> rand_probs(Rng& rng, int n) {
    std::vector<double> v(n);
    double s = 0.0;
    for (double& x : v) { x = rng.uniform(0.05, 1.0); s += x; }
    for (double& x : v) x /= s;
    return v;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matvec, affine and affine2 gradients") {
    Rng rng(11);
    fd_check({{3, 4, randv(rng, 12)}, {4, 1, randv(rng, 4)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 NodeId y = t.matvec(in[0], in[1]);
                 return t.dot(y, y);
             });
    fd_check({{3, 4, randv(rng, 12)}, {4, 1, randv(rng, 4)}, {3, 1, randv(rng, 3)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 NodeId y = t.affine(in[0], in[1], in[2]);
                 return t.dot(y, y);
             });
    fd_check({{3, 4, randv(rng, 12)}, {4, 1, randv(rng, 4)},
              {3, 2, randv(rng, 6)}, {2, 1, randv(rng, 2)}, {3, 1, randv(rng, 3)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 NodeId y = t.affine2(in[0], in[1], in[2], in[3], in[4]);
                 return t.dot(y, y);
             });
}

TEST_CASE("elementwise, concat, stack and attention gradients") {
    Rng rng(12);
    fd_check({{5, 1, randv(rng, 5)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 NodeId y = t.tanh_vec(in[0]);
                 return t.dot(y, y);
             });
    fd_check({{3, 1, randv(rng, 3)}, {2, 1, randv(rng, 2)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 NodeId y = t.concat(in[0], in[1]);
                 return t.dot(y, y);
             });
    fd_check({{4, 1, randv(rng, 4)}, {4, 1, randv(rng, 4)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 NodeId y = t.add_scaled(in[0], in[1], -1.7);
                 return t.dot(y, y);
             });
    // softmax + weighted rows + attention scores composed
    fd_check({{3, 1, randv(rng, 3)}, {3, 1, randv(rng, 3)},
              {4, 1, randv(rng, 4)}, {4, 1, randv(rng, 4)},
              {4, 1, randv(rng, 4)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 std::vector<NodeId> rows{in[0], in[1]};
                 NodeId h = t.stack_rows(rows);          // 2 x 3
                 std::vector<NodeId> urows{in[2], in[3]};
                 NodeId u = t.stack_rows(urows);         // 2 x 4
                 NodeId q = t.add_scaled(in[4], in[4], -0.5);  // 4
                 NodeId e = t.attn_scores(u, q, in[4]);
                 NodeId a = t.softmax(e);
                 NodeId ctx = t.weighted_sum_rows(h, a);
                 return t.dot(ctx, ctx);
             },
             1e-5, 5e-6);
}

TEST_CASE("gru step gradients") {
    Rng rng(13);
    const int hidden = 5, in_dim = 3;
    fd_check({{3 * hidden, in_dim, randv(rng, 3 * hidden * in_dim)},
              {3 * hidden, hidden, randv(rng, 3 * hidden * hidden)},
              {3 * hidden, 1, randv(rng, 3 * hidden)},
              {in_dim, 1, randv(rng, in_dim)},
              {hidden, 1, randv(rng, hidden)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 NodeId h1 = t.gru_step(in[0], in[1], in[2], in[3], in[4]);
                 NodeId h2 = t.gru_step(in[0], in[1], in[2], in[3], h1);
                 return t.dot(h2, h2);
             },
             1e-5, 5e-6);
}

TEST_CASE("softmax loss gradients") {
    Rng rng(14);
    fd_check({{6, 1, randv(rng, 6, -2.0, 2.0)}},
             [](Tape& t, const std::vector<NodeId>& in) {
                 return t.ce_loss(in[0], 2);
             });
    std::vector<double> target = rand_probs(rng, 6);
    fd_check({{6, 1, randv(rng, 6, -2.0, 2.0)}},
             [&target](Tape& t, const std::vector<NodeId>& in) {
                 return t.kl_loss(in[0], target);
             });
}

TEST_CASE("dirichlet loss gradients") {
    Rng rng(15);
    std::vector<double> probs = rand_probs(rng, 5);
    std::vector<double> mean_log(5);
    for (int i = 0; i < 5; ++i) mean_log[i] = std::log(probs[i]);
    fd_check({{5, 1, randv(rng, 5, -1.5, 1.5)}},
             [&mean_log](Tape& t, const std::vector<NodeId>& in) {
                 return t.dirichlet_nll_loss(in[0], mean_log);
             },
             1e-5, 2e-6);
    std::vector<double> alpha_tilde(5);
    for (double& a : alpha_tilde) a = rng.uniform(0.5, 6.0);
    fd_check({{5, 1, randv(rng, 5, -1.5, 1.5)}},
             [&alpha_tilde](Tape& t, const std::vector<NodeId>& in) {
                 return t.dirichlet_kl_loss(in[0], alpha_tilde);
             },
             1e-5, 2e-6);
}

TEST_CASE("gradient linearity and zero for unused inputs") {
    Rng rng(16);
    std::vector<double> x = randv(rng, 4);
    std::vector<double> w = randv(rng, 12);
    std::vector<double> unused = randv(rng, 3);

    Tape t1;
    NodeId wi = t1.leaf(w.data(), 3, 4);
    NodeId xi = t1.leaf(x.data(), 4, 1);
    NodeId ui = t1.leaf(unused.data(), 3, 1);
    NodeId y = t1.matvec(wi, xi);
    NodeId loss = t1.dot(y, y);
    t1.backward(loss);
    for (double g : t1.grad(ui)) CHECK(g == 0.0);
    std::vector<double> g1(t1.grad(wi).begin(), t1.grad(wi).end());

    Tape t2;
    wi = t2.leaf(w.data(), 3, 4);
    xi = t2.leaf(x.data(), 4, 1);
    y = t2.matvec(wi, xi);
    loss = t2.dot(y, y);
    NodeId doubled = t2.add_scaled(loss, loss, 1.0);
    t2.backward(doubled);
    auto g2 = t2.grad(wi);
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-12));
}

TEST_CASE("backward requires a recorded scalar") {
    Tape t;
    std::vector<double> v(4, 1.0);
    NodeId x = t.leaf(v.data(), 4, 1);
    CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}

}  // TEST_SUITE
