#include "endd/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "endd/dirmath.hpp"
#include "kernels.hpp"

namespace endd::autodiff {

using dirmath::digamma;
using dirmath::log_gamma;

void Tape::clear() {
    nodes_.clear();
    val_.clear();
    aux_.clear();
    extra_.clear();
}

Tape::NodeId Tape::push(Op op, int rows, int cols, NodeId a, NodeId b, NodeId c,
                        NodeId d, NodeId e) {
    Node n;
    n.op = op;
    n.in0 = a; n.in1 = b; n.in2 = c; n.in3 = d; n.in4 = e;
    n.rows = rows;
    n.cols = cols;
    n.val = static_cast<std::int32_t>(val_.size());
    val_.resize(val_.size() + static_cast<std::size_t>(rows) * cols);
    nodes_.push_back(n);
    return static_cast<NodeId>(nodes_.size() - 1);
}

std::int32_t Tape::alloc_aux(std::size_t n) {
    std::int32_t off = static_cast<std::int32_t>(aux_.size());
    aux_.resize(aux_.size() + n);
    return off;
}

std::span<const double> Tape::value(NodeId id) const {
    const Node& n = nodes_[id];
    return {val_.data() + n.val, static_cast<std::size_t>(n.rows) * n.cols};
}

std::span<const double> Tape::grad(NodeId id) const {
    const Node& n = nodes_[id];
    return {grad_.data() + n.val, static_cast<std::size_t>(n.rows) * n.cols};
}

Tape::NodeId Tape::leaf(const double* data, int rows, int cols) {
    NodeId id = push(Op::kLeaf, rows, cols);
    std::memcpy(val_ptr(id), data, sizeof(double) * rows * cols);
    return id;
}

Tape::NodeId Tape::leaf_zero(int rows, int cols) {
    NodeId id = push(Op::kLeaf, rows, cols);
    std::fill_n(val_ptr(id), static_cast<std::size_t>(rows) * cols, 0.0);
    return id;
}

Tape::NodeId Tape::embed(NodeId table, int row) {
    const Node& t = nodes_[table];
    if (row < 0 || row >= t.rows) throw std::invalid_argument("embed: row out of range");
    NodeId id = push(Op::kEmbed, t.cols, 1, table);
    nodes_[id].itag = row;
    std::memcpy(val_ptr(id), val_ptr(table) + static_cast<std::size_t>(row) * t.cols,
                sizeof(double) * t.cols);
    return id;
}

Tape::NodeId Tape::matvec(NodeId w, NodeId x) {
    const Node& wn = nodes_[w];
    assert(wn.cols == nodes_[x].rows);
    NodeId id = push(Op::kMatvec, wn.rows, 1, w, x);
    kern::matvec(val_ptr(id), val_ptr(w), val_ptr(x), wn.rows, wn.cols);
    return id;
}

Tape::NodeId Tape::affine(NodeId w, NodeId x, NodeId b) {
    const Node& wn = nodes_[w];
    NodeId id = push(Op::kAffine, wn.rows, 1, w, x, b);
    kern::affine(val_ptr(id), val_ptr(w), val_ptr(x), val_ptr(b), wn.rows, wn.cols);
    return id;
}

Tape::NodeId Tape::affine2(NodeId w1, NodeId x1, NodeId w2, NodeId x2, NodeId b) {
    const Node& w1n = nodes_[w1];
    const Node& w2n = nodes_[w2];
    NodeId id = push(Op::kAffine2, w1n.rows, 1, w1, x1, w2, x2, b);
    kern::affine2(val_ptr(id), val_ptr(w1), val_ptr(x1), w1n.cols, val_ptr(w2),
                  val_ptr(x2), w2n.cols, val_ptr(b), w1n.rows);
    return id;
}

Tape::NodeId Tape::gru_step(NodeId wx, NodeId wh, NodeId b, NodeId x, NodeId h) {
    const int hidden = nodes_[h].rows;
    const int in = nodes_[x].rows;
    NodeId id = push(Op::kGru, hidden, 1, wx, wh, b, x, h);
    nodes_[id].aux = alloc_aux(static_cast<std::size_t>(4) * hidden);
    kern::gru_step(val_ptr(id), aux_.data() + nodes_[id].aux, val_ptr(wx),
                   val_ptr(wh), val_ptr(b), val_ptr(x), val_ptr(h), hidden, in);
    return id;
}

Tape::NodeId Tape::tanh_vec(NodeId x) {
    const Node& xn = nodes_[x];
    NodeId id = push(Op::kTanh, xn.rows, xn.cols, x);
    const double* in = val_ptr(x);
    double* out = val_ptr(id);
    for (int i = 0; i < xn.rows * xn.cols; ++i) out[i] = std::tanh(in[i]);
    return id;
}

Tape::NodeId Tape::concat(NodeId a, NodeId b) {
    const int na = nodes_[a].rows;
    const int nb = nodes_[b].rows;
    NodeId id = push(Op::kConcat, na + nb, 1, a, b);
    std::memcpy(val_ptr(id), val_ptr(a), sizeof(double) * na);
    std::memcpy(val_ptr(id) + na, val_ptr(b), sizeof(double) * nb);
    return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Node& an = nodes_[a];
    NodeId id = push(Op::kAdd, an.rows, an.cols, a, b);
    const double* pa = val_ptr(a);
    const double* pb = val_ptr(b);
    double* out = val_ptr(id);
    for (int i = 0; i < an.rows * an.cols; ++i) out[i] = pa[i] + pb[i];
    return id;
}

Tape::NodeId Tape::add_scaled(NodeId a, NodeId b, double s) {
    const Node& an = nodes_[a];
    NodeId id = push(Op::kAddScaled, an.rows, an.cols, a, b);
    nodes_[id].scalar = s;
    const double* pa = val_ptr(a);
    const double* pb = val_ptr(b);
    double* out = val_ptr(id);
    for (int i = 0; i < an.rows * an.cols; ++i) out[i] = pa[i] + s * pb[i];
    return id;
}

Tape::NodeId Tape::stack_rows(std::span<const NodeId> rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: empty");
    const int d = nodes_[rows[0]].rows;
    NodeId id = push(Op::kStackRows, static_cast<int>(rows.size()), d);
    nodes_[id].extra = static_cast<std::int32_t>(extra_.size());
    nodes_[id].n_extra = static_cast<std::int32_t>(rows.size());
    extra_.insert(extra_.end(), rows.begin(), rows.end());
    double* out = val_ptr(id);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::memcpy(out + i * d, val_ptr(rows[i]), sizeof(double) * d);
    return id;
}

Tape::NodeId Tape::attn_scores(NodeId u_rows, NodeId q, NodeId v) {
    const Node& un = nodes_[u_rows];
    const int n = un.rows;
    const int hidden = un.cols;
    NodeId id = push(Op::kAttnScores, n, 1, u_rows, q, v);
    nodes_[id].aux = alloc_aux(static_cast<std::size_t>(n) * hidden);
    kern::attn_scores(val_ptr(id), aux_.data() + nodes_[id].aux, val_ptr(u_rows),
                      val_ptr(q), val_ptr(v), n, hidden);
    return id;
}

Tape::NodeId Tape::softmax(NodeId logits) {
    const Node& ln = nodes_[logits];
    NodeId id = push(Op::kSoftmax, ln.rows, 1, logits);
    kern::softmax(val_ptr(id), val_ptr(logits), ln.rows);
    return id;
}

Tape::NodeId Tape::weighted_sum_rows(NodeId h_rows, NodeId weights) {
    const Node& hn = nodes_[h_rows];
    NodeId id = push(Op::kWeightedSum, hn.cols, 1, h_rows, weights);
    kern::weighted_sum_rows(val_ptr(id), val_ptr(h_rows), val_ptr(weights),
                            hn.rows, hn.cols);
    return id;
}

Tape::NodeId Tape::dot(NodeId a, NodeId b) {
    const int n = nodes_[a].rows * nodes_[a].cols;
    NodeId id = push(Op::kDot, 1, 1, a, b);
    const double* pa = val_ptr(a);
    const double* pb = val_ptr(b);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += pa[i] * pb[i];
    *val_ptr(id) = s;
    return id;
}

Tape::NodeId Tape::ce_loss(NodeId logits, int target) {
    const int k = nodes_[logits].rows;
    if (target < 0 || target >= k) throw std::invalid_argument("ce_loss: target out of range");
    NodeId id = push(Op::kCe, 1, 1, logits);
    nodes_[id].itag = target;
    nodes_[id].aux = alloc_aux(k);
    double* p = aux_.data() + nodes_[id].aux;
    kern::softmax(p, val_ptr(logits), k);
    *val_ptr(id) = -std::log(std::max(p[target], 1e-300));
    return id;
}

Tape::NodeId Tape::kl_loss(NodeId logits, std::span<const double> target) {
    const int k = nodes_[logits].rows;
    if (static_cast<int>(target.size()) != k)
        throw std::invalid_argument("kl_loss: dimension mismatch");
    NodeId id = push(Op::kKl, 1, 1, logits);
    nodes_[id].aux = alloc_aux(static_cast<std::size_t>(2) * k);
    double* t = aux_.data() + nodes_[id].aux;
    double* p = t + k;
    std::memcpy(t, target.data(), sizeof(double) * k);
    const double* z = val_ptr(logits);
    double mx = z[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, z[i]);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += std::exp(z[i] - mx);
    const double lse = std::log(sum) + mx;
    double loss = 0.0;
    for (int i = 0; i < k; ++i) {
        p[i] = std::exp(z[i] - lse);
        if (t[i] > 0.0) loss += t[i] * (std::log(t[i]) - (z[i] - lse));
    }
    *val_ptr(id) = loss;
    return id;
}

Tape::NodeId Tape::dirichlet_nll_loss(NodeId logits,
                                      std::span<const double> mean_log_target) {
    const int k = nodes_[logits].rows;
    if (static_cast<int>(mean_log_target.size()) != k)
        throw std::invalid_argument("dirichlet_nll_loss: dimension mismatch");
    NodeId id = push(Op::kDirNll, 1, 1, logits);
    nodes_[id].aux = alloc_aux(static_cast<std::size_t>(2) * k);
    double* s = aux_.data() + nodes_[id].aux;
    double* alpha = s + k;
    std::memcpy(s, mean_log_target.data(), sizeof(double) * k);
    kern::concentration_head(alpha, val_ptr(logits), k);
    double a0 = 0.0;
    for (int i = 0; i < k; ++i) a0 += alpha[i];
    double ll = log_gamma(a0);
    for (int i = 0; i < k; ++i) ll += (alpha[i] - 1.0) * s[i] - log_gamma(alpha[i]);
    *val_ptr(id) = -ll;
    return id;
}

Tape::NodeId Tape::dirichlet_kl_loss(NodeId logits,
                                     std::span<const double> alpha_tilde) {
    const int k = nodes_[logits].rows;
    if (static_cast<int>(alpha_tilde.size()) != k)
        throw std::invalid_argument("dirichlet_kl_loss: dimension mismatch");
    NodeId id = push(Op::kDirKl, 1, 1, logits);
    nodes_[id].aux = alloc_aux(static_cast<std::size_t>(2) * k);
    double* at = aux_.data() + nodes_[id].aux;
    double* alpha = at + k;
    std::memcpy(at, alpha_tilde.data(), sizeof(double) * k);
    kern::concentration_head(alpha, val_ptr(logits), k);
    double at0 = 0.0, a0 = 0.0;
    for (int i = 0; i < k; ++i) { at0 += at[i]; a0 += alpha[i]; }
    double v = log_gamma(at0) - log_gamma(a0);
    const double psi_at0 = digamma(at0);
    for (int i = 0; i < k; ++i) {
        v += log_gamma(alpha[i]) - log_gamma(at[i]);
        v += (at[i] - alpha[i]) * (digamma(at[i]) - psi_at0);
    }
    *val_ptr(id) = v;
    return id;
}

Tape::NodeId Tape::mean(std::span<const NodeId> scalars) {
    if (scalars.empty()) throw std::invalid_argument("mean: empty");
    NodeId id = push(Op::kMean, 1, 1);
    nodes_[id].extra = static_cast<std::int32_t>(extra_.size());
    nodes_[id].n_extra = static_cast<std::int32_t>(scalars.size());
    extra_.insert(extra_.end(), scalars.begin(), scalars.end());
    double s = 0.0;
    for (NodeId n : scalars) s += *val_ptr(n);
    *val_ptr(id) = s / static_cast<double>(scalars.size());
    return id;
}

void Tape::backward(NodeId loss) {
    if (nodes_[loss].rows != 1 || nodes_[loss].cols != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    grad_.assign(val_.size(), 0.0);
    grad_[nodes_[loss].val] = 1.0;

    thread_local std::vector<double> scratch;

    for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
        const Node& n = nodes_[id];
        const double* g = grad_.data() + n.val;
        switch (n.op) {
            case Op::kLeaf:
                break;
            case Op::kEmbed: {
                double* gt = grad_ptr(n.in0) + static_cast<std::size_t>(n.itag) * n.rows;
                for (int i = 0; i < n.rows; ++i) gt[i] += g[i];
                break;
            }
            case Op::kMatvec: {
                const Node& wn = nodes_[n.in0];
                kern::outer_acc(grad_ptr(n.in0), g, val_ptr(n.in1), wn.rows, wn.cols);
                kern::matvec_t_acc(grad_ptr(n.in1), val_ptr(n.in0), g, wn.rows, wn.cols);
                break;
            }
            case Op::kAffine: {
                const Node& wn = nodes_[n.in0];
                kern::outer_acc(grad_ptr(n.in0), g, val_ptr(n.in1), wn.rows, wn.cols);
                kern::matvec_t_acc(grad_ptr(n.in1), val_ptr(n.in0), g, wn.rows, wn.cols);
                double* gb = grad_ptr(n.in2);
                for (int i = 0; i < wn.rows; ++i) gb[i] += g[i];
                break;
            }
            case Op::kAffine2: {
                const Node& w1 = nodes_[n.in0];
                const Node& w2 = nodes_[n.in2];
                kern::outer_acc(grad_ptr(n.in0), g, val_ptr(n.in1), w1.rows, w1.cols);
                kern::matvec_t_acc(grad_ptr(n.in1), val_ptr(n.in0), g, w1.rows, w1.cols);
                kern::outer_acc(grad_ptr(n.in2), g, val_ptr(n.in3), w2.rows, w2.cols);
                kern::matvec_t_acc(grad_ptr(n.in3), val_ptr(n.in2), g, w2.rows, w2.cols);
                double* gb = grad_ptr(n.in4);
                for (int i = 0; i < w1.rows; ++i) gb[i] += g[i];
                break;
            }
            case Op::kGru: {
                const int hidden = n.rows;
                const int in = nodes_[n.in3].rows;
                const double* gates = aux_.data() + n.aux;
                const double* z = gates;
                const double* r = gates + hidden;
                const double* nn = gates + 2 * hidden;
                const double* uhn = gates + 3 * hidden;
                const double* hprev = val_ptr(n.in4);
                scratch.resize(static_cast<std::size_t>(6) * hidden);
                double* gpre = scratch.data();       // [gzpre, grpre, gnpre]
                double* gbh = gpre + 3 * hidden;     // [gzpre, grpre, g_uhn]
                double* gh = grad_ptr(n.in4);
                for (int i = 0; i < hidden; ++i) {
                    const double gn = g[i] * (1.0 - z[i]);
                    const double gz = g[i] * (hprev[i] - nn[i]);
                    gh[i] += g[i] * z[i];
                    const double gnpre = gn * (1.0 - nn[i] * nn[i]);
                    const double gr = gnpre * uhn[i];
                    const double guhn = gnpre * r[i];
                    const double gzpre = gz * z[i] * (1.0 - z[i]);
                    const double grpre = gr * r[i] * (1.0 - r[i]);
                    gpre[i] = gzpre;
                    gpre[hidden + i] = grpre;
                    gpre[2 * hidden + i] = gnpre;
                    gbh[i] = gzpre;
                    gbh[hidden + i] = grpre;
                    gbh[2 * hidden + i] = guhn;
                }
                kern::outer_acc(grad_ptr(n.in0), gpre, val_ptr(n.in3), 3 * hidden, in);
                kern::matvec_t_acc(grad_ptr(n.in3), val_ptr(n.in0), gpre, 3 * hidden, in);
                kern::outer_acc(grad_ptr(n.in1), gbh, hprev, 3 * hidden, hidden);
                kern::matvec_t_acc(grad_ptr(n.in4), val_ptr(n.in1), gbh, 3 * hidden, hidden);
                double* gb = grad_ptr(n.in2);
                for (int i = 0; i < 3 * hidden; ++i) gb[i] += gpre[i];
                break;
            }
            case Op::kTanh: {
                const double* y = val_ptr(id);
                double* gx = grad_ptr(n.in0);
                for (int i = 0; i < n.rows * n.cols; ++i)
                    gx[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::kConcat: {
                const int na = nodes_[n.in0].rows;
                const int nb = nodes_[n.in1].rows;
                double* ga = grad_ptr(n.in0);
                double* gb = grad_ptr(n.in1);
                for (int i = 0; i < na; ++i) ga[i] += g[i];
                for (int i = 0; i < nb; ++i) gb[i] += g[na + i];
                break;
            }
            case Op::kAdd: {
                double* ga = grad_ptr(n.in0);
                double* gb = grad_ptr(n.in1);
                for (int i = 0; i < n.rows * n.cols; ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::kAddScaled: {
                double* ga = grad_ptr(n.in0);
                double* gb = grad_ptr(n.in1);
                for (int i = 0; i < n.rows * n.cols; ++i) {
                    ga[i] += g[i];
                    gb[i] += n.scalar * g[i];
                }
                break;
            }
            case Op::kStackRows: {
                const int d = n.cols;
                for (int i = 0; i < n.n_extra; ++i) {
                    double* gr = grad_ptr(extra_[n.extra + i]);
                    const double* gi = g + static_cast<std::size_t>(i) * d;
                    for (int j = 0; j < d; ++j) gr[j] += gi[j];
                }
                break;
            }
            case Op::kAttnScores: {
                const Node& un = nodes_[n.in0];
                const int rows = un.rows;
                const int hidden = un.cols;
                const double* t = aux_.data() + n.aux;
                const double* v = val_ptr(n.in2);
                double* gu = grad_ptr(n.in0);
                double* gq = grad_ptr(n.in1);
                double* gv = grad_ptr(n.in2);
                for (int i = 0; i < rows; ++i) {
                    const double gi = g[i];
                    if (gi == 0.0) continue;
                    const double* ti = t + static_cast<std::size_t>(i) * hidden;
                    double* gui = gu + static_cast<std::size_t>(i) * hidden;
                    for (int j = 0; j < hidden; ++j) {
                        gv[j] += gi * ti[j];
                        const double gpre = gi * v[j] * (1.0 - ti[j] * ti[j]);
                        gui[j] += gpre;
                        gq[j] += gpre;
                    }
                }
                break;
            }
            case Op::kSoftmax: {
                const double* y = val_ptr(id);
                double* gx = grad_ptr(n.in0);
                double dot = 0.0;
                for (int i = 0; i < n.rows; ++i) dot += g[i] * y[i];
                for (int i = 0; i < n.rows; ++i) gx[i] += y[i] * (g[i] - dot);
                break;
            }
            case Op::kWeightedSum: {
                const Node& hn = nodes_[n.in0];
                const int rows = hn.rows;
                const int d = hn.cols;
                const double* hrows = val_ptr(n.in0);
                const double* a = val_ptr(n.in1);
                double* gh = grad_ptr(n.in0);
                double* ga = grad_ptr(n.in1);
                for (int i = 0; i < rows; ++i) {
                    const double* hi = hrows + static_cast<std::size_t>(i) * d;
                    double* ghi = gh + static_cast<std::size_t>(i) * d;
                    double s = 0.0;
                    for (int j = 0; j < d; ++j) {
                        ghi[j] += a[i] * g[j];
                        s += hi[j] * g[j];
                    }
                    ga[i] += s;
                }
                break;
            }
            case Op::kDot: {
                const int len = nodes_[n.in0].rows * nodes_[n.in0].cols;
                const double* a = val_ptr(n.in0);
                const double* b = val_ptr(n.in1);
                double* ga = grad_ptr(n.in0);
                double* gb = grad_ptr(n.in1);
                for (int i = 0; i < len; ++i) {
                    ga[i] += g[0] * b[i];
                    gb[i] += g[0] * a[i];
                }
                break;
            }
            case Op::kCe: {
                const int k = nodes_[n.in0].rows;
                const double* p = aux_.data() + n.aux;
                double* gx = grad_ptr(n.in0);
                for (int i = 0; i < k; ++i) gx[i] += g[0] * (p[i] - (i == n.itag ? 1.0 : 0.0));
                break;
            }
            case Op::kKl: {
                const int k = nodes_[n.in0].rows;
                const double* t = aux_.data() + n.aux;
                const double* p = t + k;
                double* gx = grad_ptr(n.in0);
                for (int i = 0; i < k; ++i) gx[i] += g[0] * (p[i] - t[i]);
                break;
            }
            case Op::kDirNll: {
                const int k = nodes_[n.in0].rows;
                const double* s = aux_.data() + n.aux;
                const double* alpha = s + k;
                const double* z = val_ptr(n.in0);
                double a0 = 0.0;
                for (int i = 0; i < k; ++i) a0 += alpha[i];
                const double psi_a0 = digamma(a0);
                double* gx = grad_ptr(n.in0);
                for (int i = 0; i < k; ++i) {
                    if (z[i] <= kern::kConcentrationClampLo ||
                        z[i] >= kern::kConcentrationClampHi)
                        continue;
                    const double dl_da = -(psi_a0 - digamma(alpha[i]) + s[i]);
                    gx[i] += g[0] * dl_da * alpha[i];
                }
                break;
            }
            case Op::kDirKl: {
                const int k = nodes_[n.in0].rows;
                const double* at = aux_.data() + n.aux;
                const double* alpha = at + k;
                const double* z = val_ptr(n.in0);
                double at0 = 0.0, a0 = 0.0;
                for (int i = 0; i < k; ++i) { at0 += at[i]; a0 += alpha[i]; }
                const double psi_a0 = digamma(a0);
                const double psi_at0 = digamma(at0);
                double* gx = grad_ptr(n.in0);
                for (int i = 0; i < k; ++i) {
                    if (z[i] <= kern::kConcentrationClampLo ||
                        z[i] >= kern::kConcentrationClampHi)
                        continue;
                    const double dl_da =
                        digamma(alpha[i]) - psi_a0 - (digamma(at[i]) - psi_at0);
                    gx[i] += g[0] * dl_da * alpha[i];
                }
                break;
            }
            case Op::kMean: {
                const double gi = g[0] / static_cast<double>(n.n_extra);
                for (int i = 0; i < n.n_extra; ++i)
                    grad_[nodes_[extra_[n.extra + i]].val] += gi;
                break;
            }
        }
    }
}

}  // namespace endd::autodiff
