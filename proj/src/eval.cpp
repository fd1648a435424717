#include "endd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace endd::eval {

namespace {

constexpr double kEps = 1e-12;

// N-grams packed into 64 bits (16 bits per token, n <= 4).
void count_ngrams(const std::vector<int>& toks, int n,
                  std::unordered_map<std::uint64_t, int>& out) {
    out.clear();
    const int len = static_cast<int>(toks.size());
    for (int i = 0; i + n <= len; ++i) {
        std::uint64_t key = 0;
        for (int j = 0; j < n; ++j)
            key = (key << 16) | (static_cast<std::uint64_t>(toks[i + j]) & 0xFFFF);
        ++out[key];
    }
}

}  // namespace

GleuStats gleu_stats(const std::vector<int>& source, const std::vector<int>& reference,
                     const std::vector<int>& hypothesis) {
    if (reference.empty())
        throw std::invalid_argument("gleu_stats: reference must be non-empty");
    GleuStats s;
    s.hyp_len = static_cast<long>(hypothesis.size());
    s.ref_len = static_cast<long>(reference.size());
    std::unordered_map<std::uint64_t, int> ch, cr, cs;
    for (int n = 1; n <= 4; ++n) {
        count_ngrams(hypothesis, n, ch);
        count_ngrams(reference, n, cr);
        count_ngrams(source, n, cs);
        double num = 0.0, den = 0.0;
        for (const auto& [g, c_h] : ch) {
            auto it_r = cr.find(g);
            const int c_r = it_r == cr.end() ? 0 : it_r->second;
            auto it_s = cs.find(g);
            const int c_s = it_s == cs.end() ? 0 : it_s->second;
            const int reward = std::min(c_h, c_r);
            const int penalty = std::max(0, std::min(c_h, c_s) - c_r);
            num += std::max(0, reward - penalty);
            den += c_h;
        }
        s.num[n - 1] = num;
        s.den[n - 1] = den;
    }
    return s;
}

double gleu_from_stats(const GleuStats& s) {
    if (s.hyp_len == 0) return 0.0;
    double log_p = 0.0;
    for (int n = 0; n < 4; ++n)
        log_p += std::log((s.num[n] + kEps) / (s.den[n] + kEps));
    const double bp =
        s.hyp_len >= s.ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len));
    return bp * std::exp(0.25 * log_p);
}

double gleu_sentence(const std::vector<int>& source, const std::vector<int>& reference,
                     const std::vector<int>& hypothesis) {
    return gleu_from_stats(gleu_stats(source, reference, hypothesis));
}

ScoredSentence make_scored(std::vector<int> source, std::vector<int> reference,
                           std::vector<int> hypothesis) {
    ScoredSentence s;
    s.gleu = gleu_sentence(source, reference, hypothesis);
    s.length = static_cast<int>(hypothesis.size());
    s.source = std::move(source);
    s.reference = std::move(reference);
    s.hypothesis = std::move(hypothesis);
    return s;
}

namespace {

GleuStats pool(const std::vector<GleuStats>& stats) {
    GleuStats total;
    for (const GleuStats& s : stats) {
        for (int n = 0; n < 4; ++n) {
            total.num[n] += s.num[n];
            total.den[n] += s.den[n];
        }
        total.hyp_len += s.hyp_len;
        total.ref_len += s.ref_len;
    }
    return total;
}

// Stats for the oracle replacement hyp := ref. Every reference n-gram is
// rewarded (min(c_h,c_s) <= c_h = c_r makes the penalty zero).
GleuStats perfect_stats(const std::vector<int>& reference) {
    GleuStats s;
    s.hyp_len = s.ref_len = static_cast<long>(reference.size());
    for (int n = 0; n < 4; ++n) {
        const double cnt = std::max<long>(0, s.ref_len - n);
        s.num[n] = cnt;
        s.den[n] = cnt;
    }
    return s;
}

}  // namespace

double gleu_corpus(const std::vector<ScoredSentence>& sentences) {
    if (sentences.empty()) throw std::invalid_argument("gleu_corpus: empty corpus");
    std::vector<GleuStats> stats;
    stats.reserve(sentences.size());
    for (const ScoredSentence& s : sentences)
        stats.push_back(gleu_stats(s.source, s.reference, s.hypothesis));
    return gleu_from_stats(pool(stats));
}

double manual_score(const ScoredSentence& s) {
    return static_cast<double>(s.reference.size()) * (1.0 - s.gleu);
}

namespace {

std::vector<int> ranking_order(const std::vector<double>& scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;  // deterministic tie-break by sentence index
    });
    return order;
}

int rejected_count(double fraction, std::size_t n) {
    return static_cast<int>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

double score_with_rejected(const std::vector<GleuStats>& base,
                           const std::vector<GleuStats>& perfect,
                           const std::vector<int>& order, int k) {
    GleuStats total = pool(base);
    for (int i = 0; i < k; ++i) {
        const int ix = order[i];
        for (int n = 0; n < 4; ++n) {
            total.num[n] += perfect[ix].num[n] - base[ix].num[n];
            total.den[n] += perfect[ix].den[n] - base[ix].den[n];
        }
        total.hyp_len += perfect[ix].hyp_len - base[ix].hyp_len;
    }
    return gleu_from_stats(total);
}

}  // namespace

RejectionCurve rejection_curve(const std::vector<ScoredSentence>& sentences,
                               const std::vector<double>& ranking_scores,
                               double grid_step) {
    if (sentences.empty()) throw std::invalid_argument("rejection_curve: empty corpus");
    if (sentences.size() != ranking_scores.size())
        throw std::invalid_argument("rejection_curve: one score per sentence required");
    const double steps_real = 1.0 / grid_step;
    const int steps = static_cast<int>(std::lround(steps_real));
    if (steps < 1 || std::abs(steps_real - steps) > 1e-9)
        throw std::invalid_argument("rejection_curve: grid_step must divide 1 evenly");

    std::vector<GleuStats> base, perfect;
    base.reserve(sentences.size());
    perfect.reserve(sentences.size());
    for (const ScoredSentence& s : sentences) {
        base.push_back(gleu_stats(s.source, s.reference, s.hypothesis));
        perfect.push_back(perfect_stats(s.reference));
    }
    const std::vector<int> order = ranking_order(ranking_scores);

    RejectionCurve curve;
    for (int i = 0; i <= steps; ++i) {
        const double f = static_cast<double>(i) / steps;
        curve.fractions.push_back(f);
        curve.scores.push_back(
            score_with_rejected(base, perfect, order, rejected_count(f, sentences.size())));
    }
    curve.auc = 0.0;
    for (int i = 0; i + 1 <= steps; ++i)
        curve.auc += (curve.fractions[i + 1] - curve.fractions[i]) *
                     0.5 * (curve.scores[i] + curve.scores[i + 1]);
    return curve;
}

double auc_rr(const RejectionCurve& curve, const RejectionCurve& manual_curve,
              double random_auc) {
    if (curve.fractions.size() != manual_curve.fractions.size())
        throw std::invalid_argument("auc_rr: curves use different grids");
    const double den = manual_curve.auc - random_auc;
    if (std::abs(den) < 1e-15)
        throw std::invalid_argument("auc_rr: manual and random AUC coincide");
    return (curve.auc - random_auc) / den;
}

double random_rejection_auc(const std::vector<ScoredSentence>& sentences,
                            double grid_step) {
    (void)grid_step;  // the linear model integrates exactly on any grid
    const double base = gleu_corpus(sentences);
    return 0.5 * (base + 1.0);
}

double rejection_at(const std::vector<ScoredSentence>& sentences,
                    const std::vector<double>& ranking_scores, double fraction) {
    if (sentences.empty()) throw std::invalid_argument("rejection_at: empty corpus");
    if (sentences.size() != ranking_scores.size())
        throw std::invalid_argument("rejection_at: one score per sentence required");
    std::vector<GleuStats> base, perfect;
    for (const ScoredSentence& s : sentences) {
        base.push_back(gleu_stats(s.source, s.reference, s.hypothesis));
        perfect.push_back(perfect_stats(s.reference));
    }
    const std::vector<int> order = ranking_order(ranking_scores);
    return score_with_rejected(base, perfect, order,
                               rejected_count(fraction, sentences.size()));
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::optional<double> spearman_rank(const std::vector<double>& xs,
                                    const std::vector<double>& ys) {
    if (xs.empty() || xs.size() != ys.size())
        throw std::invalid_argument("spearman_rank: equal non-zero lengths required");
    const std::vector<double> rx = average_ranks(xs);
    const std::vector<double> ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace endd::eval
