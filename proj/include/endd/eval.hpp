#ifndef ENDD_EVAL_HPP
#define ENDD_EVAL_HPP

#include <optional>
#include <vector>

#include "endd/uncertainty.hpp"

namespace endd::eval {

// Pooled n-gram statistics for one sentence, orders 1..4. `num` follows the
// source-penalized GLEU numerator
//   sum_g max(0, min(c_h, c_r) - max(0, min(c_h, c_s) - c_r)).
struct GleuStats {
    double num[4] = {0, 0, 0, 0};
    double den[4] = {0, 0, 0, 0};
    long hyp_len = 0;
    long ref_len = 0;
};

GleuStats gleu_stats(const std::vector<int>& source, const std::vector<int>& reference,
                     const std::vector<int>& hypothesis);
// Geometric mean of add-epsilon smoothed precisions times the brevity
// penalty min(1, exp(1 - r/h)); zero when the hypothesis is empty.
double gleu_from_stats(const GleuStats& s);

double gleu_sentence(const std::vector<int>& source, const std::vector<int>& reference,
                     const std::vector<int>& hypothesis);

struct ScoredSentence {
    std::vector<int> source;
    std::vector<int> reference;
    std::vector<int> hypothesis;
    double gleu = 0.0;
    int length = 0;  // hypothesis length
    std::optional<uncertainty::SequenceUncertainty> uncert;
};

ScoredSentence make_scored(std::vector<int> source, std::vector<int> reference,
                           std::vector<int> hypothesis);

// Dataset-level GLEU from globally pooled counts (not a sentence mean).
double gleu_corpus(const std::vector<ScoredSentence>& sentences);

// L * (1 - GLEU) with L the reference length.
double manual_score(const ScoredSentence& s);

struct RejectionCurve {
    std::vector<double> fractions;
    std::vector<double> scores;
    double auc = 0.0;
};

// At fraction f the ceil(f N) highest-scored sentences are replaced by their
// references and the corpus GLEU is recomputed; ties broken by sentence
// index; AUC by the trapezoidal rule.
RejectionCurve rejection_curve(const std::vector<ScoredSentence>& sentences,
                               const std::vector<double>& ranking_scores,
                               double grid_step = 0.02);

// (AUC - AUC_random) / (AUC_manual - AUC_random)
double auc_rr(const RejectionCurve& curve, const RejectionCurve& manual_curve,
              double random_auc);

// Expected fully-random rejection modeled as the straight line from
// (0, base) to (1, 1): AUC = (base + 1) / 2.
double random_rejection_auc(const std::vector<ScoredSentence>& sentences,
                            double grid_step = 0.02);

double rejection_at(const std::vector<ScoredSentence>& sentences,
                    const std::vector<double>& ranking_scores, double fraction = 0.10);

// Average-rank tie handling; empty when either list has zero variance.
std::optional<double> spearman_rank(const std::vector<double>& xs,
                                    const std::vector<double>& ys);

}  // namespace endd::eval

#endif
