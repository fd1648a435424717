#ifndef ENDD_DISTILL_HPP
#define ENDD_DISTILL_HPP

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "endd/dirmath.hpp"
#include "endd/nnet.hpp"
#include "endd/synthdata.hpp"

namespace endd::distill {

using Corpus = std::vector<synthdata::SentencePair>;

struct TrainConfig {
    int epochs = 2;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double temperature_start = 10.0;
    double temperature_end = 3.0;
    double anneal_fraction = 0.5;
    std::uint64_t seed = 0;

    // Toolkit knobs beyond the paper-visible fields.
    bool temper_kd_targets = true;     // apply the schedule to KD targets too
    bool cache_teacher_outputs = true; // precompute teacher posteriors once
    double fit_tol = 1e-7;             // per-token Dirichlet fit, KL objective
    int fit_max_iter = 60;

    void validate() const;
};

// Linear from temperature_start at epoch 0 to temperature_end at
// anneal_fraction * epochs, constant afterwards.
double anneal_temperature(int epoch, const TrainConfig& config);

// Teacher-forced member posteriors for every position (|ref| + 1), each
// tempered at T.
std::vector<dirmath::TokenPosteriorSet> collect_targets(
    const std::vector<nnet::SeqModel>& ensemble, const std::vector<int>& src,
    const std::vector<int>& ref, double temperature);

// (1/L) sum_l KL(mean_m pi_l^(m) || student_l)
double kd_loss(const std::vector<dirmath::TokenPosteriorSet>& targets,
               const std::vector<dirmath::Categorical>& student_outputs);

// -(1/(M L)) sum_l sum_m ln Dir(pi_l^(m); alpha_l)
double endd_nll_loss(const std::vector<dirmath::TokenPosteriorSet>& targets,
                     const std::vector<dirmath::DirichletParams>& student_alphas);

// Per-position Dirichlet MLE of the member posteriors.
std::vector<dirmath::DirichletFit> fit_token_dirichlets(
    const std::vector<dirmath::TokenPosteriorSet>& targets, double tol = 1e-8,
    int max_iter = 200);

// (1/L) sum_l KL(Dir(fitted_l) || Dir(alpha_l))
double endd_kl_loss(const std::vector<dirmath::DirichletParams>& fitted,
                    const std::vector<dirmath::DirichletParams>& student_alphas);

enum class DistDistObjective { nll, kl };

// Cross-entropy member training under teacher forcing.
nnet::SeqModel train_member(const Corpus& corpus, const nnet::ModelConfig& model_config,
                            const TrainConfig& config, std::uint64_t seed,
                            std::ostream* log = nullptr);

// Token-level knowledge distillation of the ensemble mean (softmax head).
nnet::SeqModel train_distilled(const std::vector<nnet::SeqModel>& ensemble,
                               const Corpus& corpus,
                               const nnet::ModelConfig& model_config,
                               const TrainConfig& config, std::ostream* log = nullptr);

// Distribution distillation (concentration head), by direct NLL or by the
// two-stage Dirichlet-fit + KL objective.
nnet::SeqModel train_distribution_distilled(
    const std::vector<nnet::SeqModel>& ensemble, const Corpus& corpus,
    const nnet::ModelConfig& model_config, const TrainConfig& config,
    DistDistObjective objective, std::ostream* log = nullptr);

}  // namespace endd::distill

#endif
