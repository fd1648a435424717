#ifndef ENDD_DECODE_HPP
#define ENDD_DECODE_HPP

#include <utility>
#include <vector>

#include "endd/dirmath.hpp"
#include "endd/nnet.hpp"

namespace endd::decode {

struct DecodeResult {
    // Emitted tokens, end marker excluded.
    std::vector<int> tokens;
    // One output per executed step, end-marker step included; exactly one of
    // the two vectors is populated depending on the producing head.
    std::vector<dirmath::Categorical> step_probs;
    std::vector<dirmath::DirichletParams> step_alphas;
    bool truncated = false;

    // Number of predicted positions (the uncertainty length L).
    int steps() const {
        return static_cast<int>(std::max(step_probs.size(), step_alphas.size()));
    }
};

// Beam-of-one decoding; ties broken toward the lowest token index, pad
// excluded from the argmax.
DecodeResult greedy_decode(const nnet::SeqModel& model, const std::vector<int>& src);

// Greedy decoding of a concentration-head model via its predictive mean
// alpha_c / alpha_0.
DecodeResult greedy_decode_mean(const nnet::SeqModel& model, const std::vector<int>& src);

// Products-of-expectations combination: member posteriors tempered at T and
// averaged at every step, argmax appended, shared history fed to all members.
DecodeResult ensemble_greedy_decode(const std::vector<nnet::SeqModel>& ensemble,
                                    const std::vector<int>& src, double temperature);

// Same decode, also returning the tempered member posteriors per step (the
// inputs the ensemble uncertainty decomposition needs).
std::pair<DecodeResult, std::vector<dirmath::TokenPosteriorSet>>
ensemble_greedy_decode_detailed(const std::vector<nnet::SeqModel>& ensemble,
                                const std::vector<int>& src, double temperature);

// Two-model decoding: the predictor emits the token sequence, the
// concentration-head model consumes the same generated back-history and
// emits one Dirichlet per position.
std::pair<DecodeResult, std::vector<dirmath::DirichletParams>> gua_decode(
    const nnet::SeqModel& predictor, const nnet::SeqModel& uq_model,
    const std::vector<int>& src);

}  // namespace endd::decode

#endif
