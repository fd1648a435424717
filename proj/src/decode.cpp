#include "endd/decode.hpp"

#include <stdexcept>

namespace endd::decode {

using dirmath::Categorical;
using dirmath::DirichletParams;
using nnet::EncodedSource;
using nnet::HeadMode;
using nnet::SeqModel;
using nnet::StepOutput;

namespace {

// Lowest index wins ties; pad is never a valid output.
int argmax_token(const std::vector<double>& scores) {
    int best = -1;
    double best_v = 0.0;
    for (int i = 0; i < static_cast<int>(scores.size()); ++i) {
        if (i == nnet::kPad) continue;
        if (best < 0 || scores[i] > best_v) {
            best = i;
            best_v = scores[i];
        }
    }
    return best;
}

}  // namespace

DecodeResult greedy_decode(const SeqModel& model, const std::vector<int>& src) {
    if (model.config.head_mode != HeadMode::softmax)
        throw std::invalid_argument("greedy_decode: requires a softmax head");
    EncodedSource enc = encode(model, src);
    std::vector<double> state = enc.h0;
    DecodeResult res;
    int token = nnet::kBos;
    for (int l = 0; l < model.config.max_len; ++l) {
        StepOutput out = decode_step(model, enc, state, token);
        const int next = argmax_token(out.probs.probs);
        res.step_probs.push_back(std::move(out.probs));
        if (next == nnet::kEos) return res;
        res.tokens.push_back(next);
        token = next;
    }
    res.truncated = true;
    return res;
}

DecodeResult greedy_decode_mean(const SeqModel& model, const std::vector<int>& src) {
    if (model.config.head_mode != HeadMode::concentration)
        throw std::invalid_argument("greedy_decode_mean: requires a concentration head");
    EncodedSource enc = encode(model, src);
    std::vector<double> state = enc.h0;
    DecodeResult res;
    int token = nnet::kBos;
    for (int l = 0; l < model.config.max_len; ++l) {
        StepOutput out = decode_step(model, enc, state, token);
        // argmax of the predictive mean alpha_c / alpha_0 = argmax of alpha
        const int next = argmax_token(out.alpha.alpha);
        res.step_alphas.push_back(std::move(out.alpha));
        if (next == nnet::kEos) return res;
        res.tokens.push_back(next);
        token = next;
    }
    res.truncated = true;
    return res;
}

std::pair<DecodeResult, std::vector<dirmath::TokenPosteriorSet>>
ensemble_greedy_decode_detailed(const std::vector<SeqModel>& ensemble,
                                const std::vector<int>& src, double temperature) {
    if (ensemble.empty())
        throw std::invalid_argument("ensemble_greedy_decode: empty ensemble");
    const int vocab = ensemble.front().config.vocab_size;
    for (const SeqModel& m : ensemble) {
        if (m.config.head_mode != HeadMode::softmax)
            throw std::invalid_argument("ensemble_greedy_decode: members must be softmax-headed");
        if (m.config.vocab_size != vocab)
            throw std::invalid_argument("ensemble_greedy_decode: vocabulary mismatch");
    }
    std::vector<EncodedSource> encs;
    std::vector<std::vector<double>> states;
    for (const SeqModel& m : ensemble) {
        encs.push_back(encode(m, src));
        states.push_back(encs.back().h0);
    }
    DecodeResult res;
    std::vector<dirmath::TokenPosteriorSet> member_sets;
    int token = nnet::kBos;
    const int max_len = ensemble.front().config.max_len;
    const double inv_m = 1.0 / static_cast<double>(ensemble.size());
    for (int l = 0; l < max_len; ++l) {
        std::vector<double> mean(vocab, 0.0);
        dirmath::TokenPosteriorSet set;
        set.members.reserve(ensemble.size());
        for (std::size_t m = 0; m < ensemble.size(); ++m) {
            StepOutput out = decode_step(ensemble[m], encs[m], states[m], token);
            Categorical tempered = dirmath::temper_categorical(out.probs, temperature);
            for (int c = 0; c < vocab; ++c) mean[c] += tempered.probs[c];
            set.members.push_back(std::move(tempered));
        }
        for (double& v : mean) v *= inv_m;
        member_sets.push_back(std::move(set));
        const int next = argmax_token(mean);
        res.step_probs.push_back(Categorical(std::move(mean)));
        if (next == nnet::kEos) return {res, member_sets};
        res.tokens.push_back(next);
        token = next;
    }
    res.truncated = true;
    return {res, member_sets};
}

DecodeResult ensemble_greedy_decode(const std::vector<SeqModel>& ensemble,
                                    const std::vector<int>& src, double temperature) {
    return ensemble_greedy_decode_detailed(ensemble, src, temperature).first;
}

std::pair<DecodeResult, std::vector<DirichletParams>> gua_decode(
    const SeqModel& predictor, const SeqModel& uq_model, const std::vector<int>& src) {
    if (predictor.config.head_mode != HeadMode::softmax)
        throw std::invalid_argument("gua_decode: predictor must be softmax-headed");
    if (uq_model.config.head_mode != HeadMode::concentration)
        throw std::invalid_argument("gua_decode: uncertainty model must be concentration-headed");
    if (predictor.config.vocab_size != uq_model.config.vocab_size)
        throw std::invalid_argument("gua_decode: vocabulary mismatch");

    EncodedSource enc_p = encode(predictor, src);
    EncodedSource enc_u = encode(uq_model, src);
    std::vector<double> state_p = enc_p.h0;
    std::vector<double> state_u = enc_u.h0;
    DecodeResult res;
    std::vector<DirichletParams> alphas;
    int token = nnet::kBos;
    for (int l = 0; l < predictor.config.max_len; ++l) {
        StepOutput out_p = decode_step(predictor, enc_p, state_p, token);
        StepOutput out_u = decode_step(uq_model, enc_u, state_u, token);
        alphas.push_back(std::move(out_u.alpha));
        const int next = argmax_token(out_p.probs.probs);
        res.step_probs.push_back(std::move(out_p.probs));
        if (next == nnet::kEos) return {res, alphas};
        res.tokens.push_back(next);
        token = next;
    }
    res.truncated = true;
    return {res, alphas};
}

}  // namespace endd::decode
