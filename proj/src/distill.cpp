#include "endd/distill.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "endd/rng.hpp"

namespace endd::distill {

using autodiff::Tape;
using dirmath::Categorical;
using dirmath::DirichletFit;
using dirmath::DirichletParams;
using dirmath::TokenPosteriorSet;
using nnet::SeqModel;

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1)
        throw std::invalid_argument("TrainConfig: epochs and batch_size must be >= 1");
    if (!(temperature_start >= temperature_end) || !(temperature_end >= 1.0))
        throw std::invalid_argument("TrainConfig: need temperature_start >= temperature_end >= 1");
    if (!(anneal_fraction > 0.0) || anneal_fraction > 1.0)
        throw std::invalid_argument("TrainConfig: anneal_fraction must be in (0,1]");
}

double anneal_temperature(int epoch, const TrainConfig& config) {
    if (epoch < 0) throw std::invalid_argument("anneal_temperature: epoch must be >= 0");
    const double anneal_end = config.anneal_fraction * config.epochs;
    if (static_cast<double>(epoch) >= anneal_end) return config.temperature_end;
    return config.temperature_start +
           (config.temperature_end - config.temperature_start) * epoch / anneal_end;
}

std::vector<TokenPosteriorSet> collect_targets(const std::vector<SeqModel>& ensemble,
                                               const std::vector<int>& src,
                                               const std::vector<int>& ref,
                                               double temperature) {
    if (ensemble.empty()) throw std::invalid_argument("collect_targets: empty ensemble");
    const int vocab = ensemble.front().config.vocab_size;
    for (const SeqModel& m : ensemble) {
        if (m.config.head_mode != nnet::HeadMode::softmax)
            throw std::invalid_argument("collect_targets: members must be softmax-headed");
        if (m.config.vocab_size != vocab)
            throw std::invalid_argument("collect_targets: vocabulary mismatch");
    }
    const std::size_t len = ref.size() + 1;
    std::vector<TokenPosteriorSet> sets(len);
    for (auto& s : sets) s.members.reserve(ensemble.size());
    for (const SeqModel& m : ensemble) {
        std::vector<nnet::StepOutput> outs = forward_teacher_forced(m, src, ref);
        for (std::size_t l = 0; l < len; ++l)
            sets[l].members.push_back(
                dirmath::temper_categorical(outs[l].probs, temperature));
    }
    return sets;
}

double kd_loss(const std::vector<TokenPosteriorSet>& targets,
               const std::vector<Categorical>& student_outputs) {
    if (targets.size() != student_outputs.size())
        throw std::invalid_argument("kd_loss: length mismatch");
    if (targets.empty()) throw std::invalid_argument("kd_loss: empty sequence");
    double loss = 0.0;
    for (std::size_t l = 0; l < targets.size(); ++l) {
        const TokenPosteriorSet& set = targets[l];
        if (set.members.empty()) throw std::invalid_argument("kd_loss: empty member set");
        const std::size_t k = set.members.front().size();
        if (student_outputs[l].size() != k)
            throw std::invalid_argument("kd_loss: dimension mismatch");
        std::vector<double> mean(k, 0.0);
        for (const Categorical& m : set.members)
            for (std::size_t c = 0; c < k; ++c) mean[c] += m.probs[c];
        const double inv_m = 1.0 / static_cast<double>(set.members.size());
        Categorical student = dirmath::floored(student_outputs[l]);
        double kl = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double t = mean[c] * inv_m;
            if (t > 0.0) kl += t * (std::log(t) - std::log(student.probs[c]));
        }
        loss += kl;
    }
    return loss / static_cast<double>(targets.size());
}

double endd_nll_loss(const std::vector<TokenPosteriorSet>& targets,
                     const std::vector<DirichletParams>& student_alphas) {
    if (targets.size() != student_alphas.size())
        throw std::invalid_argument("endd_nll_loss: length mismatch");
    if (targets.empty()) throw std::invalid_argument("endd_nll_loss: empty sequence");
    double loss = 0.0;
    for (std::size_t l = 0; l < targets.size(); ++l) {
        const TokenPosteriorSet& set = targets[l];
        if (set.members.empty())
            throw std::invalid_argument("endd_nll_loss: empty member set");
        double ll = 0.0;
        for (const Categorical& m : set.members)
            ll += dirmath::dirichlet_log_pdf(student_alphas[l], m);
        loss -= ll / static_cast<double>(set.members.size());
    }
    return loss / static_cast<double>(targets.size());
}

std::vector<DirichletFit> fit_token_dirichlets(
    const std::vector<TokenPosteriorSet>& targets, double tol, int max_iter) {
    std::vector<DirichletFit> fits;
    fits.reserve(targets.size());
    for (const TokenPosteriorSet& set : targets) {
        if (set.members.size() < 2)
            throw std::invalid_argument("fit_token_dirichlets: needs M >= 2 members");
        fits.push_back(dirmath::dirichlet_mle_fit(set.members, tol, max_iter));
    }
    return fits;
}

double endd_kl_loss(const std::vector<DirichletParams>& fitted,
                    const std::vector<DirichletParams>& student_alphas) {
    if (fitted.size() != student_alphas.size())
        throw std::invalid_argument("endd_kl_loss: length mismatch");
    if (fitted.empty()) throw std::invalid_argument("endd_kl_loss: empty sequence");
    double loss = 0.0;
    for (std::size_t l = 0; l < fitted.size(); ++l)
        loss += dirmath::dirichlet_kl(fitted[l], student_alphas[l]);
    return loss / static_cast<double>(fitted.size());
}

// --- training ------------------------------------------------------------------

namespace {

// Raw (T = 1) teacher posteriors for every corpus position, stored once as
// float32. Temperature is applied at lookup time, so the annealing schedule
// still sees fresh targets every batch.
struct TeacherCache {
    int members = 0;
    int vocab = 0;
    std::vector<std::size_t> offsets;
    std::vector<float> data;

    static TeacherCache build(const std::vector<SeqModel>& ensemble, const Corpus& corpus) {
        TeacherCache cache;
        cache.members = static_cast<int>(ensemble.size());
        cache.vocab = ensemble.front().config.vocab_size;
        cache.offsets.reserve(corpus.size() + 1);
        std::size_t total = 0;
        for (const auto& p : corpus) {
            cache.offsets.push_back(total);
            total += (p.reference.size() + 1) * ensemble.size() * cache.vocab;
        }
        cache.offsets.push_back(total);
        cache.data.resize(total);
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            const std::size_t len = corpus[i].reference.size() + 1;
            float* base = cache.data.data() + cache.offsets[i];
            for (std::size_t m = 0; m < ensemble.size(); ++m) {
                std::vector<nnet::StepOutput> outs = forward_teacher_forced(
                    ensemble[m], corpus[i].source, corpus[i].reference);
                for (std::size_t l = 0; l < len; ++l) {
                    float* dst = base + (l * ensemble.size() + m) * cache.vocab;
                    for (int c = 0; c < cache.vocab; ++c)
                        dst[c] = static_cast<float>(outs[l].probs.probs[c]);
                }
            }
        }
        return cache;
    }

    std::vector<TokenPosteriorSet> targets(std::size_t sentence, std::size_t len,
                                           double temperature) const {
        std::vector<TokenPosteriorSet> sets(len);
        const float* base = data.data() + offsets[sentence];
        for (std::size_t l = 0; l < len; ++l) {
            sets[l].members.reserve(members);
            for (int m = 0; m < members; ++m) {
                const float* src = base + (l * members + m) * vocab;
                std::vector<double> p(src, src + vocab);
                double sum = 0.0;
                for (double v : p) sum += v;
                for (double& v : p) v /= sum;  // undo float32 rounding drift
                sets[l].members.push_back(
                    dirmath::temper_categorical(Categorical(std::move(p)), temperature));
            }
        }
        return sets;
    }
};

std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, 0x73687566ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(idx);
    return idx;
}

void log_epoch(std::ostream* log, int epoch, double temperature, double mean_loss,
               double seconds) {
    if (!log) return;
    (*log) << "epoch " << epoch << " temperature " << temperature << " loss "
           << mean_loss << " seconds " << seconds << "\n";
    log->flush();
}

using Clock = std::chrono::steady_clock;

double elapsed_s(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Per-sentence loss graph builder: gets the tape, registered params, and the
// sentence index; returns the sentence loss node.
template <typename LossBuilder>
SeqModel train_loop(SeqModel student, const Corpus& corpus, const TrainConfig& config,
                    std::ostream* log, bool abort_to_last_good,
                    LossBuilder&& sentence_loss) {
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
    config.validate();
    nnet::AdamState adam = nnet::make_adam(student, config.learning_rate);
    Tape tape;
    SeqModel last_good = student;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = Clock::now();
        const double temperature = anneal_temperature(epoch, config);
        const std::vector<int> order = epoch_order(corpus.size(), config.seed, epoch);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(),
                                              start + static_cast<std::size_t>(config.batch_size));
            tape.clear();
            nnet::TapedParams params = nnet::register_params(tape, student);
            std::vector<Tape::NodeId> losses;
            losses.reserve(stop - start);
            for (std::size_t b = start; b < stop; ++b)
                losses.push_back(sentence_loss(tape, params, student, order[b], temperature));
            const Tape::NodeId batch_loss = tape.mean(losses);
            const double loss_value = tape.value(batch_loss)[0];
            if (!std::isfinite(loss_value)) {
                if (!abort_to_last_good)
                    throw std::runtime_error(
                        "train: non-finite loss at epoch " + std::to_string(epoch) +
                        " batch " + std::to_string(start / config.batch_size));
                if (log)
                    (*log) << "abort: non-finite loss at epoch " << epoch
                           << ", returning last good checkpoint\n";
                return last_good;
            }
            loss_sum += loss_value * static_cast<double>(stop - start);
            std::vector<nnet::Tensor> grads = nnet::backward(tape, batch_loss, params, student);
            nnet::optimizer_step(student, grads, adam);
        }
        last_good = student;
        log_epoch(log, epoch, temperature, loss_sum / static_cast<double>(corpus.size()),
                  elapsed_s(t0));
    }
    if (adam.skipped > 0 && log)
        (*log) << "note: " << adam.skipped << " updates skipped (non-finite gradients)\n";
    return student;
}

std::vector<double> mean_member_probs(const TokenPosteriorSet& set) {
    const std::size_t k = set.members.front().size();
    std::vector<double> mean(k, 0.0);
    for (const Categorical& m : set.members)
        for (std::size_t c = 0; c < k; ++c) mean[c] += m.probs[c];
    const double inv = 1.0 / static_cast<double>(set.members.size());
    for (double& v : mean) v *= inv;
    return mean;
}

std::vector<double> mean_member_log_probs(const TokenPosteriorSet& set) {
    const std::size_t k = set.members.front().size();
    std::vector<double> mean(k, 0.0);
    for (const Categorical& m : set.members)
        for (std::size_t c = 0; c < k; ++c) mean[c] += std::log(m.probs[c]);
    const double inv = 1.0 / static_cast<double>(set.members.size());
    for (double& v : mean) v *= inv;
    return mean;
}

}  // namespace

SeqModel train_member(const Corpus& corpus, const nnet::ModelConfig& model_config,
                      const TrainConfig& config, std::uint64_t seed, std::ostream* log) {
    nnet::ModelConfig mc = model_config;
    mc.head_mode = nnet::HeadMode::softmax;
    mc.seed = seed;
    TrainConfig tc = config;
    tc.seed = seed;
    tc.temperature_start = tc.temperature_end = 1.0;  // no targets to anneal
    SeqModel model = nnet::init_model(mc);
    return train_loop(
        std::move(model), corpus, tc, log, /*abort_to_last_good=*/false,
        [&corpus](Tape& tape, const nnet::TapedParams& p, const SeqModel& m, int ix,
                  double) {
            const synthdata::SentencePair& s = corpus[ix];
            nnet::TapedEncoding enc = nnet::encode_on_tape(tape, p, m, s.source);
            std::vector<Tape::NodeId> logits =
                nnet::decode_logits_on_tape(tape, p, m, enc, s.reference);
            std::vector<Tape::NodeId> pos;
            pos.reserve(logits.size());
            for (std::size_t l = 0; l < logits.size(); ++l) {
                const int target = l < s.reference.size() ? s.reference[l] : nnet::kEos;
                pos.push_back(tape.ce_loss(logits[l], target));
            }
            return tape.mean(pos);
        });
}

SeqModel train_distilled(const std::vector<SeqModel>& ensemble, const Corpus& corpus,
                         const nnet::ModelConfig& model_config, const TrainConfig& config,
                         std::ostream* log) {
    if (ensemble.empty()) throw std::invalid_argument("train_distilled: empty ensemble");
    nnet::ModelConfig mc = model_config;
    mc.head_mode = nnet::HeadMode::softmax;
    mc.seed = mix_seed(config.seed, 0x64697374ULL);
    SeqModel student = nnet::init_model(mc);

    TeacherCache cache;
    if (config.cache_teacher_outputs) cache = TeacherCache::build(ensemble, corpus);

    return train_loop(
        std::move(student), corpus, config, log, /*abort_to_last_good=*/true,
        [&](Tape& tape, const nnet::TapedParams& p, const SeqModel& m, int ix,
            double temperature) {
            const synthdata::SentencePair& s = corpus[ix];
            const double t_eff = config.temper_kd_targets ? temperature : 1.0;
            const std::vector<TokenPosteriorSet> targets =
                config.cache_teacher_outputs
                    ? cache.targets(ix, s.reference.size() + 1, t_eff)
                    : collect_targets(ensemble, s.source, s.reference, t_eff);
            nnet::TapedEncoding enc = nnet::encode_on_tape(tape, p, m, s.source);
            std::vector<Tape::NodeId> logits =
                nnet::decode_logits_on_tape(tape, p, m, enc, s.reference);
            std::vector<Tape::NodeId> pos;
            pos.reserve(logits.size());
            for (std::size_t l = 0; l < logits.size(); ++l)
                pos.push_back(tape.kl_loss(logits[l], mean_member_probs(targets[l])));
            return tape.mean(pos);
        });
}

SeqModel train_distribution_distilled(const std::vector<SeqModel>& ensemble,
                                      const Corpus& corpus,
                                      const nnet::ModelConfig& model_config,
                                      const TrainConfig& config,
                                      DistDistObjective objective, std::ostream* log) {
    if (ensemble.empty())
        throw std::invalid_argument("train_distribution_distilled: empty ensemble");
    nnet::ModelConfig mc = model_config;
    mc.head_mode = nnet::HeadMode::concentration;
    mc.seed = mix_seed(config.seed,
                       objective == DistDistObjective::nll ? 0x6e6c6cULL : 0x6b6cULL);
    SeqModel student = nnet::init_model(mc);

    TeacherCache cache;
    if (config.cache_teacher_outputs) cache = TeacherCache::build(ensemble, corpus);

    long fit_failures = 0;
    SeqModel trained = train_loop(
        std::move(student), corpus, config, log, /*abort_to_last_good=*/true,
        [&](Tape& tape, const nnet::TapedParams& p, const SeqModel& m, int ix,
            double temperature) {
            const synthdata::SentencePair& s = corpus[ix];
            const std::vector<TokenPosteriorSet> targets =
                config.cache_teacher_outputs
                    ? cache.targets(ix, s.reference.size() + 1, temperature)
                    : collect_targets(ensemble, s.source, s.reference, temperature);
            nnet::TapedEncoding enc = nnet::encode_on_tape(tape, p, m, s.source);
            std::vector<Tape::NodeId> logits =
                nnet::decode_logits_on_tape(tape, p, m, enc, s.reference);
            std::vector<Tape::NodeId> pos;
            pos.reserve(logits.size());
            for (std::size_t l = 0; l < logits.size(); ++l) {
                if (objective == DistDistObjective::nll) {
                    pos.push_back(tape.dirichlet_nll_loss(
                        logits[l], mean_member_log_probs(targets[l])));
                } else {
                    DirichletFit fit = dirmath::dirichlet_mle_fit(
                        targets[l].members, config.fit_tol, config.fit_max_iter);
                    if (!fit.converged) ++fit_failures;
                    pos.push_back(tape.dirichlet_kl_loss(logits[l], fit.params.alpha));
                }
            }
            return tape.mean(pos);
        });
    if (fit_failures > 0 && log)
        (*log) << "note: " << fit_failures
               << " token Dirichlet fits flagged non-convergent (clamped)\n";
    return trained;
}

}  // namespace endd::distill
