#ifndef ENDD_NNET_HPP
#define ENDD_NNET_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "endd/autodiff.hpp"
#include "endd/dirmath.hpp"

namespace endd::nnet {

// Reserved token indices.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

enum class HeadMode { softmax, concentration };

struct ModelConfig {
    int vocab_size = 50;
    int embed_dim = 32;
    int hidden_dim = 64;
    HeadMode head_mode = HeadMode::softmax;
    int max_len = 64;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
    int rows = 0;
    int cols = 1;
    std::vector<double> v;

    std::size_t size() const { return v.size(); }
};

struct ParamSpec {
    std::string name;
    int rows;
    int cols;
};

// Single-layer GRU encoder + single-layer GRU decoder with additive
// attention. The output head is either a softmax (categorical) or an
// exp-clamp concentration head (Dirichlet), selected by config.
struct SeqModel {
    ModelConfig config;
    std::vector<Tensor> params;

    static std::vector<ParamSpec> param_specs(const ModelConfig& config);
    const Tensor& param(const std::string& name) const;
};

// Parameter indices into SeqModel::params (fixed order).
enum ParamIx : int {
    kEncEmbed, kEncWx, kEncWh, kEncB,
    kDecEmbed, kDecWx, kDecWh, kDecB,
    kAttnU, kAttnQ, kAttnV,
    kInitW, kInitB,
    kOutWs, kOutWc, kOutB,
    kNumParams,
};

SeqModel init_model(const ModelConfig& config);
// All-zero parameters; forward yields exactly uniform categoricals
// (softmax head) or all-ones concentrations.
SeqModel init_model_zero(const ModelConfig& config);

// Per-token model output: probs (softmax head) or alpha (concentration head).
struct StepOutput {
    dirmath::Categorical probs;
    dirmath::DirichletParams alpha;
};

// --- no-grad inference ------------------------------------------------------

// Encoder pass over the source; holds everything a decoder step needs.
struct EncodedSource {
    int n = 0;
    std::vector<double> states;  // n x H
    std::vector<double> u_proj;  // n x H, attn_u applied to each state
    std::vector<double> h0;      // decoder initial state
};

EncodedSource encode(const SeqModel& model, const std::vector<int>& src);

// One decoder step: consumes the previous state and an input token, returns
// the new state in-place and the head output.
StepOutput decode_step(const SeqModel& model, const EncodedSource& enc,
                       std::vector<double>& state, int token_in);

// One output per reference position including the end marker (L = |ref| + 1).
std::vector<StepOutput> forward_teacher_forced(const SeqModel& model,
                                               const std::vector<int>& src,
                                               const std::vector<int>& ref);

// Output for the position following `history`; bitwise equal to the
// corresponding teacher-forced position when history is a reference prefix.
StepOutput forward_step(const SeqModel& model, const std::vector<int>& src,
                        const std::vector<int>& history);

// --- taped forward (training) ------------------------------------------------

// Node handles for the model parameters registered on a tape.
struct TapedParams {
    std::vector<autodiff::Tape::NodeId> ids;
};

TapedParams register_params(autodiff::Tape& tape, const SeqModel& model);

struct TapedEncoding {
    autodiff::Tape::NodeId h_rows;  // n x H encoder states
    autodiff::Tape::NodeId u_rows;  // n x H attention projections
    autodiff::Tape::NodeId h0;      // decoder initial state
};

TapedEncoding encode_on_tape(autodiff::Tape& tape, const TapedParams& p,
                             const SeqModel& model, const std::vector<int>& src);

// Teacher-forced decoder logits for every position (|ref| + 1 outputs).
std::vector<autodiff::Tape::NodeId> decode_logits_on_tape(
    autodiff::Tape& tape, const TapedParams& p, const SeqModel& model,
    const TapedEncoding& enc, const std::vector<int>& ref);

// Gradient of a recorded scalar loss with respect to every parameter.
std::vector<Tensor> backward(autodiff::Tape& tape, autodiff::Tape::NodeId loss,
                             const TapedParams& p, const SeqModel& model);

// --- optimizer ----------------------------------------------------------------

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;
    long step = 0;
    long skipped = 0;  // updates dropped because of non-finite gradients
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

AdamState make_adam(const SeqModel& model, double learning_rate);

// Applies one adaptive-moment update; returns false (and counts the skip)
// when any gradient entry is non-finite.
bool optimizer_step(SeqModel& model, const std::vector<Tensor>& grads,
                    AdamState& state);

// --- checkpoints ---------------------------------------------------------------

// Self-describing binary container: magic, version, JSON header (config and
// parameter shapes), float64 little-endian payload, CRC32 of all preceding
// bytes. load(save(m)) is bit-exact.
void save_checkpoint(const SeqModel& model, const std::string& path);
SeqModel load_checkpoint(const std::string& path);

}  // namespace endd::nnet

#endif
