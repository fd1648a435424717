#include "endd/nnet.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "endd/rng.hpp"
#include "kernels.hpp"

namespace endd::nnet {

using autodiff::Tape;
using json = nlohmann::json;

void ModelConfig::validate() const {
    if (vocab_size < 4)
        throw std::invalid_argument("ModelConfig: vocab_size must be >= 4 (pad/bos/eos/unk)");
    if (embed_dim <= 0 || hidden_dim <= 0 || max_len <= 0)
        throw std::invalid_argument("ModelConfig: dimensions must be positive");
}

std::vector<ParamSpec> SeqModel::param_specs(const ModelConfig& c) {
    const int v = c.vocab_size, e = c.embed_dim, h = c.hidden_dim;
    return {
        {"enc.embed", v, e},
        {"enc.gru.wx", 3 * h, e},
        {"enc.gru.wh", 3 * h, h},
        {"enc.gru.b", 3 * h, 1},
        {"dec.embed", v, e},
        {"dec.gru.wx", 3 * h, e + h},
        {"dec.gru.wh", 3 * h, h},
        {"dec.gru.b", 3 * h, 1},
        {"attn.u", h, h},
        {"attn.q", h, h},
        {"attn.v", h, 1},
        {"init.w", h, h},
        {"init.b", h, 1},
        {"out.ws", v, h},
        {"out.wc", v, h},
        {"out.b", v, 1},
    };
}

const Tensor& SeqModel::param(const std::string& name) const {
    auto specs = param_specs(config);
    for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].name == name) return params[i];
    throw std::invalid_argument("SeqModel: unknown parameter " + name);
}

namespace {

SeqModel alloc_model(const ModelConfig& config) {
    config.validate();
    SeqModel m;
    m.config = config;
    for (const ParamSpec& s : SeqModel::param_specs(config)) {
        Tensor t;
        t.rows = s.rows;
        t.cols = s.cols;
        t.v.assign(static_cast<std::size_t>(s.rows) * s.cols, 0.0);
        m.params.push_back(std::move(t));
    }
    return m;
}

bool is_bias(int ix) {
    return ix == kEncB || ix == kDecB || ix == kInitB || ix == kOutB;
}

}  // namespace

SeqModel init_model(const ModelConfig& config) {
    SeqModel m = alloc_model(config);
    Rng rng(mix_seed(config.seed, 0x6d6f64656cULL));
    for (int ix = 0; ix < kNumParams; ++ix) {
        Tensor& t = m.params[ix];
        if (is_bias(ix)) continue;  // biases start at zero
        double s = (ix == kEncEmbed || ix == kDecEmbed)
                       ? 0.1
                       : 1.0 / std::sqrt(static_cast<double>(t.cols));
        for (double& v : t.v) v = rng.uniform(-s, s);
    }
    return m;
}

SeqModel init_model_zero(const ModelConfig& config) {
    return alloc_model(config);
}

namespace {

void check_tokens(const ModelConfig& c, const std::vector<int>& toks, const char* what) {
    if (static_cast<int>(toks.size()) > c.max_len)
        throw std::invalid_argument(std::string(what) + ": sequence exceeds max_len");
    for (int t : toks)
        if (t < 0 || t >= c.vocab_size)
            throw std::invalid_argument(std::string(what) + ": token out of range");
}

StepOutput head_output(const SeqModel& model, const double* logits) {
    const int v = model.config.vocab_size;
    StepOutput out;
    if (model.config.head_mode == HeadMode::softmax) {
        std::vector<double> p(v);
        kern::softmax(p.data(), logits, v);
        out.probs = dirmath::Categorical(std::move(p));
    } else {
        std::vector<double> a(v);
        kern::concentration_head(a.data(), logits, v);
        out.alpha = dirmath::DirichletParams(std::move(a));
    }
    return out;
}

}  // namespace

EncodedSource encode(const SeqModel& model, const std::vector<int>& src) {
    check_tokens(model.config, src, "encode(src)");
    if (src.empty()) throw std::invalid_argument("encode: empty source");
    const int h = model.config.hidden_dim;
    const int e = model.config.embed_dim;
    EncodedSource enc;
    enc.n = static_cast<int>(src.size());
    enc.states.resize(static_cast<std::size_t>(enc.n) * h);
    enc.u_proj.resize(static_cast<std::size_t>(enc.n) * h);
    std::vector<double> state(h, 0.0);
    std::vector<double> gates(static_cast<std::size_t>(4) * h);
    for (int i = 0; i < enc.n; ++i) {
        const double* emb = model.params[kEncEmbed].v.data() +
                            static_cast<std::size_t>(src[i]) * e;
        double* out = enc.states.data() + static_cast<std::size_t>(i) * h;
        kern::gru_step(out, gates.data(), model.params[kEncWx].v.data(),
                       model.params[kEncWh].v.data(), model.params[kEncB].v.data(),
                       emb, state.data(), h, e);
        std::memcpy(state.data(), out, sizeof(double) * h);
        kern::matvec(enc.u_proj.data() + static_cast<std::size_t>(i) * h,
                     model.params[kAttnU].v.data(), out, h, h);
    }
    enc.h0.resize(h);
    kern::affine(enc.h0.data(), model.params[kInitW].v.data(), state.data(),
                 model.params[kInitB].v.data(), h, h);
    for (double& v : enc.h0) v = std::tanh(v);
    return enc;
}

StepOutput decode_step(const SeqModel& model, const EncodedSource& enc,
                       std::vector<double>& state, int token_in) {
    const ModelConfig& c = model.config;
    if (token_in < 0 || token_in >= c.vocab_size)
        throw std::invalid_argument("decode_step: token out of range");
    const int h = c.hidden_dim;
    const int e = c.embed_dim;
    const int v = c.vocab_size;
    thread_local std::vector<double> buf;
    buf.resize(static_cast<std::size_t>(enc.n) * (h + 2) + 8 * h + e + v);
    double* q = buf.data();                    // H
    double* scores = q + h;                    // n
    double* tanhbuf = scores + enc.n;          // n x H
    double* attn = tanhbuf + static_cast<std::size_t>(enc.n) * h;  // n
    double* ctx = attn + enc.n;                // H
    double* x = ctx + h;                       // E + H
    double* hnew = x + e + h;                  // H
    double* gates = hnew + h;                  // 4H
    double* logits = gates + 4 * h;            // V

    kern::matvec(q, model.params[kAttnQ].v.data(), state.data(), h, h);
    kern::attn_scores(scores, tanhbuf, enc.u_proj.data(), q,
                      model.params[kAttnV].v.data(), enc.n, h);
    kern::softmax(attn, scores, enc.n);
    kern::weighted_sum_rows(ctx, enc.states.data(), attn, enc.n, h);
    std::memcpy(x, model.params[kDecEmbed].v.data() + static_cast<std::size_t>(token_in) * e,
                sizeof(double) * e);
    std::memcpy(x + e, ctx, sizeof(double) * h);
    kern::gru_step(hnew, gates, model.params[kDecWx].v.data(),
                   model.params[kDecWh].v.data(), model.params[kDecB].v.data(),
                   x, state.data(), h, e + h);
    std::memcpy(state.data(), hnew, sizeof(double) * h);
    kern::affine2(logits, model.params[kOutWs].v.data(), hnew, h,
                  model.params[kOutWc].v.data(), ctx, h,
                  model.params[kOutB].v.data(), v);
    return head_output(model, logits);
}

std::vector<StepOutput> forward_teacher_forced(const SeqModel& model,
                                               const std::vector<int>& src,
                                               const std::vector<int>& ref) {
    check_tokens(model.config, ref, "forward_teacher_forced(ref)");
    EncodedSource enc = encode(model, src);
    std::vector<double> state = enc.h0;
    std::vector<StepOutput> out;
    out.reserve(ref.size() + 1);
    int token = kBos;
    for (std::size_t l = 0; l <= ref.size(); ++l) {
        out.push_back(decode_step(model, enc, state, token));
        if (l < ref.size()) token = ref[l];
    }
    return out;
}

StepOutput forward_step(const SeqModel& model, const std::vector<int>& src,
                        const std::vector<int>& history) {
    check_tokens(model.config, history, "forward_step(history)");
    EncodedSource enc = encode(model, src);
    std::vector<double> state = enc.h0;
    StepOutput out;
    int token = kBos;
    for (std::size_t l = 0; l <= history.size(); ++l) {
        out = decode_step(model, enc, state, token);
        if (l < history.size()) token = history[l];
    }
    return out;
}

// --- taped path ---------------------------------------------------------------

TapedParams register_params(Tape& tape, const SeqModel& model) {
    TapedParams p;
    for (const Tensor& t : model.params)
        p.ids.push_back(tape.leaf(t.v.data(), t.rows, t.cols));
    return p;
}

TapedEncoding encode_on_tape(Tape& tape, const TapedParams& p,
                             const SeqModel& model, const std::vector<int>& src) {
    check_tokens(model.config, src, "encode_on_tape(src)");
    if (src.empty()) throw std::invalid_argument("encode_on_tape: empty source");
    const int h = model.config.hidden_dim;
    Tape::NodeId state = tape.leaf_zero(h);
    std::vector<Tape::NodeId> states, us;
    for (int tok : src) {
        Tape::NodeId emb = tape.embed(p.ids[kEncEmbed], tok);
        state = tape.gru_step(p.ids[kEncWx], p.ids[kEncWh], p.ids[kEncB], emb, state);
        states.push_back(state);
        us.push_back(tape.matvec(p.ids[kAttnU], state));
    }
    TapedEncoding enc;
    enc.h_rows = tape.stack_rows(states);
    enc.u_rows = tape.stack_rows(us);
    enc.h0 = tape.tanh_vec(tape.affine(p.ids[kInitW], state, p.ids[kInitB]));
    return enc;
}

std::vector<Tape::NodeId> decode_logits_on_tape(Tape& tape, const TapedParams& p,
                                                const SeqModel& model,
                                                const TapedEncoding& enc,
                                                const std::vector<int>& ref) {
    check_tokens(model.config, ref, "decode_logits_on_tape(ref)");
    Tape::NodeId state = enc.h0;
    std::vector<Tape::NodeId> logits;
    logits.reserve(ref.size() + 1);
    int token = kBos;
    for (std::size_t l = 0; l <= ref.size(); ++l) {
        Tape::NodeId q = tape.matvec(p.ids[kAttnQ], state);
        Tape::NodeId scores = tape.attn_scores(enc.u_rows, q, p.ids[kAttnV]);
        Tape::NodeId attn = tape.softmax(scores);
        Tape::NodeId ctx = tape.weighted_sum_rows(enc.h_rows, attn);
        Tape::NodeId emb = tape.embed(p.ids[kDecEmbed], token);
        Tape::NodeId x = tape.concat(emb, ctx);
        state = tape.gru_step(p.ids[kDecWx], p.ids[kDecWh], p.ids[kDecB], x, state);
        logits.push_back(tape.affine2(p.ids[kOutWs], state, p.ids[kOutWc], ctx, p.ids[kOutB]));
        if (l < ref.size()) token = ref[l];
    }
    return logits;
}

std::vector<Tensor> backward(Tape& tape, Tape::NodeId loss, const TapedParams& p,
                             const SeqModel& model) {
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(p.ids.size());
    for (std::size_t i = 0; i < p.ids.size(); ++i) {
        Tensor g;
        g.rows = model.params[i].rows;
        g.cols = model.params[i].cols;
        auto gv = tape.grad(p.ids[i]);
        g.v.assign(gv.begin(), gv.end());
        grads.push_back(std::move(g));
    }
    return grads;
}

// --- optimizer -----------------------------------------------------------------

AdamState make_adam(const SeqModel& model, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    for (const Tensor& t : model.params) {
        Tensor z;
        z.rows = t.rows;
        z.cols = t.cols;
        z.v.assign(t.v.size(), 0.0);
        s.m.push_back(z);
        s.v.push_back(std::move(z));
    }
    return s;
}

bool optimizer_step(SeqModel& model, const std::vector<Tensor>& grads,
                    AdamState& state) {
    if (grads.size() != model.params.size())
        throw std::invalid_argument("optimizer_step: gradient count mismatch");
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].v.size() != model.params[i].v.size())
            throw std::invalid_argument("optimizer_step: gradient shape mismatch");
        for (double g : grads[i].v) {
            if (!std::isfinite(g)) {
                ++state.skipped;
                return false;
            }
            norm_sq += g * g;
        }
    }
    double scale = 1.0;
    const double norm = std::sqrt(norm_sq);
    if (norm > state.clip_norm && norm > 0.0) scale = state.clip_norm / norm;

    ++state.step;
    const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        double* m = state.m[i].v.data();
        double* v = state.v[i].v.data();
        double* w = model.params[i].v.data();
        const double* g = grads[i].v.data();
        const std::size_t n = grads[i].v.size();
        for (std::size_t j = 0; j < n; ++j) {
            const double gj = g[j] * scale;
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            const double mhat = m[j] / b1t;
            const double vhat = v[j] / b2t;
            w[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
    return true;
}

// --- checkpoints -----------------------------------------------------------------

namespace {

std::uint32_t crc32_update(std::uint32_t crc, const unsigned char* data, std::size_t n) {
    static std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (std::size_t i = 0; i < n; ++i)
        crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return ~crc;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    return v;
}

double get_f64(const std::string& in, std::size_t off) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

constexpr char kMagic[9] = "ENDDCKPT";
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const SeqModel& model, const std::string& path) {
    json header;
    header["config"] = {
        {"vocab_size", model.config.vocab_size},
        {"embed_dim", model.config.embed_dim},
        {"hidden_dim", model.config.hidden_dim},
        {"head_mode", model.config.head_mode == HeadMode::softmax ? "softmax" : "concentration"},
        {"max_len", model.config.max_len},
        {"seed", model.config.seed},
    };
    json params = json::array();
    auto specs = SeqModel::param_specs(model.config);
    for (const ParamSpec& s : specs)
        params.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
    header["params"] = params;
    const std::string header_str = header.dump();

    std::string out;
    out.append(kMagic, 8);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(header_str.size()));
    out += header_str;
    for (const Tensor& t : model.params)
        for (double v : t.v) put_f64(out, v);
    const std::uint32_t crc =
        crc32_update(0, reinterpret_cast<const unsigned char*>(out.data()), out.size());
    put_u32(out, crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

SeqModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < 20 || std::memcmp(in.data(), kMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
    if (get_u32(in, 8) != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version in " + path);
    const std::uint32_t stored_crc = get_u32(in, in.size() - 4);
    const std::uint32_t crc = crc32_update(
        0, reinterpret_cast<const unsigned char*>(in.data()), in.size() - 4);
    if (stored_crc != crc)
        throw std::runtime_error("load_checkpoint: checksum mismatch in " + path);

    const std::size_t header_len = get_u32(in, 12);
    const json header = json::parse(in.substr(16, header_len));
    ModelConfig c;
    c.vocab_size = header["config"]["vocab_size"].get<int>();
    c.embed_dim = header["config"]["embed_dim"].get<int>();
    c.hidden_dim = header["config"]["hidden_dim"].get<int>();
    c.head_mode = header["config"]["head_mode"].get<std::string>() == "softmax"
                      ? HeadMode::softmax
                      : HeadMode::concentration;
    c.max_len = header["config"]["max_len"].get<int>();
    c.seed = header["config"]["seed"].get<std::uint64_t>();

    SeqModel m = alloc_model(c);
    auto specs = SeqModel::param_specs(c);
    const json& plist = header["params"];
    if (plist.size() != specs.size())
        throw std::runtime_error("load_checkpoint: parameter list mismatch in " + path);
    std::size_t off = 16 + header_len;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (plist[i]["name"].get<std::string>() != specs[i].name ||
            plist[i]["rows"].get<int>() != specs[i].rows ||
            plist[i]["cols"].get<int>() != specs[i].cols)
            throw std::runtime_error("load_checkpoint: parameter shape mismatch for " +
                                     specs[i].name + " in " + path);
        for (double& v : m.params[i].v) {
            if (off + 8 > in.size() - 4)
                throw std::runtime_error("load_checkpoint: truncated payload in " + path);
            v = get_f64(in, off);
            off += 8;
        }
    }
    if (off != in.size() - 4)
        throw std::runtime_error("load_checkpoint: trailing bytes in " + path);
    return m;
}

}  // namespace endd::nnet
