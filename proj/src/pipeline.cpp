#include "endd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "endd/rng.hpp"
#include "endd/uncertainty.hpp"

namespace endd::pipeline {

namespace fs = std::filesystem;
using dirmath::TokenPosteriorSet;
using eval::ScoredSentence;
using json = nlohmann::json;
using nnet::SeqModel;
using synthdata::Vocab;
using uncertainty::TokenUncertainty;

void PipelineConfig::validate() const {
    if (ensemble_size < 1)
        throw std::invalid_argument("PipelineConfig: ensemble_size must be >= 1");
    if (data.n_train < 1 || data.n_test_id < 1 || data.n_test_ood < 1)
        throw std::invalid_argument("PipelineConfig: corpus sizes must be >= 1");
    if (!(eval_temperature >= 1.0))
        throw std::invalid_argument("PipelineConfig: eval_temperature must be >= 1");
    model.validate();
    member_train.validate();
    distill_train.validate();
    distdist_train.validate();
}

PipelineConfig default_config() {
    PipelineConfig c;
    c.member_train.epochs = 2;
    c.distill_train.epochs = 2;
    c.distdist_train.epochs = 3;
    return c;
}

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void read_train(const json& j, const char* key, distill::TrainConfig& t) {
    if (!j.contains(key)) return;
    const json& s = j.at(key);
    read_key(s, "epochs", t.epochs);
    read_key(s, "batch_size", t.batch_size);
    read_key(s, "learning_rate", t.learning_rate);
    read_key(s, "temperature_start", t.temperature_start);
    read_key(s, "temperature_end", t.temperature_end);
    read_key(s, "anneal_fraction", t.anneal_fraction);
    read_key(s, "temper_kd_targets", t.temper_kd_targets);
    read_key(s, "cache_teacher_outputs", t.cache_teacher_outputs);
    read_key(s, "fit_tol", t.fit_tol);
    read_key(s, "fit_max_iter", t.fit_max_iter);
}

json train_to_json(const distill::TrainConfig& t) {
    return {
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"temperature_start", t.temperature_start},
        {"temperature_end", t.temperature_end},
        {"anneal_fraction", t.anneal_fraction},
        {"temper_kd_targets", t.temper_kd_targets},
        {"cache_teacher_outputs", t.cache_teacher_outputs},
        {"fit_tol", t.fit_tol},
        {"fit_max_iter", t.fit_max_iter},
    };
}

}  // namespace

PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_config: cannot open " + path);
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("load_config: malformed JSON in " + path);
    PipelineConfig c = default_config();
    read_key(j, "out_dir", c.out_dir);
    read_key(j, "seed", c.seed);
    if (j.contains("data")) {
        read_key(j["data"], "n_train", c.data.n_train);
        read_key(j["data"], "n_test_id", c.data.n_test_id);
        read_key(j["data"], "n_test_ood", c.data.n_test_ood);
    }
    if (j.contains("model")) {
        read_key(j["model"], "vocab_size", c.model.vocab_size);
        read_key(j["model"], "embed_dim", c.model.embed_dim);
        read_key(j["model"], "hidden_dim", c.model.hidden_dim);
        read_key(j["model"], "max_len", c.model.max_len);
    }
    read_train(j, "member_train", c.member_train);
    read_train(j, "distill_train", c.distill_train);
    read_train(j, "distdist_train", c.distdist_train);
    read_key(j, "ensemble_size", c.ensemble_size);
    read_key(j, "eval_temperature", c.eval_temperature);
    read_key(j, "grid_step", c.grid_step);
    read_key(j, "rank_by_rate", c.rank_by_rate);
    c.validate();
    return c;
}

void dump_config(const PipelineConfig& c, const std::string& path) {
    json j{
        {"out_dir", c.out_dir},
        {"seed", c.seed},
        {"data", {{"n_train", c.data.n_train},
                  {"n_test_id", c.data.n_test_id},
                  {"n_test_ood", c.data.n_test_ood}}},
        {"model", {{"vocab_size", c.model.vocab_size},
                   {"embed_dim", c.model.embed_dim},
                   {"hidden_dim", c.model.hidden_dim},
                   {"max_len", c.model.max_len}}},
        {"member_train", train_to_json(c.member_train)},
        {"distill_train", train_to_json(c.distill_train)},
        {"distdist_train", train_to_json(c.distdist_train)},
        {"ensemble_size", c.ensemble_size},
        {"eval_temperature", c.eval_temperature},
        {"grid_step", c.grid_step},
        {"rank_by_rate", c.rank_by_rate},
    };
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("dump_config: cannot open " + path);
    f << j.dump(2) << "\n";
}

Bundle make_data(const PipelineConfig& config) {
    config.validate();
    Bundle b;
    b.vocab = Vocab::default_vocab();
    b.id_config = synthdata::default_id_config(mix_seed(config.seed, 10));
    synthdata::GrammarConfig id_test = b.id_config;
    id_test.seed = mix_seed(config.seed, 11);
    b.ood_config = synthdata::ood_config(b.id_config);
    b.ood_config.seed = mix_seed(config.seed, 12);
    b.train = synthdata::generate_corpus(b.id_config, config.data.n_train);
    b.test_id = synthdata::generate_corpus(id_test, config.data.n_test_id);
    b.test_ood = synthdata::generate_corpus(b.ood_config, config.data.n_test_ood);
    return b;
}

Models train_all(const PipelineConfig& config, const Bundle& bundle, std::ostream* log) {
    Models m;
    distill::TrainConfig member_tc = config.member_train;
    for (int i = 0; i < config.ensemble_size; ++i) {
        m.members.push_back(distill::train_member(
            bundle.train, config.model, member_tc, mix_seed(config.seed, 100 + i), log));
    }
    distill::TrainConfig dist_tc = config.distill_train;
    dist_tc.seed = mix_seed(config.seed, 200);
    m.distilled = distill::train_distilled(m.members, bundle.train, config.model,
                                           dist_tc, log);
    distill::TrainConfig dd_tc = config.distdist_train;
    dd_tc.seed = mix_seed(config.seed, 300);
    m.nll_student = distill::train_distribution_distilled(
        m.members, bundle.train, config.model, dd_tc, distill::DistDistObjective::nll, log);
    m.kl_student = distill::train_distribution_distilled(
        m.members, bundle.train, config.model, dd_tc, distill::DistDistObjective::kl, log);
    return m;
}

std::string system_name(System s) {
    switch (s) {
        case System::ind: return "ind";
        case System::ens: return "ens";
        case System::dist: return "dist";
        case System::nll: return "nll";
        case System::kl: return "kl";
        case System::gua: return "gua";
    }
    return "?";
}

std::optional<System> system_from_name(const std::string& name) {
    for (System s : {System::ind, System::ens, System::dist, System::nll, System::kl,
                     System::gua})
        if (system_name(s) == name) return s;
    return std::nullopt;
}

namespace {

std::vector<TokenUncertainty> softmax_token_uncertainties(
    const std::vector<dirmath::Categorical>& step_probs) {
    std::vector<TokenUncertainty> toks;
    toks.reserve(step_probs.size());
    for (std::size_t l = 0; l < step_probs.size(); ++l) {
        TokenPosteriorSet single;
        single.members.push_back(step_probs[l]);
        toks.push_back(uncertainty::token_uncertainty_ensemble(single,
                                                               static_cast<int>(l)));
    }
    return toks;
}

std::vector<TokenUncertainty> dirichlet_token_uncertainties(
    const std::vector<dirmath::DirichletParams>& alphas) {
    std::vector<TokenUncertainty> toks;
    toks.reserve(alphas.size());
    for (std::size_t l = 0; l < alphas.size(); ++l)
        toks.push_back(
            uncertainty::token_uncertainty_dirichlet(alphas[l], static_cast<int>(l)));
    return toks;
}

}  // namespace

std::vector<ScoredSentence> evaluate_system(System sys, const Models& models,
                                            const distill::Corpus& corpus,
                                            const PipelineConfig& config, int member_ix) {
    std::vector<ScoredSentence> out;
    out.reserve(corpus.size());
    for (const synthdata::SentencePair& pair : corpus) {
        std::vector<TokenUncertainty> toks;
        decode::DecodeResult res;
        switch (sys) {
            case System::ind: {
                res = decode::greedy_decode(models.members.at(member_ix), pair.source);
                toks = softmax_token_uncertainties(res.step_probs);
                break;
            }
            case System::ens: {
                auto [r, sets] = decode::ensemble_greedy_decode_detailed(
                    models.members, pair.source, config.eval_temperature);
                res = std::move(r);
                toks.reserve(sets.size());
                for (std::size_t l = 0; l < sets.size(); ++l)
                    toks.push_back(uncertainty::token_uncertainty_ensemble(
                        sets[l], static_cast<int>(l)));
                break;
            }
            case System::dist: {
                res = decode::greedy_decode(models.distilled, pair.source);
                toks = softmax_token_uncertainties(res.step_probs);
                break;
            }
            case System::nll: {
                res = decode::greedy_decode_mean(models.nll_student, pair.source);
                toks = dirichlet_token_uncertainties(res.step_alphas);
                break;
            }
            case System::kl: {
                res = decode::greedy_decode_mean(models.kl_student, pair.source);
                toks = dirichlet_token_uncertainties(res.step_alphas);
                break;
            }
            case System::gua: {
                auto [r, alphas] =
                    decode::gua_decode(models.distilled, models.kl_student, pair.source);
                res = std::move(r);
                toks = dirichlet_token_uncertainties(alphas);
                break;
            }
        }
        ScoredSentence s = eval::make_scored(pair.source, pair.reference, res.tokens);
        s.uncert = uncertainty::sequence_uncertainty(toks);
        out.push_back(std::move(s));
    }
    return out;
}

TeacherForcedTu token_tu_teacher_forced(const Models& models,
                                        const distill::Corpus& corpus,
                                        double temperature) {
    TeacherForcedTu r;
    for (const synthdata::SentencePair& pair : corpus) {
        const std::vector<TokenPosteriorSet> sets = distill::collect_targets(
            models.members, pair.source, pair.reference, temperature);
        const std::vector<nnet::StepOutput> stu =
            forward_teacher_forced(models.kl_student, pair.source, pair.reference);
        for (std::size_t l = 0; l < sets.size(); ++l) {
            r.ensemble_tu.push_back(dirmath::ensemble_uncertainties(sets[l]).total);
            r.student_tu.push_back(dirmath::mutual_information(stu[l].alpha).total);
        }
    }
    return r;
}

std::optional<RankMetric> rank_metric_from_name(const std::string& name) {
    if (name == "length") return RankMetric::length;
    if (name == "tu") return RankMetric::tu;
    if (name == "du") return RankMetric::du;
    if (name == "ku") return RankMetric::ku;
    if (name == "manual") return RankMetric::manual;
    return std::nullopt;
}

std::vector<double> ranking_scores(const std::vector<ScoredSentence>& sentences,
                                   RankMetric metric, bool by_rate) {
    std::vector<double> scores;
    scores.reserve(sentences.size());
    for (const ScoredSentence& s : sentences) {
        if (metric == RankMetric::manual) {
            scores.push_back(eval::manual_score(s));
            continue;
        }
        if (metric == RankMetric::length) {
            scores.push_back(s.uncert ? s.uncert->length : s.length);
            continue;
        }
        if (!s.uncert)
            throw std::invalid_argument("ranking_scores: sentence lacks uncertainties");
        const uncertainty::SequenceUncertainty& u = *s.uncert;
        switch (metric) {
            case RankMetric::tu: scores.push_back(by_rate ? u.total_rate : u.total_sum); break;
            case RankMetric::du: scores.push_back(by_rate ? u.data_rate : u.data_sum); break;
            case RankMetric::ku:
                scores.push_back(by_rate ? u.knowledge_rate : u.knowledge_sum);
                break;
            default: break;
        }
    }
    return scores;
}

// --- files, tables, commands ----------------------------------------------------

namespace {

std::string data_dir(const PipelineConfig& c) { return c.out_dir + "/data"; }
std::string model_dir(const PipelineConfig& c) { return c.out_dir + "/models"; }
std::string log_dir(const PipelineConfig& c) { return c.out_dir + "/logs"; }
std::string eval_dir(const PipelineConfig& c) { return c.out_dir + "/eval"; }

void ensure_dir(const std::string& d) { fs::create_directories(d); }

void write_effective_config(const PipelineConfig& c) {
    ensure_dir(c.out_dir);
    dump_config(c, c.out_dir + "/config_used.json");
}

double mean_ref_length(const distill::Corpus& corpus) {
    double s = 0.0;
    for (const auto& p : corpus) s += static_cast<double>(p.reference.size());
    return corpus.empty() ? 0.0 : s / static_cast<double>(corpus.size());
}

// Aligned text table plus a CSV twin.
void write_table(const std::string& base_path,
                 const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows,
                 std::ostream* echo) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c)
            width[c] = std::max(width[c], row[c].size());

    std::ostringstream txt;
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            txt << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
        }
        txt << "\n";
    };
    emit_row(header);
    emit_row(std::vector<std::string>(header.size(), ""));
    for (const auto& row : rows) emit_row(row);

    std::ofstream ftxt(base_path + ".txt", std::ios::trunc);
    ftxt << txt.str();
    std::ofstream fcsv(base_path + ".csv", std::ios::trunc);
    auto csv_row = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < row.size(); ++c)
            fcsv << row[c] << (c + 1 < row.size() ? "," : "");
        fcsv << "\n";
    };
    csv_row(header);
    for (const auto& row : rows) csv_row(row);
    if (echo) (*echo) << txt.str() << "\n";
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << v;
    return o.str();
}

json tokens_to_json(const std::vector<int>& toks, const Vocab& vocab) {
    json a = json::array();
    for (int t : toks) a.push_back(vocab.word(t));
    return a;
}

distill::Corpus read_corpus_files(const PipelineConfig& c, const std::string& name,
                                  const Vocab& vocab) {
    const std::string path = data_dir(c) + "/" + name + ".jsonl";
    if (!fs::exists(path))
        throw std::runtime_error("missing corpus file " + path + " (run gen-data first)");
    return synthdata::read_corpus(path, vocab);
}

Vocab read_vocab_file(const PipelineConfig& c) {
    const std::string path = data_dir(c) + "/vocab.txt";
    if (!fs::exists(path))
        throw std::runtime_error("missing vocabulary file " + path + " (run gen-data first)");
    return synthdata::read_vocab(path);
}

SeqModel load_model_file(const PipelineConfig& c, const std::string& name) {
    const std::string path = model_dir(c) + "/" + name + ".ckpt";
    if (!fs::exists(path))
        throw std::runtime_error("missing checkpoint " + path +
                                 " (run the training commands first)");
    return nnet::load_checkpoint(path);
}

}  // namespace

void write_annotations(const std::string& path,
                       const std::vector<ScoredSentence>& sentences, const Vocab& vocab) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_annotations: cannot open " + path);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const ScoredSentence& s = sentences[i];
        json rec;
        rec["id"] = i;
        rec["src"] = tokens_to_json(s.source, vocab);
        rec["ref"] = tokens_to_json(s.reference, vocab);
        rec["hyp"] = tokens_to_json(s.hypothesis, vocab);
        rec["gleu"] = s.gleu;
        const uncertainty::SequenceUncertainty u =
            s.uncert ? *s.uncert : uncertainty::SequenceUncertainty{};
        rec["tu_sum"] = u.total_sum;
        rec["du_sum"] = u.data_sum;
        rec["ku_sum"] = u.knowledge_sum;
        rec["tu_rate"] = u.total_rate;
        rec["du_rate"] = u.data_rate;
        rec["ku_rate"] = u.knowledge_rate;
        rec["length"] = u.length;
        f << rec.dump() << "\n";
    }
}

void cmd_gen_data(const PipelineConfig& config, std::ostream& out) {
    write_effective_config(config);
    ensure_dir(data_dir(config));
    Bundle b = make_data(config);
    synthdata::write_vocab(data_dir(config) + "/vocab.txt", b.vocab);
    synthdata::write_corpus(data_dir(config) + "/train.jsonl", b.train, b.vocab);
    synthdata::write_corpus(data_dir(config) + "/test_id.jsonl", b.test_id, b.vocab);
    synthdata::write_corpus(data_dir(config) + "/test_ood.jsonl", b.test_ood, b.vocab);

    std::vector<std::vector<std::string>> rows = {
        {"train", std::to_string(b.train.size()), fmt(mean_ref_length(b.train), 2), "ref"},
        {"test_id", std::to_string(b.test_id.size()), fmt(mean_ref_length(b.test_id), 2), "id"},
        {"test_ood", std::to_string(b.test_ood.size()), fmt(mean_ref_length(b.test_ood), 2), "ood"},
    };
    write_table(data_dir(config) + "/stats", {"set", "sentences", "mean_length", "domain"},
                rows, &out);
}

void cmd_train_ensemble(const PipelineConfig& config, std::ostream& out) {
    write_effective_config(config);
    ensure_dir(model_dir(config));
    ensure_dir(log_dir(config));
    const Vocab vocab = read_vocab_file(config);
    const distill::Corpus train = read_corpus_files(config, "train", vocab);
    for (int i = 0; i < config.ensemble_size; ++i) {
        std::ofstream log(log_dir(config) + "/member_" + std::to_string(i) + ".log");
        out << "training member " << i << "\n";
        SeqModel m = distill::train_member(train, config.model, config.member_train,
                                           mix_seed(config.seed, 100 + i), &log);
        nnet::save_checkpoint(m, model_dir(config) + "/member_" + std::to_string(i) + ".ckpt");
    }
    out << "wrote " << config.ensemble_size << " member checkpoints to "
        << model_dir(config) << "\n";
}

namespace {

std::vector<SeqModel> load_members(const PipelineConfig& config) {
    std::vector<SeqModel> members;
    for (int i = 0; i < config.ensemble_size; ++i)
        members.push_back(load_model_file(config, "member_" + std::to_string(i)));
    return members;
}

}  // namespace

void cmd_distill(const PipelineConfig& config, std::ostream& out) {
    write_effective_config(config);
    ensure_dir(log_dir(config));
    const Vocab vocab = read_vocab_file(config);
    const distill::Corpus train = read_corpus_files(config, "train", vocab);
    std::vector<SeqModel> members = load_members(config);
    distill::TrainConfig tc = config.distill_train;
    tc.seed = mix_seed(config.seed, 200);
    std::ofstream log(log_dir(config) + "/distilled.log");
    out << "training distilled student\n";
    SeqModel student = distill::train_distilled(members, train, config.model, tc, &log);
    nnet::save_checkpoint(student, model_dir(config) + "/distilled.ckpt");
    out << "wrote " << model_dir(config) << "/distilled.ckpt\n";
}

void cmd_distill_dist(const PipelineConfig& config, distill::DistDistObjective objective,
                      std::ostream& out) {
    write_effective_config(config);
    ensure_dir(log_dir(config));
    const Vocab vocab = read_vocab_file(config);
    const distill::Corpus train = read_corpus_files(config, "train", vocab);
    std::vector<SeqModel> members = load_members(config);
    distill::TrainConfig tc = config.distdist_train;
    tc.seed = mix_seed(config.seed, 300);
    const std::string name = objective == distill::DistDistObjective::nll ? "nll" : "kl";
    std::ofstream log(log_dir(config) + "/" + name + ".log");
    out << "training distribution-distilled student (" << name << " objective)\n";
    SeqModel student = distill::train_distribution_distilled(members, train, config.model,
                                                             tc, objective, &log);
    nnet::save_checkpoint(student, model_dir(config) + "/" + name + ".ckpt");
    out << "wrote " << model_dir(config) << "/" << name << ".ckpt\n";
}

namespace {

struct EvalAccumulator {
    // (testset, system) -> sentences
    std::map<std::string, std::map<std::string, std::vector<ScoredSentence>>> sentences;
    // per testset: member GLEUs for the ind column
    std::map<std::string, std::vector<double>> member_gleus;
};

void token_weighted_means(const std::vector<ScoredSentence>& sentences, double& tu,
                          double& du, double& ku) {
    double ts = 0.0, ds = 0.0, ks = 0.0;
    long n = 0;
    for (const ScoredSentence& s : sentences) {
        ts += s.uncert->total_sum;
        ds += s.uncert->data_sum;
        ks += s.uncert->knowledge_sum;
        n += s.uncert->length;
    }
    tu = ts / static_cast<double>(n);
    du = ds / static_cast<double>(n);
    ku = ks / static_cast<double>(n);
}

}  // namespace

void cmd_evaluate(const PipelineConfig& config, const std::vector<System>& systems,
                  const std::vector<std::string>& testsets, std::ostream& out) {
    write_effective_config(config);
    ensure_dir(eval_dir(config));
    const Vocab vocab = read_vocab_file(config);
    const distill::Corpus test_id = read_corpus_files(config, "test_id", vocab);
    const distill::Corpus test_ood = read_corpus_files(config, "test_ood", vocab);

    const bool need_members =
        std::any_of(systems.begin(), systems.end(),
                    [](System s) { return s == System::ind || s == System::ens; });
    const bool need_dist = std::any_of(systems.begin(), systems.end(), [](System s) {
        return s == System::dist || s == System::gua;
    });
    const bool need_nll =
        std::any_of(systems.begin(), systems.end(), [](System s) { return s == System::nll; });
    const bool need_kl = std::any_of(systems.begin(), systems.end(), [](System s) {
        return s == System::kl || s == System::gua;
    });

    Models models;
    if (need_members) models.members = load_members(config);
    if (need_dist) models.distilled = load_model_file(config, "distilled");
    if (need_nll) models.nll_student = load_model_file(config, "nll");
    if (need_kl) models.kl_student = load_model_file(config, "kl");

    std::map<std::string, distill::Corpus> corpora;
    for (const std::string& t : testsets) {
        if (t == "id") corpora["id"] = test_id;
        else if (t == "ood") corpora["ood"] = test_ood;
        else if (t == "mix") {
            distill::Corpus mix = test_id;
            mix.insert(mix.end(), test_ood.begin(), test_ood.end());
            corpora["mix"] = std::move(mix);
        } else {
            throw std::invalid_argument("evaluate: unknown testset " + t);
        }
    }

    EvalAccumulator acc;
    for (const auto& [tname, corpus] : corpora) {
        for (System sys : systems) {
            if (sys == System::ind) {
                // Every member scored; annotations carry member 0's decode.
                for (int i = 0; i < config.ensemble_size; ++i) {
                    std::vector<ScoredSentence> sents =
                        evaluate_system(System::ind, models, corpus, config, i);
                    acc.member_gleus[tname].push_back(eval::gleu_corpus(sents));
                    if (i == 0) acc.sentences[tname]["ind"] = std::move(sents);
                }
            } else {
                acc.sentences[tname][system_name(sys)] =
                    evaluate_system(sys, models, corpus, config);
            }
            out << "evaluated " << system_name(sys) << " on " << tname << "\n";
        }
        for (const auto& [sname, sents] : acc.sentences[tname])
            write_annotations(
                eval_dir(config) + "/annotations_" + sname + "_" + tname + ".jsonl",
                sents, vocab);
    }

    // GLEU summary (scores scaled by 100 for readability).
    {
        std::vector<std::vector<std::string>> rows;
        for (const auto& [tname, per_system] : acc.sentences) {
            std::vector<std::string> row{tname};
            if (acc.member_gleus.count(tname)) {
                const auto& gs = acc.member_gleus[tname];
                double mean = 0.0;
                for (double g : gs) mean += g;
                mean /= static_cast<double>(gs.size());
                double var = 0.0;
                for (double g : gs) var += (g - mean) * (g - mean);
                const double sd = gs.size() > 1 ? std::sqrt(var / (gs.size() - 1)) : 0.0;
                row.push_back(fmt(100.0 * mean, 2) + "+-" + fmt(100.0 * sd, 2));
            } else {
                row.push_back("-");
            }
            for (const char* sname : {"ens", "dist", "nll", "kl", "gua"}) {
                auto it = per_system.find(sname);
                row.push_back(it == per_system.end()
                                  ? "-"
                                  : fmt(100.0 * eval::gleu_corpus(it->second), 2));
            }
            rows.push_back(std::move(row));
        }
        write_table(eval_dir(config) + "/gleu_summary",
                    {"testset", "ind", "ens", "dist", "nll", "kl", "gua"}, rows, &out);
    }

    // Word-level uncertainty summary for the ensemble and GUA rows.
    {
        std::vector<std::vector<std::string>> rows;
        for (const auto& [tname, per_system] : acc.sentences) {
            for (const char* sname : {"ens", "gua"}) {
                auto it = per_system.find(sname);
                if (it == per_system.end()) continue;
                double tu, du, ku;
                token_weighted_means(it->second, tu, du, ku);
                rows.push_back({tname, sname, fmt(tu), fmt(du), fmt(ku)});
            }
        }
        if (!rows.empty())
            write_table(eval_dir(config) + "/uncertainty_summary",
                        {"testset", "model", "tu", "du", "ku"}, rows, &out);
    }

    // Rejection tables: relative AUC and GLEU at 10% rejection.
    {
        std::vector<std::vector<std::string>> auc_rows, rej_rows;
        for (const auto& [tname, per_system] : acc.sentences) {
            for (const char* sname : {"ens", "gua"}) {
                auto it = per_system.find(sname);
                if (it == per_system.end()) continue;
                const std::vector<ScoredSentence>& sents = it->second;
                const eval::RejectionCurve manual_curve = eval::rejection_curve(
                    sents, ranking_scores(sents, RankMetric::manual, false),
                    config.grid_step);
                const double random_auc = eval::random_rejection_auc(sents, config.grid_step);
                std::vector<std::string> auc_row{tname, sname};
                std::vector<std::string> rej_row{tname, sname};
                for (RankMetric metric : {RankMetric::length, RankMetric::tu,
                                          RankMetric::du, RankMetric::ku}) {
                    const std::vector<double> scores =
                        ranking_scores(sents, metric, config.rank_by_rate);
                    const eval::RejectionCurve curve =
                        eval::rejection_curve(sents, scores, config.grid_step);
                    auc_row.push_back(fmt(eval::auc_rr(curve, manual_curve, random_auc), 3));
                    rej_row.push_back(fmt(100.0 * eval::rejection_at(sents, scores, 0.10), 2));
                }
                rej_row.push_back(fmt(
                    100.0 * eval::rejection_at(
                                sents, ranking_scores(sents, RankMetric::manual, false), 0.10),
                    2));
                auc_rows.push_back(std::move(auc_row));
                rej_rows.push_back(std::move(rej_row));
            }
        }
        if (!auc_rows.empty()) {
            write_table(eval_dir(config) + "/auc_rr",
                        {"testset", "model", "length", "tu", "du", "ku"}, auc_rows, &out);
            write_table(eval_dir(config) + "/rejection10",
                        {"testset", "model", "length", "tu", "du", "ku", "manual"},
                        rej_rows, &out);
        }
    }
}

namespace {

struct AnnotationRecord {
    std::vector<int> src, ref, hyp;
    double gleu;
    double tu_sum, du_sum, ku_sum, tu_rate, du_rate, ku_rate;
    int length;
};

std::vector<ScoredSentence> read_annotations(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_annotations: cannot open " + path);
    std::map<std::string, int> intern;
    auto to_ids = [&intern](const json& arr) {
        std::vector<int> ids;
        for (const auto& w : arr) {
            const std::string s = w.get<std::string>();
            auto [it, fresh] = intern.emplace(s, static_cast<int>(intern.size()));
            ids.push_back(it->second);
        }
        return ids;
    };
    std::vector<ScoredSentence> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded())
            throw std::runtime_error("read_annotations: " + path + ":" +
                                     std::to_string(line_no) + ": malformed record");
        ScoredSentence s;
        s.source = to_ids(rec.at("src"));
        s.reference = to_ids(rec.at("ref"));
        s.hypothesis = to_ids(rec.at("hyp"));
        s.gleu = rec.at("gleu").get<double>();
        s.length = static_cast<int>(s.hypothesis.size());
        uncertainty::SequenceUncertainty u;
        u.total_sum = rec.at("tu_sum").get<double>();
        u.data_sum = rec.at("du_sum").get<double>();
        u.knowledge_sum = rec.at("ku_sum").get<double>();
        u.total_rate = rec.at("tu_rate").get<double>();
        u.data_rate = rec.at("du_rate").get<double>();
        u.knowledge_rate = rec.at("ku_rate").get<double>();
        u.length = rec.at("length").get<int>();
        s.uncert = u;
        out.push_back(std::move(s));
    }
    if (out.empty()) throw std::runtime_error("read_annotations: no records in " + path);
    return out;
}

void write_curve_svg(const std::string& path, const eval::RejectionCurve& curve) {
    const int w = 480, h = 320, mx = 50, my = 30;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_curve_svg: cannot open " + path);
    auto x_at = [&](double fx) { return mx + fx * (w - 2 * mx); };
    auto y_at = [&](double s) { return h - my - s * (h - 2 * my); };
    f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
      << "'>\n";
    f << "<rect width='100%' height='100%' fill='white'/>\n";
    f << "<line x1='" << mx << "' y1='" << h - my << "' x2='" << w - mx << "' y2='"
      << h - my << "' stroke='black'/>\n";
    f << "<line x1='" << mx << "' y1='" << my << "' x2='" << mx << "' y2='" << h - my
      << "' stroke='black'/>\n";
    f << "<text x='" << w / 2 << "' y='" << h - 6 << "' font-size='12'>rejection fraction</text>\n";
    f << "<text x='6' y='" << my - 8 << "' font-size='12'>corpus GLEU</text>\n";
    f << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < curve.fractions.size(); ++i)
        f << x_at(curve.fractions[i]) << "," << y_at(curve.scores[i]) << " ";
    f << "'/>\n</svg>\n";
}

}  // namespace

void cmd_reject_curve(const std::string& annotations_path, const std::string& metric,
                      const std::string& out_csv, bool by_rate,
                      const std::string& svg_path, std::ostream& out) {
    const std::optional<RankMetric> m = rank_metric_from_name(metric);
    if (!m)
        throw std::invalid_argument("reject-curve: unknown metric '" + metric +
                                    "' (use length|tu|du|ku|manual)");
    const std::vector<ScoredSentence> sents = read_annotations(annotations_path);
    const std::vector<double> scores = ranking_scores(sents, *m, by_rate);
    const eval::RejectionCurve curve = eval::rejection_curve(sents, scores);
    const eval::RejectionCurve manual_curve =
        eval::rejection_curve(sents, ranking_scores(sents, RankMetric::manual, false));
    const double random_auc = eval::random_rejection_auc(sents);
    const double rr = eval::auc_rr(curve, manual_curve, random_auc);

    std::ofstream f(out_csv, std::ios::trunc);
    if (!f) throw std::runtime_error("reject-curve: cannot open " + out_csv);
    f << "fraction,score\n";
    for (std::size_t i = 0; i < curve.fractions.size(); ++i)
        f << fmt(curve.fractions[i], 6) << "," << fmt(curve.scores[i], 6) << "\n";
    f << "# auc=" << fmt(curve.auc, 6) << " auc_rr=" << fmt(rr, 6) << "\n";
    if (!svg_path.empty()) write_curve_svg(svg_path, curve);
    out << "metric " << metric << " auc " << fmt(curve.auc, 6) << " auc_rr " << fmt(rr, 6)
        << "\n";
}

}  // namespace endd::pipeline
