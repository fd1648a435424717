#include "endd/synthdata.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "endd/nnet.hpp"

namespace endd::synthdata {

using json = nlohmann::json;

void GrammarConfig::validate() const {
    if (vocab_size < 4)
        throw std::invalid_argument("GrammarConfig: vocab_size must be >= 4");
    const CorruptionRates& r = corruption_rates;
    for (double p : {r.substitute, r.erase, r.insert, r.swap_adjacent})
        if (p < 0.0 || p > 1.0)
            throw std::invalid_argument("GrammarConfig: corruption rates must be in [0,1]");
    if (r.total() >= 1.0)
        throw std::invalid_argument("GrammarConfig: per-token corruption probability must be < 1");
    if (templates.empty() || templates.size() != template_weights.size())
        throw std::invalid_argument("GrammarConfig: templates and weights must match");
    auto check_word = [&](int w) {
        if (w < 4 || w >= vocab_size)
            throw std::invalid_argument("GrammarConfig: template word outside vocabulary");
    };
    for (const auto& [sg, pl] : lexicon.det) { check_word(sg); check_word(pl); }
    for (const auto& [sg, pl] : lexicon.noun) { check_word(sg); check_word(pl); }
    for (const auto& [sg, pl] : lexicon.verb) { check_word(sg); check_word(pl); }
    for (int w : lexicon.adj) check_word(w);
    for (int w : lexicon.prep) check_word(w);
    for (int w : lexicon.adv) check_word(w);
    for (int w : lexicon.conj) check_word(w);
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || id >= size())
        throw std::invalid_argument("Vocab: token id out of range");
    return tokens[id];
}

int Vocab::id(const std::string& s) const {
    for (int i = 0; i < size(); ++i)
        if (tokens[i] == s) return i;
    return -1;
}

Vocab Vocab::default_vocab() {
    return Vocab{{
        "<pad>", "<s>", "</s>", "<unk>",
        // in-domain words
        "this", "every",                                      // det sg 4-5
        "these", "many",                                      // det pl 6-7
        "red", "big", "old", "new",                           // adj 8-11
        "cat", "dog", "bird", "car", "house", "tree",         // noun sg 12-17
        "cats", "dogs", "birds", "cars", "houses", "trees",   // noun pl 18-23
        "sees", "likes", "finds", "takes",                    // verb sg 24-27
        "see", "like", "find", "take",                        // verb pl 28-31
        "near", "behind", "under",                            // prep 32-34
        "often", "rarely", "quietly",                         // adv 35-37
        "and", "while",                                       // conj 38-39
        // words reserved for the shifted domain
        "boat", "lamp",                                       // noun sg 40-41
        "boats", "lamps",                                     // noun pl 42-43
        "tiny", "loud",                                       // adj 44-45
        "moves", "move",                                      // verb 46-47
        "above",                                              // prep 48
        "slowly",                                             // adv 49
    }};
}

namespace {

Lexicon id_lexicon() {
    Lexicon lex;
    lex.det = {{4, 6}, {5, 7}};
    lex.adj = {8, 9, 10, 11};
    lex.noun = {{12, 18}, {13, 19}, {14, 20}, {15, 21}, {16, 22}, {17, 23}};
    lex.verb = {{24, 28}, {25, 29}, {26, 30}, {27, 31}};
    lex.prep = {32, 33, 34};
    lex.adv = {35, 36, 37};
    lex.conj = {38, 39};
    return lex;
}

Lexicon ood_lexicon() {
    Lexicon lex = id_lexicon();
    lex.noun.push_back({40, 42});
    lex.noun.push_back({41, 43});
    lex.adj.push_back(44);
    lex.adj.push_back(45);
    lex.verb.push_back({46, 47});
    lex.prep.push_back(48);
    lex.adv.push_back(49);
    return lex;
}

std::map<int, std::vector<int>> build_confusions(const Lexicon& lex) {
    std::map<int, std::vector<int>> conf;
    // Number-agreeing words are confusable with their counterpart form.
    for (const auto& [sg, pl] : lex.det) { conf[sg].push_back(pl); conf[pl].push_back(sg); }
    for (const auto& [sg, pl] : lex.noun) { conf[sg].push_back(pl); conf[pl].push_back(sg); }
    for (const auto& [sg, pl] : lex.verb) { conf[sg].push_back(pl); conf[pl].push_back(sg); }
    // Free classes are confusable within the class.
    auto within = [&](const std::vector<int>& ws) {
        for (int a : ws)
            for (int b : ws)
                if (a != b) conf[a].push_back(b);
    };
    within(lex.adj);
    within(lex.prep);
    within(lex.adv);
    within(lex.conj);
    return conf;
}

// Slot shorthands for building templates.
void np(Template& t, int clause) {
    t.push_back({WordClass::det, clause});
    t.push_back({WordClass::adj, clause, true, 0.5});
    t.push_back({WordClass::noun, clause});
}
void vp(Template& t, int clause) {
    t.push_back({WordClass::verb, clause});
    t.push_back({WordClass::adv, clause, true, 0.3});
}
void pp(Template& t, int clause) {
    t.push_back({WordClass::prep, clause});
    np(t, clause);
}
void conj(Template& t) { t.push_back({WordClass::conj, 0}); }

}  // namespace

GrammarConfig default_id_config(std::uint64_t seed) {
    GrammarConfig c;
    c.seed = seed;
    c.lexicon = id_lexicon();
    c.confusion_sets = build_confusions(c.lexicon);
    c.length_range = {4, 24};
    c.target_mean_length = 13.0;
    c.corruption_rates = {0.12, 0.02, 0.02, 0.02};

    Template t0; np(t0, 0); vp(t0, 0); np(t0, 1);
    Template t1; np(t1, 0); vp(t1, 0); np(t1, 1); pp(t1, 2);
    Template t2; np(t2, 0); vp(t2, 0); np(t2, 1); conj(t2); np(t2, 2); vp(t2, 2); np(t2, 3);
    Template t3; np(t3, 0); vp(t3, 0); np(t3, 1); pp(t3, 2); conj(t3); np(t3, 3); vp(t3, 3); np(t3, 4);
    Template t4; np(t4, 0); vp(t4, 0); np(t4, 1); conj(t4); np(t4, 2); vp(t4, 2); np(t4, 3); pp(t4, 4);
    c.templates = {t0, t1, t2, t3, t4};
    c.template_weights = {0.10, 0.20, 0.40, 0.15, 0.15};
    c.validate();
    return c;
}

GrammarConfig ood_config(const GrammarConfig& base) {
    GrammarConfig c = base;
    c.seed = mix_seed(base.seed, 0x6f6f64ULL);
    c.lexicon = ood_lexicon();
    c.confusion_sets = build_confusions(c.lexicon);
    c.length_range = {2, 12};
    c.target_mean_length = 6.5;
    c.corruption_rates = {0.20, 0.04, 0.04, 0.04};

    Template u0; np(u0, 0); vp(u0, 0);
    Template u1; pp(u1, 0); np(u1, 1); vp(u1, 1);
    Template u2; np(u2, 0); vp(u2, 0); pp(u2, 1);
    Template u3; u3.push_back({WordClass::adv, 0}); np(u3, 0); vp(u3, 0); np(u3, 1);
    c.templates = {u0, u1, u2, u3};
    c.template_weights = {0.35, 0.22, 0.22, 0.21};
    c.validate();
    return c;
}

namespace {

int pick(Rng& rng, const std::vector<int>& ws) {
    return ws[rng.uniform_int(ws.size())];
}

int pick_agreeing(Rng& rng, const std::vector<std::pair<int, int>>& ws, bool plural) {
    const auto& [sg, pl] = ws[rng.uniform_int(ws.size())];
    return plural ? pl : sg;
}

std::vector<int> instantiate(const GrammarConfig& c, const Template& t, Rng& rng) {
    // Grammatical number drawn per clause.
    std::map<int, bool> plural;
    for (const Slot& s : t)
        if (!plural.count(s.clause)) plural[s.clause] = rng.bernoulli(0.5);
    std::vector<int> out;
    for (const Slot& s : t) {
        if (s.optional && !rng.bernoulli(s.p_include)) continue;
        switch (s.cls) {
            case WordClass::det:
                out.push_back(pick_agreeing(rng, c.lexicon.det, plural[s.clause]));
                break;
            case WordClass::noun:
                out.push_back(pick_agreeing(rng, c.lexicon.noun, plural[s.clause]));
                break;
            case WordClass::verb:
                out.push_back(pick_agreeing(rng, c.lexicon.verb, plural[s.clause]));
                break;
            case WordClass::adj: out.push_back(pick(rng, c.lexicon.adj)); break;
            case WordClass::prep: out.push_back(pick(rng, c.lexicon.prep)); break;
            case WordClass::adv: out.push_back(pick(rng, c.lexicon.adv)); break;
            case WordClass::conj: out.push_back(pick(rng, c.lexicon.conj)); break;
        }
    }
    return out;
}

int pick_template(const GrammarConfig& c, Rng& rng) {
    double total = 0.0;
    for (double w : c.template_weights) total += w;
    double u = rng.u01() * total;
    for (std::size_t i = 0; i < c.template_weights.size(); ++i) {
        u -= c.template_weights[i];
        if (u <= 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(c.templates.size()) - 1;
}

}  // namespace

std::vector<int> corrupt(const std::vector<int>& reference,
                         const GrammarConfig& config, Rng& rng) {
    const CorruptionRates& r = config.corruption_rates;
    std::vector<int> out;
    out.reserve(reference.size() + 2);
    std::size_t i = 0;
    while (i < reference.size()) {
        const int tok = reference[i];
        const auto it = config.confusion_sets.find(tok);
        const std::vector<int>* conf =
            it != config.confusion_sets.end() && !it->second.empty() ? &it->second : nullptr;
        const double u = rng.u01();
        double edge = r.substitute;
        if (u < edge && conf) {
            out.push_back(pick(rng, *conf));
            ++i;
            continue;
        }
        edge += r.erase;
        if (u < edge && u >= r.substitute) {
            ++i;  // token dropped
            continue;
        }
        edge += r.insert;
        if (u < edge && u >= r.substitute + r.erase && conf) {
            out.push_back(tok);
            out.push_back(pick(rng, *conf));
            ++i;
            continue;
        }
        edge += r.swap_adjacent;
        if (u < edge && u >= r.substitute + r.erase + r.insert && i + 1 < reference.size()) {
            out.push_back(reference[i + 1]);
            out.push_back(tok);
            i += 2;  // the swapped-in neighbor is consumed too
            continue;
        }
        out.push_back(tok);
        ++i;
    }
    if (out.empty()) out = reference;
    return out;
}

std::vector<SentencePair> generate_corpus(const GrammarConfig& config, int n) {
    if (n < 1) throw std::invalid_argument("generate_corpus: n must be >= 1");
    config.validate();
    Rng rng(mix_seed(config.seed, 0x636f7270ULL));
    std::vector<SentencePair> pairs;
    pairs.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int t = pick_template(config, rng);
        SentencePair p;
        p.reference = instantiate(config, config.templates[t], rng);
        p.source = corrupt(p.reference, config, rng);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void write_corpus(const std::string& path, const std::vector<SentencePair>& pairs,
                  const Vocab& vocab) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_corpus: cannot open " + path);
    for (const SentencePair& p : pairs) {
        json rec;
        json src = json::array(), ref = json::array();
        for (int t : p.source) src.push_back(vocab.word(t));
        for (int t : p.reference) ref.push_back(vocab.word(t));
        rec["src"] = std::move(src);
        rec["ref"] = std::move(ref);
        f << rec.dump() << '\n';
    }
    if (!f) throw std::runtime_error("write_corpus: write failed for " + path);
}

std::vector<SentencePair> read_corpus(const std::string& path, const Vocab& vocab) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_corpus: cannot open " + path);
    std::vector<SentencePair> pairs;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& what) {
        throw std::runtime_error("read_corpus: " + path + ":" + std::to_string(line_no) +
                                 ": " + what);
    };
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded()) fail("malformed record");
        if (!rec.contains("src")) fail("missing src field");
        if (!rec.contains("ref")) fail("missing ref field");
        SentencePair p;
        for (const auto& w : rec["src"]) {
            const int id = vocab.id(w.get<std::string>());
            p.source.push_back(id >= 0 ? id : nnet::kUnk);
        }
        for (const auto& w : rec["ref"]) {
            const int id = vocab.id(w.get<std::string>());
            p.reference.push_back(id >= 0 ? id : nnet::kUnk);
        }
        if (p.source.empty() || p.reference.empty()) fail("empty sentence");
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void write_vocab(const std::string& path, const Vocab& vocab) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_vocab: cannot open " + path);
    for (const std::string& t : vocab.tokens) f << t << '\n';
    if (!f) throw std::runtime_error("write_vocab: write failed for " + path);
}

Vocab read_vocab(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_vocab: cannot open " + path);
    Vocab v;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) v.tokens.push_back(line);
    return v;
}

}  // namespace endd::synthdata
