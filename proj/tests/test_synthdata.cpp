#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "endd/eval.hpp"
#include "endd/synthdata.hpp"

using namespace endd;
using synthdata::GrammarConfig;
using synthdata::SentencePair;
using synthdata::Slot;
using synthdata::Template;
using synthdata::Vocab;
using synthdata::WordClass;

namespace {

// Test-only template matcher: backtracks over optional slots and per-clause
// grammatical number.
bool word_in_class(const GrammarConfig& c, WordClass cls, int w, bool plural) {
    auto in_pairs = [&](const std::vector<std::pair<int, int>>& ps) {
        for (auto& [sg, pl] : ps)
            if ((plural ? pl : sg) == w) return true;
        return false;
    };
    auto in_list = [&](const std::vector<int>& ws) {
        for (int x : ws)
            if (x == w) return true;
        return false;
    };
    switch (cls) {
        case WordClass::det: return in_pairs(c.lexicon.det);
        case WordClass::noun: return in_pairs(c.lexicon.noun);
        case WordClass::verb: return in_pairs(c.lexicon.verb);
        case WordClass::adj: return in_list(c.lexicon.adj);
        case WordClass::prep: return in_list(c.lexicon.prep);
        case WordClass::adv: return in_list(c.lexicon.adv);
        case WordClass::conj: return in_list(c.lexicon.conj);
    }
    return false;
}

bool match_from(const GrammarConfig& c, const Template& t, const std::vector<int>& toks,
                std::size_t slot, std::size_t pos, std::map<int, bool>& number) {
    if (slot == t.size()) return pos == toks.size();
    const Slot& s = t[slot];
    // option 1: skip an optional slot
    if (s.optional && match_from(c, t, toks, slot + 1, pos, number)) return true;
    if (pos >= toks.size()) return false;
    const bool agreeing =
        s.cls == WordClass::det || s.cls == WordClass::noun || s.cls == WordClass::verb;
    if (!agreeing) {
        if (word_in_class(c, s.cls, toks[pos], false) &&
            match_from(c, t, toks, slot + 1, pos + 1, number))
            return true;
        return false;
    }
    auto it = number.find(s.clause);
    const std::vector<bool> options =
        it == number.end() ? std::vector<bool>{false, true} : std::vector<bool>{it->second};
    for (bool plural : options) {
        if (!word_in_class(c, s.cls, toks[pos], plural)) continue;
        const bool fresh = it == number.end();
        number[s.clause] = plural;
        if (match_from(c, t, toks, slot + 1, pos + 1, number)) return true;
        if (fresh) number.erase(s.clause);
    }
    return false;
}

bool parses_under(const GrammarConfig& c, const std::vector<int>& toks) {
    for (const Template& t : c.templates) {
        std::map<int, bool> number;
        if (match_from(c, t, toks, 0, 0, number)) return true;
    }
    return false;
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("generation is deterministic and in-range") {
    GrammarConfig c = synthdata::default_id_config(5);
    auto a = synthdata::generate_corpus(c, 200);
    auto b = synthdata::generate_corpus(c, 200);
    CHECK(a == b);
    for (const SentencePair& p : a) {
        CHECK_FALSE(p.reference.empty());
        CHECK_FALSE(p.source.empty());
        CHECK(static_cast<int>(p.reference.size()) >= c.length_range.first);
        CHECK(static_cast<int>(p.reference.size()) <= c.length_range.second);
        for (int t : p.reference) {
            CHECK(t >= 4);
            CHECK(t < c.vocab_size);
        }
    }
}

TEST_CASE("zero corruption rates give source == reference") {
    GrammarConfig c = synthdata::default_id_config(6);
    c.corruption_rates = {0.0, 0.0, 0.0, 0.0};
    for (const SentencePair& p : synthdata::generate_corpus(c, 100))
        CHECK(p.source == p.reference);
}

TEST_CASE("default config hits the target mean length") {
    GrammarConfig c = synthdata::default_id_config(7);
    auto corpus = synthdata::generate_corpus(c, 20000);
    double mean = 0.0;
    for (const auto& p : corpus) mean += static_cast<double>(p.reference.size());
    mean /= static_cast<double>(corpus.size());
    CHECK(mean > 11.0);
    CHECK(mean < 15.0);
    CHECK(std::abs(mean - c.target_mean_length) < 2.0);
}

TEST_CASE("references parse under the generating templates") {
    GrammarConfig c = synthdata::default_id_config(8);
    for (const SentencePair& p : synthdata::generate_corpus(c, 300))
        CHECK(parses_under(c, p.reference));
    GrammarConfig o = synthdata::ood_config(c);
    for (const SentencePair& p : synthdata::generate_corpus(o, 300))
        CHECK(parses_under(o, p.reference));
}

TEST_CASE("substitution rate concentrates at the configured value") {
    GrammarConfig c = synthdata::default_id_config(9);
    c.corruption_rates = {0.15, 0.0, 0.0, 0.0};
    Rng rng(55);
    long corrupted = 0, total = 0;
    for (int i = 0; i < 1500; ++i) {
        auto t = c.templates[i % c.templates.size()];
        auto ref = synthdata::generate_corpus(c, 1)[0].reference;
        auto src = synthdata::corrupt(ref, c, rng);
        REQUIRE(src.size() == ref.size());  // substitutions only
        for (std::size_t j = 0; j < ref.size(); ++j)
            if (src[j] != ref[j]) ++corrupted;
        total += static_cast<long>(ref.size());
    }
    const double rate = static_cast<double>(corrupted) / static_cast<double>(total);
    CHECK(rate > 0.13);
    CHECK(rate < 0.17);
}

TEST_CASE("singleton confusion sets make substitution deterministic") {
    GrammarConfig c = synthdata::default_id_config(10);
    c.corruption_rates = {1.0 - 1e-9, 0.0, 0.0, 0.0};
    // restrict every confusion set to its first entry
    for (auto& [w, s] : c.confusion_sets) s.resize(1);
    Rng r1(4), r2(4);
    const std::vector<int> ref{4, 12, 24};
    auto s1 = synthdata::corrupt(ref, c, r1);
    auto s2 = synthdata::corrupt(ref, c, r2);
    CHECK(s1 == s2);
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(s1[i] == c.confusion_sets.at(ref[i])[0]);
}

TEST_CASE("ood_config shifts templates, lengths, rates and vocabulary") {
    GrammarConfig id = synthdata::default_id_config(11);
    GrammarConfig ood = synthdata::ood_config(id);

    for (const Template& t : ood.templates)
        for (const Template& u : id.templates) CHECK_FALSE(t == u);

    auto idc = synthdata::generate_corpus(id, 4000);
    auto oodc = synthdata::generate_corpus(ood, 4000);
    auto mean_len = [](const std::vector<SentencePair>& c) {
        double m = 0;
        for (const auto& p : c) m += static_cast<double>(p.reference.size());
        return m / static_cast<double>(c.size());
    };
    CHECK(mean_len(oodc) < mean_len(idc));
    CHECK(ood.corruption_rates.total() > id.corruption_rates.total());

    // words unseen in the in-domain templates appear in the shifted corpus
    std::set<int> id_words, ood_words;
    for (const auto& p : idc)
        id_words.insert(p.reference.begin(), p.reference.end());
    for (const auto& p : oodc)
        ood_words.insert(p.reference.begin(), p.reference.end());
    int unseen = 0;
    for (int w : ood_words)
        if (!id_words.count(w)) ++unseen;
    CHECK(unseen >= 8);  // 10 of 50 vocabulary ids are reserved for the shift
    for (int w = 40; w < 50; ++w) CHECK_FALSE(id_words.count(w));
}

TEST_CASE("corpus and vocabulary files round-trip; malformed lines are located") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "endd_synth").string();
    fs::create_directories(dir);
    const Vocab vocab = Vocab::default_vocab();
    GrammarConfig c = synthdata::default_id_config(12);
    auto corpus = synthdata::generate_corpus(c, 50);

    synthdata::write_corpus(dir + "/c.jsonl", corpus, vocab);
    auto back = synthdata::read_corpus(dir + "/c.jsonl", vocab);
    CHECK(back == corpus);

    synthdata::write_vocab(dir + "/v.txt", vocab);
    Vocab v2 = synthdata::read_vocab(dir + "/v.txt");
    CHECK(v2.tokens == vocab.tokens);

    {
        std::ofstream f(dir + "/empty.jsonl");
    }
    CHECK(synthdata::read_corpus(dir + "/empty.jsonl", vocab).empty());

    {
        std::ofstream f(dir + "/bad.jsonl");
        f << R"({"src": ["this"], "ref": ["this"]})" << "\n";
        f << R"({"src": ["this"]})" << "\n";
    }
    try {
        (void)synthdata::read_corpus(dir + "/bad.jsonl", vocab);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
        CHECK(std::string(e.what()).find("ref") != std::string::npos);
    }
    CHECK_THROWS_AS((void)synthdata::read_corpus(dir + "/missing.jsonl", vocab),
                    std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("perfect corrector scores 1.0, identity corrector strictly less") {
    GrammarConfig c = synthdata::default_id_config(13);
    auto corpus = synthdata::generate_corpus(c, 300);
    std::vector<eval::ScoredSentence> perfect, identity;
    bool any_corruption = false;
    for (const auto& p : corpus) {
        perfect.push_back(eval::make_scored(p.source, p.reference, p.reference));
        identity.push_back(eval::make_scored(p.source, p.reference, p.source));
        if (p.source != p.reference) any_corruption = true;
    }
    REQUIRE(any_corruption);
    CHECK(eval::gleu_corpus(perfect) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(eval::gleu_corpus(identity) < 1.0);
}

}  // TEST_SUITE
