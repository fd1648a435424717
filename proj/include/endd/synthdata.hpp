#ifndef ENDD_SYNTHDATA_HPP
#define ENDD_SYNTHDATA_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "endd/rng.hpp"

namespace endd::synthdata {

// A corrupted/grammatical sentence pair (token ids).
struct SentencePair {
    std::vector<int> source;
    std::vector<int> reference;

    bool operator==(const SentencePair&) const = default;
};

struct CorruptionRates {
    double substitute = 0.12;
    double erase = 0.02;
    double insert = 0.02;
    double swap_adjacent = 0.02;

    double total() const { return substitute + erase + insert + swap_adjacent; }
};

enum class WordClass { det, adj, noun, verb, prep, adv, conj };

// One production slot. Slots sharing a clause id agree in grammatical
// number (det/noun/verb classes carry singular/plural forms).
struct Slot {
    WordClass cls;
    int clause = 0;
    bool optional = false;
    double p_include = 1.0;

    bool operator==(const Slot&) const = default;
};

using Template = std::vector<Slot>;

// Word inventory. Number-agreeing classes hold (singular, plural) pairs.
struct Lexicon {
    std::vector<std::pair<int, int>> det;
    std::vector<std::pair<int, int>> noun;
    std::vector<std::pair<int, int>> verb;
    std::vector<int> adj;
    std::vector<int> prep;
    std::vector<int> adv;
    std::vector<int> conj;
};

struct GrammarConfig {
    int vocab_size = 50;
    std::vector<Template> templates;
    std::vector<double> template_weights;
    std::pair<int, int> length_range{4, 24};
    double target_mean_length = 13.0;
    CorruptionRates corruption_rates;
    std::map<int, std::vector<int>> confusion_sets;
    Lexicon lexicon;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Vocab {
    std::vector<std::string> tokens;

    int size() const { return static_cast<int>(tokens.size()); }
    const std::string& word(int id) const;
    // -1 when the string is not in the vocabulary.
    int id(const std::string& s) const;

    static Vocab default_vocab();
};

// In-domain corpus configuration: two-clause slot templates, mean reference
// length near 13 tokens.
GrammarConfig default_id_config(std::uint64_t seed);

// Domain-shifted configuration: disjoint (shorter) templates, higher
// corruption, and word classes extended with vocabulary never used by the
// in-domain templates.
GrammarConfig ood_config(const GrammarConfig& base);

std::vector<SentencePair> generate_corpus(const GrammarConfig& config, int n);

// Per-token independent corruption; at most one operation per position.
std::vector<int> corrupt(const std::vector<int>& reference,
                         const GrammarConfig& config, Rng& rng);

// One JSON object per line with fields {src, ref} (token strings).
void write_corpus(const std::string& path, const std::vector<SentencePair>& pairs,
                  const Vocab& vocab);
std::vector<SentencePair> read_corpus(const std::string& path, const Vocab& vocab);

// One token string per line; the line number is the id.
void write_vocab(const std::string& path, const Vocab& vocab);
Vocab read_vocab(const std::string& path);

}  // namespace endd::synthdata

#endif
