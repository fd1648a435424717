#ifndef ENDD_PIPELINE_HPP
#define ENDD_PIPELINE_HPP

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "endd/decode.hpp"
#include "endd/distill.hpp"
#include "endd/eval.hpp"
#include "endd/synthdata.hpp"

namespace endd::pipeline {

struct DataConfig {
    int n_train = 20000;
    int n_test_id = 2000;
    int n_test_ood = 2000;
};

struct PipelineConfig {
    std::string out_dir = "out";
    std::uint64_t seed = 12345;
    DataConfig data;
    nnet::ModelConfig model;
    distill::TrainConfig member_train;
    distill::TrainConfig distill_train;
    distill::TrainConfig distdist_train;
    int ensemble_size = 5;
    double eval_temperature = 3.0;
    double grid_step = 0.02;
    bool rank_by_rate = false;  // sentence ranking by rates instead of sums

    void validate() const;
};

PipelineConfig default_config();
// Reads a JSON config file and merges it over the defaults.
PipelineConfig load_config(const std::string& path);
// Effective-config dump, written next to every command's outputs.
void dump_config(const PipelineConfig& config, const std::string& path);

struct Bundle {
    synthdata::Vocab vocab;
    synthdata::GrammarConfig id_config;
    synthdata::GrammarConfig ood_config;
    distill::Corpus train;
    distill::Corpus test_id;
    distill::Corpus test_ood;
};

Bundle make_data(const PipelineConfig& config);

struct Models {
    std::vector<nnet::SeqModel> members;
    nnet::SeqModel distilled;
    nnet::SeqModel nll_student;
    nnet::SeqModel kl_student;
};

Models train_all(const PipelineConfig& config, const Bundle& bundle,
                 std::ostream* log = nullptr);

enum class System { ind, ens, dist, nll, kl, gua };

std::string system_name(System s);
std::optional<System> system_from_name(const std::string& name);

// Decodes every sentence of the corpus with the given system and attaches
// per-sequence uncertainties (single-model softmax systems have KU = 0).
std::vector<eval::ScoredSentence> evaluate_system(System sys, const Models& models,
                                                  const distill::Corpus& corpus,
                                                  const PipelineConfig& config,
                                                  int member_ix = 0);

// Token-level total uncertainty under teacher forcing for the ensemble and
// the KL-objective student, aligned one value per token.
struct TeacherForcedTu {
    std::vector<double> ensemble_tu;
    std::vector<double> student_tu;
};
TeacherForcedTu token_tu_teacher_forced(const Models& models,
                                        const distill::Corpus& corpus,
                                        double temperature);

// Per-sentence ranking scores for the rejection protocol.
enum class RankMetric { length, tu, du, ku, manual };
std::optional<RankMetric> rank_metric_from_name(const std::string& name);
std::vector<double> ranking_scores(const std::vector<eval::ScoredSentence>& sentences,
                                   RankMetric metric, bool by_rate);

// --- file-backed commands (CLI entry points) ---------------------------------

void cmd_gen_data(const PipelineConfig& config, std::ostream& out);
void cmd_train_ensemble(const PipelineConfig& config, std::ostream& out);
void cmd_distill(const PipelineConfig& config, std::ostream& out);
void cmd_distill_dist(const PipelineConfig& config, distill::DistDistObjective objective,
                      std::ostream& out);
void cmd_evaluate(const PipelineConfig& config, const std::vector<System>& systems,
                  const std::vector<std::string>& testsets, std::ostream& out);
void cmd_reject_curve(const std::string& annotations_path, const std::string& metric,
                      const std::string& out_csv, bool by_rate,
                      const std::string& svg_path, std::ostream& out);

// Annotation records round-trip (one JSON object per line).
void write_annotations(const std::string& path,
                       const std::vector<eval::ScoredSentence>& sentences,
                       const synthdata::Vocab& vocab);

}  // namespace endd::pipeline

#endif
