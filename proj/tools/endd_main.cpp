#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "endd/pipeline.hpp"

namespace {

using endd::pipeline::PipelineConfig;

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool out_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "JSON configuration file");
    cmd->add_option("--out", o.out_dir, "output directory (overrides config)")
        ->each([&o](const std::string&) { o.out_set = true; });
    cmd->add_option("--seed", o.seed, "master seed (overrides config)")
        ->each([&o](const std::string&) { o.seed_set = true; });
}

PipelineConfig resolve_config(const CommonOpts& o) {
    PipelineConfig c = o.config_path.empty() ? endd::pipeline::default_config()
                                             : endd::pipeline::load_config(o.config_path);
    if (const char* env = std::getenv("ENDD_OUT_DIR"); env && !o.out_set && o.config_path.empty())
        c.out_dir = env;
    if (o.out_set) c.out_dir = o.out_dir;
    if (o.seed_set) c.seed = o.seed;
    c.validate();
    return c;
}

std::vector<endd::pipeline::System> parse_systems(const std::vector<std::string>& names) {
    std::vector<endd::pipeline::System> out;
    for (const std::string& n : names) {
        auto s = endd::pipeline::system_from_name(n);
        if (!s) throw std::invalid_argument("unknown system '" + n + "'");
        out.push_back(*s);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequence ensemble distillation toolkit"};
    app.require_subcommand(1);

    CommonOpts gen_o, tr_o, di_o, dd_o, ev_o;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic corpora");
    add_common(gen, gen_o);

    CLI::App* tr = app.add_subcommand("train-ensemble", "Train the seed ensemble members");
    add_common(tr, tr_o);

    CLI::App* di = app.add_subcommand("distill", "Train the token-level distilled student");
    add_common(di, di_o);

    CLI::App* dd = app.add_subcommand("distill-dist",
                                      "Train a distribution-distilled student");
    add_common(dd, dd_o);
    std::string objective = "kl";
    dd->add_option("--objective", objective, "training objective: nll or kl")
        ->check(CLI::IsMember({"nll", "kl"}));

    CLI::App* ev = app.add_subcommand("evaluate", "Decode, score and tabulate systems");
    add_common(ev, ev_o);
    std::vector<std::string> systems = {"ind", "ens", "dist", "nll", "kl", "gua"};
    std::vector<std::string> testsets = {"id", "ood", "mix"};
    ev->add_option("--systems", systems, "systems to evaluate")->delimiter(',');
    ev->add_option("--testset", testsets, "test sets: id, ood, mix")->delimiter(',');

    CLI::App* rc = app.add_subcommand("reject-curve",
                                      "Rejection curve and AUC_RR from an annotations file");
    std::string annotations, metric = "ku", out_csv = "curve.csv", svg;
    bool rates = false;
    rc->add_option("--annotations", annotations, "annotations JSONL file")->required();
    rc->add_option("--metric", metric, "ranking metric: length|tu|du|ku|manual");
    rc->add_option("--out", out_csv, "output CSV path");
    rc->add_option("--svg", svg, "also write an SVG plot to this path");
    rc->add_flag("--rates", rates, "rank by length-normalized rates instead of sums");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            endd::pipeline::cmd_gen_data(resolve_config(gen_o), std::cout);
        } else if (tr->parsed()) {
            endd::pipeline::cmd_train_ensemble(resolve_config(tr_o), std::cout);
        } else if (di->parsed()) {
            endd::pipeline::cmd_distill(resolve_config(di_o), std::cout);
        } else if (dd->parsed()) {
            endd::pipeline::cmd_distill_dist(
                resolve_config(dd_o),
                objective == "nll" ? endd::distill::DistDistObjective::nll
                                   : endd::distill::DistDistObjective::kl,
                std::cout);
        } else if (ev->parsed()) {
            endd::pipeline::cmd_evaluate(resolve_config(ev_o), parse_systems(systems),
                                         testsets, std::cout);
        } else if (rc->parsed()) {
            endd::pipeline::cmd_reject_curve(annotations, metric, out_csv, rates, svg,
                                             std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
