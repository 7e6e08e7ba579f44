#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "caim/experiments.hpp"

namespace {

caim::ExperimentConfig resolve_config(const std::string& config_path,
                                      const std::optional<std::uint64_t>& seed,
                                      const std::optional<std::string>& out) {
    caim::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = caim::ExperimentConfig::load(config_path);
    if (seed) {
        cfg.seed = *seed;
        cfg.dataset.seed = cfg.dataset_seed();
        cfg.pretrain.seed = cfg.pretrain_seed();
    }
    if (out) cfg.output_dir = *out;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CAIM heterogeneous face recognition experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    app.add_option("--config", config_path, "experiment config JSON")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "override the master seed");
    app.add_option("--out", out, "override the output directory");

    bool force = false;
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and protocols");
    gen->add_flag("--force", force, "overwrite an existing dataset");

    auto* pre = app.add_subcommand("pretrain", "pretrain and freeze the backbone");

    std::optional<std::size_t> fold;
    bool resume = false;
    std::size_t save_every = 0;
    auto* train = app.add_subcommand("train", "contrastive training of the modulation blocks");
    train->add_option("--fold", fold, "train a single fold (default: all)");
    train->add_flag("--resume", resume, "resume from the last saved train state");
    train->add_option("--save-every", save_every, "checkpoint every N epochs");

    bool baseline = false, gate_off = false;
    auto* eval = app.add_subcommand("eval", "per-fold metrics and cross-fold aggregate");
    eval->add_flag("--baseline", baseline, "evaluate the bare pretrained backbone");
    eval->add_flag("--gate-off", gate_off, "evaluate trained checkpoints with the gate held at 0");

    auto* ablate = app.add_subcommand(
        "ablate", "sweep insertion plans and unconditional variants on fold 0");
    auto* cost = app.add_subcommand("cost", "parameter/flop accounting per insertion plan");

    CLI11_PARSE(app, argc, argv);

    try {
        caim::ExperimentConfig cfg = resolve_config(config_path, seed, out);
        if (gen->parsed()) {
            caim::run_gen_data(cfg, force);
            std::printf("dataset: %zu identities x %zu samples/modality, gap %.2f, %zu folds -> %s\n",
                        cfg.dataset.n_identities, cfg.dataset.samples_per_identity,
                        cfg.dataset.gap_strength, cfg.protocol_folds, cfg.output_dir.c_str());
        } else if (pre->parsed()) {
            caim::PretrainReport r = caim::run_pretrain(cfg);
            std::printf("pretrain: %zu epochs, final CE %.4f, holdout rank-1 %.2f%%\n", r.epochs,
                        r.final_ce, r.holdout_rank1);
        } else if (train->parsed()) {
            caim::TrainRunReport r = caim::run_train(cfg, fold, resume, save_every);
            for (std::size_t i = 0; i < r.folds.size(); ++i)
                std::printf("fold %zu: final epoch mean loss %.6f\n", r.folds[i],
                            r.final_loss[i]);
        } else if (eval->parsed()) {
            caim::EvalReport r = caim::run_eval(cfg, baseline, gate_off);
            std::printf("%-8s %8s %8s %8s\n", "", "AUC", "EER", "Rank-1");
            for (std::size_t f = 0; f < r.folds.size(); ++f)
                std::printf("fold %-3zu %8.2f %8.2f %8.2f\n", f, r.folds[f].auc, r.folds[f].eer,
                            r.folds[f].rank1);
            std::printf("mean     %8.2f %8.2f %8.2f\n", r.aggregate.mean.at("auc"),
                        r.aggregate.mean.at("eer"), r.aggregate.mean.at("rank1"));
            std::printf("std      %8.2f %8.2f %8.2f\n", r.aggregate.stddev.at("auc"),
                        r.aggregate.stddev.at("eer"), r.aggregate.stddev.at("rank1"));
        } else if (ablate->parsed()) {
            auto rows = caim::run_ablate(cfg);
            std::printf("%-12s %8s %8s %8s  %s\n", "config", "AUC", "EER", "Rank-1",
                        "source-identity");
            for (const auto& row : rows)
                std::printf("%-12s %8.2f %8.2f %8.2f  %s\n", row.label.c_str(), row.metrics.auc,
                            row.metrics.eer, row.metrics.rank1,
                            row.source_identity ? "yes" : "VIOLATED");
        } else if (cost->parsed()) {
            auto rows = caim::run_cost(cfg);
            std::printf("%-24s %12s %14s %10s %10s\n", "configuration", "params", "flops",
                        "params-ovh", "flops-ovh");
            for (const auto& row : rows)
                std::printf("%-24s %12lld %14lld %9.2f%% %9.2f%%\n", row.label.c_str(),
                            static_cast<long long>(row.params),
                            static_cast<long long>(row.flops), row.params_overhead_percent,
                            row.flops_overhead_percent);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
