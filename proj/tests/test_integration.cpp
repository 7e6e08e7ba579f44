#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "caim/experiments.hpp"
#include "doctest.h"

using namespace caim;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "caim_integration_test";

ExperimentConfig scaled_config(std::uint64_t seed, double gap, const std::string& sub) {
    ExperimentConfig cfg = ExperimentConfig::from_json_string(R"({
      "dataset": {"identities": 20, "samples_per_identity": 4, "gap_strength": 0.0},
      "protocol": {"folds": 1, "train_fraction": 0.5},
      "pretrain": {"epochs": 12},
      "train": {"epochs": 3, "batch_size": 20}
    })");
    cfg.seed = seed;
    cfg.dataset.seed = cfg.dataset_seed();
    cfg.pretrain.seed = cfg.pretrain_seed();
    cfg.dataset.gap_strength = gap;
    cfg.output_dir = (kRoot / sub).string();
    return cfg;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<char>((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("baseline cross-modality EER is non-decreasing in gap strength") {
    fs::remove_all(kRoot);
    // the source renders do not depend on the gap, so one backbone serves all
    ExperimentConfig base = scaled_config(101, 0.0, "gap0");
    run_gen_data(base, false);
    run_pretrain(base);
    Checkpoint bb = Checkpoint::load(ExperimentPaths(base.output_dir).backbone_ckpt);

    double previous = -1.0;
    double eer_at[3] = {0, 0, 0};
    int i = 0;
    for (double gap : {0.0, 0.4, 0.8}) {
        ExperimentConfig cfg = scaled_config(101, gap, "gap" + std::to_string(i));
        if (gap > 0.0) run_gen_data(cfg, false);
        SynthDataset ds = load_dataset(ExperimentPaths(cfg.output_dir).dataset_dir);
        auto folds = make_protocol(ds, 1, cfg.train_fraction, cfg.protocol_seed());
        HfrNetwork bare(backbone_from_checkpoint(bb), InsertionPlan(std::vector<std::size_t>{}),
                        0);
        FoldMetrics m = evaluate_fold(bare, ds, folds[0], {1.0});
        CHECK(m.eer >= previous);
        previous = m.eer;
        eer_at[i++] = m.eer;
    }
    // and the full-strength gap is wide: far worse than the within-source split
    ExperimentConfig cfg8 = scaled_config(101, 0.8, "gap2");
    SynthDataset ds8 = load_dataset(ExperimentPaths(cfg8.output_dir).dataset_dir);
    auto folds8 = make_protocol(ds8, 1, cfg8.train_fraction, cfg8.protocol_seed());
    HfrNetwork bare(backbone_from_checkpoint(bb), InsertionPlan(std::vector<std::size_t>{}), 0);
    FoldMetrics within = evaluate_fold(bare, ds8, folds8[0], {1.0}, false, true);
    CHECK(eer_at[2] >= within.eer + 10.0);
    CHECK(within.rank1 >= 95.0);  // source-vs-source sanity split is near-perfect
}

TEST_CASE("resumed training matches the uninterrupted run bit-exactly") {
    ExperimentConfig full = scaled_config(103, 0.6, "resume_full");
    full.train.epochs = 4;
    run_gen_data(full, false);
    run_pretrain(full);
    run_train(full, 0, false, 0);
    ExperimentPaths full_paths(full.output_dir);
    auto want_ckpt = slurp(full_paths.fold_checkpoint(0));
    auto want_loss = slurp(full_paths.fold_loss_csv(0));

    // same pipeline, interrupted after epoch 2 and resumed
    ExperimentConfig half = scaled_config(103, 0.6, "resume_half");
    half.train.epochs = 2;
    run_gen_data(half, false);
    run_pretrain(half);
    run_train(half, 0, false, 0);
    ExperimentConfig rest = half;
    rest.train.epochs = 4;
    run_train(rest, 0, true, 0);

    ExperimentPaths half_paths(half.output_dir);
    CHECK(slurp(half_paths.fold_checkpoint(0)) == want_ckpt);
    CHECK(slurp(half_paths.fold_loss_csv(0)) == want_loss);
}

TEST_CASE("trained evaluation beats the baseline on the scaled benchmark") {
    ExperimentConfig cfg = scaled_config(105, 0.8, "scaled");
    cfg.train.epochs = 30;
    cfg.train.batch_size = 20;
    cfg.insertion_plan = {1, 2, 3};
    run_gen_data(cfg, false);
    PretrainReport pre = run_pretrain(cfg);
    CHECK(pre.holdout_rank1 >= 95.0);
    run_train(cfg, 0, false, 0);
    EvalReport baseline = run_eval(cfg, true);
    EvalReport trained = run_eval(cfg, false);
    CHECK(trained.aggregate.mean.at("eer") < baseline.aggregate.mean.at("eer"));
    CHECK(trained.aggregate.mean.at("rank1") > baseline.aggregate.mean.at("rank1"));

    // determinism of the emitted metric files across identical reruns
    EvalReport again = run_eval(cfg, false);
    CHECK(again.aggregate.mean.at("eer") == trained.aggregate.mean.at("eer"));
    ExperimentPaths paths(cfg.output_dir);
    auto m1 = slurp(fs::path(paths.eval_dir) / "metrics.json");
    run_eval(cfg, false);
    CHECK(slurp(fs::path(paths.eval_dir) / "metrics.json") == m1);
}
