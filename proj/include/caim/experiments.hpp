#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "caim/config.hpp"
#include "caim/dataset.hpp"
#include "caim/metrics.hpp"
#include "caim/network.hpp"
#include "caim/trainer.hpp"

namespace caim {

// Output layout under config.output_dir:
//   config.json                      effective-config echo (every command)
//   dataset/{manifest.json,samples/} + dataset/protocols/fold_<k>.json
//   backbone/backbone.ckpt, backbone/pretrain_report.json
//   train/fold_<k>/{checkpoint.ckpt,loss.csv,train_state.ckpt}
//   eval/{metrics.json,metrics.csv}
//   ablation/{ablation.json,ablation.csv} + ablation/<row>/...
//   cost/{cost.json,cost.csv}
struct ExperimentPaths {
    explicit ExperimentPaths(const std::string& out_dir);
    std::string root, dataset_dir, protocols_dir, backbone_dir, backbone_ckpt, pretrain_report,
        train_dir, eval_dir, ablation_dir, cost_dir;
    std::string fold_dir(std::size_t fold) const;
    std::string fold_checkpoint(std::size_t fold) const;
    std::string fold_loss_csv(std::size_t fold) const;
    std::string fold_train_state(std::size_t fold) const;
};

struct FoldMetrics {
    double auc = 0.0, eer = 0.0, rank1 = 0.0;
    std::vector<VrPoint> vr;
    std::map<std::string, double> as_map() const;
};

// Embeds gallery/probe samples and scores every probe-gallery comparison by
// cosine similarity. force_gate_off evaluates the checkpointed blocks with
// the gate held at 0; probes_as_source scores the within-source sanity split.
FoldMetrics evaluate_fold(const HfrNetwork& net, const SynthDataset& ds,
                          const ProtocolSplit& split, const std::vector<double>& far_targets,
                          bool force_gate_off = false, bool probes_as_source = false);

// True when every eval-identity source image embeds bit-identically through
// the network and the bare backbone.
bool source_path_identity(const HfrNetwork& net, const SynthDataset& ds,
                          const ProtocolSplit& split, std::size_t max_samples = 16);

void run_gen_data(const ExperimentConfig& cfg, bool force);

struct PretrainReport {
    double final_ce = 0.0;
    double holdout_rank1 = 0.0;
    std::size_t epochs = 0;
};
PretrainReport run_pretrain(const ExperimentConfig& cfg);

struct TrainRunReport {
    std::vector<std::size_t> folds;
    std::vector<double> final_loss;
};
TrainRunReport run_train(const ExperimentConfig& cfg, std::optional<std::size_t> only_fold,
                         bool resume, std::size_t save_every);

struct EvalReport {
    std::vector<FoldMetrics> folds;
    FoldReport aggregate;
};
EvalReport run_eval(const ExperimentConfig& cfg, bool baseline, bool gate_off = false);

struct AblationRow {
    std::string label;
    std::vector<std::size_t> plan;
    BlockMode mode = BlockMode::gated;
    bool trained = false;
    bool source_identity = false;
    std::int64_t trainable_params = 0;
    FoldMetrics metrics;
};
std::vector<AblationRow> run_ablate(const ExperimentConfig& cfg);

struct CostRow {
    std::string label;
    std::int64_t params = 0, flops = 0;
    double params_overhead_percent = 0.0, flops_overhead_percent = 0.0;
};
std::vector<CostRow> run_cost(const ExperimentConfig& cfg);

}  // namespace caim
