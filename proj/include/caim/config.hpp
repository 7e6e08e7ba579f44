#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caim/dataset.hpp"
#include "caim/network.hpp"
#include "caim/trainer.hpp"

namespace caim {

// One JSON document drives the whole pipeline. Unknown keys are rejected at
// every nesting level; absent keys take the reference-benchmark defaults
// below. Sub-seeds for data generation, pretraining and per-fold training are
// derived from the master seed, never stored.
struct ExperimentConfig {
    std::uint64_t seed = 20250801;
    std::string output_dir = "runs/ref";

    DatasetParams dataset;  // .seed is derived, ignore the stored field
    std::size_t protocol_folds = 5;
    double train_fraction = 25.0 / 60.0;

    std::vector<std::size_t> insertion_plan = {1, 2, 3};

    PretrainConfig pretrain;
    std::size_t pretrain_holdout_per_identity = 1;

    TrainConfig train;

    std::vector<double> far_targets_percent = {1.0, 0.1};

    std::uint64_t dataset_seed() const { return mix_keys({seed, tag("dataset")}); }
    std::uint64_t protocol_seed() const { return mix_keys({seed, tag("protocol")}); }
    std::uint64_t pretrain_seed() const { return mix_keys({seed, tag("pretrain")}); }
    std::uint64_t fold_seed(std::size_t fold) const {
        return mix_keys({seed, tag("fold"), fold});
    }

    std::string to_json_string() const;
    static ExperimentConfig from_json_string(const std::string& text);

    void save(const std::string& path) const;
    static ExperimentConfig load(const std::string& path);
};

}  // namespace caim
