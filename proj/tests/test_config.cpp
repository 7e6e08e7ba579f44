#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "caim/config.hpp"
#include "doctest.h"

using namespace caim;

TEST_CASE("defaults survive a json round trip") {
    ExperimentConfig cfg;
    ExperimentConfig back = ExperimentConfig::from_json_string(cfg.to_json_string());
    CHECK(back.seed == cfg.seed);
    CHECK(back.dataset.n_identities == 60);
    CHECK(back.dataset.samples_per_identity == 6);
    CHECK(back.dataset.gap_strength == 0.8);
    CHECK(back.protocol_folds == 5);
    CHECK(back.train_fraction == doctest::Approx(25.0 / 60.0));
    CHECK(back.insertion_plan == std::vector<std::size_t>{1, 2, 3});
    CHECK(back.train.margin == 2.0);
    CHECK(back.train.learning_rate == 1e-4);
    CHECK(back.train.epochs == 50);
    CHECK(back.train.batch_size == 90);
    CHECK(back.train.distance == Distance::euclidean);
    CHECK(back.far_targets_percent == std::vector<double>{1.0, 0.1});
}

TEST_CASE("partial configs keep defaults for absent keys") {
    ExperimentConfig cfg = ExperimentConfig::from_json_string(
        R"({"seed": 5, "dataset": {"identities": 10}, "train": {"epochs": 3}})");
    CHECK(cfg.seed == 5);
    CHECK(cfg.dataset.n_identities == 10);
    CHECK(cfg.dataset.samples_per_identity == 6);
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.train.margin == 2.0);
}

TEST_CASE("unknown keys are rejected at every level") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json_string(R"({"sede": 5})"),
                         doctest::Contains("unknown key 'sede'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json_string(R"({"dataset": {"idenities": 4}})"),
                         doctest::Contains("dataset.idenities"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(ExperimentConfig::from_json_string(R"({"train": {"momentum": 0.9}})"),
                         doctest::Contains("train.momentum"), std::invalid_argument);
    CHECK_THROWS_AS(ExperimentConfig::from_json_string(R"({"train": {"distance": "hamming"}})"),
                    std::invalid_argument);
}

TEST_CASE("sub-seeds derive deterministically from the master seed") {
    ExperimentConfig a = ExperimentConfig::from_json_string(R"({"seed": 9})");
    ExperimentConfig b = ExperimentConfig::from_json_string(R"({"seed": 9})");
    ExperimentConfig c = ExperimentConfig::from_json_string(R"({"seed": 10})");
    CHECK(a.dataset_seed() == b.dataset_seed());
    CHECK(a.fold_seed(0) == b.fold_seed(0));
    CHECK(a.dataset_seed() != c.dataset_seed());
    CHECK(a.fold_seed(0) != a.fold_seed(1));
    CHECK(a.dataset_seed() != a.pretrain_seed());
    CHECK(a.dataset.seed == a.dataset_seed());
}

TEST_CASE("config echo is byte-stable") {
    ExperimentConfig cfg;
    CHECK(cfg.to_json_string() == cfg.to_json_string());
    ExperimentConfig back = ExperimentConfig::from_json_string(cfg.to_json_string());
    CHECK(back.to_json_string() == cfg.to_json_string());
}
