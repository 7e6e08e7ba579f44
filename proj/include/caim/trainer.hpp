#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "caim/dataset.hpp"
#include "caim/network.hpp"
#include "caim/tensor.hpp"

namespace caim {

enum class Distance { euclidean, cosine };

struct TrainConfig {
    double margin = 2.0;
    double learning_rate = 1e-4;
    std::size_t epochs = 50;
    std::size_t batch_size = 90;
    Distance distance = Distance::euclidean;
    std::uint64_t seed = 0;
    double genuine_fraction = 0.5;
};

// Adam with bias-corrected moments (beta1 0.9, beta2 0.999, eps 1e-8).
// Parameters without an allocated gradient are treated as zero-gradient.
class Adam {
  public:
    explicit Adam(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9,
                  double beta2 = 0.999, double epsilon = 1e-8);

    void step();
    void zero_grad();

    std::uint64_t step_count() const { return step_count_; }
    std::size_t slots() const { return params_.size(); }
    const std::vector<double>& first_moment(std::size_t slot) const { return m_[slot]; }
    const std::vector<double>& second_moment(std::size_t slot) const { return v_[slot]; }
    // restores a saved state; shapes must match the parameter list
    void load_state(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
                    std::uint64_t step_count);

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t step_count_ = 0;
};

// Mean over the batch of (1-y) * D^2 / 2 + y * max(0, margin - D)^2 / 2.
// Labels: 0 = genuine (same identity), 1 = impostor. Euclidean D works on the
// squared distance for the genuine term, so identical embeddings contribute
// exactly zero.
Tensor contrastive_loss(const Tensor& source_embeddings, const Tensor& target_embeddings,
                        const std::vector<int>& labels, double margin, Distance distance);

// One cross-modality comparison: a source-modality sample against a
// target-modality sample.
struct PairRef {
    std::size_t source_id, source_sample;
    std::size_t target_id, target_sample;
    int label;  // 0 genuine, 1 impostor
};

// Epoch pair stream. One epoch visits every (train identity, target sample)
// once as a genuine anchor, paired with a random source sample of the same
// identity, and draws matching impostors; batches hold
// round(genuine_fraction * batch_size) genuine pairs each. Batch composition
// is a pure function of (seed, epoch).
class PairSampler {
  public:
    PairSampler(std::vector<std::size_t> train_ids, std::size_t samples_per_identity,
                double genuine_fraction, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::vector<PairRef>> epoch_batches(std::size_t epoch) const;
    std::size_t batches_per_epoch() const;

  private:
    std::vector<std::size_t> train_ids_;
    std::size_t samples_per_identity_;
    double genuine_fraction_;
    std::size_t batch_size_;
    std::size_t genuine_per_batch_;
    std::uint64_t seed_;
};

struct TrainResult {
    std::vector<double> epoch_mean_loss;
};

// Contrastive training of the modulation blocks. In gated mode the source
// path is constant while the backbone is frozen, so source embeddings are
// precomputed once; unconditional modes route both modalities through the
// trainable blocks and embed the source side per batch. Rejects an unfrozen
// backbone and an empty trainable set before touching anything.
class ContrastiveTrainer {
  public:
    ContrastiveTrainer(HfrNetwork& net, const SynthDataset& dataset,
                       std::vector<std::size_t> train_ids, TrainConfig config);

    double run_epoch(std::size_t epoch);  // returns the epoch mean loss
    TrainResult run(const std::function<void(std::size_t epoch)>& after_epoch = nullptr);

    Adam& optimizer() { return optimizer_; }
    std::size_t next_epoch() const { return next_epoch_; }
    void set_next_epoch(std::size_t epoch) { next_epoch_ = epoch; }
    std::vector<double>& loss_history() { return loss_history_; }
    const TrainConfig& config() const { return config_; }

  private:
    Tensor gather_source_embeddings(const std::vector<PairRef>& pairs) const;
    Tensor assemble_batch(const std::vector<PairRef>& pairs, Modality m) const;

    HfrNetwork& net_;
    const SynthDataset& dataset_;
    std::vector<std::size_t> train_ids_;
    TrainConfig config_;
    PairSampler sampler_;
    Adam optimizer_;
    std::size_t next_epoch_ = 0;
    std::vector<double> loss_history_;
    std::vector<std::vector<double>> source_embeddings_;  // [id * S + k], unit-norm rows
};

void write_loss_csv(const std::string& path, const std::vector<double>& epoch_mean_loss);

}  // namespace caim
