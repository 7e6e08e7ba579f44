#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "caim/caim_block.hpp"
#include "caim/checkpoint.hpp"
#include "caim/rng.hpp"
#include "caim/tensor.hpp"

namespace caim {

enum class Modality { source, target };

// Flat image batch used by pretraining and evaluation plumbing.
struct LabeledImages {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<std::vector<double>> images;  // each channels*height*width
    std::vector<std::size_t> labels;
};

// Five conv stages (3x3, stride 2, relu) over a 3 x 32 x 32 input, then
// GAP -> dense -> L2 normalization into a 64-d embedding. Construction gives
// a trainable network; freeze() pins every parameter.
class FrozenBackbone {
  public:
    static constexpr std::size_t kStages = 5;
    static constexpr std::size_t kInputSize = 32;
    static constexpr std::size_t kInputChannels = 3;
    static constexpr std::size_t kEmbeddingDim = 64;
    static constexpr std::array<std::size_t, kStages> kChannelPlan = {16, 32, 64, 128, 128};

    explicit FrozenBackbone(Rng& rng);

    bool frozen() const;
    void freeze();

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

    // channels / spatial extent of the map after stage i (1-based position i+1)
    static std::size_t stage_channels(std::size_t stage_index) { return kChannelPlan[stage_index]; }
    static std::size_t stage_spatial(std::size_t stage_index);

    // Validates 1- or 3-channel input at the fixed resolution; a rank-3 image
    // becomes a singleton batch and single-channel data is replicated to 3.
    static Tensor prepare_input(const Tensor& images);

    Tensor stage_forward(std::size_t stage_index, const Tensor& x) const;
    // 64-d pre-normalization features of the final stage map
    Tensor head_features(const Tensor& last_stage_map) const;

    // prepare -> stages -> head, without normalization (pretraining head input)
    Tensor features(const Tensor& images) const;
    // unit-norm embeddings
    Tensor embed(const Tensor& images) const;

    std::array<Tensor, kStages> stage_weights;
    std::array<Tensor, kStages> stage_biases;
    Tensor head_weight;  // kEmbeddingDim x kChannelPlan.back()
    Tensor head_bias;

  private:
    FrozenBackbone() = default;
    friend FrozenBackbone backbone_from_checkpoint(const Checkpoint& ckpt);
};

// 1-based stage positions after which a modulation block sits.
struct InsertionPlan {
    std::vector<std::size_t> positions;

    InsertionPlan() = default;
    explicit InsertionPlan(std::vector<std::size_t> pos);
    static InsertionPlan standard() { return InsertionPlan({1, 2, 3}); }
    std::string str() const;
};

enum class BlockMode { gated, unconditional_aim, unconditional_in };

// Frozen backbone plus modulation blocks at the plan's positions. Blocks are
// the only trainable parameters; the backbone tensors are shared, not copied.
class HfrNetwork {
  public:
    HfrNetwork(FrozenBackbone backbone, InsertionPlan plan, std::uint64_t seed,
               BlockMode mode = BlockMode::gated);

    const FrozenBackbone& backbone() const { return backbone_; }
    const InsertionPlan& plan() const { return plan_; }
    BlockMode mode() const { return mode_; }
    std::vector<CaimBlock>& blocks() { return blocks_; }
    const std::vector<CaimBlock>& blocks() const { return blocks_; }

    // Exactly the block parameters, in plan order; empty for the
    // unconditional-IN mode which has nothing to train.
    std::vector<Tensor> trainable_parameters() const;

    // gate = 1 iff modality == target; source inputs take the bare backbone
    // path bit-exactly (gated mode). Unconditional modes transform both
    // modalities.
    Tensor embed(const Tensor& images, Modality modality) const;

  private:
    FrozenBackbone backbone_;
    InsertionPlan plan_;
    BlockMode mode_;
    std::vector<CaimBlock> blocks_;
};

HfrNetwork insert_caim(const FrozenBackbone& backbone, const InsertionPlan& plan,
                       std::uint64_t seed);

// Parameter/flop accounting at the fixed input geometry. Convention matches
// count_block_cost: 1 MAC = 2 flops, bias/relu/normalization arithmetic 1
// flop per element.
struct NetworkCost {
    std::int64_t backbone_params = 0, backbone_flops = 0;
    std::int64_t added_params = 0, added_flops = 0;
    std::int64_t total_params = 0, total_flops = 0;
    double params_overhead_percent = 0.0, flops_overhead_percent = 0.0;
};
NetworkCost count_network_cost(const HfrNetwork& net);
NetworkCost count_plan_cost(const InsertionPlan& plan);

struct PretrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

struct PretrainOutcome {
    FrozenBackbone backbone;
    std::vector<double> epoch_mean_ce;
};

// Trains the backbone with a temporary softmax identity head on
// source-modality images, discards the head and freezes everything.
PretrainOutcome pretrain_backbone(const LabeledImages& data, const PretrainConfig& config);

// Checkpoint layout: backbone/stage<i>/{weight,bias}, backbone/head/{weight,
// bias}, caim/<position>/<param>. Loaded backbones are always frozen.
void add_to_checkpoint(const FrozenBackbone& backbone, Checkpoint& ckpt);
void add_to_checkpoint(const CaimBlock& block, std::size_t position, Checkpoint& ckpt);
Checkpoint network_checkpoint(const HfrNetwork& net);
FrozenBackbone backbone_from_checkpoint(const Checkpoint& ckpt);
HfrNetwork network_from_checkpoint(const Checkpoint& ckpt, BlockMode mode = BlockMode::gated);

}  // namespace caim
