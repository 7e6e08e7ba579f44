#include "caim/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "caim/style_norm.hpp"
#include "caim/trainer.hpp"

namespace caim {

namespace {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

FrozenBackbone::FrozenBackbone(Rng& rng) {
    std::size_t cin = kInputChannels;
    for (std::size_t s = 0; s < kStages; ++s) {
        std::size_t cout = kChannelPlan[s];
        stage_weights[s] = uniform_fan_in({cout, cin, 3, 3}, cin * 9, rng);
        stage_biases[s] = uniform_fan_in({cout}, cin * 9, rng);
        cin = cout;
    }
    head_weight = uniform_fan_in({kEmbeddingDim, kChannelPlan.back()}, kChannelPlan.back(), rng);
    head_bias = uniform_fan_in({kEmbeddingDim}, kChannelPlan.back(), rng);
}

bool FrozenBackbone::frozen() const {
    for (const Tensor& p : parameters())
        if (p.requires_grad()) return false;
    return true;
}

void FrozenBackbone::freeze() {
    for (Tensor p : parameters()) p.set_requires_grad(false);
}

std::vector<Tensor> FrozenBackbone::parameters() const {
    std::vector<Tensor> out;
    for (std::size_t s = 0; s < kStages; ++s) {
        out.push_back(stage_weights[s]);
        out.push_back(stage_biases[s]);
    }
    out.push_back(head_weight);
    out.push_back(head_bias);
    return out;
}

std::vector<std::pair<std::string, Tensor>> FrozenBackbone::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t s = 0; s < kStages; ++s) {
        std::string prefix = "backbone/stage" + std::to_string(s + 1) + "/";
        out.emplace_back(prefix + "weight", stage_weights[s]);
        out.emplace_back(prefix + "bias", stage_biases[s]);
    }
    out.emplace_back("backbone/head/weight", head_weight);
    out.emplace_back("backbone/head/bias", head_bias);
    return out;
}

std::size_t FrozenBackbone::stage_spatial(std::size_t stage_index) {
    std::size_t s = kInputSize;
    for (std::size_t i = 0; i <= stage_index; ++i) s = (s + 2 - 3) / 2 + 1;
    return s;
}

Tensor FrozenBackbone::prepare_input(const Tensor& images) {
    Tensor x = images;
    if (x.rank() == 3)
        x = reshape(x, {1, x.shape()[0], x.shape()[1], x.shape()[2]});
    if (x.rank() != 4)
        throw std::invalid_argument("backbone: expected an image or image batch, got shape " +
                                    shape_str(images.shape()));
    const std::size_t c = x.shape()[1];
    if (x.shape()[2] != kInputSize || x.shape()[3] != kInputSize)
        throw std::invalid_argument("backbone: resolution must be " + std::to_string(kInputSize) +
                                    "x" + std::to_string(kInputSize) + ", got " +
                                    shape_str(images.shape()));
    if (c == kInputChannels) return x;
    if (c != 1)
        throw std::invalid_argument("backbone: inputs must have 1 or 3 channels, got " +
                                    std::to_string(c));
    // single-channel inputs are replicated across the three channels
    const std::size_t n = x.shape()[0], hw = kInputSize * kInputSize;
    std::vector<double> rep(n * kInputChannels * hw);
    const auto& src = x.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < kInputChannels; ++ch)
            std::copy(src.begin() + i * hw, src.begin() + (i + 1) * hw,
                      rep.begin() + (i * kInputChannels + ch) * hw);
    return Tensor::from_data({n, kInputChannels, kInputSize, kInputSize}, std::move(rep));
}

Tensor FrozenBackbone::stage_forward(std::size_t stage_index, const Tensor& x) const {
    return relu(conv2d(x, stage_weights[stage_index], stage_biases[stage_index], 2, 1));
}

Tensor FrozenBackbone::head_features(const Tensor& last_stage_map) const {
    return dense(global_average_pool(last_stage_map), head_weight, head_bias);
}

Tensor FrozenBackbone::features(const Tensor& images) const {
    Tensor h = prepare_input(images);
    for (std::size_t s = 0; s < kStages; ++s) h = stage_forward(s, h);
    return head_features(h);
}

Tensor FrozenBackbone::embed(const Tensor& images) const {
    return l2_normalize_rows(features(images));
}

InsertionPlan::InsertionPlan(std::vector<std::size_t> pos) : positions(std::move(pos)) {
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] < 1 || positions[i] > FrozenBackbone::kStages)
            throw std::invalid_argument("insertion plan: position " +
                                        std::to_string(positions[i]) + " out of range 1.." +
                                        std::to_string(FrozenBackbone::kStages));
        if (i > 0 && positions[i] <= positions[i - 1])
            throw std::invalid_argument("insertion plan: positions must be strictly increasing");
    }
}

std::string InsertionPlan::str() const {
    std::string s = "{";
    for (std::size_t i = 0; i < positions.size(); ++i)
        s += (i ? "," : "") + std::to_string(positions[i]);
    return s + "}";
}

HfrNetwork::HfrNetwork(FrozenBackbone backbone, InsertionPlan plan, std::uint64_t seed,
                       BlockMode mode)
    : backbone_(std::move(backbone)), plan_(std::move(plan)), mode_(mode) {
    for (std::size_t pos : plan_.positions) {
        // per-position streams: a block's init does not depend on the plan
        Rng rng(mix_keys({seed, tag("caim-init"), pos}));
        blocks_.emplace_back(FrozenBackbone::stage_channels(pos - 1), rng);
    }
}

std::vector<Tensor> HfrNetwork::trainable_parameters() const {
    std::vector<Tensor> out;
    if (mode_ == BlockMode::unconditional_in) return out;
    for (const CaimBlock& b : blocks_)
        for (const Tensor& p : b.parameters()) out.push_back(p);
    return out;
}

Tensor HfrNetwork::embed(const Tensor& images, Modality modality) const {
    Tensor h = FrozenBackbone::prepare_input(images);
    const bool gate = modality == Modality::target;
    std::size_t bi = 0;
    for (std::size_t s = 0; s < FrozenBackbone::kStages; ++s) {
        h = backbone_.stage_forward(s, h);
        if (bi < plan_.positions.size() && plan_.positions[bi] == s + 1) {
            switch (mode_) {
                case BlockMode::gated:
                    h = caim_forward(blocks_[bi], h, gate);
                    break;
                case BlockMode::unconditional_aim:
                    h = aim(blocks_[bi], h);
                    break;
                case BlockMode::unconditional_in:
                    h = instance_norm(h, InstanceNormParams::affine_free(h.shape()[1]), 1e-5);
                    break;
            }
            ++bi;
        }
    }
    return l2_normalize_rows(backbone_.head_features(h));
}

HfrNetwork insert_caim(const FrozenBackbone& backbone, const InsertionPlan& plan,
                       std::uint64_t seed) {
    return HfrNetwork(backbone, plan, seed, BlockMode::gated);
}

namespace {

std::int64_t conv_flops(std::int64_t cin, std::int64_t cout, std::int64_t out_hw) {
    return out_hw * cout * (2 * cin * 9 + 1);  // MACs*2 + bias adds
}

}  // namespace

NetworkCost count_plan_cost(const InsertionPlan& plan) {
    NetworkCost cost;
    std::int64_t cin = FrozenBackbone::kInputChannels;
    for (std::size_t s = 0; s < FrozenBackbone::kStages; ++s) {
        std::int64_t cout = static_cast<std::int64_t>(FrozenBackbone::kChannelPlan[s]);
        std::int64_t hw = static_cast<std::int64_t>(FrozenBackbone::stage_spatial(s));
        hw *= hw;
        cost.backbone_params += cout * cin * 9 + cout;
        cost.backbone_flops += conv_flops(cin, cout, hw) + cout * hw;  // + relu
        cin = cout;
    }
    const std::int64_t cl = static_cast<std::int64_t>(FrozenBackbone::kChannelPlan.back());
    const std::int64_t ed = static_cast<std::int64_t>(FrozenBackbone::kEmbeddingDim);
    const std::int64_t last_hw =
        static_cast<std::int64_t>(FrozenBackbone::stage_spatial(FrozenBackbone::kStages - 1));
    cost.backbone_params += ed * cl + ed;
    cost.backbone_flops += cl * (last_hw * last_hw + 1)  // GAP
                           + ed * (2 * cl + 1)           // dense
                           + 3 * ed;                     // L2 normalization
    for (std::size_t pos : plan.positions) {
        std::size_t spatial = FrozenBackbone::stage_spatial(pos - 1);
        BlockCost bc =
            count_block_cost(FrozenBackbone::stage_channels(pos - 1), spatial, spatial);
        cost.added_params += bc.params;
        cost.added_flops += bc.flops;
    }
    cost.total_params = cost.backbone_params + cost.added_params;
    cost.total_flops = cost.backbone_flops + cost.added_flops;
    cost.params_overhead_percent =
        100.0 * static_cast<double>(cost.added_params) / static_cast<double>(cost.backbone_params);
    cost.flops_overhead_percent =
        100.0 * static_cast<double>(cost.added_flops) / static_cast<double>(cost.backbone_flops);
    return cost;
}

NetworkCost count_network_cost(const HfrNetwork& net) { return count_plan_cost(net.plan()); }

PretrainOutcome pretrain_backbone(const LabeledImages& data, const PretrainConfig& config) {
    if (data.images.empty() || data.images.size() != data.labels.size())
        throw std::invalid_argument("pretrain: empty or inconsistent dataset");
    std::size_t n_ids = 0;
    for (std::size_t l : data.labels) n_ids = std::max(n_ids, l + 1);
    if (n_ids < 2) throw std::invalid_argument("pretrain: need at least 2 identities");

    Rng init_rng(mix_keys({config.seed, tag("backbone-init")}));
    FrozenBackbone backbone(init_rng);
    Rng head_rng(mix_keys({config.seed, tag("cls-head-init")}));
    Tensor cls_weight =
        uniform_fan_in({n_ids, FrozenBackbone::kEmbeddingDim}, FrozenBackbone::kEmbeddingDim,
                       head_rng);
    Tensor cls_bias = Tensor::zeros({n_ids}, true);

    std::vector<Tensor> params = backbone.parameters();
    params.push_back(cls_weight);
    params.push_back(cls_bias);
    Adam opt(params, config.learning_rate);

    const std::size_t n = data.images.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    PretrainOutcome outcome{std::move(backbone), {}};
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng erng(mix_keys({config.seed, tag("pretrain-epoch"), epoch}));
        erng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            std::size_t bn = std::min(config.batch_size, n - start);
            std::vector<double> buf(bn * data.channels * data.height * data.width);
            std::vector<std::size_t> labels(bn);
            for (std::size_t i = 0; i < bn; ++i) {
                const auto& img = data.images[order[start + i]];
                std::copy(img.begin(), img.end(), buf.begin() + i * img.size());
                labels[i] = data.labels[order[start + i]];
            }
            Tensor batch = Tensor::from_data({bn, data.channels, data.height, data.width},
                                             std::move(buf));
            Tensor logits = dense(outcome.backbone.features(batch), cls_weight, cls_bias);
            Tensor loss = softmax_cross_entropy(logits, labels);
            opt.zero_grad();
            loss.backward();
            opt.step();
            loss_sum += loss.item() * static_cast<double>(bn);
            seen += bn;
        }
        outcome.epoch_mean_ce.push_back(loss_sum / static_cast<double>(seen));
    }
    outcome.backbone.freeze();
    return outcome;
}

void add_to_checkpoint(const FrozenBackbone& backbone, Checkpoint& ckpt) {
    for (const auto& [name, t] : backbone.named_parameters()) ckpt.put(name, t);
}

void add_to_checkpoint(const CaimBlock& block, std::size_t position, Checkpoint& ckpt) {
    std::string prefix = "caim/" + std::to_string(position) + "/";
    for (const auto& [name, t] : block.named_parameters()) ckpt.put(prefix + name, t);
}

Checkpoint network_checkpoint(const HfrNetwork& net) {
    Checkpoint ckpt;
    add_to_checkpoint(net.backbone(), ckpt);
    for (std::size_t i = 0; i < net.plan().positions.size(); ++i)
        add_to_checkpoint(net.blocks()[i], net.plan().positions[i], ckpt);
    return ckpt;
}

FrozenBackbone backbone_from_checkpoint(const Checkpoint& ckpt) {
    FrozenBackbone b;
    for (std::size_t s = 0; s < FrozenBackbone::kStages; ++s) {
        std::string prefix = "backbone/stage" + std::to_string(s + 1) + "/";
        b.stage_weights[s] = Tensor::from_data(ckpt.shape(prefix + "weight"),
                                               ckpt.data(prefix + "weight"));
        b.stage_biases[s] =
            Tensor::from_data(ckpt.shape(prefix + "bias"), ckpt.data(prefix + "bias"));
    }
    b.head_weight =
        Tensor::from_data(ckpt.shape("backbone/head/weight"), ckpt.data("backbone/head/weight"));
    b.head_bias =
        Tensor::from_data(ckpt.shape("backbone/head/bias"), ckpt.data("backbone/head/bias"));
    const std::size_t cl = FrozenBackbone::kChannelPlan.back();
    if (b.head_weight.shape() != Shape{FrozenBackbone::kEmbeddingDim, cl})
        throw std::runtime_error("checkpoint: head weight has unexpected shape");
    return b;  // requires_grad defaults false: loaded backbones are frozen
}

HfrNetwork network_from_checkpoint(const Checkpoint& ckpt, BlockMode mode) {
    FrozenBackbone backbone = backbone_from_checkpoint(ckpt);
    std::vector<std::size_t> positions;
    for (const std::string& name : ckpt.names()) {
        if (name.rfind("caim/", 0) != 0) {
            if (name.rfind("backbone/", 0) != 0)
                throw std::runtime_error("checkpoint: unexpected entry '" + name + "'");
            continue;
        }
        std::size_t slash = name.find('/', 5);
        std::size_t pos = static_cast<std::size_t>(std::stoul(name.substr(5, slash - 5)));
        if (positions.empty() || positions.back() != pos) positions.push_back(pos);
    }
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());

    HfrNetwork net(std::move(backbone), InsertionPlan(positions), 0, mode);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        std::string prefix = "caim/" + std::to_string(positions[i]) + "/";
        for (auto& [name, t] : net.blocks()[i].named_parameters()) {
            if (ckpt.shape(prefix + name) != t.shape())
                throw std::runtime_error("checkpoint: shape mismatch for '" + prefix + name + "'");
            Tensor param = t;
            param.mutable_data() = ckpt.data(prefix + name);
        }
    }
    return net;
}

}  // namespace caim
