#include "caim/caim_block.hpp"

#include <cmath>
#include <stdexcept>

#include "caim/style_norm.hpp"

namespace caim {

namespace {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

CaimBlock::CaimBlock(std::size_t channels, Rng& rng) : channels_(channels) {
    if (channels == 0) throw std::invalid_argument("CaimBlock: channels must be positive");
    const std::size_t c = channels;
    conv1_weight = uniform_fan_in({c, c, 3, 3}, c * 9, rng);
    conv1_bias = uniform_fan_in({c}, c * 9, rng);
    conv2_weight = uniform_fan_in({c, c, 3, 3}, c * 9, rng);
    conv2_bias = uniform_fan_in({c}, c * 9, rng);
    fc_sigma_weight = uniform_fan_in({c, c}, c, rng);
    fc_sigma_bias = Tensor::zeros({c}, true);
    fc_mu_weight = uniform_fan_in({c, c}, c, rng);
    fc_mu_bias = Tensor::zeros({c}, true);
}

std::vector<Tensor> CaimBlock::parameters() const {
    return {conv1_weight, conv1_bias,      conv2_weight,  conv2_bias,
            fc_sigma_weight, fc_sigma_bias, fc_mu_weight, fc_mu_bias};
}

std::vector<std::pair<std::string, Tensor>> CaimBlock::named_parameters() const {
    return {{"conv1_weight", conv1_weight},       {"conv1_bias", conv1_bias},
            {"conv2_weight", conv2_weight},       {"conv2_bias", conv2_bias},
            {"fc_sigma_weight", fc_sigma_weight}, {"fc_sigma_bias", fc_sigma_bias},
            {"fc_mu_weight", fc_mu_weight},       {"fc_mu_bias", fc_mu_bias}};
}

Tensor style_features(const CaimBlock& block, const Tensor& f) {
    if (f.rank() != 4)
        throw std::invalid_argument("style_features: input must be N x C x H x W");
    if (f.shape()[1] != block.channels())
        throw std::invalid_argument("style_features: block has " +
                                    std::to_string(block.channels()) + " channels, input " +
                                    std::to_string(f.shape()[1]));
    Tensor h = relu(conv2d(f, block.conv1_weight, block.conv1_bias, 1, 1));
    h = relu(conv2d(h, block.conv2_weight, block.conv2_bias, 1, 1));
    return global_average_pool(h);
}

ModulationParams modulation_params(const CaimBlock& block, const Tensor& xi) {
    return ModulationParams{dense(xi, block.fc_sigma_weight, block.fc_sigma_bias),
                            dense(xi, block.fc_mu_weight, block.fc_mu_bias)};
}

Tensor aim(const CaimBlock& block, const Tensor& f) {
    ModulationParams mp = modulation_params(block, style_features(block, f));
    const std::size_t n = f.shape()[0], c = f.shape()[1];
    Tensor normalized =
        instance_norm(f, InstanceNormParams::affine_free(c), block.epsilon());
    return add(mul(normalized, reshape(mp.sigma_f, {n, c, 1, 1})),
               reshape(mp.mu_f, {n, c, 1, 1}));
}

Tensor caim_forward(const CaimBlock& block, const Tensor& f, bool gate) {
    if (!gate) return f;  // bit-exact pass-through, nothing recorded on the tape
    return add(f, aim(block, f));
}

BlockCost count_block_cost(std::size_t channels, std::size_t h, std::size_t w) {
    const std::int64_t c = static_cast<std::int64_t>(channels);
    const std::int64_t hw = static_cast<std::int64_t>(h) * static_cast<std::int64_t>(w);
    if (hw <= 0) throw std::invalid_argument("count_block_cost: positive spatial extents");
    BlockCost cost;
    cost.params = 2 * (9 * c * c + c) + 2 * (c * c + c);
    // conv 3x3 C->C, padding preserves h x w: 2 MAC-flops per tap plus bias add
    const std::int64_t conv = hw * c * (2 * 9 * c + 1);
    const std::int64_t relu_cost = hw * c;
    const std::int64_t gap = c * (hw + 1);
    const std::int64_t fc = c * (2 * c + 1);
    const std::int64_t stats = c * (hw + 1)        // spatial mean
                               + c * (2 * hw + 1)  // centered squares + variance mean
                               + 2 * c;            // + eps, sqrt
    const std::int64_t normalize = 2 * c * hw;     // subtract, divide
    const std::int64_t modulate = 2 * c * hw;      // scale, shift
    const std::int64_t residual = c * hw;
    cost.flops = 2 * conv + 2 * relu_cost + gap + 2 * fc + stats + normalize + modulate + residual;
    return cost;
}

BlockCost count_block_cost(const CaimBlock& block, std::size_t h, std::size_t w) {
    return count_block_cost(block.channels(), h, w);
}

}  // namespace caim
