#include "caim/style_norm.hpp"

#include <stdexcept>

#include "caim/caim_block.hpp"

namespace caim {

InstanceNormParams InstanceNormParams::affine_free(std::size_t channels) {
    InstanceNormParams p;
    p.gamma = Tensor::full({channels}, 1.0);
    p.beta = Tensor::zeros({channels});
    p.affine = false;
    return p;
}

InstanceNormParams InstanceNormParams::learnable(std::size_t channels) {
    InstanceNormParams p;
    p.gamma = Tensor::full({channels}, 1.0, true);
    p.beta = Tensor::zeros({channels}, true);
    p.affine = true;
    return p;
}

Tensor instance_norm(const Tensor& x, const InstanceNormParams& params, double epsilon) {
    if (x.rank() != 4)
        throw std::invalid_argument("instance_norm: input must be N x C x H x W, got " +
                                    shape_str(x.shape()));
    const std::size_t n = x.shape()[0], c = x.shape()[1];
    if (params.gamma.size() != c || params.beta.size() != c)
        throw std::invalid_argument("instance_norm: affine parameters sized " +
                                    std::to_string(params.gamma.size()) + " for " +
                                    std::to_string(c) + " channels");
    ChannelStats st = instance_stats(x, epsilon);
    Tensor normalized = div(sub(x, reshape(st.mean, {n, c, 1, 1})), reshape(st.std, {n, c, 1, 1}));
    if (!params.affine) return normalized;
    Tensor g = reshape(params.gamma, {1, c, 1, 1});
    Tensor b = reshape(params.beta, {1, c, 1, 1});
    return add(mul(normalized, g), b);
}

Tensor adain(const Tensor& content, const Tensor& style, double epsilon) {
    if (content.rank() != 4 || style.rank() != 4)
        throw std::invalid_argument("adain: inputs must be N x C x H x W");
    if (content.shape()[0] != style.shape()[0] || content.shape()[1] != style.shape()[1])
        throw std::invalid_argument("adain: content " + shape_str(content.shape()) +
                                    " and style " + shape_str(style.shape()) +
                                    " disagree on batch or channels");
    const std::size_t n = content.shape()[0], c = content.shape()[1];
    ChannelStats cs = instance_stats(content, epsilon);
    ChannelStats ss = instance_stats(style, epsilon);
    Tensor normalized =
        div(sub(content, reshape(cs.mean, {n, c, 1, 1})), reshape(cs.std, {n, c, 1, 1}));
    return add(mul(normalized, reshape(ss.std, {n, c, 1, 1})), reshape(ss.mean, {n, c, 1, 1}));
}

Tensor unconditional_forward(const Tensor& x, UncondVariant variant, const CaimBlock* block,
                             double epsilon) {
    if (variant == UncondVariant::instance_norm) {
        if (x.rank() != 4) throw std::invalid_argument("unconditional_forward: rank-4 input");
        return instance_norm(x, InstanceNormParams::affine_free(x.shape()[1]), epsilon);
    }
    if (block == nullptr)
        throw std::invalid_argument("unconditional_forward: AIM variant requires a block");
    return aim(*block, x);
}

}  // namespace caim
