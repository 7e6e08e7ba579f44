#pragma once

#include "caim/tensor.hpp"

namespace caim {

class CaimBlock;

// Per-channel affine of an instance-norm layer. In affine-free mode gamma/beta
// are pinned to 1/0 and never trainable.
struct InstanceNormParams {
    Tensor gamma;
    Tensor beta;
    bool affine = false;

    static InstanceNormParams affine_free(std::size_t channels);
    static InstanceNormParams learnable(std::size_t channels);
};

// gamma * (x - mu(x)) / sigma(x) + beta with per-(sample, channel) spatial
// statistics, sigma = sqrt(population variance + epsilon).
Tensor instance_norm(const Tensor& x, const InstanceNormParams& params, double epsilon);

// sigma(style) * (x - mu(x)) / sigma(x) + mu(style); spatial extents of
// content and style may differ, channel counts must match.
Tensor adain(const Tensor& content, const Tensor& style, double epsilon);

enum class UncondVariant { instance_norm, aim };

// The ablation path: applies IN or AIM to every input, with no gate and no
// residual. AIM requires a block to take its modulation parameters from.
Tensor unconditional_forward(const Tensor& x, UncondVariant variant, const CaimBlock* block,
                             double epsilon);

}  // namespace caim
