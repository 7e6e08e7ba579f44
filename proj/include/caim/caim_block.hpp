#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "caim/rng.hpp"
#include "caim/tensor.hpp"

namespace caim {

// Per-sample modulation parameters predicted from the feature map itself,
// both N x C. No positivity constraint on sigma_f.
struct ModulationParams {
    Tensor sigma_f;
    Tensor mu_f;
};

// One modulation block: a two-conv style extractor feeding two dense heads
// that scale/shift the instance-normalized input map. Channel width is
// preserved throughout, so the heads are C -> C.
class CaimBlock {
  public:
    // All weights uniform fan-in; the head biases start at zero so an
    // untrained block modulates near zero and the residual path dominates.
    CaimBlock(std::size_t channels, Rng& rng);

    std::size_t channels() const { return channels_; }
    double epsilon() const { return 1e-5; }

    // Fixed order, matching named_parameters.
    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

    Tensor conv1_weight, conv1_bias;
    Tensor conv2_weight, conv2_bias;
    Tensor fc_sigma_weight, fc_sigma_bias;
    Tensor fc_mu_weight, fc_mu_bias;

  private:
    std::size_t channels_;
};

// xi = GAP(relu(conv2(relu(conv1(f))))), computed from the raw un-normalized
// input map. Shape N x C.
Tensor style_features(const CaimBlock& block, const Tensor& f);

ModulationParams modulation_params(const CaimBlock& block, const Tensor& xi);

// sigma_f * (f - mu(f)) / sigma(f) + mu_f, with the modulation parameters
// derived from f via style_features -> modulation_params.
Tensor aim(const CaimBlock& block, const Tensor& f);

// gate on: f + aim(f). gate off: f returned as-is; the modulation branch is
// never evaluated, so the identity is bit-exact and no gradient can reach the
// block parameters.
Tensor caim_forward(const CaimBlock& block, const Tensor& f, bool gate);

struct BlockCost {
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

// Parameter and flop cost of one block applied to an h x w map (per sample).
// Convention: one multiply-accumulate = 2 flops; bias adds, relu, divisions
// and the normalization arithmetic are counted as 1 flop per element.
// params = 2*(9C^2 + C) + 2*(C^2 + C).
BlockCost count_block_cost(const CaimBlock& block, std::size_t h, std::size_t w);
BlockCost count_block_cost(std::size_t channels, std::size_t h, std::size_t w);

}  // namespace caim
