#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "caim/caim_block.hpp"
#include "caim/style_norm.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace caim;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

CaimBlock seeded_block(std::size_t channels, std::uint64_t seed) {
    Rng rng(mix_keys({seed, tag("test-block")}));
    return CaimBlock(channels, rng);
}

void zero_params(CaimBlock& b) {
    for (Tensor p : b.parameters()) std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
}

oracle::Map4 relu_map(oracle::Map4 m) {
    for (double& v : m.v) v = v > 0.0 ? v : 0.0;
    return m;
}

}  // namespace

TEST_CASE("style_features: zero parameters produce a zero style code") {
    CaimBlock b = seeded_block(2, 1);
    zero_params(b);
    Rng rng(5);
    Tensor f = random_tensor({2, 2, 4, 4}, rng);
    Tensor xi = style_features(b, f);
    CHECK(xi.shape() == Shape{2, 2});
    for (double v : xi.data()) CHECK(v == 0.0);
}

TEST_CASE("style_features: center-delta kernels reduce to the spatial mean") {
    CaimBlock b = seeded_block(3, 2);
    zero_params(b);
    for (std::size_t c = 0; c < 3; ++c) {
        b.conv1_weight.mutable_data()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
        b.conv2_weight.mutable_data()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
    }
    Rng rng(6);
    Tensor f = random_tensor({1, 3, 5, 5}, rng, 0.1, 2.0);  // positive, relu is transparent
    Tensor xi = style_features(b, f);
    oracle::Map4 m{1, 3, 5, 5, f.data()};
    auto gap = oracle::global_average_pool(m);
    CHECK(max_abs_diff(xi.data(), gap) <= 1e-12);
}

TEST_CASE("style_features matches the composed loop oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CaimBlock b = seeded_block(3, mix_keys({seed, tag("compose")}));
        Rng rng(mix_keys({seed, tag("compose-input")}));
        Tensor f = random_tensor({2, 3, 6, 6}, rng, -2.0, 2.0);

        oracle::Map4 m{2, 3, 6, 6, f.data()};
        auto h1 = relu_map(oracle::conv2d(m, 3, b.conv1_weight.data(), b.conv1_bias.data(), 3, 1, 1));
        auto h2 = relu_map(oracle::conv2d(h1, 3, b.conv2_weight.data(), b.conv2_bias.data(), 3, 1, 1));
        auto ref = oracle::global_average_pool(h2);

        CHECK(max_abs_diff(style_features(b, f).data(), ref) <= 1e-10);
    }
    CHECK_THROWS_AS(style_features(seeded_block(3, 0), Tensor::zeros({1, 2, 4, 4})),
                    std::invalid_argument);
}

TEST_CASE("modulation_params: zero, identity and oracle cases") {
    CaimBlock b = seeded_block(3, 3);
    zero_params(b);
    ModulationParams mp = modulation_params(b, Tensor::zeros({2, 3}));
    for (double v : mp.sigma_f.data()) CHECK(v == 0.0);
    for (double v : mp.mu_f.data()) CHECK(v == 0.0);

    for (std::size_t c = 0; c < 3; ++c) {
        b.fc_sigma_weight.mutable_data()[c * 3 + c] = 1.0;
        b.fc_mu_weight.mutable_data()[c * 3 + c] = 1.0;
    }
    Rng rng(8);
    Tensor xi = random_tensor({2, 3}, rng);
    ModulationParams id = modulation_params(b, xi);
    CHECK(max_abs_diff(id.sigma_f.data(), xi.data()) == 0.0);
    CHECK(max_abs_diff(id.mu_f.data(), xi.data()) == 0.0);

    CaimBlock r = seeded_block(3, 4);
    ModulationParams mr = modulation_params(r, xi);
    auto ref_s = oracle::dense(xi.data(), 2, 3, r.fc_sigma_weight.data(), 3, r.fc_sigma_bias.data());
    auto ref_m = oracle::dense(xi.data(), 2, 3, r.fc_mu_weight.data(), 3, r.fc_mu_bias.data());
    CHECK(max_abs_diff(mr.sigma_f.data(), ref_s) <= 1e-12);
    CHECK(max_abs_diff(mr.mu_f.data(), ref_m) <= 1e-12);
}

TEST_CASE("aim: zero heads annihilate, constant maps give mu_f") {
    CaimBlock b = seeded_block(2, 5);
    zero_params(b);
    Rng rng(9);
    Tensor f = random_tensor({1, 2, 4, 4}, rng);
    Tensor out = aim(b, f);
    for (double v : out.data()) CHECK(v == 0.0);

    CaimBlock r = seeded_block(2, 6);
    Tensor constant = Tensor::full({1, 2, 3, 3}, 2.5);
    ModulationParams mp = modulation_params(r, style_features(r, constant));
    Tensor got = aim(r, constant);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t j = 0; j < 9; ++j)
            CHECK(got.data()[c * 9 + j] == doctest::Approx(mp.mu_f.data()[c]).epsilon(1e-12));
}

TEST_CASE("aim equals the composition of its three stages") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CaimBlock b = seeded_block(3, mix_keys({seed, tag("aim-comp")}));
        Rng rng(mix_keys({seed, tag("aim-comp-in")}));
        Tensor f = random_tensor({2, 3, 5, 5}, rng, -2.0, 2.0);

        ModulationParams mp = modulation_params(b, style_features(b, f));
        Tensor normed = instance_norm(f, InstanceNormParams::affine_free(3), b.epsilon());
        Tensor ref = add(mul(normed, reshape(mp.sigma_f, {2, 3, 1, 1})),
                         reshape(mp.mu_f, {2, 3, 1, 1}));
        CHECK(max_abs_diff(aim(b, f).data(), ref.data()) <= 1e-12);
    }
}

TEST_CASE("caim_forward: gate off is a bit-exact identity with zero parameter gradients") {
    CaimBlock b = seeded_block(4, 7);
    Rng rng(10);
    Tensor f = random_tensor({2, 4, 5, 5}, rng, -3.0, 3.0, true);
    Tensor out = caim_forward(b, f, false);
    CHECK(out.node().get() == f.node().get());  // same tensor, not a copy

    sum(out).backward();
    for (const Tensor& p : b.parameters()) CHECK(!p.has_grad());
    for (double g : f.grad()) CHECK(g == 1.0);
}

TEST_CASE("caim_forward: zero block with gate on returns the input exactly") {
    CaimBlock b = seeded_block(2, 8);
    zero_params(b);
    Rng rng(11);
    Tensor f = random_tensor({1, 2, 4, 4}, rng);
    CHECK(max_abs_diff(caim_forward(b, f, true).data(), f.data()) == 0.0);
}

TEST_CASE("caim_forward: residual decomposition") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CaimBlock b = seeded_block(3, mix_keys({seed, tag("resid")}));
        Rng rng(mix_keys({seed, tag("resid-in")}));
        Tensor f = random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0);
        Tensor gated = caim_forward(b, f, true);
        Tensor branch = aim(b, f);
        for (std::size_t i = 0; i < f.size(); ++i)
            CHECK(gated.data()[i] - f.data()[i] ==
                  doctest::Approx(branch.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("aim keeps the normalized intermediate at mean 0, std 1") {
    CaimBlock b = seeded_block(3, 12);
    Rng rng(13);
    Tensor f = random_tensor({2, 3, 6, 6}, rng, -2.0, 2.0);
    Tensor normed = instance_norm(f, InstanceNormParams::affine_free(3), b.epsilon());
    oracle::Map4 m{2, 3, 6, 6, normed.data()};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            double mean, sd;
            oracle::spatial_stats(m, i, c, 0.0, &mean, &sd);
            CHECK(std::fabs(mean) <= 1e-6);
            CHECK(sd >= 1.0 - 1e-3);
            CHECK(sd <= 1.0);
        }
}

TEST_CASE("count_block_cost: closed-form parameter count") {
    CHECK(count_block_cost(16, 8, 8).params == 5184);
    CHECK(count_block_cost(1, 8, 8).params == 24);
    for (std::size_t c : {std::size_t{1}, std::size_t{4}, std::size_t{16}, std::size_t{64}})
        CHECK(count_block_cost(c, 4, 4).params ==
              static_cast<std::int64_t>(2 * (9 * c * c + c) + 2 * (c * c + c)));

    // params equals the number of trainable scalars the block actually holds
    CaimBlock b = seeded_block(16, 14);
    std::int64_t scalars = 0;
    for (const Tensor& p : b.parameters()) {
        CHECK(p.requires_grad());
        scalars += static_cast<std::int64_t>(p.size());
    }
    CHECK(scalars == count_block_cost(b, 8, 8).params);
}

TEST_CASE("count_block_cost: spatial flops scale linearly with the map area") {
    const std::size_t c = 16;
    auto f = [&](std::size_t h, std::size_t w) { return count_block_cost(c, h, w).flops; };
    // fixed-cost part = two dense heads plus the per-channel constants of
    // GAP (divide), stats (two divides, eps add, sqrt); everything else is
    // per-pixel
    const std::int64_t fixed = 2 * static_cast<std::int64_t>(c) * (2 * c + 1) + 5 * c;
    CHECK(f(16, 8) - fixed == 2 * (f(8, 8) - fixed));
    CHECK(f(8, 16) - fixed == 2 * (f(8, 8) - fixed));
    CHECK(f(32, 8) - fixed == 4 * (f(8, 8) - fixed));
}

TEST_CASE("full-block gradient check, C=4 on a 2x4x6x6 input") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        CaimBlock b = seeded_block(4, mix_keys({seed, tag("block-fd")}));
        Rng rng(mix_keys({seed, tag("block-fd-in")}));
        Tensor f = random_tensor({2, 4, 6, 6}, rng, -2.0, 2.0, true);
        std::vector<Tensor> params = b.parameters();
        params.push_back(f);
        worst = std::max(worst, gradcheck::check(
                                    [&]() {
                                        Tensor y = caim_forward(b, f, true);
                                        return sum(mul(y, y));
                                    },
                                    params, 40, seed));
    }
    CHECK(worst <= 1e-4);
    MESSAGE("caim block gradcheck worst rel err: ", worst);
}
