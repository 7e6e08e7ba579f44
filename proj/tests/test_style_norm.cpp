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

// per-(sample,channel) spatial mean/std of a rank-4 tensor, plain loops
void stats_of(const Tensor& t, std::size_t i, std::size_t c, double* mean, double* sd) {
    oracle::Map4 m{t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3], t.data()};
    oracle::spatial_stats(m, i, c, 0.0, mean, sd);
}

}  // namespace

TEST_CASE("instance_norm: hand case from population statistics") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = instance_norm(x, InstanceNormParams::affine_free(1), 1e-5);
    // (v - 2.5)/sqrt(1.25 + 1e-5)
    CHECK(y.data()[0] == doctest::Approx(-1.3416).epsilon(1e-3));
    CHECK(y.data()[1] == doctest::Approx(-0.4472).epsilon(1e-3));
    CHECK(y.data()[2] == doctest::Approx(0.4472).epsilon(1e-3));
    CHECK(y.data()[3] == doctest::Approx(1.3416).epsilon(1e-3));
}

TEST_CASE("instance_norm: constant map collapses to zero") {
    Tensor x = Tensor::full({2, 3, 4, 4}, 9.5);
    Tensor y = instance_norm(x, InstanceNormParams::affine_free(3), 1e-5);
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("instance_norm: learnable affine scales and shifts the normalized map") {
    Rng rng(41);
    Tensor x = random_tensor({2, 2, 5, 5}, rng, -3.0, 3.0);
    Tensor base = instance_norm(x, InstanceNormParams::affine_free(2), 1e-5);
    InstanceNormParams p = InstanceNormParams::learnable(2);
    p.gamma.mutable_data() = {2.0, 2.0};
    p.beta.mutable_data() = {5.0, 5.0};
    Tensor y = instance_norm(x, p, 1e-5);
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(2.0 * base.data()[i] + 5.0).epsilon(1e-12));
}

TEST_CASE("instance_norm: output statistics hit beta/gamma within tolerance") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_keys({seed, tag("in-stats")}));
        Tensor x = random_tensor({2, 3, 6, 6}, rng, -2.0, 2.0);  // variance well above 1e-2
        Tensor y = instance_norm(x, InstanceNormParams::affine_free(3), 1e-5);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t c = 0; c < 3; ++c) {
                double m, s;
                stats_of(y, i, c, &m, &s);
                CHECK(std::fabs(m) <= 1e-6);
                CHECK(s <= 1.0);
                CHECK(s >= 1.0 - 1e-3);
            }
    }
}

TEST_CASE("instance_norm is idempotent up to tolerance") {
    Rng rng(57);
    Tensor x = random_tensor({1, 2, 5, 5}, rng, -4.0, 4.0);
    InstanceNormParams p = InstanceNormParams::affine_free(2);
    Tensor once = instance_norm(x, p, 1e-5);
    Tensor twice = instance_norm(once, p, 1e-5);
    CHECK(max_abs_diff(once.data(), twice.data()) <= 1e-3);
}

TEST_CASE("adain: self-style is an identity up to epsilon") {
    Rng rng(71);
    Tensor x = random_tensor({1, 2, 4, 4}, rng, -2.0, 2.0);
    Tensor y = adain(x, x, 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-3));
}

TEST_CASE("adain: constant style collapses the output to that constant") {
    Rng rng(73);
    Tensor x = random_tensor({1, 2, 4, 4}, rng, -2.0, 2.0);
    Tensor style = Tensor::full({1, 2, 4, 4}, 3.25);
    Tensor y = adain(x, style, 1e-5);
    // style std collapses to sqrt(eps), so deviations are O(sqrt(eps))
    for (double v : y.data()) CHECK(v == doctest::Approx(3.25).epsilon(1e-2));
}

TEST_CASE("adain: output channel statistics match the style input") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_keys({seed, tag("adain-stats")}));
        Tensor x = random_tensor({1, 2, 4, 4}, rng, -1.0, 1.0);
        Tensor s = random_tensor({1, 2, 6, 6}, rng, -3.0, 1.5);  // different spatial extent
        Tensor y = adain(x, s, 1e-5);
        for (std::size_t c = 0; c < 2; ++c) {
            double my, sy, ms, ss;
            stats_of(y, 0, c, &my, &sy);
            stats_of(s, 0, c, &ms, &ss);
            CHECK(std::fabs(my - ms) <= 1e-6);
            CHECK(std::fabs(sy - ss) <= 1e-3);
        }
    }
}

TEST_CASE("adain rejects channel mismatch") {
    CHECK_THROWS_AS(adain(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 4, 4}), 1e-5),
                    std::invalid_argument);
}

TEST_CASE("unconditional variants reuse the gated forward paths") {
    Rng rng(83);
    Tensor x = random_tensor({2, 4, 5, 5}, rng, -2.0, 2.0);

    Tensor in_variant = unconditional_forward(x, UncondVariant::instance_norm, nullptr, 1e-5);
    Tensor in_direct = instance_norm(x, InstanceNormParams::affine_free(4), 1e-5);
    CHECK(max_abs_diff(in_variant.data(), in_direct.data()) == 0.0);

    Rng brng(mix_keys({83, tag("uncond-block")}));
    CaimBlock block(4, brng);
    Tensor aim_variant = unconditional_forward(x, UncondVariant::aim, &block, 1e-5);
    Tensor aim_direct = aim(block, x);
    CHECK(max_abs_diff(aim_variant.data(), aim_direct.data()) == 0.0);

    CHECK_THROWS_AS(unconditional_forward(x, UncondVariant::aim, nullptr, 1e-5),
                    std::invalid_argument);

    // unlike the gated block, the unconditional transform is not an identity
    CHECK(max_abs_diff(in_variant.data(), x.data()) > 0.1);
}

TEST_CASE("style-norm operations pass finite-difference checks over 20 seeds") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_keys({seed, tag("fd-style")}));
        Tensor x = random_tensor({2, 2, 4, 4}, rng, -2.0, 2.0, true);
        Tensor s = random_tensor({2, 2, 3, 3}, rng, -2.0, 2.0, true);
        InstanceNormParams learn = InstanceNormParams::learnable(2);
        learn.gamma.mutable_data() = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
        learn.beta.mutable_data() = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};

        worst = std::max(worst, gradcheck::check(
                                    [&]() {
                                        Tensor y = instance_norm(x, learn, 1e-5);
                                        return sum(mul(y, y));
                                    },
                                    {x, learn.gamma, learn.beta}));
        worst = std::max(worst, gradcheck::check(
                                    [&]() {
                                        Tensor y = adain(x, s, 1e-5);
                                        return sum(mul(y, y));
                                    },
                                    {x, s}));
    }
    CHECK(worst <= 1e-4);
    MESSAGE("style-norm gradcheck worst rel err: ", worst);
}
