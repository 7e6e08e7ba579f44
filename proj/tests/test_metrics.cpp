#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <limits>

#include "caim/metrics.hpp"
#include "caim/rng.hpp"
#include "doctest.h"

using namespace caim;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Brute-force counting oracle over the same threshold set the library sweeps:
// all distinct observed scores plus the two sentinels.
struct OraclePoint {
    double t, far, tar;
};

std::vector<OraclePoint> oracle_sweep(const ScoreSet& s) {
    std::vector<double> ths;
    ths.push_back(-kInf);
    for (double v : s.genuine) ths.push_back(v);
    for (double v : s.impostor) ths.push_back(v);
    std::sort(ths.begin(), ths.end());
    ths.erase(std::unique(ths.begin(), ths.end()), ths.end());
    ths.push_back(kInf);
    std::vector<OraclePoint> out;
    for (double t : ths) {
        std::size_t fa = 0, ta = 0;
        for (double v : s.impostor)
            if (v >= t) ++fa;
        for (double v : s.genuine)
            if (v >= t) ++ta;
        out.push_back(OraclePoint{t, double(fa) / double(s.impostor.size()),
                                  double(ta) / double(s.genuine.size())});
    }
    return out;
}

double oracle_auc_mann_whitney(const ScoreSet& s) {
    double wins = 0.0;
    for (double g : s.genuine)
        for (double i : s.impostor) wins += g > i ? 1.0 : (g == i ? 0.5 : 0.0);
    return 100.0 * wins / (double(s.genuine.size()) * double(s.impostor.size()));
}

double oracle_eer(const ScoreSet& s) {
    double best_gap = kInf, best = 0.0;
    for (const OraclePoint& p : oracle_sweep(s)) {
        double frr = 1.0 - p.tar;
        if (std::fabs(p.far - frr) < best_gap) {
            best_gap = std::fabs(p.far - frr);
            best = (p.far + frr) / 2.0;
        }
    }
    return 100.0 * best;
}

double oracle_vr(const ScoreSet& s, double target_percent, double* realized) {
    for (const OraclePoint& p : oracle_sweep(s))
        if (p.far <= target_percent / 100.0) {
            *realized = 100.0 * p.far;
            return 100.0 * p.tar;
        }
    return 0.0;
}

ScoreSet random_scores(Rng& rng, std::size_t n_gen, std::size_t n_imp, bool with_ties) {
    ScoreSet s;
    for (std::size_t i = 0; i < n_gen; ++i) s.genuine.push_back(rng.uniform(-1.0, 1.0));
    for (std::size_t i = 0; i < n_imp; ++i) s.impostor.push_back(rng.uniform(-1.2, 0.8));
    if (with_ties) {
        // quantize so duplicate scores appear within and across the lists
        for (double& v : s.genuine) v = std::round(v * 8.0) / 8.0;
        for (double& v : s.impostor) v = std::round(v * 8.0) / 8.0;
    }
    return s;
}

}  // namespace

TEST_CASE("roc: separable scores admit a perfect operating point") {
    ScoreSet s{{0.9, 0.8}, {0.1, 0.2}};
    bool perfect = false;
    for (const RocPoint& p : roc(s)) perfect = perfect || (p.far == 0.0 && p.tar == 1.0);
    CHECK(perfect);
    CHECK_THROWS_AS(roc(ScoreSet{{}, {0.1}}), std::invalid_argument);
    CHECK_THROWS_AS(roc(ScoreSet{{0.1}, {}}), std::invalid_argument);
}

TEST_CASE("roc: identical distributions sit on the diagonal") {
    ScoreSet s{{0.1, 0.5, 0.9}, {0.1, 0.5, 0.9}};
    for (const RocPoint& p : roc(s)) CHECK(p.far == p.tar);
    CHECK(auc(roc(s)) == doctest::Approx(50.0));
}

TEST_CASE("roc/auc/eer/vr agree exactly with the brute-force oracle on 50 random sets") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(mix_keys({seed, tag("metric-oracle")}));
        ScoreSet s = random_scores(rng, 3 + rng.below(47), 3 + rng.below(47), seed % 2 == 0);

        auto got = roc(s);
        auto want = oracle_sweep(s);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].threshold == want[i].t);
            CHECK(got[i].far == want[i].far);
            CHECK(got[i].tar == want[i].tar);
        }
        CHECK(eer(s) == oracle_eer(s));
        CHECK(auc(got) == doctest::Approx(oracle_auc_mann_whitney(s)).epsilon(1e-12));

        double realized = 0.0;
        for (double target : {5.0, 1.0, 0.1}) {
            auto vr = vr_at_far(s, {target});
            double want_tar = oracle_vr(s, target, &realized);
            CHECK(vr[0].tar_percent == want_tar);
            CHECK(vr[0].realized_far_percent == realized);
            CHECK(vr[0].realized_far_percent <= target);
        }

        // auc + pairwise disagreement (ties half) == 1
        double disagree = 0.0;
        for (double g : s.genuine)
            for (double i : s.impostor) disagree += g < i ? 1.0 : (g == i ? 0.5 : 0.0);
        disagree /= double(s.genuine.size()) * double(s.impostor.size());
        CHECK(auc(got) / 100.0 + disagree == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("auc: separable, chance and the hand-computed pair case") {
    CHECK(auc(roc(ScoreSet{{0.9, 0.8}, {0.1, 0.2}})) == 100.0);
    // genuine {0.9, 0.4}, impostor {0.6, 0.1}: 3 of 4 pairs ordered correctly
    CHECK(auc(roc(ScoreSet{{0.9, 0.4}, {0.6, 0.1}})) == doctest::Approx(75.0).epsilon(1e-12));
}

TEST_CASE("eer: separable is zero; hand case crosses at 50; role swap is symmetric") {
    CHECK(eer(ScoreSet{{0.9, 0.8}, {0.1, 0.2}}) == 0.0);
    ScoreSet s{{0.9, 0.4}, {0.6, 0.1}};
    CHECK(eer(s) == doctest::Approx(50.0).epsilon(1e-12));

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_keys({seed, tag("eer-swap")}));
        ScoreSet a = random_scores(rng, 20, 30, false);
        ScoreSet swapped{a.impostor, a.genuine};
        CHECK(auc(roc(a)) == doctest::Approx(100.0 - auc(roc(swapped))).epsilon(1e-12));
    }
}

TEST_CASE("threshold metrics are invariant under strictly increasing score transforms") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_keys({seed, tag("monotone")}));
        ScoreSet s = random_scores(rng, 25, 40, true);
        auto warp = [](double x) { return std::exp(0.7 * x) + 0.3 * x; };
        ScoreSet w;
        for (double v : s.genuine) w.genuine.push_back(warp(v));
        for (double v : s.impostor) w.impostor.push_back(warp(v));
        CHECK(eer(s) == doctest::Approx(eer(w)).epsilon(1e-12));
        CHECK(auc(roc(s)) == doctest::Approx(auc(roc(w))).epsilon(1e-12));
        auto va = vr_at_far(s, {1.0}), vb = vr_at_far(w, {1.0});
        CHECK(va[0].tar_percent == vb[0].tar_percent);
    }
}

TEST_CASE("rank1: self-match, one-hot case, hand-built misordering, tie break") {
    std::vector<std::vector<double>> gallery = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    std::vector<std::size_t> ids = {7, 8, 9};
    CHECK(rank1(gallery, ids, gallery, ids) == 100.0);

    // probe 2 points at identity 7's template instead of its own
    std::vector<std::vector<double>> probes = {{0.9, 0.1, 0.0}, {0.0, 1.0, 0.1}, {0.8, 0.0, 0.3}};
    CHECK(rank1(gallery, ids, probes, ids) == doctest::Approx(100.0 * 2 / 3));

    // exact tie between gallery 0 and 1: lowest index wins
    std::vector<std::vector<double>> tie_gallery = {{1, 0}, {1, 0}};
    std::vector<std::size_t> tie_ids = {5, 6};
    std::vector<std::vector<double>> tie_probe = {{1, 0}};
    CHECK(rank1(tie_gallery, tie_ids, tie_probe, {5}) == 100.0);
    CHECK(rank1(tie_gallery, tie_ids, tie_probe, {6}) == 0.0);

    CHECK_THROWS_AS(rank1(gallery, ids, probes, {7, 8, 11}), std::invalid_argument);
}

TEST_CASE("rank1 is invariant to gallery reordering away from ties") {
    Rng rng(mix_keys({4, tag("rank1-order")}));
    std::vector<std::vector<double>> gallery, probes;
    std::vector<std::size_t> gids, pids;
    for (std::size_t i = 0; i < 12; ++i) {
        std::vector<double> e(8);
        for (double& v : e) v = rng.uniform(-1.0, 1.0);
        gallery.push_back(e);
        gids.push_back(i % 6);
    }
    for (std::size_t i = 0; i < 9; ++i) {
        std::vector<double> e(8);
        for (double& v : e) v = rng.uniform(-1.0, 1.0);
        probes.push_back(e);
        pids.push_back(i % 6);
    }
    double base = rank1(gallery, gids, probes, pids);
    std::vector<std::size_t> perm(gallery.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<std::vector<double>> g2;
    std::vector<std::size_t> id2;
    for (std::size_t i : perm) {
        g2.push_back(gallery[i]);
        id2.push_back(gids[i]);
    }
    CHECK(rank1(g2, id2, probes, pids) == base);
}

TEST_CASE("vr_at_far: separable scores verify everyone at 1% FAR") {
    ScoreSet s{{0.9, 0.8, 0.7}, {0.1, 0.2}};
    auto vr = vr_at_far(s, {1.0, 0.1});
    CHECK(vr[0].tar_percent == 100.0);
    CHECK(vr[1].tar_percent == 100.0);
    CHECK(vr[0].under_resolved);  // 2 impostors cannot resolve 1%
    CHECK_THROWS_AS(vr_at_far(ScoreSet{{0.5}, {}}, {1.0}), std::invalid_argument);
}

TEST_CASE("vr_at_far: realized FAR sits within one score quantile of the target") {
    Rng rng(mix_keys({11, tag("vr-quantile")}));
    ScoreSet s;
    for (std::size_t i = 0; i < 200; ++i) s.genuine.push_back(rng.normal(0.7, 0.2));
    for (std::size_t i = 0; i < 1000; ++i) s.impostor.push_back(rng.normal(0.0, 0.2));
    auto vr = vr_at_far(s, {1.0});
    CHECK(vr[0].realized_far_percent <= 1.0);
    CHECK(vr[0].realized_far_percent >= 1.0 - 100.0 / 1000.0);
    CHECK(!vr[0].under_resolved);
}

TEST_CASE("aggregate_folds: degenerate, hand formula and n=1 rule") {
    std::map<std::string, double> a{{"rank1", 80.0}}, b{{"rank1", 90.0}};
    FoldReport r = aggregate_folds({a, b});
    CHECK(r.mean["rank1"] == doctest::Approx(85.0));
    CHECK(r.stddev["rank1"] == doctest::Approx(7.0711).epsilon(1e-4));

    FoldReport same = aggregate_folds({a, a, a});
    CHECK(same.stddev["rank1"] == 0.0);

    FoldReport single = aggregate_folds({b});
    CHECK(single.mean["rank1"] == 90.0);
    CHECK(single.stddev["rank1"] == 0.0);

    std::map<std::string, double> odd{{"eer", 5.0}};
    CHECK_THROWS_AS(aggregate_folds({a, odd}), std::invalid_argument);
}
