#include "caim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace caim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate(const ScoreSet& scores) {
    if (scores.genuine.empty() || scores.impostor.empty())
        throw std::invalid_argument("metrics: genuine and impostor score lists must be non-empty");
    for (double v : scores.genuine)
        if (!std::isfinite(v)) throw std::invalid_argument("metrics: non-finite genuine score");
    for (double v : scores.impostor)
        if (!std::isfinite(v)) throw std::invalid_argument("metrics: non-finite impostor score");
}

// fraction of sorted values >= t
double frac_at_least(const std::vector<double>& sorted, double t) {
    if (t == -kInf) return 1.0;
    if (t == kInf) return 0.0;
    auto it = std::lower_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(sorted.end() - it) / static_cast<double>(sorted.size());
}

}  // namespace

std::vector<RocPoint> roc(const ScoreSet& scores) {
    validate(scores);
    std::vector<double> thresholds;
    thresholds.reserve(scores.genuine.size() + scores.impostor.size() + 2);
    thresholds.push_back(-kInf);
    thresholds.insert(thresholds.end(), scores.genuine.begin(), scores.genuine.end());
    thresholds.insert(thresholds.end(), scores.impostor.begin(), scores.impostor.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.push_back(kInf);

    std::vector<double> gen = scores.genuine, imp = scores.impostor;
    std::sort(gen.begin(), gen.end());
    std::sort(imp.begin(), imp.end());

    std::vector<RocPoint> curve;
    curve.reserve(thresholds.size());
    for (double t : thresholds)
        curve.push_back(RocPoint{t, frac_at_least(imp, t), frac_at_least(gen, t)});
    return curve;
}

double auc(const std::vector<RocPoint>& curve) {
    if (curve.size() < 2) throw std::invalid_argument("auc: need at least two curve points");
    // ascending threshold = descending FAR; integrate TAR dFAR
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < curve.size(); ++i)
        area += (curve[i].far - curve[i + 1].far) * (curve[i].tar + curve[i + 1].tar) * 0.5;
    return 100.0 * area;
}

double eer(const ScoreSet& scores) {
    std::vector<RocPoint> curve = roc(scores);
    double best_gap = kInf;
    double best_value = 0.0;
    for (const RocPoint& p : curve) {
        double frr = 1.0 - p.tar;
        double gap = std::fabs(p.far - frr);
        if (gap < best_gap) {
            best_gap = gap;
            best_value = (p.far + frr) / 2.0;
        }
    }
    return 100.0 * best_value;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("cosine_similarity: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_similarity: zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double rank1(const std::vector<std::vector<double>>& gallery_embeddings,
             const std::vector<std::size_t>& gallery_ids,
             const std::vector<std::vector<double>>& probe_embeddings,
             const std::vector<std::size_t>& probe_ids) {
    if (gallery_embeddings.size() != gallery_ids.size() ||
        probe_embeddings.size() != probe_ids.size())
        throw std::invalid_argument("rank1: embeddings and identity lists must align");
    if (gallery_embeddings.empty() || probe_embeddings.empty())
        throw std::invalid_argument("rank1: empty gallery or probe set");
    for (std::size_t pid : probe_ids)
        if (std::find(gallery_ids.begin(), gallery_ids.end(), pid) == gallery_ids.end())
            throw std::invalid_argument("rank1: probe identity " + std::to_string(pid) +
                                        " absent from the gallery (closed-set protocol)");
    std::size_t correct = 0;
    for (std::size_t p = 0; p < probe_embeddings.size(); ++p) {
        std::size_t best = 0;
        double best_sim = -kInf;
        for (std::size_t g = 0; g < gallery_embeddings.size(); ++g) {
            double sim = cosine_similarity(probe_embeddings[p], gallery_embeddings[g]);
            if (sim > best_sim) {  // ties keep the lowest gallery index
                best_sim = sim;
                best = g;
            }
        }
        if (gallery_ids[best] == probe_ids[p]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(probe_embeddings.size());
}

std::vector<VrPoint> vr_at_far(const ScoreSet& scores,
                               const std::vector<double>& far_targets_percent) {
    std::vector<RocPoint> curve = roc(scores);
    const double resolution = 1.0 / static_cast<double>(scores.impostor.size());
    std::vector<VrPoint> out;
    for (double target : far_targets_percent) {
        double target_frac = target / 100.0;
        // ascending thresholds: FAR non-increasing, take the first admissible
        const RocPoint* chosen = nullptr;
        for (const RocPoint& p : curve)
            if (p.far <= target_frac) {
                chosen = &p;
                break;
            }
        out.push_back(VrPoint{target, 100.0 * chosen->tar, 100.0 * chosen->far,
                              target_frac > 0.0 && resolution > target_frac});
    }
    return out;
}

FoldReport aggregate_folds(const std::vector<std::map<std::string, double>>& per_fold) {
    if (per_fold.empty()) throw std::invalid_argument("aggregate_folds: no folds");
    for (const auto& fold : per_fold) {
        if (fold.size() != per_fold.front().size())
            throw std::invalid_argument("aggregate_folds: inconsistent metric keys across folds");
        for (const auto& [key, value] : fold)
            if (!per_fold.front().count(key))
                throw std::invalid_argument("aggregate_folds: inconsistent metric keys across folds");
    }
    FoldReport report;
    report.folds = per_fold;
    const double n = static_cast<double>(per_fold.size());
    for (const auto& [key, first_value] : per_fold.front()) {
        double sum = 0.0;
        for (const auto& fold : per_fold) sum += fold.at(key);
        double mean = sum / n;
        double var = 0.0;
        if (per_fold.size() > 1) {
            for (const auto& fold : per_fold) {
                double d = fold.at(key) - mean;
                var += d * d;
            }
            var /= (n - 1.0);
        }
        report.mean[key] = mean;
        report.stddev[key] = std::sqrt(var);
    }
    return report;
}

}  // namespace caim
