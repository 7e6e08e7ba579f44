#pragma once

#include <map>
#include <string>
#include <vector>

namespace caim {

// Similarity scores, higher = more alike. Both lists must be non-empty for
// the threshold metrics.
struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> impostor;
};

struct RocPoint {
    double threshold;
    double far;  // fraction of impostor scores >= threshold
    double tar;  // fraction of genuine scores >= threshold
};

// Points in ascending threshold order over the distinct observed scores plus
// -inf/+inf sentinels; FAR and TAR are non-increasing along the sweep.
std::vector<RocPoint> roc(const ScoreSet& scores);

// Trapezoidal area under TAR vs FAR, as a percentage.
double auc(const std::vector<RocPoint>& curve);

// FAR = FRR crossing as a percentage. On the discrete sweep: (FAR + FRR)/2 at
// the first threshold minimizing |FAR - FRR| in ascending threshold order.
double eer(const ScoreSet& scores);

// Closed-set identification: a probe is correct when its most similar gallery
// template (cosine similarity, ties to the lowest gallery index) shares its
// identity. Every probe identity must appear in the gallery.
double rank1(const std::vector<std::vector<double>>& gallery_embeddings,
             const std::vector<std::size_t>& gallery_ids,
             const std::vector<std::vector<double>>& probe_embeddings,
             const std::vector<std::size_t>& probe_ids);

struct VrPoint {
    double far_target_percent;
    double tar_percent;
    double realized_far_percent;
    bool under_resolved;  // impostor count too small to resolve the target
};

// Verification rate at the smallest threshold with FAR <= target (never
// overstates); realized FAR reported alongside.
std::vector<VrPoint> vr_at_far(const ScoreSet& scores,
                               const std::vector<double>& far_targets_percent);

struct FoldReport {
    std::vector<std::map<std::string, double>> folds;
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;  // sample std (n-1), 0 for a single fold
};

FoldReport aggregate_folds(const std::vector<std::map<std::string, double>>& per_fold);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace caim
