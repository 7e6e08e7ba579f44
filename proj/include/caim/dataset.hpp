#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "caim/network.hpp"
#include "caim/rng.hpp"

namespace caim {

struct DatasetParams {
    std::size_t n_identities = 60;
    std::size_t samples_per_identity = 6;  // per modality
    double gap_strength = 0.8;             // in [0, 1]
    std::size_t latent_dim = 16;
    std::size_t image_size = 32;
    double intra_class_stddev = 0.05;
    double decoder_gain = 1.2;
    std::uint64_t seed = 0;
};

// Photometric warp defining one modality. The source transform is the
// identity; the target transform interpolates between identity (gap 0) and
// luminance collapse + gamma 0.6 + contrast 1.5 + blur + noise (gap 1), so
// the no-gap limit renders both modalities identically.
struct ModalityTransform {
    Modality kind = Modality::source;
    bool channel_collapse = false;
    double gamma_exponent = 1.0;
    double contrast_gain = 1.0;
    double blur_sigma = 0.0;
    std::size_t blur_radius = 0;
    double noise_amplitude = 0.0;

    static ModalityTransform source();
    static ModalityTransform target_for_gap(double gap_strength);
    bool is_identity() const;
};

// Paired two-modality identity dataset rendered from unit-norm latents
// through a fixed seeded linear decoder with tanh squashing. Values are
// stored at 32-bit float precision (the on-disk format), in [0, 1].
class SynthDataset {
  public:
    const DatasetParams& params() const { return params_; }
    const ModalityTransform& target_transform() const { return target_tf_; }
    std::size_t channels(Modality m) const {
        return m == Modality::target && target_tf_.channel_collapse ? 1 : 3;
    }
    std::size_t image_size() const { return params_.image_size; }

    const std::vector<double>& image(std::size_t identity, Modality m, std::size_t sample) const;
    const std::vector<std::vector<double>>& latents() const { return latents_; }

    std::vector<std::size_t> all_ids() const;

  private:
    DatasetParams params_;
    ModalityTransform target_tf_;
    std::vector<std::vector<double>> latents_;
    std::vector<std::vector<double>> source_images_;  // [id * S + k]
    std::vector<std::vector<double>> target_images_;

    friend SynthDataset generate_dataset(const DatasetParams& params);
    friend SynthDataset load_dataset(const std::string& dir);
};

SynthDataset generate_dataset(const DatasetParams& params);

// Directory layout: manifest.json + samples/id####_{src,tgt}_##.f32 holding
// raw little-endian float32 planes, row-major C x H x W.
void save_dataset(const SynthDataset& ds, const std::string& dir);
SynthDataset load_dataset(const std::string& dir);

struct SampleRef {
    std::size_t identity;
    Modality modality;
    std::size_t index;
};

// Disjoint-identity fold: gallery enrolls source-modality samples of the
// eval identities, probes are their target-modality samples.
struct ProtocolSplit {
    std::size_t fold = 0;
    std::vector<std::size_t> train_ids;
    std::vector<std::size_t> eval_ids;
    std::vector<SampleRef> gallery;
    std::vector<SampleRef> probes;
};

std::vector<ProtocolSplit> make_protocol(const SynthDataset& ds, std::size_t n_folds,
                                         double train_fraction, std::uint64_t seed);
void save_protocols(const std::vector<ProtocolSplit>& folds, const std::string& dir);
std::vector<ProtocolSplit> load_protocols(const std::string& dir);

// Compact-labeled image batch for the identities listed (label = index into
// `ids`), restricted to `sample_indices` of each identity.
LabeledImages collect_images(const SynthDataset& ds, const std::vector<std::size_t>& ids,
                             Modality m, const std::vector<std::size_t>& sample_indices);

}  // namespace caim
