#include "caim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace caim {

namespace fs = std::filesystem;
using nlohmann::json;

ModalityTransform ModalityTransform::source() { return ModalityTransform{}; }

ModalityTransform ModalityTransform::target_for_gap(double g) {
    if (g < 0.0 || g > 1.0)
        throw std::invalid_argument("gap_strength must lie in [0, 1], got " + std::to_string(g));
    ModalityTransform t;
    t.kind = Modality::target;
    t.channel_collapse = g > 0.0;
    t.gamma_exponent = 1.0 - 0.4 * g;
    t.contrast_gain = 1.0 + 0.5 * g;
    t.blur_sigma = 0.75 * g;
    t.blur_radius = t.blur_sigma > 0.0
                        ? static_cast<std::size_t>(std::ceil(2.5 * t.blur_sigma))
                        : 0;
    t.noise_amplitude = 0.0625 * g;
    return t;
}

bool ModalityTransform::is_identity() const {
    return !channel_collapse && gamma_exponent == 1.0 && contrast_gain == 1.0 &&
           blur_radius == 0 && noise_amplitude == 0.0;
}

namespace {

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// mirror indexing without repeating the edge sample
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    if (i < 0) i = -i;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = 2 * static_cast<std::ptrdiff_t>(n) - 2 - i;
    return static_cast<std::size_t>(i);
}

void gaussian_blur(std::vector<double>& plane, std::size_t h, std::size_t w, double sigma,
                   std::size_t radius) {
    if (radius == 0) return;
    std::vector<double> k(2 * radius + 1);
    double norm = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        double d = static_cast<double>(i) - static_cast<double>(radius);
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        norm += k[i];
    }
    for (double& v : k) v /= norm;

    std::vector<double> tmp(plane.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k.size(); ++i)
                acc += k[i] * plane[y * w + reflect(static_cast<std::ptrdiff_t>(x + i) -
                                                        static_cast<std::ptrdiff_t>(radius),
                                                    w)];
            tmp[y * w + x] = acc;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k.size(); ++i)
                acc += k[i] * tmp[reflect(static_cast<std::ptrdiff_t>(y + i) -
                                              static_cast<std::ptrdiff_t>(radius),
                                          h) *
                                      w +
                                  x];
            plane[y * w + x] = acc;
        }
}

std::vector<double> apply_target_transform(const std::vector<double>& rgb,
                                           const ModalityTransform& t, std::size_t hw, Rng& noise) {
    if (t.is_identity()) return rgb;
    std::vector<double> y(hw);
    for (std::size_t i = 0; i < hw; ++i)
        y[i] = 0.299 * rgb[i] + 0.587 * rgb[hw + i] + 0.114 * rgb[2 * hw + i];
    for (double& v : y) {
        v = std::pow(std::clamp(v, 0.0, 1.0), t.gamma_exponent);
        v = std::clamp(0.5 + t.contrast_gain * (v - 0.5), 0.0, 1.0);
    }
    std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(double(hw))));
    gaussian_blur(y, side, side, t.blur_sigma, t.blur_radius);
    if (t.noise_amplitude > 0.0)
        for (double& v : y) v = std::clamp(v + noise.normal(0.0, t.noise_amplitude), 0.0, 1.0);
    return y;
}

std::string sample_filename(std::size_t id, Modality m, std::size_t k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "id%04zu_%s_%02zu.f32", id,
                  m == Modality::source ? "src" : "tgt", k);
    return buf;
}

void write_f32(const fs::path& path, const std::vector<double>& values) {
    std::vector<unsigned char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        float f = static_cast<float>(values[i]);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        for (int b = 0; b < 4; ++b)
            bytes[i * 4 + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xff);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("dataset: cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> read_f32(const fs::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("dataset: cannot read " + path.string());
    std::vector<unsigned char> bytes(count * 4);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw std::runtime_error("dataset: short read on " + path.string());
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        float f;
        std::memcpy(&f, &u, 4);
        values[i] = static_cast<double>(f);
    }
    return values;
}

}  // namespace

const std::vector<double>& SynthDataset::image(std::size_t identity, Modality m,
                                               std::size_t sample) const {
    if (identity >= params_.n_identities || sample >= params_.samples_per_identity)
        throw std::invalid_argument("dataset: sample reference out of range");
    const auto& pool = m == Modality::source ? source_images_ : target_images_;
    return pool[identity * params_.samples_per_identity + sample];
}

std::vector<std::size_t> SynthDataset::all_ids() const {
    std::vector<std::size_t> ids(params_.n_identities);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return ids;
}

SynthDataset generate_dataset(const DatasetParams& params) {
    if (params.n_identities < 2)
        throw std::invalid_argument("dataset: need at least 2 identities");
    if (params.samples_per_identity == 0 || params.latent_dim == 0 || params.image_size == 0)
        throw std::invalid_argument("dataset: sizes must be positive");

    SynthDataset ds;
    ds.params_ = params;
    ds.target_tf_ = ModalityTransform::target_for_gap(params.gap_strength);

    // unit-norm identity latents, rejection-sampled to pairwise cosine < 0.95
    Rng lat_rng(mix_keys({params.seed, tag("identity-latent")}));
    while (ds.latents_.size() < params.n_identities) {
        std::vector<double> z(params.latent_dim);
        double ssq = 0.0;
        for (double& v : z) {
            v = lat_rng.normal();
            ssq += v * v;
        }
        double inv = 1.0 / std::sqrt(ssq);
        for (double& v : z) v *= inv;
        bool ok = true;
        for (const auto& other : ds.latents_) {
            double cos = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) cos += z[i] * other[i];
            if (cos >= 0.95) {
                ok = false;
                break;
            }
        }
        if (ok) ds.latents_.push_back(std::move(z));
    }

    const std::size_t hw = params.image_size * params.image_size;
    Rng dec_rng(mix_keys({params.seed, tag("decoder")}));
    std::vector<double> decoder(3 * hw * params.latent_dim);
    for (double& v : decoder) v = dec_rng.normal(0.0, params.decoder_gain);

    const std::size_t S = params.samples_per_identity;
    ds.source_images_.resize(params.n_identities * S);
    ds.target_images_.resize(params.n_identities * S);
    std::vector<double> zt(params.latent_dim), rendered(3 * hw);
    for (std::size_t id = 0; id < params.n_identities; ++id) {
        for (std::size_t k = 0; k < S; ++k) {
            Rng drng(mix_keys({params.seed, tag("latent-delta"), id, k}));
            for (std::size_t j = 0; j < params.latent_dim; ++j)
                zt[j] = ds.latents_[id][j] + drng.normal(0.0, params.intra_class_stddev);
            for (std::size_t px = 0; px < 3 * hw; ++px) {
                double acc = 0.0;
                const double* row = decoder.data() + px * params.latent_dim;
                for (std::size_t j = 0; j < params.latent_dim; ++j) acc += row[j] * zt[j];
                rendered[px] = 0.5 * (std::tanh(acc) + 1.0);
            }
            std::vector<double> src(rendered);
            for (double& v : src) v = quantize_f32(v);
            Rng nrng(mix_keys({params.seed, tag("modality-noise"), id, k, 1}));
            std::vector<double> tgt = apply_target_transform(rendered, ds.target_tf_, hw, nrng);
            for (double& v : tgt) v = quantize_f32(v);
            ds.source_images_[id * S + k] = std::move(src);
            ds.target_images_[id * S + k] = std::move(tgt);
        }
    }
    return ds;
}

void save_dataset(const SynthDataset& ds, const std::string& dir) {
    const DatasetParams& p = ds.params();
    fs::create_directories(fs::path(dir) / "samples");

    json manifest;
    manifest["seed"] = p.seed;
    manifest["n_identities"] = p.n_identities;
    manifest["samples_per_identity"] = p.samples_per_identity;
    manifest["gap_strength"] = p.gap_strength;
    manifest["latent_dim"] = p.latent_dim;
    manifest["image_size"] = p.image_size;
    manifest["intra_class_stddev"] = p.intra_class_stddev;
    manifest["decoder_gain"] = p.decoder_gain;
    const ModalityTransform& t = ds.target_transform();
    manifest["target_transform"] = {
        {"channel_collapse", t.channel_collapse}, {"gamma_exponent", t.gamma_exponent},
        {"contrast_gain", t.contrast_gain},       {"blur_sigma", t.blur_sigma},
        {"blur_radius", t.blur_radius},           {"noise_amplitude", t.noise_amplitude}};
    manifest["source_channels"] = ds.channels(Modality::source);
    manifest["target_channels"] = ds.channels(Modality::target);
    manifest["latents"] = ds.latents();

    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw std::runtime_error("dataset: cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";

    for (std::size_t id = 0; id < p.n_identities; ++id)
        for (std::size_t k = 0; k < p.samples_per_identity; ++k) {
            write_f32(fs::path(dir) / "samples" / sample_filename(id, Modality::source, k),
                      ds.image(id, Modality::source, k));
            write_f32(fs::path(dir) / "samples" / sample_filename(id, Modality::target, k),
                      ds.image(id, Modality::target, k));
        }
}

SynthDataset load_dataset(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("dataset: missing manifest in " + dir);
    json manifest = json::parse(mf);

    SynthDataset ds;
    DatasetParams& p = ds.params_;
    p.seed = manifest.at("seed").get<std::uint64_t>();
    p.n_identities = manifest.at("n_identities").get<std::size_t>();
    p.samples_per_identity = manifest.at("samples_per_identity").get<std::size_t>();
    p.gap_strength = manifest.at("gap_strength").get<double>();
    p.latent_dim = manifest.at("latent_dim").get<std::size_t>();
    p.image_size = manifest.at("image_size").get<std::size_t>();
    p.intra_class_stddev = manifest.at("intra_class_stddev").get<double>();
    p.decoder_gain = manifest.at("decoder_gain").get<double>();
    const json& t = manifest.at("target_transform");
    ds.target_tf_.kind = Modality::target;
    ds.target_tf_.channel_collapse = t.at("channel_collapse").get<bool>();
    ds.target_tf_.gamma_exponent = t.at("gamma_exponent").get<double>();
    ds.target_tf_.contrast_gain = t.at("contrast_gain").get<double>();
    ds.target_tf_.blur_sigma = t.at("blur_sigma").get<double>();
    ds.target_tf_.blur_radius = t.at("blur_radius").get<std::size_t>();
    ds.target_tf_.noise_amplitude = t.at("noise_amplitude").get<double>();
    ds.latents_ = manifest.at("latents").get<std::vector<std::vector<double>>>();

    const std::size_t hw = p.image_size * p.image_size;
    const std::size_t S = p.samples_per_identity;
    ds.source_images_.resize(p.n_identities * S);
    ds.target_images_.resize(p.n_identities * S);
    for (std::size_t id = 0; id < p.n_identities; ++id)
        for (std::size_t k = 0; k < S; ++k) {
            ds.source_images_[id * S + k] =
                read_f32(fs::path(dir) / "samples" / sample_filename(id, Modality::source, k),
                         ds.channels(Modality::source) * hw);
            ds.target_images_[id * S + k] =
                read_f32(fs::path(dir) / "samples" / sample_filename(id, Modality::target, k),
                         ds.channels(Modality::target) * hw);
        }
    return ds;
}

std::vector<ProtocolSplit> make_protocol(const SynthDataset& ds, std::size_t n_folds,
                                         double train_fraction, std::uint64_t seed) {
    const std::size_t n = ds.params().n_identities;
    const std::size_t n_train =
        static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    if (n_folds == 0) throw std::invalid_argument("protocol: need at least one fold");
    if (n_train < 2 || n - n_train < 2)
        throw std::invalid_argument("protocol: train_fraction " + std::to_string(train_fraction) +
                                    " leaves fewer than 2 identities on one side");

    std::vector<ProtocolSplit> folds;
    for (std::size_t f = 0; f < n_folds; ++f) {
        std::vector<std::size_t> ids = ds.all_ids();
        Rng rng(mix_keys({seed, tag("protocol"), f}));
        rng.shuffle(ids);
        ProtocolSplit split;
        split.fold = f;
        split.train_ids.assign(ids.begin(), ids.begin() + n_train);
        split.eval_ids.assign(ids.begin() + n_train, ids.end());
        std::sort(split.train_ids.begin(), split.train_ids.end());
        std::sort(split.eval_ids.begin(), split.eval_ids.end());
        for (std::size_t id : split.eval_ids)
            for (std::size_t k = 0; k < ds.params().samples_per_identity; ++k) {
                split.gallery.push_back(SampleRef{id, Modality::source, k});
                split.probes.push_back(SampleRef{id, Modality::target, k});
            }
        folds.push_back(std::move(split));
    }
    return folds;
}

namespace {

json sample_refs_json(const std::vector<SampleRef>& refs) {
    json arr = json::array();
    for (const SampleRef& r : refs)
        arr.push_back({{"identity", r.identity},
                       {"modality", r.modality == Modality::source ? "source" : "target"},
                       {"index", r.index}});
    return arr;
}

std::vector<SampleRef> sample_refs_from_json(const json& arr) {
    std::vector<SampleRef> refs;
    for (const json& e : arr) {
        SampleRef r;
        r.identity = e.at("identity").get<std::size_t>();
        r.modality = e.at("modality").get<std::string>() == "source" ? Modality::source
                                                                     : Modality::target;
        r.index = e.at("index").get<std::size_t>();
        refs.push_back(r);
    }
    return refs;
}

}  // namespace

void save_protocols(const std::vector<ProtocolSplit>& folds, const std::string& dir) {
    fs::create_directories(dir);
    for (const ProtocolSplit& split : folds) {
        json j;
        j["fold"] = split.fold;
        j["train_ids"] = split.train_ids;
        j["eval_ids"] = split.eval_ids;
        j["gallery"] = sample_refs_json(split.gallery);
        j["probes"] = sample_refs_json(split.probes);
        std::ofstream out(fs::path(dir) / ("fold_" + std::to_string(split.fold) + ".json"),
                          std::ios::trunc);
        if (!out) throw std::runtime_error("protocol: cannot write fold file in " + dir);
        out << j.dump(2) << "\n";
    }
}

std::vector<ProtocolSplit> load_protocols(const std::string& dir) {
    std::vector<ProtocolSplit> folds;
    for (std::size_t f = 0;; ++f) {
        fs::path path = fs::path(dir) / ("fold_" + std::to_string(f) + ".json");
        if (!fs::exists(path)) break;
        std::ifstream in(path);
        json j = json::parse(in);
        ProtocolSplit split;
        split.fold = j.at("fold").get<std::size_t>();
        split.train_ids = j.at("train_ids").get<std::vector<std::size_t>>();
        split.eval_ids = j.at("eval_ids").get<std::vector<std::size_t>>();
        split.gallery = sample_refs_from_json(j.at("gallery"));
        split.probes = sample_refs_from_json(j.at("probes"));
        folds.push_back(std::move(split));
    }
    if (folds.empty()) throw std::runtime_error("protocol: no fold files found in " + dir);
    return folds;
}

LabeledImages collect_images(const SynthDataset& ds, const std::vector<std::size_t>& ids,
                             Modality m, const std::vector<std::size_t>& sample_indices) {
    LabeledImages out;
    out.channels = ds.channels(m);
    out.height = ds.image_size();
    out.width = ds.image_size();
    for (std::size_t label = 0; label < ids.size(); ++label)
        for (std::size_t k : sample_indices) {
            out.images.push_back(ds.image(ids[label], m, k));
            out.labels.push_back(label);
        }
    return out;
}

}  // namespace caim
