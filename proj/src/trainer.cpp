#include "caim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace caim {

Adam::Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    for (const Tensor& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t s = 0; s < params_.size(); ++s) {
        Tensor& p = params_[s];
        const bool has = p.has_grad();
        auto& data = p.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            double g = has ? p.grad()[i] : 0.0;
            m_[s][i] = beta1_ * m_[s][i] + (1.0 - beta1_) * g;
            v_[s][i] = beta2_ * v_[s][i] + (1.0 - beta2_) * g * g;
            double mhat = m_[s][i] / bc1;
            double vhat = v_[s][i] / bc2;
            data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void Adam::load_state(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
                      std::uint64_t step_count) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw std::invalid_argument("adam: state slot count does not match parameters");
    for (std::size_t s = 0; s < params_.size(); ++s)
        if (m[s].size() != params_[s].size() || v[s].size() != params_[s].size())
            throw std::invalid_argument("adam: state shape mismatch at slot " + std::to_string(s));
    m_ = std::move(m);
    v_ = std::move(v);
    step_count_ = step_count;
}

Tensor contrastive_loss(const Tensor& source_embeddings, const Tensor& target_embeddings,
                        const std::vector<int>& labels, double margin, Distance distance) {
    if (source_embeddings.rank() != 2 || target_embeddings.rank() != 2 ||
        source_embeddings.shape() != target_embeddings.shape())
        throw std::invalid_argument("contrastive_loss: embedding batches must align, got " +
                                    shape_str(source_embeddings.shape()) + " vs " +
                                    shape_str(target_embeddings.shape()));
    const std::size_t n = source_embeddings.shape()[0];
    if (labels.size() != n)
        throw std::invalid_argument("contrastive_loss: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " pairs");
    if (margin <= 0.0) throw std::invalid_argument("contrastive_loss: margin must be positive");
    std::vector<double> genuine_mask(n), impostor_mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw std::invalid_argument("contrastive_loss: labels must be 0 or 1");
        genuine_mask[i] = labels[i] == 0 ? 1.0 : 0.0;
        impostor_mask[i] = labels[i] == 1 ? 1.0 : 0.0;
    }
    Tensor gm = Tensor::from_data({n}, std::move(genuine_mask));
    Tensor im = Tensor::from_data({n}, std::move(impostor_mask));

    Tensor sq_or_d;  // squared distance (euclidean) or distance (cosine)
    Tensor dist;
    if (distance == Distance::euclidean) {
        Tensor diff = sub(source_embeddings, target_embeddings);
        sq_or_d = sum(mul(diff, diff), {1}, false);
        // the tiny floor only guards the sqrt derivative at exactly-identical
        // embeddings; it is invisible at double precision otherwise
        dist = sqrt(affine(sq_or_d, 1.0, 1e-24));
    } else {
        dist = affine(sum(mul(source_embeddings, target_embeddings), {1}, false), -1.0, 1.0);
        sq_or_d = mul(dist, dist);
    }
    Tensor genuine_term = affine(sq_or_d, 0.5, 0.0);
    Tensor hinge = relu(affine(dist, -1.0, margin));
    Tensor impostor_term = affine(mul(hinge, hinge), 0.5, 0.0);
    Tensor per_pair = add(mul(gm, genuine_term), mul(im, impostor_term));
    return mean(per_pair, {0}, false);
}

PairSampler::PairSampler(std::vector<std::size_t> train_ids, std::size_t samples_per_identity,
                         double genuine_fraction, std::size_t batch_size, std::uint64_t seed)
    : train_ids_(std::move(train_ids)),
      samples_per_identity_(samples_per_identity),
      genuine_fraction_(genuine_fraction),
      batch_size_(batch_size),
      seed_(seed) {
    if (train_ids_.size() < 2)
        throw std::invalid_argument("pair sampler: need at least 2 training identities");
    if (batch_size_ < 2) throw std::invalid_argument("pair sampler: batch_size must be >= 2");
    if (!(genuine_fraction_ > 0.0) || !(genuine_fraction_ < 1.0))
        throw std::invalid_argument("pair sampler: genuine_fraction must lie in (0, 1)");
    genuine_per_batch_ = static_cast<std::size_t>(
        std::llround(genuine_fraction_ * static_cast<double>(batch_size_)));
    if (genuine_per_batch_ == 0 || genuine_per_batch_ >= batch_size_)
        throw std::invalid_argument("pair sampler: genuine_fraction " +
                                    std::to_string(genuine_fraction_) +
                                    " is unrealizable at batch size " +
                                    std::to_string(batch_size_));
}

std::size_t PairSampler::batches_per_epoch() const {
    std::size_t anchors = train_ids_.size() * samples_per_identity_;
    return (anchors + genuine_per_batch_ - 1) / genuine_per_batch_;
}

std::vector<std::vector<PairRef>> PairSampler::epoch_batches(std::size_t epoch) const {
    Rng rng(mix_keys({seed_, tag("pairs"), epoch}));
    std::vector<std::pair<std::size_t, std::size_t>> anchors;  // (identity, target sample)
    for (std::size_t id : train_ids_)
        for (std::size_t k = 0; k < samples_per_identity_; ++k) anchors.emplace_back(id, k);
    rng.shuffle(anchors);

    const double impostors_per_genuine = (1.0 - genuine_fraction_) / genuine_fraction_;
    std::vector<std::vector<PairRef>> batches;
    std::size_t consumed = 0;
    while (consumed < anchors.size()) {
        std::size_t g = std::min(genuine_per_batch_, anchors.size() - consumed);
        std::vector<PairRef> batch;
        for (std::size_t i = 0; i < g; ++i) {
            auto [id, k] = anchors[consumed + i];
            batch.push_back(PairRef{id, rng.below(samples_per_identity_), id, k, 0});
        }
        std::size_t n_imp = consumed + g == anchors.size() && g < genuine_per_batch_
                                ? static_cast<std::size_t>(std::llround(
                                      impostors_per_genuine * static_cast<double>(g)))
                                : batch_size_ - g;
        for (std::size_t i = 0; i < n_imp; ++i) {
            std::size_t src_id = train_ids_[rng.below(train_ids_.size())];
            std::size_t tgt_id = src_id;
            while (tgt_id == src_id) tgt_id = train_ids_[rng.below(train_ids_.size())];
            batch.push_back(PairRef{src_id, rng.below(samples_per_identity_), tgt_id,
                                    rng.below(samples_per_identity_), 1});
        }
        consumed += g;
        batches.push_back(std::move(batch));
    }
    return batches;
}

ContrastiveTrainer::ContrastiveTrainer(HfrNetwork& net, const SynthDataset& dataset,
                                       std::vector<std::size_t> train_ids, TrainConfig config)
    : net_(net),
      dataset_(dataset),
      train_ids_(std::move(train_ids)),
      config_(config),
      sampler_(train_ids_, dataset.params().samples_per_identity, config.genuine_fraction,
               config.batch_size, config.seed),
      optimizer_(net.trainable_parameters(), config.learning_rate) {
    if (!net_.backbone().frozen())
        throw std::invalid_argument("train: backbone must be frozen before training");
    if (net_.trainable_parameters().empty())
        throw std::invalid_argument("train: nothing trainable (empty insertion plan)");
    if (config_.margin <= 0.0) throw std::invalid_argument("train: margin must be positive");

    if (net_.mode() != BlockMode::gated) return;  // source side embeds per batch

    // gated source-path embeddings are constant during training: compute once
    const std::size_t S = dataset_.params().samples_per_identity;
    const std::size_t dim = FrozenBackbone::kEmbeddingDim;
    source_embeddings_.assign(dataset_.params().n_identities * S, {});
    std::vector<std::size_t> flat;
    for (std::size_t id : train_ids_)
        for (std::size_t k = 0; k < S; ++k) flat.push_back(id * S + k);
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < flat.size(); start += chunk) {
        std::size_t bn = std::min(chunk, flat.size() - start);
        std::size_t c = dataset_.channels(Modality::source);
        std::size_t hw = dataset_.image_size() * dataset_.image_size();
        std::vector<double> buf(bn * c * hw);
        for (std::size_t i = 0; i < bn; ++i) {
            std::size_t idx = flat[start + i];
            const auto& img = dataset_.image(idx / S, Modality::source, idx % S);
            std::copy(img.begin(), img.end(), buf.begin() + i * c * hw);
        }
        Tensor emb = net_.embed(Tensor::from_data({bn, c, dataset_.image_size(),
                                                   dataset_.image_size()},
                                                  std::move(buf)),
                                Modality::source);
        for (std::size_t i = 0; i < bn; ++i)
            source_embeddings_[flat[start + i]] =
                std::vector<double>(emb.data().begin() + i * dim,
                                    emb.data().begin() + (i + 1) * dim);
    }
}

Tensor ContrastiveTrainer::gather_source_embeddings(const std::vector<PairRef>& pairs) const {
    const std::size_t dim = FrozenBackbone::kEmbeddingDim;
    const std::size_t S = dataset_.params().samples_per_identity;
    std::vector<double> buf(pairs.size() * dim);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& row = source_embeddings_[pairs[i].source_id * S + pairs[i].source_sample];
        std::copy(row.begin(), row.end(), buf.begin() + i * dim);
    }
    return Tensor::from_data({pairs.size(), dim}, std::move(buf));
}

Tensor ContrastiveTrainer::assemble_batch(const std::vector<PairRef>& pairs, Modality m) const {
    const std::size_t c = dataset_.channels(m);
    const std::size_t side = dataset_.image_size();
    std::vector<double> buf(pairs.size() * c * side * side);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const PairRef& pr = pairs[i];
        const auto& img = m == Modality::source
                              ? dataset_.image(pr.source_id, Modality::source, pr.source_sample)
                              : dataset_.image(pr.target_id, Modality::target, pr.target_sample);
        std::copy(img.begin(), img.end(), buf.begin() + i * c * side * side);
    }
    return Tensor::from_data({pairs.size(), c, side, side}, std::move(buf));
}

double ContrastiveTrainer::run_epoch(std::size_t epoch) {
    double loss_sum = 0.0;
    std::size_t pair_count = 0;
    for (const auto& batch : sampler_.epoch_batches(epoch)) {
        Tensor source_emb = net_.mode() == BlockMode::gated
                                ? gather_source_embeddings(batch)
                                : net_.embed(assemble_batch(batch, Modality::source),
                                             Modality::source);
        Tensor target_emb = net_.embed(assemble_batch(batch, Modality::target), Modality::target);
        std::vector<int> labels(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i].label;
        Tensor loss =
            contrastive_loss(source_emb, target_emb, labels, config_.margin, config_.distance);
        optimizer_.zero_grad();
        loss.backward();
        optimizer_.step();
        loss_sum += loss.item() * static_cast<double>(batch.size());
        pair_count += batch.size();
    }
    return loss_sum / static_cast<double>(pair_count);
}

TrainResult ContrastiveTrainer::run(const std::function<void(std::size_t epoch)>& after_epoch) {
    while (next_epoch_ < config_.epochs) {
        double mean_loss = run_epoch(next_epoch_);
        loss_history_.push_back(mean_loss);
        ++next_epoch_;
        if (after_epoch) after_epoch(next_epoch_);
    }
    return TrainResult{loss_history_};
}

void write_loss_csv(const std::string& path, const std::vector<double>& epoch_mean_loss) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write loss history to " + path);
    out << "epoch,mean_loss\n";
    char buf[64];
    for (std::size_t e = 0; e < epoch_mean_loss.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, epoch_mean_loss[e]);
        out << buf;
    }
}

}  // namespace caim
