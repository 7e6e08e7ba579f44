#include "caim/experiments.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace caim {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentPaths::ExperimentPaths(const std::string& out_dir) : root(out_dir) {
    dataset_dir = (fs::path(root) / "dataset").string();
    protocols_dir = (fs::path(dataset_dir) / "protocols").string();
    backbone_dir = (fs::path(root) / "backbone").string();
    backbone_ckpt = (fs::path(backbone_dir) / "backbone.ckpt").string();
    pretrain_report = (fs::path(backbone_dir) / "pretrain_report.json").string();
    train_dir = (fs::path(root) / "train").string();
    eval_dir = (fs::path(root) / "eval").string();
    ablation_dir = (fs::path(root) / "ablation").string();
    cost_dir = (fs::path(root) / "cost").string();
}

std::string ExperimentPaths::fold_dir(std::size_t fold) const {
    return (fs::path(train_dir) / ("fold_" + std::to_string(fold))).string();
}
std::string ExperimentPaths::fold_checkpoint(std::size_t fold) const {
    return (fs::path(fold_dir(fold)) / "checkpoint.ckpt").string();
}
std::string ExperimentPaths::fold_loss_csv(std::size_t fold) const {
    return (fs::path(fold_dir(fold)) / "loss.csv").string();
}
std::string ExperimentPaths::fold_train_state(std::size_t fold) const {
    return (fs::path(fold_dir(fold)) / "train_state.ckpt").string();
}

namespace {

void echo_config(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    cfg.save((fs::path(cfg.output_dir) / "config.json").string());
}

// batched embedding of sample references through one modality path
std::vector<std::vector<double>> embed_refs(const HfrNetwork& net, const SynthDataset& ds,
                                            const std::vector<SampleRef>& refs,
                                            Modality path_modality) {
    const std::size_t dim = FrozenBackbone::kEmbeddingDim;
    const std::size_t side = ds.image_size();
    std::vector<std::vector<double>> out(refs.size());
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < refs.size(); start += chunk) {
        const std::size_t bn = std::min(chunk, refs.size() - start);
        const std::size_t c = ds.channels(refs[start].modality);
        std::vector<double> buf(bn * c * side * side);
        for (std::size_t i = 0; i < bn; ++i) {
            const SampleRef& r = refs[start + i];
            if (ds.channels(r.modality) != c)
                throw std::invalid_argument("evaluate: mixed channel counts in one chunk");
            const auto& img = ds.image(r.identity, r.modality, r.index);
            std::copy(img.begin(), img.end(), buf.begin() + i * c * side * side);
        }
        Tensor emb = net.embed(Tensor::from_data({bn, c, side, side}, std::move(buf)),
                               path_modality);
        for (std::size_t i = 0; i < bn; ++i)
            out[start + i] = std::vector<double>(emb.data().begin() + i * dim,
                                                 emb.data().begin() + (i + 1) * dim);
    }
    return out;
}

std::string vr_key(double target) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "vr_at_far_%g", target);
    return buf;
}

json fold_metrics_json(const FoldMetrics& m, std::size_t fold) {
    json j;
    j["fold"] = fold;
    j["auc"] = m.auc;
    j["eer"] = m.eer;
    j["rank1"] = m.rank1;
    for (const VrPoint& v : m.vr)
        j[vr_key(v.far_target_percent)] = {{"tar", v.tar_percent},
                                           {"realized_far", v.realized_far_percent},
                                           {"under_resolved", v.under_resolved}};
    return j;
}

void write_metrics_csv(const std::string& path, const std::vector<FoldMetrics>& folds,
                       const FoldReport& agg, const std::vector<double>& far_targets) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("eval: cannot write " + path);
    out << "fold,auc,eer,rank1";
    for (double t : far_targets) out << "," << vr_key(t);
    out << "\n";
    char buf[64];
    auto row = [&](const std::string& label, const std::map<std::string, double>& vals) {
        out << label;
        for (const std::string& key : {std::string("auc"), std::string("eer"),
                                       std::string("rank1")}) {
            std::snprintf(buf, sizeof buf, ",%.4f", vals.at(key));
            out << buf;
        }
        for (double t : far_targets) {
            std::snprintf(buf, sizeof buf, ",%.4f", vals.at(vr_key(t)));
            out << buf;
        }
        out << "\n";
    };
    for (std::size_t f = 0; f < folds.size(); ++f)
        row(std::to_string(f), folds[f].as_map());
    row("mean", agg.mean);
    row("std", agg.stddev);
}

HfrNetwork load_eval_network(const ExperimentPaths& paths, const ExperimentConfig& cfg,
                             std::size_t fold, bool baseline) {
    if (baseline) {
        Checkpoint ckpt = Checkpoint::load(paths.backbone_ckpt);
        return HfrNetwork(backbone_from_checkpoint(ckpt),
                          InsertionPlan(std::vector<std::size_t>{}), 0);
    }
    (void)cfg;
    return network_from_checkpoint(Checkpoint::load(paths.fold_checkpoint(fold)));
}

void save_train_state(const std::string& path, const Adam& opt, std::size_t next_epoch,
                      const std::vector<double>& loss_history) {
    Checkpoint state;
    for (std::size_t s = 0; s < opt.slots(); ++s) {
        state.put("adam/" + std::to_string(s) + "/m", {opt.first_moment(s).size()},
                  opt.first_moment(s));
        state.put("adam/" + std::to_string(s) + "/v", {opt.second_moment(s).size()},
                  opt.second_moment(s));
    }
    state.put("meta/step", {1}, {static_cast<double>(opt.step_count())});
    state.put("meta/epoch", {1}, {static_cast<double>(next_epoch)});
    state.put("meta/loss_history", {loss_history.size()}, loss_history);
    state.save(path);
}

}  // namespace

std::map<std::string, double> FoldMetrics::as_map() const {
    std::map<std::string, double> m{{"auc", auc}, {"eer", eer}, {"rank1", rank1}};
    for (const VrPoint& v : vr) m[vr_key(v.far_target_percent)] = v.tar_percent;
    return m;
}

FoldMetrics evaluate_fold(const HfrNetwork& net, const SynthDataset& ds,
                          const ProtocolSplit& split, const std::vector<double>& far_targets,
                          bool force_gate_off, bool probes_as_source) {
    std::vector<SampleRef> probe_refs = split.probes;
    if (probes_as_source)
        for (SampleRef& r : probe_refs) r.modality = Modality::source;
    Modality probe_path = force_gate_off || probes_as_source ? Modality::source : Modality::target;

    auto gallery = embed_refs(net, ds, split.gallery, Modality::source);
    auto probes = embed_refs(net, ds, probe_refs, probe_path);

    std::vector<std::size_t> gallery_ids, probe_ids;
    for (const SampleRef& r : split.gallery) gallery_ids.push_back(r.identity);
    for (const SampleRef& r : probe_refs) probe_ids.push_back(r.identity);

    ScoreSet scores;
    for (std::size_t p = 0; p < probes.size(); ++p)
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            double sim = cosine_similarity(probes[p], gallery[g]);
            if (probes_as_source && probe_ids[p] == gallery_ids[g] &&
                probe_refs[p].index == split.gallery[g].index)
                continue;  // identical sample against itself carries no information
            (probe_ids[p] == gallery_ids[g] ? scores.genuine : scores.impostor).push_back(sim);
        }

    FoldMetrics m;
    m.auc = auc(roc(scores));
    m.eer = eer(scores);
    m.rank1 = rank1(gallery, gallery_ids, probes, probe_ids);
    m.vr = vr_at_far(scores, far_targets);
    return m;
}

bool source_path_identity(const HfrNetwork& net, const SynthDataset& ds,
                          const ProtocolSplit& split, std::size_t max_samples) {
    HfrNetwork bare(net.backbone(), InsertionPlan(std::vector<std::size_t>{}), 0);
    std::vector<SampleRef> refs(split.gallery.begin(),
                                split.gallery.begin() +
                                    std::min(max_samples, split.gallery.size()));
    auto through_net = embed_refs(net, ds, refs, Modality::source);
    auto through_backbone = embed_refs(bare, ds, refs, Modality::source);
    for (std::size_t i = 0; i < refs.size(); ++i)
        if (through_net[i] != through_backbone[i]) return false;
    return true;
}

void run_gen_data(const ExperimentConfig& cfg, bool force) {
    ExperimentPaths paths(cfg.output_dir);
    if (fs::exists(fs::path(paths.dataset_dir) / "manifest.json") && !force)
        throw std::runtime_error("gen-data: dataset already exists at " + paths.dataset_dir +
                                 " (use --force to overwrite)");
    echo_config(cfg);
    DatasetParams params = cfg.dataset;
    params.seed = cfg.dataset_seed();
    SynthDataset ds = generate_dataset(params);
    save_dataset(ds, paths.dataset_dir);
    auto folds = make_protocol(ds, cfg.protocol_folds, cfg.train_fraction, cfg.protocol_seed());
    save_protocols(folds, paths.protocols_dir);
}

PretrainReport run_pretrain(const ExperimentConfig& cfg) {
    ExperimentPaths paths(cfg.output_dir);
    echo_config(cfg);
    SynthDataset ds = load_dataset(paths.dataset_dir);
    const std::size_t S = ds.params().samples_per_identity;
    const std::size_t holdout = std::min(cfg.pretrain_holdout_per_identity, S - 1);

    std::vector<std::size_t> train_samples, holdout_samples;
    for (std::size_t k = 0; k < S - holdout; ++k) train_samples.push_back(k);
    for (std::size_t k = S - holdout; k < S; ++k) holdout_samples.push_back(k);

    PretrainConfig pc = cfg.pretrain;
    pc.seed = cfg.pretrain_seed();
    LabeledImages data = collect_images(ds, ds.all_ids(), Modality::source, train_samples);
    PretrainOutcome outcome = pretrain_backbone(data, pc);

    PretrainReport report;
    report.final_ce = outcome.epoch_mean_ce.empty() ? 0.0 : outcome.epoch_mean_ce.back();
    report.epochs = outcome.epoch_mean_ce.size();

    // identification gate: enrolled training samples vs held-out probes
    HfrNetwork bare(outcome.backbone, InsertionPlan(std::vector<std::size_t>{}), 0);
    std::vector<SampleRef> gal, prb;
    for (std::size_t id : ds.all_ids()) {
        for (std::size_t k : train_samples) gal.push_back({id, Modality::source, k});
        for (std::size_t k : holdout_samples) prb.push_back({id, Modality::source, k});
    }
    ProtocolSplit gate;
    gate.gallery = gal;
    gate.probes = prb;
    if (!prb.empty()) {
        auto g = embed_refs(bare, ds, gal, Modality::source);
        auto p = embed_refs(bare, ds, prb, Modality::source);
        std::vector<std::size_t> gids, pids;
        for (const SampleRef& r : gal) gids.push_back(r.identity);
        for (const SampleRef& r : prb) pids.push_back(r.identity);
        report.holdout_rank1 = rank1(g, gids, p, pids);
    }

    fs::create_directories(paths.backbone_dir);
    Checkpoint ckpt;
    add_to_checkpoint(outcome.backbone, ckpt);
    ckpt.save(paths.backbone_ckpt);

    json rj;
    rj["final_ce"] = report.final_ce;
    rj["holdout_rank1"] = report.holdout_rank1;
    rj["epochs"] = report.epochs;
    rj["epoch_mean_ce"] = outcome.epoch_mean_ce;
    std::ofstream out(paths.pretrain_report, std::ios::trunc);
    out << rj.dump(2) << "\n";
    return report;
}

TrainRunReport run_train(const ExperimentConfig& cfg, std::optional<std::size_t> only_fold,
                         bool resume, std::size_t save_every) {
    ExperimentPaths paths(cfg.output_dir);
    echo_config(cfg);
    SynthDataset ds = load_dataset(paths.dataset_dir);
    auto protocols = load_protocols(paths.protocols_dir);
    Checkpoint backbone_ckpt = Checkpoint::load(paths.backbone_ckpt);

    TrainRunReport report;
    for (const ProtocolSplit& split : protocols) {
        if (only_fold && split.fold != *only_fold) continue;
        fs::create_directories(paths.fold_dir(split.fold));
        const std::uint64_t fold_seed = cfg.fold_seed(split.fold);

        HfrNetwork net = [&]() {
            if (resume && fs::exists(paths.fold_checkpoint(split.fold)))
                return network_from_checkpoint(Checkpoint::load(paths.fold_checkpoint(split.fold)));
            return HfrNetwork(backbone_from_checkpoint(backbone_ckpt),
                              InsertionPlan(cfg.insertion_plan), fold_seed);
        }();

        TrainConfig tc = cfg.train;
        tc.seed = fold_seed;
        ContrastiveTrainer trainer(net, ds, split.train_ids, tc);

        if (resume && fs::exists(paths.fold_train_state(split.fold))) {
            Checkpoint state = Checkpoint::load(paths.fold_train_state(split.fold));
            std::vector<std::vector<double>> m, v;
            for (std::size_t s = 0; s < trainer.optimizer().slots(); ++s) {
                m.push_back(state.data("adam/" + std::to_string(s) + "/m"));
                v.push_back(state.data("adam/" + std::to_string(s) + "/v"));
            }
            trainer.optimizer().load_state(
                std::move(m), std::move(v),
                static_cast<std::uint64_t>(state.data("meta/step")[0]));
            trainer.set_next_epoch(static_cast<std::size_t>(state.data("meta/epoch")[0]));
            trainer.loss_history() = state.data("meta/loss_history");
        }

        auto persist = [&](std::size_t next_epoch) {
            network_checkpoint(net).save(paths.fold_checkpoint(split.fold));
            save_train_state(paths.fold_train_state(split.fold), trainer.optimizer(), next_epoch,
                             trainer.loss_history());
            write_loss_csv(paths.fold_loss_csv(split.fold), trainer.loss_history());
        };
        TrainResult result = trainer.run([&](std::size_t next_epoch) {
            if (save_every > 0 && next_epoch % save_every == 0 && next_epoch < tc.epochs)
                persist(next_epoch);
        });
        persist(trainer.next_epoch());

        report.folds.push_back(split.fold);
        report.final_loss.push_back(result.epoch_mean_loss.empty()
                                        ? 0.0
                                        : result.epoch_mean_loss.back());
    }
    if (report.folds.empty()) throw std::runtime_error("train: no matching fold");
    return report;
}

EvalReport run_eval(const ExperimentConfig& cfg, bool baseline, bool gate_off) {
    ExperimentPaths paths(cfg.output_dir);
    echo_config(cfg);
    SynthDataset ds = load_dataset(paths.dataset_dir);
    auto protocols = load_protocols(paths.protocols_dir);

    EvalReport report;
    std::vector<std::map<std::string, double>> fold_maps;
    json folds_json = json::array();
    for (const ProtocolSplit& split : protocols) {
        HfrNetwork net = load_eval_network(paths, cfg, split.fold, baseline);
        FoldMetrics m =
            evaluate_fold(net, ds, split, cfg.far_targets_percent, gate_off && !baseline);
        report.folds.push_back(m);
        fold_maps.push_back(m.as_map());
        folds_json.push_back(fold_metrics_json(m, split.fold));
    }
    report.aggregate = aggregate_folds(fold_maps);

    fs::create_directories(paths.eval_dir);
    json j;
    j["mode"] = baseline ? "baseline" : (gate_off ? "gate_off" : "trained");
    j["folds"] = folds_json;
    j["mean"] = report.aggregate.mean;
    j["std"] = report.aggregate.stddev;
    std::string suffix = baseline ? "_baseline" : (gate_off ? "_gate_off" : "");
    std::ofstream out(fs::path(paths.eval_dir) / ("metrics" + suffix + ".json"),
                      std::ios::trunc);
    out << j.dump(2) << "\n";
    write_metrics_csv((fs::path(paths.eval_dir) / ("metrics" + suffix + ".csv")).string(),
                      report.folds, report.aggregate, cfg.far_targets_percent);
    return report;
}

std::vector<AblationRow> run_ablate(const ExperimentConfig& cfg) {
    ExperimentPaths paths(cfg.output_dir);
    echo_config(cfg);
    SynthDataset ds = load_dataset(paths.dataset_dir);
    auto protocols = load_protocols(paths.protocols_dir);
    const ProtocolSplit& split = protocols.front();  // rows share fold 0 and its seed
    Checkpoint backbone_ckpt = Checkpoint::load(paths.backbone_ckpt);
    const std::uint64_t row_seed = cfg.fold_seed(split.fold);

    std::vector<AblationRow> rows;
    for (std::size_t upto = 1; upto <= FrozenBackbone::kStages; ++upto) {
        AblationRow row;
        for (std::size_t p = 1; p <= upto; ++p) row.plan.push_back(p);
        row.label = upto == 1 ? "1" : "1-" + std::to_string(upto);
        row.mode = BlockMode::gated;
        rows.push_back(row);
    }
    rows.push_back(AblationRow{"uncond-aim", {1, 2, 3}, BlockMode::unconditional_aim,
                               false, false, 0, {}});
    rows.push_back(AblationRow{"uncond-in", {1, 2, 3}, BlockMode::unconditional_in,
                               false, false, 0, {}});

    for (AblationRow& row : rows) {
        HfrNetwork net(backbone_from_checkpoint(backbone_ckpt), InsertionPlan(row.plan), row_seed,
                       row.mode);
        for (const Tensor& p : net.trainable_parameters())
            row.trainable_params += static_cast<std::int64_t>(p.size());
        if (!net.trainable_parameters().empty()) {
            TrainConfig tc = cfg.train;
            tc.seed = row_seed;
            ContrastiveTrainer trainer(net, ds, split.train_ids, tc);
            trainer.run();
            row.trained = true;
        }
        row.metrics = evaluate_fold(net, ds, split, cfg.far_targets_percent);
        row.source_identity = source_path_identity(net, ds, split);

        fs::path row_dir = fs::path(paths.ablation_dir) / row.label;
        fs::create_directories(row_dir);
        network_checkpoint(net).save((row_dir / "checkpoint.ckpt").string());
    }

    json j = json::array();
    for (const AblationRow& row : rows) {
        json r = fold_metrics_json(row.metrics, split.fold);
        r["label"] = row.label;
        r["plan"] = row.plan;
        r["mode"] = row.mode == BlockMode::gated
                        ? "gated"
                        : (row.mode == BlockMode::unconditional_aim ? "unconditional_aim"
                                                                    : "unconditional_in");
        r["trained"] = row.trained;
        r["source_path_identity"] = row.source_identity;
        r["trainable_params"] = row.trainable_params;
        j.push_back(r);
    }
    fs::create_directories(paths.ablation_dir);
    std::ofstream out(fs::path(paths.ablation_dir) / "ablation.json", std::ios::trunc);
    out << j.dump(2) << "\n";

    std::ofstream csv(fs::path(paths.ablation_dir) / "ablation.csv", std::ios::trunc);
    csv << "config,auc,eer,rank1";
    for (double t : cfg.far_targets_percent) csv << "," << vr_key(t);
    csv << ",source_path_identity,trainable_params\n";
    char buf[64];
    for (const AblationRow& row : rows) {
        csv << row.label;
        std::snprintf(buf, sizeof buf, ",%.4f,%.4f,%.4f", row.metrics.auc, row.metrics.eer,
                      row.metrics.rank1);
        csv << buf;
        for (const VrPoint& v : row.metrics.vr) {
            std::snprintf(buf, sizeof buf, ",%.4f", v.tar_percent);
            csv << buf;
        }
        csv << "," << (row.source_identity ? "yes" : "VIOLATED") << "," << row.trainable_params
            << "\n";
    }
    return rows;
}

std::vector<CostRow> run_cost(const ExperimentConfig& cfg) {
    ExperimentPaths paths(cfg.output_dir);
    echo_config(cfg);

    std::vector<CostRow> rows;
    NetworkCost base = count_plan_cost(InsertionPlan(std::vector<std::size_t>{}));
    rows.push_back(CostRow{"backbone", base.backbone_params, base.backbone_flops, 0.0, 0.0});
    for (std::size_t upto = 1; upto <= FrozenBackbone::kStages; ++upto) {
        std::vector<std::size_t> plan;
        for (std::size_t p = 1; p <= upto; ++p) plan.push_back(p);
        NetworkCost c = count_plan_cost(InsertionPlan(plan));
        rows.push_back(CostRow{"backbone+caim(1" +
                                   (upto == 1 ? std::string(")")
                                              : "-" + std::to_string(upto) + ")"),
                               c.total_params, c.total_flops, c.params_overhead_percent,
                               c.flops_overhead_percent});
    }

    fs::create_directories(paths.cost_dir);
    json j = json::array();
    for (const CostRow& r : rows)
        j.push_back({{"configuration", r.label},
                     {"params", r.params},
                     {"flops", r.flops},
                     {"params_overhead_percent", r.params_overhead_percent},
                     {"flops_overhead_percent", r.flops_overhead_percent}});
    std::ofstream out(fs::path(paths.cost_dir) / "cost.json", std::ios::trunc);
    out << j.dump(2) << "\n";

    std::ofstream csv(fs::path(paths.cost_dir) / "cost.csv", std::ios::trunc);
    csv << "configuration,params,flops,params_overhead_percent,flops_overhead_percent\n";
    char buf[128];
    for (const CostRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.4f,%.4f\n", r.label.c_str(),
                      static_cast<long long>(r.params), static_cast<long long>(r.flops),
                      r.params_overhead_percent, r.flops_overhead_percent);
        csv << buf;
    }
    return rows;
}

}  // namespace caim
