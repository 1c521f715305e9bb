#include "app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "png.hpp"
#include "samba/checkpoint.hpp"
#include "samba/errors.hpp"
#include "samba/metrics.hpp"

namespace samba::app {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::ostream& log(const Options& o) { return o.log ? *o.log : std::cout; }

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw FormatError(FormatErrorKind::Io, "cannot write " + p.string());
    out << text;
    if (!out) throw FormatError(FormatErrorKind::Io, "write failed: " + p.string());
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw MissingArtifactError(p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(FormatErrorKind::Metadata, p.string() + ": " + e.what());
    }
}

bool skip_existing(const fs::path& p, const Options& o) {
    if (o.force || !fs::exists(p)) return false;
    log(o) << "skip: " << p.string() << " exists (use --force to rebuild)\n";
    return true;
}

json seeds_json(const Experiment& e) {
    return {{"dataset", e.dataset.seed},        {"foundation", e.foundation.seed},
            {"localizer", e.localizer.train.seed}, {"localizer_model", e.localizer.model.seed},
            {"samba_binary", e.samba.binary.seed}, {"samba_multiclass", e.samba.multiclass.seed},
            {"samba_model", e.samba.model.seed},   {"voting", e.voting.train.seed}};
}

void write_provenance(const Experiment& e, const std::string& name, const json& outputs) {
    json relative = json::array();
    for (const auto& o : outputs)
        relative.push_back(fs::path(o.get<std::string>()).lexically_relative(e.workdir).generic_string());
    json p{{"command", name},
           {"config_hash", e.hash()},
           {"seeds", seeds_json(e)},
           {"version", kVersion},
           {"compiler", __VERSION__},
           {"outputs", relative}};
    write_text(e.workdir / "provenance" / (name + ".json"), p.dump(2) + "\n");
}

void write_history(const Experiment& e, const std::string& name, const TrainHistory& h) {
    const fs::path dir = e.workdir / "histories";
    write_text(dir / (name + ".jsonl"), json{{"config_hash", e.hash()}}.dump() + "\n" + h.to_jsonl());
    write_text(dir / (name + ".timing.jsonl"), h.timing_jsonl());
}

json checkpoint_meta(const Experiment& e, const std::string& stage) {
    return {{"config_hash", e.hash()}, {"stage", stage}};
}

std::string fmt(double v, int digits = 4) {
    if (std::isnan(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct Combo {
    Mode mode;
    PromptSource source;
    bool operator==(const Combo&) const = default;
};

void add_combo(std::vector<Combo>& v, Combo c) {
    if (std::find(v.begin(), v.end(), c) == v.end()) v.push_back(c);
}

/// Fine-tuned models the config needs: its own (mode, source) plus every samba eval condition.
std::vector<Combo> samba_combos(const Experiment& e) {
    std::vector<Combo> v{{e.samba.mode, e.samba.source}};
    for (const auto& c : e.eval.conditions)
        if (c.model == ModelKind::samba) add_combo(v, {c.mode, c.source});
    return v;
}

/// Models whose votes feed a trained voting network.
std::vector<Combo> voting_combos(const Experiment& e) {
    std::vector<Combo> v;
    for (const auto& c : e.eval.conditions)
        if (c.fusion == Fusion::votenet) add_combo(v, {c.mode, c.source});
    if (v.empty()) v.push_back({e.samba.mode, e.samba.source});
    return v;
}

bool needs_localizer(PromptSource s) { return s == PromptSource::localizer; }

fs::path case_file(const Experiment& e, const std::string& id) { return data_dir(e) / (id + ".svol"); }

fs::path foundation_dir(const Experiment& e) { return checkpoint_dir(e, "foundation"); }

PromptModel<float> load_checked_promptnet(const fs::path& dir, const std::string& hint) {
    if (!checkpoint_exists(dir)) throw MissingArtifactError((dir / "manifest.json").string() + " (" + hint + ")");
    return load_promptnet(dir);
}

Localizer<float> load_checked_localizer(const Experiment& e) {
    const fs::path dir = checkpoint_dir(e, "localizer");
    if (!checkpoint_exists(dir))
        throw MissingArtifactError((dir / "manifest.json").string() + " (run `samba train --stage localizer`)");
    return load_localizer(dir);
}

PromptModel<float> load_samba(const Experiment& e, Combo c) {
    return load_checked_promptnet(checkpoint_dir(e, samba_checkpoint_name(c.mode, c.source)),
                                  "run `samba train --stage samba`");
}

void train_foundation(const Experiment& e, const Options& o) {
    const fs::path dir = foundation_dir(e);
    if (skip_existing(dir / "manifest.json", o)) return;
    PromptNetConfig cfg = e.samba.model;
    cfg.n_classes = 1;
    PromptModel<float> m(cfg);
    log(o) << "train foundation: " << e.foundation.samples << " scenes x " << e.foundation.epochs << " epochs\n";
    const TrainHistory h = pretrain_foundation(m, e.foundation);
    save_checkpoint(dir, m, checkpoint_meta(e, "foundation"));
    write_history(e, "foundation", h);
    for (const auto& r : h.epochs) log(o) << "  epoch " << r.epoch << " loss " << fmt(r.train_loss) << "\n";
    write_provenance(e, "train_foundation", {dir.generic_string()});
}

void train_localizer_stage(const Experiment& e, const Options& o) {
    const fs::path dir = checkpoint_dir(e, "localizer");
    if (skip_existing(dir / "manifest.json", o)) return;
    const Dataset d = load_dataset(e);
    Localizer<float> m(e.localizer.model);
    LocalizerTrainOptions opt;
    opt.modality = e.localizer.modality;
    opt.conf_threshold = e.localizer.conf_threshold;
    log(o) << "train localizer: " << e.localizer.train.epochs << " epochs on " << d.train.size() << " cases\n";
    const TrainHistory h = train_localizer(m, d, opt, e.localizer.train);
    save_checkpoint(dir, m, checkpoint_meta(e, "localizer"));
    write_history(e, "localizer", h);
    if (!h.epochs.empty()) log(o) << "  val accuracy " << fmt(h.epochs.back().val.at("accuracy")) << "\n";
    write_provenance(e, "train_localizer", {dir.generic_string()});
}

void train_samba_stage(const Experiment& e, const Options& o) {
    std::vector<Combo> todo;
    for (Combo c : samba_combos(e))
        if (!skip_existing(checkpoint_dir(e, samba_checkpoint_name(c.mode, c.source)) / "manifest.json", o))
            todo.push_back(c);
    if (todo.empty()) return;
    const Dataset d = load_dataset(e);
    if (!checkpoint_exists(foundation_dir(e))) {
        log(o) << "foundation checkpoint absent; pretraining it first\n";
        train_foundation(e, o);
    }
    const PromptModel<float> foundation = load_promptnet(foundation_dir(e));
    json outputs = json::array();
    for (Combo c : todo) {
        const std::string name = samba_checkpoint_name(c.mode, c.source);
        PromptModel<float> m = c.mode == Mode::binary ? foundation : from_foundation(foundation, 3, e.samba.model.seed);
        std::optional<Localizer<float>> loc;
        if (needs_localizer(c.source)) loc = load_checked_localizer(e);
        DecoderTrainOptions opt;
        opt.source = c.source;
        opt.modalities = e.samba.modalities;
        opt.localizer = loc ? &*loc : nullptr;
        opt.conf_threshold = e.localizer.conf_threshold;
        const TrainConfig& tc = c.mode == Mode::binary ? e.samba.binary : e.samba.multiclass;
        log(o) << "train " << name << ": " << tc.epochs << " epochs\n";
        const TrainHistory h = train_decoder(m, d, opt, tc);
        const fs::path dir = checkpoint_dir(e, name);
        save_checkpoint(dir, m, checkpoint_meta(e, name));
        write_history(e, name, h);
        const char* key = c.mode == Mode::binary ? "wt" : "mean";
        if (!h.epochs.empty())
            log(o) << "  val " << key << " " << fmt(h.initial_val.at(key)) << " -> " << fmt(h.epochs.back().val.at(key))
                   << "\n";
        outputs.push_back(dir.generic_string());
    }
    write_provenance(e, "train_samba", outputs);
}

PromptContext make_context(const Experiment& e, PromptSource s, const Localizer<float>* loc) {
    PromptContext ctx;
    ctx.source = s;
    ctx.localizer = loc;
    ctx.localizer_modality = e.localizer.modality;
    ctx.conf_threshold = e.localizer.conf_threshold;
    return ctx;
}

void train_voting_stage(const Experiment& e, const Options& o) {
    if (!e.voting.enabled) {
        log(o) << "voting disabled in config; nothing to train\n";
        return;
    }
    std::vector<Combo> todo;
    if (e.voting.mask_source == MaskSource::truth_noisy) {
        if (!skip_existing(checkpoint_dir(e, votenet_checkpoint_name(e, e.samba.mode, e.samba.source)) / "manifest.json", o))
            todo.push_back({e.samba.mode, e.samba.source});
    } else {
        for (Combo c : voting_combos(e))
            if (!skip_existing(checkpoint_dir(e, votenet_checkpoint_name(e, c.mode, c.source)) / "manifest.json", o))
                todo.push_back(c);
    }
    if (todo.empty()) return;
    const Dataset d = load_dataset(e);
    std::optional<Localizer<float>> loc;
    json outputs = json::array();
    for (Combo c : todo) {
        const std::string name = votenet_checkpoint_name(e, c.mode, c.source);
        VotingTrainOptions opt;
        opt.source = e.voting.mask_source;
        opt.flip_probability = e.voting.flip_probability;
        opt.modalities = e.voting.modalities;
        opt.views = e.voting.views;
        opt.crop = e.voting.crop;
        opt.crops_per_case = e.voting.crops_per_case;
        opt.tumor_bias = e.voting.tumor_bias;
        std::vector<VoteInput> train_votes, val_votes;
        if (opt.source == MaskSource::samba) {
            const PromptModel<float> m = load_samba(e, c);
            if (needs_localizer(c.source) && !loc) loc = load_checked_localizer(e);
            const PromptContext ctx = make_context(e, c.source, loc ? &*loc : nullptr);
            for (const Case& k : d.train) train_votes.push_back(assemble_votes(k, m, ctx, opt.modalities, opt.views));
            for (const Case& k : d.val) val_votes.push_back(assemble_votes(k, m, ctx, opt.modalities, opt.views));
            opt.train_votes = &train_votes;
            opt.val_votes = &val_votes;
        }
        VoteNetConfig cfg;
        cfg.in_channels = int(opt.modalities.size() * opt.views.size());
        cfg.widths = e.voting.widths;
        cfg.seed = e.voting.train.seed;
        VoteNet<float> net(cfg);
        log(o) << "train " << name << ": " << e.voting.train.epochs << " epochs, " << net.parameter_count()
               << " parameters\n";
        const TrainHistory h = train_voting(net, d, opt, e.voting.train);
        const fs::path dir = checkpoint_dir(e, name);
        save_checkpoint(dir, net, checkpoint_meta(e, name));
        write_history(e, name, h);
        if (!h.epochs.empty())
            log(o) << "  val wt " << fmt(h.epochs.back().val.at("wt")) << " (majority "
                   << fmt(h.epochs.back().val.at("majority_wt")) << ")\n";
        outputs.push_back(dir.generic_string());
    }
    write_provenance(e, "train_voting", outputs);
}

/// Axial slice with the largest whole-tumor area (the middle slice when there is none).
int overlay_slice(const LabelVolume& labels) {
    int best = labels.shape.d / 2;
    std::size_t most = 0;
    for (int z = 0; z < labels.shape.d; ++z) {
        std::size_t n = 0;
        for (int y = 0; y < labels.shape.h; ++y)
            for (int x = 0; x < labels.shape.w; ++x) n += labels.at(z, y, x) != kBackground;
        if (n > most) most = n, best = z;
    }
    return best;
}

Mask2D foreground(const LabelSlice& s) {
    Mask2D m(s.h, s.w);
    for (std::size_t i = 0; i < s.data.size(); ++i) m.data[i] = s.data[i] != kBackground;
    return m;
}

LabelVolume as_labels(const BinaryVolume& b) {
    LabelVolume l(b.shape);
    for (std::size_t i = 0; i < b.data.size(); ++i) l.data[i] = b.data[i] ? 1 : 0;
    return l;
}

}  // namespace

fs::path data_dir(const Experiment& e) { return e.workdir / "data"; }
fs::path checkpoint_dir(const Experiment& e, const std::string& name) { return e.workdir / "checkpoints" / name; }
fs::path eval_dir(const Experiment& e) { return e.workdir / "eval"; }

std::string samba_checkpoint_name(Mode m, PromptSource s) {
    return "samba_" + std::string(mode_name(m)) + "_" + std::string(prompt_source_name(s));
}

std::string votenet_checkpoint_name(const Experiment& e, Mode m, PromptSource s) {
    if (e.voting.mask_source == MaskSource::truth_noisy) return "votenet_truth_noisy";
    return "votenet_" + std::string(mode_name(m)) + "_" + std::string(prompt_source_name(s));
}

Dataset load_dataset(const Experiment& e) {
    const fs::path man = data_dir(e) / "manifest.json";
    if (!fs::exists(man)) throw MissingArtifactError(man.string() + " (run `samba gen`)");
    const json j = read_json(man);
    Dataset d;
    try {
        if (j.at("dataset_hash").get<std::string>() != e.dataset_hash())
            throw ConfigError(man.string() + " was generated from a different dataset config; rerun `samba gen --force`");
        for (const char* split : {"train", "val"})
            for (const auto& row : j.at(split)) {
                const fs::path p = data_dir(e) / row.at("file").get<std::string>();
                if (!fs::exists(p)) throw MissingArtifactError(p.string());
                Case c = load_case(p);
                const auto seed = row.at("seed").get<std::uint64_t>();
                if (std::string(split) == "train") {
                    d.train.push_back(std::move(c));
                    d.train_seeds.push_back(seed);
                } else {
                    d.val.push_back(std::move(c));
                    d.val_seeds.push_back(seed);
                }
            }
    } catch (const json::exception& err) {
        throw FormatError(FormatErrorKind::Metadata, man.string() + ": " + err.what());
    }
    return d;
}

void cmd_gen(const Experiment& e, const Options& o) {
    const fs::path man = data_dir(e) / "manifest.json";
    if (skip_existing(man, o)) return;
    const Dataset d = generate_dataset(e.dataset.n, e.dataset.phantom, e.dataset.quality, e.dataset.seed);
    fs::create_directories(data_dir(e));
    json j{{"format", "samba-dataset"},
           {"config_hash", e.hash()},
           {"dataset_hash", e.dataset_hash()},
           {"quality", e.dataset.quality.is_standard() ? "standard" : "degraded"},
           {"n", e.dataset.n},
           {"train", json::array()},
           {"val", json::array()}};
    auto emit = [&](const std::vector<Case>& cases, const std::vector<std::uint64_t>& seeds, const char* split) {
        for (std::size_t i = 0; i < cases.size(); ++i) {
            save_case(cases[i], case_file(e, cases[i].id));
            j[split].push_back({{"id", cases[i].id}, {"file", cases[i].id + ".svol"}, {"seed", seeds[i]}});
        }
    };
    emit(d.train, d.train_seeds, "train");
    emit(d.val, d.val_seeds, "val");
    write_text(man, j.dump(2) + "\n");
    log(o) << "gen: " << d.train.size() << " train / " << d.val.size() << " val cases -> " << data_dir(e).string()
           << "\n";
    write_provenance(e, "gen", {man.generic_string()});
}

void cmd_train(const Experiment& e, const std::string& stage, const Options& o) {
    if (stage == "foundation") return train_foundation(e, o);
    if (stage == "localizer") return train_localizer_stage(e, o);
    if (stage == "samba") return train_samba_stage(e, o);
    if (stage == "voting") return train_voting_stage(e, o);
    throw ConfigError("unknown stage '" + stage + "' (foundation | localizer | samba | voting)");
}

void cmd_eval(const Experiment& e, const Options& o) {
    const fs::path grid_path = eval_dir(e) / "grid.txt";
    if (skip_existing(grid_path, o)) return;
    const Dataset d = load_dataset(e);
    std::optional<PromptModel<float>> foundation;
    std::optional<Localizer<float>> loc;
    std::map<std::string, PromptModel<float>> models;
    std::map<std::string, VoteNet<float>> nets;

    std::vector<EvalReport> reports;
    json outputs = json::array();
    for (const Condition& cond : e.eval.conditions) {
        const PromptModel<float>* model = nullptr;
        if (cond.model == ModelKind::foundation) {
            if (!foundation) foundation = load_checked_promptnet(foundation_dir(e), "run `samba train --stage foundation`");
            model = &*foundation;
        } else {
            const std::string name = samba_checkpoint_name(cond.mode, cond.source);
            if (!models.count(name)) models.emplace(name, load_samba(e, {cond.mode, cond.source}));
            model = &models.at(name);
        }
        if (needs_localizer(cond.source) && !loc) loc = load_checked_localizer(e);
        const PromptContext ctx = make_context(e, cond.source, loc ? &*loc : nullptr);
        const VoteNet<float>* net = nullptr;
        if (cond.fusion == Fusion::votenet) {
            const std::string name = votenet_checkpoint_name(e, cond.mode, cond.source);
            if (!nets.count(name)) {
                const fs::path dir = checkpoint_dir(e, name);
                if (!checkpoint_exists(dir))
                    throw MissingArtifactError((dir / "manifest.json").string() + " (run `samba train --stage voting`)");
                nets.emplace(name, load_votenet(dir));
            }
            net = &nets.at(name);
        }

        const bool binary = cond.fusion == Fusion::majority ||
                            (cond.fusion == Fusion::none && (cond.model == ModelKind::foundation || cond.mode == Mode::binary));
        std::map<std::string, LabelVolume> first_pred;
        CasePipeline pipeline = [&](const Case& c) {
            std::vector<LabelVolume> preds;
            if (cond.fusion == Fusion::votenet) {
                preds.push_back(fuse_case(c, *model, *net, ctx, e.voting.modalities, e.voting.views));
            } else if (cond.fusion == Fusion::majority) {
                preds.push_back(as_labels(majority_vote(assemble_votes(c, *model, ctx, e.voting.modalities, e.voting.views))));
            } else {
                const auto prompts = case_prompts(c, ViewAxis::axial, ctx);
                for (Modality m : e.eval.binary_modalities) {
                    if (model->n_classes() == 1)
                        preds.push_back(as_labels(threshold_volume(probability_volume(*model, c.modality(m), ViewAxis::axial, prompts))));
                    else
                        preds.push_back(multiclass_volume(*model, c.modality(m), prompts));
                }
            }
            if (int(first_pred.size()) < e.eval.overlays) first_pred.emplace(c.id, preds.front());
            return preds;
        };
        EvalReport r = evaluate_dataset(d.val, pipeline, cond.label(), binary);
        if (needs_localizer(cond.source)) {
            std::vector<std::optional<Detection>> dets;
            std::vector<std::optional<Box>> truth;
            for (const Case& c : d.val) {
                const auto cd = case_detections(c, ViewAxis::axial, *loc, e.localizer.modality, e.localizer.conf_threshold);
                dets.insert(dets.end(), cd.begin(), cd.end());
                for (int z = 0; z < c.shape().d; ++z) truth.push_back(box_from_labels(slice_at(c.labels, ViewAxis::axial, z)));
            }
            r.localization = localization_metrics(dets, truth, d.val.front().shape().h, d.val.front().shape().w);
        }
        const std::string slug = cond.slug();
        json j = r.to_json();
        j["slug"] = slug;
        j["config_hash"] = e.hash();
        write_text(eval_dir(e) / (slug + ".json"), j.dump(2) + "\n");
        write_text(eval_dir(e) / (slug + ".csv"), "# config_hash " + e.hash() + "\n" + r.to_csv());
        outputs.push_back((eval_dir(e) / (slug + ".json")).generic_string());
        for (const Case& c : d.val) {
            auto it = first_pred.find(c.id);
            if (it == first_pred.end()) continue;
            const int z = overlay_slice(c.labels);
            const fs::path png = eval_dir(e) / "overlays" / (slug + "_" + c.id + ".png");
            fs::create_directories(png.parent_path());
            write_png(png, overlay(slice_at(c.modality(Modality::flair), ViewAxis::axial, z),
                                   foreground(slice_at(c.labels, ViewAxis::axial, z)),
                                   foreground(slice_at(it->second, ViewAxis::axial, z))));
            outputs.push_back(png.generic_string());
        }
        log(o) << "eval " << slug << ": WT " << fmt(r.aggregate.composites[2]) << "\n";
        reports.push_back(std::move(r));
    }
    const std::string grid = "config " + e.hash() + "\n" + format_grid(reports);
    write_text(grid_path, grid);
    outputs.push_back(grid_path.generic_string());
    log(o) << grid;
    write_provenance(e, "eval", outputs);
}

namespace {

struct SliceRef {
    std::size_t case_index;
    int z;
};

/// Whole-tumor pixel closest to the box centre.
PointPrompt tumor_point(const LabelSlice& labels, const Box& b) {
    const double cy = 0.5 * (b.y_min + b.y_max), cx = 0.5 * (b.x_min + b.x_max);
    PointPrompt best{b.x_min, b.y_min, Polarity::positive};
    double bd = 1e300;
    for (int y = b.y_min; y <= b.y_max; ++y)
        for (int x = b.x_min; x <= b.x_max; ++x) {
            if (labels.at(y, x) == kBackground) continue;
            const double dd = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            if (dd < bd) bd = dd, best = {x, y, Polarity::positive};
        }
    return best;
}

}  // namespace

void cmd_sensitivity(const Experiment& e, const Options& o) {
    const fs::path out = e.workdir / "sensitivity.json";
    if (skip_existing(out, o)) return;
    const Dataset d = load_dataset(e);
    std::vector<std::pair<std::string, PromptModel<float>>> models;
    models.emplace_back("foundation", load_checked_promptnet(foundation_dir(e), "run `samba train --stage foundation`"));
    const std::string own = samba_checkpoint_name(e.samba.mode, e.samba.source);
    models.emplace_back(own, load_samba(e, {e.samba.mode, e.samba.source}));

    std::vector<SliceRef> tumor_slices;
    for (std::size_t ci = 0; ci < d.val.size(); ++ci)
        for (int z = 0; z < d.val[ci].shape().d; ++z)
            if (box_from_labels(slice_at(d.val[ci].labels, ViewAxis::axial, z))) tumor_slices.push_back({ci, z});
    if (tumor_slices.empty()) throw ValidationError("sensitivity: validation split has no tumor slices");
    const std::size_t n = std::min<std::size_t>(std::size_t(e.eval.sensitivity_slices), tumor_slices.size());
    std::vector<SliceRef> picked;
    for (std::size_t k = 0; k < n; ++k) picked.push_back(tumor_slices[k * tumor_slices.size() / n]);

    const Modality mod = Modality::flair;
    json j{{"config_hash", e.hash()}, {"modality", modality_name(mod)}, {"slices", json::array()}, {"models", json::object()}};
    for (const auto& s : picked) j["slices"].push_back({{"case", d.val[s.case_index].id}, {"z", s.z}});
    for (const auto& [name, m] : models) {
        json per = json::object();
        for (const char* kind : {"box", "point"}) {
            json rows = json::array();
            double sum_min = 0.0, sum_mean = 0.0, worst = 1.0;
            for (const auto& s : picked) {
                const Case& c = d.val[s.case_index];
                const LabelSlice labels = slice_at(c.labels, ViewAxis::axial, s.z);
                const Box box = *box_from_labels(labels);
                const Prompt prompt = std::string(kind) == "box" ? Prompt(box) : Prompt(tumor_point(labels, box));
                const SensitivityReport r = prompt_sensitivity(m, slice_at(c.modality(mod), ViewAxis::axial, s.z), prompt);
                rows.push_back({{"case", c.id}, {"z", s.z}, {"min_iou", r.min_iou}, {"mean_iou", r.mean_iou},
                                {"ious", r.ious}});
                sum_min += r.min_iou;
                sum_mean += r.mean_iou;
                worst = std::min(worst, r.min_iou);
            }
            per[kind] = {{"mean_min_iou", sum_min / double(n)},
                         {"mean_iou", sum_mean / double(n)},
                         {"worst_iou", worst},
                         {"slices", rows}};
            log(o) << "sensitivity " << name << " " << kind << ": mean min IoU " << fmt(sum_min / double(n)) << "\n";
        }
        j["models"][name] = per;
    }
    write_text(out, j.dump(2) + "\n");
    write_provenance(e, "sensitivity", {out.generic_string()});
}

namespace {

/// Published values for the same condition taxonomy on real scans, shown as context only.
std::string reference_value(const Condition& c) {
    const std::string s = c.slug();
    if (s == "binary_full_brain_box_none") return "63.3 / 72.2";
    if (s == "binary_truth_box_none") return "84.6 / 89.4";
    if (s == "binary_localizer_none") return "33.7 / -";
    if (s == "multiclass_truth_box_none") return "60.4 (mean) / -";
    if (s == "multiclass_localizer_none") return "12.8 ET, 16.8 TC, 50.9 WT / -";
    if (s == "foundation_truth_box_none") return "- / 73.6";
    if (c.fusion == Fusion::votenet && c.source == PromptSource::localizer) return "~43 / -";
    return "-";
}

std::string pct(double v) { return std::isnan(v) ? "n/a" : fmt(100.0 * v, 1); }

}  // namespace

void cmd_report(const Experiment& e, const Options& o) {
    const fs::path out = e.workdir / "report.md";
    if (skip_existing(out, o)) return;
    const json man = read_json(data_dir(e) / "manifest.json");
    std::ostringstream md;
    md << "# Phantom results\n\n";
    md << "Config hash `" << e.hash() << "`. Dataset: " << man.at("train").size() << " train / " << man.at("val").size()
       << " val phantom cases, " << man.at("quality").get<std::string>() << " quality.\n\n";
    md << "## Dice on the validation split (%)\n\n";
    md << "| Condition | ET | TC | WT | Mean | Published reference, real MRI (BraTS-Africa / BraTS 2021), not reproduced |\n";
    md << "|---|---|---|---|---|---|\n";
    std::vector<std::pair<Condition, EvalReport>> rows;
    for (const Condition& c : e.eval.conditions) {
        const json j = read_json(eval_dir(e) / (c.slug() + ".json"));
        EvalReport r = EvalReport::from_json(j);
        const auto& a = r.aggregate.composites;
        md << "| " << c.label() << " | " << pct(a[0]) << " | " << pct(a[1]) << " | " << pct(a[2]) << " | "
           << pct(r.aggregate.mean_composites) << " | " << reference_value(c) << " |\n";
        rows.emplace_back(c, std::move(r));
    }
    md << "\nBinary conditions are scored on WT only; their ET and TC cells are n/a.\n";

    bool header = false;
    for (const auto& [c, r] : rows) {
        if (!r.localization) continue;
        if (!header) {
            md << "\n## Localizer on the validation split\n\n| Condition | Accuracy | Mean confidence | Mean box loss |\n|---|---|---|---|\n";
            header = true;
        }
        md << "| " << c.label() << " | " << pct(r.localization->accuracy) << " | " << fmt(r.localization->mean_confidence, 3)
           << " | " << fmt(r.localization->mean_box_loss, 3) << " |\n";
    }
    if (header) md << "\nPublished reference (not reproduced): accuracy 96.7, confidence 0.87, box loss 1.24.\n";

    const fs::path sens = e.workdir / "sensitivity.json";
    if (fs::exists(sens)) {
        const json s = read_json(sens);
        md << "\n## Prompt sensitivity (IoU under unit prompt shifts)\n\n| Model | Prompt | Mean min IoU | Mean IoU | Worst |\n|---|---|---|---|---|\n";
        for (const auto& [name, per] : s.at("models").items())
            for (const char* kind : {"box", "point"}) {
                const auto& k = per.at(kind);
                md << "| " << name << " | " << kind << " | " << fmt(k.at("mean_min_iou").get<double>(), 3) << " | "
                   << fmt(k.at("mean_iou").get<double>(), 3) << " | " << fmt(k.at("worst_iou").get<double>(), 3) << " |\n";
            }
    }
    write_text(out, md.str());
    log(o) << md.str();
    write_provenance(e, "report", {out.generic_string()});
}

}  // namespace samba::app
