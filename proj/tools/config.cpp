#include <cstdio>
#include <fstream>
#include <set>

#include "app.hpp"
#include "samba/errors.hpp"
#include "samba/rng.hpp"

namespace samba::app {

using nlohmann::json;

std::string_view mode_name(Mode m) { return m == Mode::binary ? "binary" : "multiclass"; }

std::string_view fusion_name(Fusion f) {
    switch (f) {
        case Fusion::none: return "none";
        case Fusion::votenet: return "votenet";
        case Fusion::majority: return "majority";
    }
    return "none";
}

std::string_view model_kind_name(ModelKind k) { return k == ModelKind::samba ? "samba" : "foundation"; }

namespace {

Mode parse_mode(std::string_view s) {
    if (s == "binary") return Mode::binary;
    if (s == "multiclass") return Mode::multiclass;
    throw ConfigError("unknown mode '" + std::string(s) + "' (binary | multiclass)");
}

Fusion parse_fusion(std::string_view s) {
    if (s == "none") return Fusion::none;
    if (s == "votenet") return Fusion::votenet;
    if (s == "majority") return Fusion::majority;
    throw ConfigError("unknown fusion '" + std::string(s) + "' (none | votenet | majority)");
}

ModelKind parse_model_kind(std::string_view s) {
    if (s == "samba") return ModelKind::samba;
    if (s == "foundation") return ModelKind::foundation;
    throw ConfigError("unknown model '" + std::string(s) + "' (samba | foundation)");
}

std::string pretty_source(PromptSource s) {
    switch (s) {
        case PromptSource::truth_box: return "tumor box";
        case PromptSource::full_brain_box: return "full brain box";
        case PromptSource::localizer: return "localizer box";
    }
    return "";
}

/// Strict view over one JSON object: every key must be consumed before finish().
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + " has the wrong type");
        }
    }

    void get_string(const char* key, std::string& out) { get(key, out); }

    template <class F>
    void with(const char* key, F&& f) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        Reader sub(j_.at(key), child(key));
        f(sub);
        sub.finish();
    }

    template <class F>
    void each(const char* key, F&& f) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& arr = j_.at(key);
        if (!arr.is_array()) throw ConfigError(where(key) + " must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Reader sub(arr[i], child(key) + "[" + std::to_string(i) + "]");
            f(sub);
            sub.finish();
        }
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown key " + where(k.c_str()));
    }

    std::string child(const char* key) const { return path_.empty() ? std::string(key) : path_ + "." + key; }
    std::string where(const char* key = nullptr) const {
        return "'" + (key ? child(key) : path_.empty() ? std::string("<root>") : path_) + "'";
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_train(Reader& r, TrainConfig& t) {
    r.get("epochs", t.epochs);
    r.get("learning_rate", t.learning_rate);
    r.get("batch_size", t.batch_size);
    r.get("seed", t.seed);
}

json train_json(const TrainConfig& t) {
    return {{"epochs", t.epochs}, {"learning_rate", t.learning_rate}, {"batch_size", t.batch_size}, {"seed", t.seed}};
}

template <class E, class P>
std::vector<E> read_names(Reader& r, const char* key, std::vector<E> fallback, P parse) {
    std::vector<std::string> names;
    bool present = false;
    {
        std::vector<std::string> tmp;
        r.get(key, tmp);
        present = !tmp.empty();
        names = std::move(tmp);
    }
    if (!present) return fallback;
    std::vector<E> out;
    for (const auto& n : names) {
        try {
            out.push_back(parse(n));
        } catch (const std::runtime_error&) {
            throw ConfigError("unknown name '" + n + "' in " + r.where(key));
        }
    }
    return out;
}

template <class E, class F>
json names_json(const std::vector<E>& v, F name) {
    json a = json::array();
    for (E e : v) a.push_back(std::string(name(e)));
    return a;
}

}  // namespace

std::string Condition::label() const {
    if (!name.empty()) return name;
    std::string s = model == ModelKind::foundation ? "Foundation (no fine-tuning)" : mode == Mode::binary ? "Binary" : "Multi-class";
    s += ", " + pretty_source(source);
    if (fusion != Fusion::none) s += ", " + std::string(fusion_name(fusion)) + " fusion";
    return s;
}

std::string Condition::slug() const {
    std::string s = model == ModelKind::foundation ? "foundation" : std::string(mode_name(mode));
    return s + "_" + std::string(prompt_source_name(source)) + "_" + std::string(fusion_name(fusion));
}

json Experiment::to_json() const {
    const auto& p = dataset.phantom;
    const auto& q = dataset.quality;
    const auto& f = foundation;
    json j;
    j["dataset"] = {{"n", dataset.n},
                    {"seed", dataset.seed},
                    {"phantom",
                     {{"shape", {p.shape.d, p.shape.h, p.shape.w}},
                      {"tumor_count", p.tumor_count},
                      {"radius_min", p.radius_min},
                      {"radius_max", p.radius_max},
                      {"rim_fraction", p.rim_fraction},
                      {"halo_fraction", p.halo_fraction},
                      {"noise_sigma", p.noise_sigma}}},
                    {"quality",
                     {{"downsample_factor", q.downsample_factor},
                      {"extra_noise_sigma", q.extra_noise_sigma},
                      {"slice_thickness_factor", q.slice_thickness_factor}}}};
    j["foundation"] = {{"samples", f.samples}, {"epochs", f.epochs},   {"size", f.size},
                       {"batch_size", f.batch_size}, {"learning_rate", f.learning_rate}, {"seed", f.seed}};
    json loc = train_json(localizer.train);
    loc["modality"] = modality_name(localizer.modality);
    loc["conf_threshold"] = localizer.conf_threshold;
    loc["model"] = {{"widths", localizer.model.widths}, {"seed", localizer.model.seed}};
    j["localizer"] = loc;
    const auto& m = samba.model;
    j["samba"] = {{"mode", mode_name(samba.mode)},
                  {"prompt_source", prompt_source_name(samba.source)},
                  {"modalities", names_json(samba.modalities, modality_name)},
                  {"binary", train_json(samba.binary)},
                  {"multiclass", train_json(samba.multiclass)},
                  {"model",
                   {{"c_img", m.c_img},
                    {"encoder_widths", m.encoder_widths},
                    {"decoder_widths", m.decoder_widths},
                    {"seed", m.seed}}}};
    json vot = train_json(voting.train);
    vot["enabled"] = voting.enabled;
    vot["mask_source"] = mask_source_name(voting.mask_source);
    vot["flip_probability"] = voting.flip_probability;
    vot["modalities"] = names_json(voting.modalities, modality_name);
    vot["views"] = names_json(voting.views, view_name);
    vot["widths"] = voting.widths;
    vot["crop"] = {voting.crop.d, voting.crop.h, voting.crop.w};
    vot["crops_per_case"] = voting.crops_per_case;
    vot["tumor_bias"] = voting.tumor_bias;
    j["voting"] = vot;
    json conds = json::array();
    for (const auto& c : eval.conditions)
        conds.push_back({{"name", c.label()},
                         {"model", model_kind_name(c.model)},
                         {"mode", mode_name(c.mode)},
                         {"prompt_source", prompt_source_name(c.source)},
                         {"fusion", fusion_name(c.fusion)}});
    j["eval"] = {{"conditions", conds},
                 {"binary_modalities", names_json(eval.binary_modalities, modality_name)},
                 {"sensitivity_slices", eval.sensitivity_slices},
                 {"overlays", eval.overlays}};
    j["paths"] = {{"workdir", workdir.generic_string()}};
    return j;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string Experiment::hash() const {
    json j = to_json();
    j.erase("paths");
    return hex64(fnv1a(j.dump()));
}

std::string Experiment::dataset_hash() const { return hex64(fnv1a(to_json().at("dataset").dump())); }

namespace {

void validate_experiment(const Experiment& e) {
    if (e.dataset.n < 4) throw ConfigError("'dataset.n' must be at least 4");
    validate(e.dataset.phantom);
    validate(e.dataset.quality);
    e.foundation.validate();
    e.localizer.train.validate();
    if (!(e.localizer.conf_threshold > 0.0 && e.localizer.conf_threshold < 1.0))
        throw ConfigError("'localizer.conf_threshold' must lie in (0, 1)");
    e.samba.binary.validate();
    e.samba.multiclass.validate();
    if (e.samba.modalities.empty()) throw ConfigError("'samba.modalities' must not be empty");
    e.voting.train.validate();
    if (!(e.voting.flip_probability >= 0.0 && e.voting.flip_probability <= 0.5))
        throw ConfigError("'voting.flip_probability' must lie in [0, 0.5]");
    if (e.voting.modalities.empty() || e.voting.views.empty())
        throw ConfigError("'voting.modalities' and 'voting.views' must not be empty");
    if (e.voting.crops_per_case < 1) throw ConfigError("'voting.crops_per_case' must be positive");
    if (!(e.voting.tumor_bias >= 0.0 && e.voting.tumor_bias <= 1.0))
        throw ConfigError("'voting.tumor_bias' must lie in [0, 1]");
    for (int v : {e.voting.crop.d, e.voting.crop.h, e.voting.crop.w})
        if (v < votenet::kMultiple || v % votenet::kMultiple)
            throw ConfigError("'voting.crop' entries must be positive multiples of 4");
    if (e.eval.sensitivity_slices < 0 || e.eval.overlays < 0)
        throw ConfigError("'eval.sensitivity_slices' and 'eval.overlays' must be non-negative");
    std::set<std::string> slugs;
    for (const auto& c : e.eval.conditions) {
        if (c.model == ModelKind::foundation && (c.mode != Mode::binary || c.fusion == Fusion::votenet))
            throw ConfigError("foundation conditions support binary mode without votenet fusion only");
        if (c.fusion == Fusion::votenet && !e.voting.enabled)
            throw ConfigError("condition '" + c.label() + "' uses votenet fusion but voting is disabled");
        if (!slugs.insert(c.slug()).second) throw ConfigError("duplicate eval condition '" + c.slug() + "'");
    }
}

}  // namespace

Experiment parse_experiment(const json& root) {
    Experiment e;
    Reader r(root, "");
    r.with("dataset", [&](Reader& d) {
        d.get("n", e.dataset.n);
        d.get("seed", e.dataset.seed);
        d.with("phantom", [&](Reader& p) {
            auto& ph = e.dataset.phantom;
            std::vector<int> shape;
            p.get("shape", shape);
            if (!shape.empty()) {
                if (shape.size() != 3) throw ConfigError("'dataset.phantom.shape' must have three entries");
                ph.shape = {shape[0], shape[1], shape[2]};
            }
            p.get("tumor_count", ph.tumor_count);
            p.get("radius_min", ph.radius_min);
            p.get("radius_max", ph.radius_max);
            p.get("rim_fraction", ph.rim_fraction);
            p.get("halo_fraction", ph.halo_fraction);
            p.get("noise_sigma", ph.noise_sigma);
        });
        d.with("quality", [&](Reader& q) {
            q.get("downsample_factor", e.dataset.quality.downsample_factor);
            q.get("extra_noise_sigma", e.dataset.quality.extra_noise_sigma);
            q.get("slice_thickness_factor", e.dataset.quality.slice_thickness_factor);
        });
    });
    r.with("foundation", [&](Reader& f) {
        f.get("samples", e.foundation.samples);
        f.get("epochs", e.foundation.epochs);
        f.get("size", e.foundation.size);
        f.get("batch_size", e.foundation.batch_size);
        f.get("learning_rate", e.foundation.learning_rate);
        f.get("seed", e.foundation.seed);
    });
    r.with("localizer", [&](Reader& l) {
        read_train(l, e.localizer.train);
        std::string mod(modality_name(e.localizer.modality));
        l.get_string("modality", mod);
        try {
            e.localizer.modality = parse_modality(mod);
        } catch (const FormatError&) {
            throw ConfigError("unknown modality '" + mod + "' in 'localizer.modality'");
        }
        l.get("conf_threshold", e.localizer.conf_threshold);
        l.with("model", [&](Reader& m) {
            m.get("widths", e.localizer.model.widths);
            m.get("seed", e.localizer.model.seed);
        });
    });
    r.with("samba", [&](Reader& s) {
        std::string mode(mode_name(e.samba.mode)), src(prompt_source_name(e.samba.source));
        s.get_string("mode", mode);
        s.get_string("prompt_source", src);
        e.samba.mode = parse_mode(mode);
        e.samba.source = parse_prompt_source(src);
        e.samba.modalities = read_names(s, "modalities", e.samba.modalities, parse_modality);
        s.with("binary", [&](Reader& t) { read_train(t, e.samba.binary); });
        s.with("multiclass", [&](Reader& t) { read_train(t, e.samba.multiclass); });
        s.with("model", [&](Reader& m) {
            m.get("c_img", e.samba.model.c_img);
            m.get("encoder_widths", e.samba.model.encoder_widths);
            m.get("decoder_widths", e.samba.model.decoder_widths);
            m.get("seed", e.samba.model.seed);
        });
    });
    r.with("voting", [&](Reader& v) {
        read_train(v, e.voting.train);
        v.get("enabled", e.voting.enabled);
        std::string ms(mask_source_name(e.voting.mask_source));
        v.get_string("mask_source", ms);
        e.voting.mask_source = parse_mask_source(ms);
        v.get("flip_probability", e.voting.flip_probability);
        e.voting.modalities = read_names(v, "modalities", e.voting.modalities, parse_modality);
        e.voting.views = read_names(v, "views", e.voting.views, parse_view);
        v.get("widths", e.voting.widths);
        std::vector<int> crop;
        v.get("crop", crop);
        if (!crop.empty()) {
            if (crop.size() != 3) throw ConfigError("'voting.crop' must have three entries");
            e.voting.crop = {crop[0], crop[1], crop[2]};
        }
        v.get("crops_per_case", e.voting.crops_per_case);
        v.get("tumor_bias", e.voting.tumor_bias);
    });
    r.with("eval", [&](Reader& ev) {
        ev.each("conditions", [&](Reader& c) {
            Condition cond;
            std::string model("samba"), mode("binary"), src("truth_box"), fusion("none");
            c.get_string("name", cond.name);
            c.get_string("model", model);
            c.get_string("mode", mode);
            c.get_string("prompt_source", src);
            c.get_string("fusion", fusion);
            cond.model = parse_model_kind(model);
            cond.mode = parse_mode(mode);
            cond.source = parse_prompt_source(src);
            cond.fusion = parse_fusion(fusion);
            e.eval.conditions.push_back(cond);
        });
        e.eval.binary_modalities = read_names(ev, "binary_modalities", e.eval.binary_modalities, parse_modality);
        ev.get("sensitivity_slices", e.eval.sensitivity_slices);
        ev.get("overlays", e.eval.overlays);
    });
    r.with("paths", [&](Reader& p) {
        std::string w = e.workdir.string();
        p.get_string("workdir", w);
        e.workdir = w;
    });
    r.finish();
    if (e.eval.conditions.empty())
        e.eval.conditions.push_back({"", ModelKind::samba, e.samba.mode, e.samba.source, Fusion::none});
    if (e.eval.binary_modalities.empty()) e.eval.binary_modalities = e.samba.modalities;
    validate_experiment(e);
    return e;
}

void apply_seed(Experiment& e, std::uint64_t seed) {
    e.dataset.seed = seed;
    e.foundation.seed = seed;
    e.localizer.train.seed = seed;
    e.localizer.model.seed = seed;
    e.samba.binary.seed = seed;
    e.samba.multiclass.seed = seed;
    e.samba.model.seed = seed;
    e.voting.train.seed = seed;
}

Experiment load_experiment(const fs::path& config, const Overrides& o) {
    std::ifstream in(config);
    if (!in) throw ConfigError("cannot read config " + config.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& err) {
        throw ConfigError(config.string() + ": " + err.what());
    }
    Experiment e = parse_experiment(j);
    if (o.seed) apply_seed(e, *o.seed);
    if (o.workdir) e.workdir = *o.workdir;
    return e;
}

}  // namespace samba::app
