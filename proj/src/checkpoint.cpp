#include "samba/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "samba/errors.hpp"
#include "samba/rng.hpp"

namespace samba {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFormat = "samba-checkpoint";

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string encode(const std::vector<float>& values) {
    std::string out(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t u = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) out[i * 4 + std::size_t(b)] = char((u >> (8 * b)) & 0xffu);
    }
    return out;
}

void decode(const std::string& bytes, std::vector<float>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= std::uint32_t(static_cast<unsigned char>(bytes[i * 4 + std::size_t(b)])) << (8 * b);
        values[i] = std::bit_cast<float>(u);
    }
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(FormatErrorKind::Io, "cannot write " + p.string());
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw FormatError(FormatErrorKind::Io, "write failed: " + p.string());
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw MissingArtifactError(p.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

json collection_json(const nn::ParamGroup<float>& g, bool frozen) {
    json params = json::array();
    for (const auto& p : g.params)
        params.push_back({{"name", p.name}, {"shape", p.shape}, {"file", g.name + "." + p.name + ".f32"}});
    return {{"name", g.name}, {"frozen", frozen}, {"digest", hex(g.digest())}, {"params", params}};
}

void save_impl(const fs::path& dir, const std::string& kind, const json& config, const json& metadata,
               const std::vector<std::pair<const nn::ParamGroup<float>*, bool>>& groups) {
    fs::create_directories(dir);
    json manifest{{"format", kFormat}, {"version", kCheckpointVersion}, {"kind", kind}, {"config", config}};
    manifest["collections"] = json::array();
    for (const auto& [g, frozen] : groups) {
        for (const auto& p : g->params) write_file(dir / (g->name + "." + p.name + ".f32"), encode(p.value));
        manifest["collections"].push_back(collection_json(*g, frozen));
    }
    manifest["metadata"] = metadata.is_null() ? json::object() : metadata;
    write_file(dir / kManifest, manifest.dump(2) + "\n");
}

const json& find_collection(const json& manifest, const std::string& name, const fs::path& dir) {
    for (const auto& c : manifest.at("collections"))
        if (c.at("name").get<std::string>() == name) return c;
    throw FormatError(FormatErrorKind::Metadata, dir.string() + ": collection '" + name + "' missing from manifest");
}

void load_group(const fs::path& dir, const json& manifest, nn::ParamGroup<float>& g, bool* frozen) {
    const json& c = find_collection(manifest, g.name, dir);
    const auto& params = c.at("params");
    if (params.size() != g.params.size())
        throw FormatError(FormatErrorKind::ShapeMismatch, dir.string() + ": collection '" + g.name + "' has " +
                                                              std::to_string(params.size()) + " tensors, expected " +
                                                              std::to_string(g.params.size()));
    for (std::size_t i = 0; i < g.params.size(); ++i) {
        auto& p = g.params[i];
        const json& pj = params[i];
        if (pj.at("name").get<std::string>() != p.name || pj.at("shape").get<std::vector<int>>() != p.shape)
            throw FormatError(FormatErrorKind::ShapeMismatch,
                              dir.string() + ": tensor " + g.name + "." + p.name + " does not match the architecture");
        const fs::path file = dir / pj.at("file").get<std::string>();
        const std::string bytes = read_file(file);
        if (bytes.size() != p.size() * 4)
            throw FormatError(FormatErrorKind::PayloadLength, file.string() + ": " + std::to_string(bytes.size()) +
                                                                  " bytes, expected " + std::to_string(p.size() * 4));
        decode(bytes, p.value);
    }
    if (frozen) *frozen = c.at("frozen").get<bool>();
}

json load_manifest_of_kind(const fs::path& dir, const std::string& kind) {
    json m = read_manifest(dir);
    if (m.at("kind").get<std::string>() != kind)
        throw FormatError(FormatErrorKind::Metadata,
                          dir.string() + ": checkpoint holds a " + m.at("kind").get<std::string>() + ", expected " + kind);
    return m;
}

template <class F>
auto guarded(const fs::path& dir, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw FormatError(FormatErrorKind::Metadata, dir.string() + ": malformed manifest: " + e.what());
    }
}

}  // namespace

json config_to_json(const PromptNetConfig& c) {
    return {{"c_img", c.c_img},
            {"encoder_widths", c.encoder_widths},
            {"decoder_widths", c.decoder_widths},
            {"n_classes", c.n_classes},
            {"seed", c.seed}};
}

json config_to_json(const LocalizerConfig& c) { return {{"widths", c.widths}, {"seed", c.seed}}; }

json config_to_json(const VoteNetConfig& c) {
    return {{"in_channels", c.in_channels}, {"widths", c.widths}, {"seed", c.seed}};
}

PromptNetConfig promptnet_config_from_json(const json& j) {
    PromptNetConfig c;
    c.c_img = j.at("c_img").get<int>();
    c.encoder_widths = j.at("encoder_widths").get<std::array<int, 2>>();
    c.decoder_widths = j.at("decoder_widths").get<std::array<int, 3>>();
    c.n_classes = j.at("n_classes").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

LocalizerConfig localizer_config_from_json(const json& j) {
    LocalizerConfig c;
    c.widths = j.at("widths").get<std::array<int, 4>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

VoteNetConfig votenet_config_from_json(const json& j) {
    VoteNetConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.widths = j.at("widths").get<std::array<int, 3>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void save_checkpoint(const fs::path& dir, const PromptModel<float>& m, const json& metadata) {
    std::vector<std::pair<const nn::ParamGroup<float>*, bool>> groups;
    for (Collection c : {Collection::encoder, Collection::prompt, Collection::decoder})
        groups.push_back({&m.group(c), m.frozen(c)});
    save_impl(dir, "promptnet", config_to_json(m.config()), metadata, groups);
}

void save_checkpoint(const fs::path& dir, const Localizer<float>& m, const json& metadata) {
    save_impl(dir, "localizer", config_to_json(m.config()), metadata,
              {{&m.groups()[0], false}, {&m.groups()[1], false}});
}

void save_checkpoint(const fs::path& dir, const VoteNet<float>& m, const json& metadata) {
    save_impl(dir, "votenet", config_to_json(m.config()), metadata, {{&m.group(), false}});
}

json read_manifest(const fs::path& dir) {
    const fs::path p = dir / kManifest;
    if (!fs::exists(p)) throw MissingArtifactError(p.string());
    return guarded(dir, [&] {
        json m = json::parse(read_file(p));
        if (m.at("format").get<std::string>() != kFormat)
            throw FormatError(FormatErrorKind::BadMagic, p.string() + ": not a checkpoint manifest");
        if (m.at("version").get<int>() != kCheckpointVersion)
            throw FormatError(FormatErrorKind::VersionMismatch,
                              p.string() + ": checkpoint version " + std::to_string(m.at("version").get<int>()) +
                                  ", expected " + std::to_string(kCheckpointVersion));
        return m;
    });
}

bool checkpoint_exists(const fs::path& dir) { return fs::exists(dir / kManifest); }

PromptModel<float> load_promptnet(const fs::path& dir) {
    return guarded(dir, [&] {
        const json m = load_manifest_of_kind(dir, "promptnet");
        PromptModel<float> model(promptnet_config_from_json(m.at("config")));
        std::array<bool, 3> frozen{};
        for (Collection c : {Collection::encoder, Collection::prompt, Collection::decoder})
            load_group(dir, m, model.group(c), &frozen[std::size_t(c)]);
        model.freeze(frozen);
        return model;
    });
}

Localizer<float> load_localizer(const fs::path& dir) {
    return guarded(dir, [&] {
        const json m = load_manifest_of_kind(dir, "localizer");
        Localizer<float> model(localizer_config_from_json(m.at("config")));
        for (auto& g : model.groups()) load_group(dir, m, g, nullptr);
        return model;
    });
}

VoteNet<float> load_votenet(const fs::path& dir) {
    return guarded(dir, [&] {
        const json m = load_manifest_of_kind(dir, "votenet");
        VoteNet<float> model(votenet_config_from_json(m.at("config")));
        load_group(dir, m, model.group(), nullptr);
        return model;
    });
}

std::string collection_payload(const fs::path& dir, const std::string& collection) {
    return guarded(dir, [&] {
        const json m = read_manifest(dir);
        std::string out;
        for (const auto& p : find_collection(m, collection, dir).at("params"))
            out += read_file(dir / p.at("file").get<std::string>());
        return out;
    });
}

}  // namespace samba
