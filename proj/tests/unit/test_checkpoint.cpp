#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "samba/checkpoint.hpp"
#include "samba/errors.hpp"

using namespace samba;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("samba_ckpt_" + name)) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

template <class G>
bool same_values(const G& a, const G& b) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t i = 0; i < a.params.size(); ++i)
        if (std::memcmp(a.params[i].value.data(), b.params[i].value.data(), a.params[i].size() * sizeof(float)) != 0)
            return false;
    return true;
}

PromptNetConfig tiny() {
    PromptNetConfig c;
    c.c_img = 8;
    c.encoder_widths = {4, 6};
    c.decoder_widths = {6, 4, 4};
    c.n_classes = 3;
    c.seed = 12;
    return c;
}

}  // namespace

TEST_CASE("promptnet checkpoint round trip is bit-exact") {
    TempDir d("promptnet");
    PromptModel<float> m(tiny());
    m.freeze({Collection::encoder, Collection::prompt});
    m.group(Collection::decoder).params[0].value[0] = -0.0f;
    m.group(Collection::decoder).params[0].value[1] = 1e-42f;
    save_checkpoint(d.path, m, {{"note", "unit"}});
    const PromptModel<float> back = load_promptnet(d.path);
    for (int c = 0; c < 3; ++c) CHECK(same_values(m.groups()[std::size_t(c)], back.groups()[std::size_t(c)]));
    CHECK(back.frozen_mask() == m.frozen_mask());
    CHECK(back.config().n_classes == 3);
    CHECK(std::signbit(back.group(Collection::decoder).params[0].value[0]));
    CHECK(read_manifest(d.path)["metadata"]["note"] == "unit");
    CHECK(fs::exists(d.path / "encoder.stage1.conv1.weight.f32"));
    const auto& p = m.group(Collection::encoder).params[0];
    CHECK(fs::file_size(d.path / ("encoder." + p.name + ".f32")) == p.size() * 4);
    CHECK(collection_payload(d.path, "prompt").size() == m.group(Collection::prompt).count() * 4);
}

TEST_CASE("localizer and votenet checkpoints round trip") {
    TempDir d1("loc"), d2("vote");
    LocalizerConfig lc;
    lc.seed = 3;
    Localizer<float> loc(lc);
    save_checkpoint(d1.path, loc);
    const Localizer<float> lb = load_localizer(d1.path);
    CHECK(same_values(loc.groups()[0], lb.groups()[0]));
    CHECK(same_values(loc.groups()[1], lb.groups()[1]));

    VoteNetConfig vc;
    vc.in_channels = 12;
    VoteNet<float> v(vc);
    save_checkpoint(d2.path, v);
    const VoteNet<float> vb = load_votenet(d2.path);
    CHECK(vb.config().in_channels == 12);
    CHECK(same_values(v.group(), vb.group()));
    CHECK_THROWS_AS(load_localizer(d2.path), FormatError);
}

TEST_CASE("saving twice gives identical files") {
    TempDir a("a"), b("b");
    const PromptModel<float> m(tiny());
    save_checkpoint(a.path, m);
    save_checkpoint(b.path, m);
    for (const auto& e : fs::directory_iterator(a.path)) {
        std::ifstream fa(e.path(), std::ios::binary), fb(b.path / e.path().filename(), std::ios::binary);
        const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
        CHECK(sa == sb);
    }
}

TEST_CASE("checkpoint corruption is reported") {
    TempDir d("bad");
    const PromptModel<float> m(tiny());
    CHECK_THROWS_AS(load_promptnet(d.path), MissingArtifactError);
    CHECK_FALSE(checkpoint_exists(d.path));
    save_checkpoint(d.path, m);
    CHECK(checkpoint_exists(d.path));

    SUBCASE("truncated payload") {
        fs::resize_file(d.path / "decoder.head.weight.f32", 8);
        try {
            load_promptnet(d.path);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.kind() == FormatErrorKind::PayloadLength);
        }
    }
    SUBCASE("missing payload") {
        fs::remove(d.path / "decoder.head.bias.f32");
        CHECK_THROWS_AS(load_promptnet(d.path), MissingArtifactError);
    }
    SUBCASE("version and shape mismatches") {
        auto man = read_manifest(d.path);
        auto edit = [&](nlohmann::json j) {
            std::ofstream(d.path / "manifest.json") << j.dump();
        };
        auto v = man;
        v["version"] = 2;
        edit(v);
        try {
            load_promptnet(d.path);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.kind() == FormatErrorKind::VersionMismatch);
        }
        auto s = man;
        s["config"]["decoder_widths"] = {8, 4, 4};
        edit(s);
        try {
            load_promptnet(d.path);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.kind() == FormatErrorKind::ShapeMismatch);
        }
        std::ofstream(d.path / "manifest.json") << "{not json";
        CHECK_THROWS_AS(load_promptnet(d.path), FormatError);
    }
}
