#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "app.hpp"
#include "samba/checkpoint.hpp"
#include "samba/errors.hpp"
#include "samba/foundation.hpp"
#include "samba/gradcheck.hpp"
#include "samba/metrics.hpp"
#include "samba/phantom.hpp"
#include "samba/rng.hpp"
#include "samba/training.hpp"
#include "samba/voting.hpp"

using namespace samba;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("samba_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Independent brute-force references.

double ref_dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    long both = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(both) / double(na + nb);
}

double ref_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] && b[i];
        uni += a[i] || b[i];
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

Outcome criterion_metric_oracles() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    std::uniform_int_distribution<int> size(1, 12), code(0, 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const double pa = u(rng), pb = u(rng);
        const Shape3 s{size(rng), size(rng), size(rng)};
        std::vector<std::uint8_t> a(s.size()), b(s.size());
        for (auto& v : a) v = u(rng) < pa ? std::uint8_t(1 + code(rng) % 3) : 0;
        for (auto& v : b) v = u(rng) < pb ? 1 : 0;
        if (trial % 10 == 0) std::fill(a.begin(), a.end(), 0);
        if (trial % 20 == 0) std::fill(b.begin(), b.end(), 0);
        worst = std::max({worst, std::abs(dice(a, b) - ref_dice(a, b)), std::abs(iou(a, b) - ref_iou(a, b))});

        LabelVolume labels(s);
        for (auto& v : labels.data) v = std::uint8_t(code(rng));
        const CompositeRegions r = composite_regions(labels);
        for (std::size_t i = 0; i < labels.data.size(); ++i) {
            const int l = labels.data[i];
            mismatches += r.et.data[i] != (l == kEt);
            mismatches += r.tc.data[i] != (l == kEt || l == kNetc);
            mismatches += r.wt.data[i] != (l != kBackground);
        }

        LabelSlice slice(s.h, s.w);
        const double ps = u(rng) * 0.3;
        for (auto& v : slice.data) v = u(rng) < ps ? std::uint8_t(1 + code(rng) % 3) : 0;
        int x0 = s.w, y0 = s.h, x1 = -1, y1 = -1;
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                if (slice.at(y, x)) x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
        const auto box = box_from_labels(slice);
        if (x1 < 0) mismatches += box.has_value();
        else mismatches += !box || !(*box == Box{x0, y0, x1, y1});
    }
    const double secs = seconds_since(t0);
    const bool pass = worst <= 1e-12 && mismatches == 0 && secs < 30.0;
    return {pass, "1000 random masks, max metric error " + fmt("%.1e", worst) + ", " + std::to_string(mismatches) +
                      " region/box mismatches, " + fmt("%.1f", secs) + " s"};
}

Outcome criterion_sensitivity_identities() {
    Image2D img(32, 32, 0.5f);
    Mask2D fixed(32, 32);
    for (int y = 5; y < 20; ++y)
        for (int x = 7; x < 25; ++x) fixed.at(y, x) = 1;
    const auto ignoring = prompt_sensitivity([&](const Image2D&, const Prompt&) { return fixed; }, img, Prompt(Box{10, 10, 18, 20}));
    const auto interior = prompt_sensitivity(
        [](const Image2D& s, const Prompt& p) {
            const Box b = std::get<Box>(p);
            Mask2D m(s.h, s.w);
            for (int y = b.y_min; y <= b.y_max; ++y)
                for (int x = b.x_min; x <= b.x_max; ++x) m.at(y, x) = 1;
            return m;
        },
        img, Prompt(Box{10, 10, 18, 20}));
    bool pass = ignoring.min_iou == 1.0 && ignoring.mean_iou == 1.0 && interior.shifts.size() == 4;
    double plus_x = -1.0;
    for (std::size_t i = 0; i < interior.shifts.size(); ++i)
        if (interior.shifts[i] == std::pair{1, 0}) plus_x = interior.ious[i];
    pass = pass && plus_x == 0.8;
    return {pass, "prompt-ignoring min IoU " + fmt("%.17g", ignoring.min_iou) + ", 9-wide box +x shift IoU " +
                      fmt("%.17g", plus_x)};
}

Outcome criterion_gradients() {
    const auto t0 = Clock::now();
    const auto p = check_promptnet_gradients(1, true, 16);
    const auto l = check_localizer_gradients(16);
    const auto v = check_votenet_gradients(16);
    const double secs = seconds_since(t0);
    const bool pass = p.passed && l.passed && v.passed && secs < 120.0;
    return {pass, "max rel error promptnet decoder " + fmt("%.2e", p.max_rel_error) + ", localizer " +
                      fmt("%.2e", l.max_rel_error) + ", votenet " + fmt("%.2e", v.max_rel_error) + " (" +
                      std::to_string(p.checked + l.checked + v.checked) + " params, " + fmt("%.1f", secs) + " s)"};
}

Outcome criterion_votenet_budget() {
    const VoteNet<float> net(VoteNetConfig{});
    const std::size_t n = net.parameter_count();
    bool throws = false;
    try {
        VoteNetConfig small;
        small.widths = {8, 16, 32};
        VoteNet<float> tiny(small);
    } catch (const ConfigError&) {
        throws = true;
    }
    const bool pass = n >= votenet::kMinParams && n <= votenet::kMaxParams && n == 199876 && throws;
    return {pass, std::to_string(n) + " parameters (pinned 199876), out-of-band construction " +
                      (throws ? "rejected" : "accepted")};
}

// Phantom experiments.

PhantomConfig phantom() { return PhantomConfig{}; }

struct Experiments {
    PromptModel<float> foundation;
    double foundation_seconds = 0.0;
    std::map<std::uint64_t, Dataset> degraded, standard;

    explicit Experiments(PromptModel<float> f) : foundation(std::move(f)) {}

    const Dataset& data(std::uint64_t seed, bool degraded_quality) {
        auto& cache = degraded_quality ? degraded : standard;
        auto it = cache.find(seed);
        if (it == cache.end())
            it = cache.emplace(seed, generate_dataset(24, phantom(),
                                                      degraded_quality ? QualityProfile::degraded_preset() : QualityProfile{},
                                                      seed)).first;
        return it->second;
    }
};

PromptModel<float> make_foundation(double& secs) {
    const auto t0 = Clock::now();
    PromptModel<float> m(PromptNetConfig{});
    pretrain_foundation(m, FoundationConfig{});
    secs = seconds_since(t0);
    return m;
}

struct RunResult {
    double wt = 0.0, seconds = 0.0;
};

RunResult fine_tune(Experiments& x, std::uint64_t seed, bool degraded_quality, PromptSource source,
                    PromptModel<float>* out = nullptr) {
    const auto t0 = Clock::now();
    PromptModel<float> m = x.foundation;
    DecoderTrainOptions opt;
    opt.source = source;
    TrainConfig tc = TrainConfig::binary_defaults();
    tc.seed = seed;
    const TrainHistory h = train_decoder(m, x.data(seed, degraded_quality), opt, tc);
    if (out) *out = m;
    return {h.epochs.back().val.at("wt"), seconds_since(t0)};
}

constexpr std::uint64_t kSeeds[3] = {1, 2, 3};

struct Table {
    std::map<std::string, std::vector<RunResult>> runs;
};

Outcome criterion_freezing(Experiments& x, Table& t) {
    const fs::path dir = scratch("freeze");
    save_checkpoint(dir / "initial", x.foundation);
    PromptModel<float> tuned = x.foundation;
    const auto t0 = Clock::now();
    const RunResult r = fine_tune(x, kSeeds[0], true, PromptSource::truth_box, &tuned);
    const double secs = seconds_since(t0);
    t.runs["deg_truth"].push_back(r);
    save_checkpoint(dir / "final", tuned);
    const bool enc = collection_payload(dir / "initial", "encoder") == collection_payload(dir / "final", "encoder");
    const bool pr = collection_payload(dir / "initial", "prompt") == collection_payload(dir / "final", "prompt");
    const bool dec = collection_payload(dir / "initial", "decoder") != collection_payload(dir / "final", "decoder");
    fs::remove_all(dir);
    const bool pass = enc && pr && dec && secs < 300.0;
    return {pass, std::string("after 15 epochs: encoder ") + (enc ? "identical" : "CHANGED") + ", prompt " +
                      (pr ? "identical" : "CHANGED") + ", decoder " + (dec ? "changed" : "UNCHANGED") + " (" +
                      fmt("%.0f", secs) + " s)"};
}

Outcome criterion_binary_end_to_end(Experiments& x, Table& t) {
    auto& runs = t.runs["deg_truth"];
    for (std::size_t i = runs.size(); i < 3; ++i) runs.push_back(fine_tune(x, kSeeds[i], true, PromptSource::truth_box));
    int ok = 0;
    std::string scores;
    double worst_secs = 0.0;
    for (const auto& r : runs) {
        ok += r.wt >= 0.80;
        scores += (scores.empty() ? "" : ", ") + fmt("%.3f", r.wt);
        worst_secs = std::max(worst_secs, r.seconds);
    }
    const bool pass = ok >= 2 && worst_secs < 900.0;
    return {pass, "degraded 18/6 split, truth-box val WT Dice per seed [" + scores + "], " + std::to_string(ok) +
                      "/3 >= 0.80, slowest run " + fmt("%.0f", worst_secs) + " s"};
}

double mean_wt(const std::vector<RunResult>& v) {
    double s = 0.0;
    for (const auto& r : v) s += r.wt;
    return s / double(v.size());
}

Outcome criterion_ordering(Experiments& x, Table& t) {
    auto& deg_truth = t.runs["deg_truth"];
    for (std::size_t i = deg_truth.size(); i < 3; ++i) deg_truth.push_back(fine_tune(x, kSeeds[i], true, PromptSource::truth_box));
    auto& deg_full = t.runs["deg_full"];
    auto& std_truth = t.runs["std_truth"];
    for (std::uint64_t s : kSeeds) {
        deg_full.push_back(fine_tune(x, s, true, PromptSource::full_brain_box));
        std_truth.push_back(fine_tune(x, s, false, PromptSource::truth_box));
    }
    const double dt = mean_wt(deg_truth), df = mean_wt(deg_full), st = mean_wt(std_truth);
    const bool pass = dt - df >= 0.03 && st - dt >= 0.03;
    return {pass, "mean over 3 seeds: truth-box " + fmt("%.3f", dt) + " vs full-brain-box " + fmt("%.3f", df) +
                      " (margin " + fmt("%+.3f", dt - df) + "); standard " + fmt("%.3f", st) + " vs degraded " +
                      fmt("%.3f", dt) + " (margin " + fmt("%+.3f", st - dt) + ")"};
}

Outcome criterion_localizer(Experiments& x) {
    const auto t0 = Clock::now();
    const Dataset& d = x.data(kSeeds[0], true);
    LocalizerConfig cfg;
    cfg.seed = kSeeds[0];
    Localizer<float> m(cfg);
    TrainConfig tc = TrainConfig::localizer_defaults();
    tc.seed = kSeeds[0];
    LocalizerTrainOptions opt;
    opt.validate = false;
    train_localizer(m, d, opt, tc);
    const LocalizationMetrics lm = localizer_val_metrics(m, d.val, opt);

    DetectionGrid g;
    g.rows = g.cols = 4;
    g.objectness.assign(16, -10.0);
    g.cx.assign(16, 0.5);
    g.cy.assign(16, 0.5);
    g.w.assign(16, 0.1);
    g.h.assign(16, 0.1);
    g.objectness[5] = 10.0;
    g.w[5] = g.h[5] = 0.25;
    const auto det = decode_detection(g, 64, 64);
    const bool example = det && det->box == Box{16, 16, 31, 31} && det->confidence == 1.0 / (1.0 + std::exp(-10.0));
    const bool pass = lm.accuracy >= 0.90 && example;
    return {pass, "val slice accuracy " + fmt("%.3f", lm.accuracy) + " after " + std::to_string(tc.epochs) +
                      " epochs (mean confidence " + fmt("%.3f", lm.mean_confidence) + ", " +
                      fmt("%.0f", seconds_since(t0)) + " s); decode example " + (example ? "exact" : "WRONG")};
}

Outcome criterion_voting(Experiments& x) {
    double net_sum = 0.0, maj_sum = 0.0;
    std::string per;
    for (std::uint64_t s : kSeeds) {
        const Dataset& d = x.data(s, true);
        VoteNetConfig cfg;
        cfg.seed = s;
        VoteNet<float> net(cfg);
        VotingTrainOptions opt;
        opt.source = MaskSource::truth_noisy;
        opt.flip_probability = 0.1;
        opt.validate = false;
        TrainConfig tc = TrainConfig::voting_defaults();
        tc.seed = s;
        train_voting(net, d, opt, tc);
        std::vector<VoteInput> votes;
        for (std::size_t i = 0; i < d.val.size(); ++i)
            votes.push_back(noisy_truth_votes(d.val[i], opt.modalities, opt.views, opt.flip_probability,
                                              child_seed(child_seed(s, 0xacce97), i)));
        const auto m = voting_val_metrics(net, d.val, votes);
        net_sum += m.at("wt");
        maj_sum += m.at("majority_wt");
        per += (per.empty() ? "" : ", ") + fmt("%.3f", m.at("wt")) + "/" + fmt("%.3f", m.at("majority_wt"));
    }
    const double a = net_sum / 3.0, b = maj_sum / 3.0;
    return {a >= b, "10% flips, mean val WT Dice votenet " + fmt("%.3f", a) + " vs majority " + fmt("%.3f", b) +
                        " (per seed votenet/majority: " + per + ")"};
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
    std::set<std::string> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa.insert(fs::relative(e.path(), a).generic_string());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb.insert(fs::relative(e.path(), b).generic_string());
    if (fa != fb) {
        why = "file lists differ";
        return false;
    }
    for (const auto& f : fa) {
        if (f.find(".timing.") != std::string::npos) continue;
        if (slurp(a / f) != slurp(b / f)) {
            why = f + " differs";
            return false;
        }
    }
    why = std::to_string(fa.size()) + " files";
    return true;
}

int run_cli(const std::vector<std::string>& args_in) {
    std::vector<std::string> args = args_in;
    args.insert(args.begin(), "samba");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return app::run_cli(int(argv.size()), argv.data());
}

Outcome criterion_determinism(const fs::path& smoke_config) {
    const fs::path root = scratch("determinism");
    std::string why;
    bool ok = true;
    std::ostringstream quiet;
    auto* saved = std::cout.rdbuf(quiet.rdbuf());
    for (const char* w : {"a", "b"}) {
        const std::string wd = (root / w).string();
        for (std::vector<std::string> cmd :
             {std::vector<std::string>{"gen"}, {"train", "--stage", "localizer"}, {"train", "--stage", "samba"},
              {"train", "--stage", "voting"}, {"eval"}, {"sensitivity"}, {"report"}}) {
            cmd.insert(cmd.end(), {"--config", smoke_config.string(), "--workdir", wd});
            ok = ok && run_cli(cmd) == 0;
        }
    }
    std::cout.rdbuf(saved);
    const bool runs_same = ok && same_tree(root / "a", root / "b", why);
    const std::string tree = ok ? why : "pipeline command failed";

    // SVOL round trip.
    PhantomConfig pc;
    pc.seed = 11;
    const Case c = degrade(generate_case(pc, "rt"), QualityProfile::degraded_preset(), 5);
    save_case(c, root / "rt.svol");
    const Case back = load_case(root / "rt.svol");
    save_case(back, root / "rt2.svol");
    const bool svol = back == c && slurp(root / "rt.svol") == slurp(root / "rt2.svol");

    // Checkpoint round trips.
    PromptModel<float> pm(PromptNetConfig{});
    pm.freeze({Collection::encoder, Collection::prompt});
    Localizer<float> lm(LocalizerConfig{});
    VoteNet<float> vn(VoteNetConfig{});
    save_checkpoint(root / "p1", pm);
    save_checkpoint(root / "l1", lm);
    save_checkpoint(root / "v1", vn);
    save_checkpoint(root / "p2", load_promptnet(root / "p1"));
    save_checkpoint(root / "l2", load_localizer(root / "l1"));
    save_checkpoint(root / "v2", load_votenet(root / "v1"));
    std::string w1, w2, w3;
    const bool ckpt = same_tree(root / "p1", root / "p2", w1) && same_tree(root / "l1", root / "l2", w2) &&
                      same_tree(root / "v1", root / "v2", w3) &&
                      load_promptnet(root / "p1").frozen_mask() == pm.frozen_mask();
    fs::remove_all(root);
    return {runs_same && svol && ckpt, std::string("two CLI runs ") + (runs_same ? "bit-identical (" + tree + ")" : "DIFFER: " + tree) +
                                           "; SVOL round trip " + (svol ? "exact" : "MISMATCH") + "; checkpoint round trips " +
                                           (ckpt ? "exact" : "MISMATCH")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Acceptance criteria"};
    std::vector<int> only, known;
    std::string smoke = SAMBA_SMOKE_CONFIG;
    cli.add_option("--only", only, "Run only these criteria")->delimiter(',');
    cli.add_option("--known-failures", known, "Criteria whose failure does not fail the run")->delimiter(',');
    cli.add_option("--smoke-config", smoke, "Config used for the CLI determinism run");
    CLI11_PARSE(cli, argc, argv);
    auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

    auto is_known = [&](int n) { return std::find(known.begin(), known.end(), n) != known.end(); };
    int failures = 0, known_failures = 0;
    auto report = [&](int n, const char* title, const std::function<Outcome()>& f) {
        if (!wanted(n)) return;
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++(is_known(n) ? known_failures : failures);
        std::printf("%s %d %s: %s%s\n", o.pass ? "PASS" : "FAIL", n, title, o.detail.c_str(),
                    !o.pass && is_known(n) ? " [known failure]" : "");
        std::fflush(stdout);
    };

    report(1, "metric oracles", criterion_metric_oracles);
    report(2, "sensitivity identities", criterion_sensitivity_identities);
    std::optional<Experiments> x;
    Table table;
    auto experiments = [&]() -> Experiments& {
        if (!x) {
            double secs = 0.0;
            PromptModel<float> f = make_foundation(secs);
            x.emplace(std::move(f));
            x->foundation_seconds = secs;
        }
        return *x;
    };
    report(3, "freezing invariant", [&] { return criterion_freezing(experiments(), table); });
    report(4, "gradient checks", criterion_gradients);
    report(5, "votenet parameter budget", criterion_votenet_budget);
    report(6, "binary phantom end-to-end", [&] { return criterion_binary_end_to_end(experiments(), table); });
    report(7, "condition ordering", [&] { return criterion_ordering(experiments(), table); });
    report(8, "localizer", [&] { return criterion_localizer(experiments()); });
    report(9, "voting isolation", [&] { return criterion_voting(experiments()); });
    report(10, "determinism and round trips", [&] { return criterion_determinism(smoke); });
    std::printf("%d unexpected failure(s), %d known failure(s)\n", failures, known_failures);
    return failures == 0 ? 0 : 1;
}
