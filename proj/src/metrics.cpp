#include "samba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "samba/errors.hpp"

namespace samba {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Counts {
    std::size_t a = 0, b = 0, both = 0;
};

Counts count(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, const char* what) {
    if (a.size() != b.size())
        throw ValidationError(std::string(what) + ": mask sizes differ (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    Counts c;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        c.a += x;
        c.b += y;
        c.both += x && y;
    }
    return c;
}

nlohmann::json num(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double num_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

nlohmann::json scores_json(const CaseScores& s) {
    return {{"id", s.id},
            {"netc", num(s.classes[0])},
            {"snfh", num(s.classes[1])},
            {"et_class", num(s.classes[2])},
            {"et", num(s.composites[0])},
            {"tc", num(s.composites[1])},
            {"wt", num(s.composites[2])},
            {"mean", num(s.mean_composites)}};
}

CaseScores scores_from(const nlohmann::json& j) {
    CaseScores s;
    s.id = j.at("id").get<std::string>();
    s.classes = {num_from(j.at("netc")), num_from(j.at("snfh")), num_from(j.at("et_class"))};
    s.composites = {num_from(j.at("et")), num_from(j.at("tc")), num_from(j.at("wt"))};
    s.mean_composites = num_from(j.at("mean"));
    return s;
}

std::string cell(double v) {
    if (std::isnan(v)) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    const Counts c = count(a, b, "dice");
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * double(c.both) / double(c.a + c.b);
}

double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    const Counts c = count(a, b, "iou");
    const std::size_t uni = c.a + c.b - c.both;
    if (uni == 0) return 1.0;
    return double(c.both) / double(uni);
}

SensitivityReport prompt_sensitivity(const MaskPredictor& predict, const Image2D& slice, const Prompt& prompt) {
    validate(prompt, slice.h, slice.w);
    const Mask2D base = predict(slice, prompt);
    SensitivityReport r;
    double sum = 0;
    for (const auto& [dx, dy] : kUnitShifts) {
        const Prompt p = shifted(prompt, dx, dy);
        if (!in_bounds(p, slice.h, slice.w)) {
            r.skipped.push_back({dx, dy});
            continue;
        }
        const double v = iou(base.data, predict(slice, p).data);
        r.shifts.push_back({dx, dy});
        r.ious.push_back(v);
        sum += v;
    }
    if (r.ious.empty()) throw ValidationError("prompt_sensitivity: every shifted prompt falls outside the slice");
    r.min_iou = *std::min_element(r.ious.begin(), r.ious.end());
    r.mean_iou = sum / double(r.ious.size());
    return r;
}

SensitivityReport prompt_sensitivity(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt) {
    if (m.n_classes() == 1)
        return prompt_sensitivity([&](const Image2D& s, const Prompt& p) { return predict_binary(m, s, p); }, slice,
                                  prompt);
    return prompt_sensitivity(
        [&](const Image2D& s, const Prompt& p) {
            LabelSlice l = predict_multiclass(m, s, p);
            for (auto& v : l.data) v = v != kBackground;
            return l;
        },
        slice, prompt);
}

LocalizationMetrics localization_metrics(const std::vector<std::optional<Detection>>& detections,
                                         const std::vector<std::optional<Box>>& truth, int image_h, int image_w) {
    if (detections.size() != truth.size())
        throw ValidationError("localization_metrics: " + std::to_string(detections.size()) + " detections for " +
                              std::to_string(truth.size()) + " slices");
    LocalizationMetrics m;
    m.slices = truth.size();
    std::size_t correct = 0;
    double conf = 0, loss = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool d = detections[i].has_value(), t = truth[i].has_value();
        correct += d == t;
        if (d && t) {
            ++m.true_positives;
            conf += detections[i]->confidence;
            loss += box_loss(detections[i]->box, *truth[i], image_h, image_w);
        }
    }
    m.accuracy = m.slices ? double(correct) / double(m.slices) : 1.0;
    if (m.true_positives) {
        m.mean_confidence = conf / double(m.true_positives);
        m.mean_box_loss = loss / double(m.true_positives);
    }
    return m;
}

CaseScores score_case(const LabelVolume& truth, const LabelVolume& pred, bool binary, std::string id) {
    if (!(truth.shape == pred.shape)) throw ValidationError("score_case: prediction shape differs from labels");
    CaseScores s;
    s.id = std::move(id);
    if (binary) {
        s.classes = {kNaN, kNaN, kNaN};
        s.composites = {kNaN, kNaN, dice(composite_mask(truth.data, Composite::wt), composite_mask(pred.data,
                                                                                                   Composite::wt))};
        s.mean_composites = s.composites[2];
        return s;
    }
    const std::uint8_t codes[3] = {kNetc, kSnfh, kEt};
    std::vector<std::uint8_t> a(truth.data.size()), b(truth.data.size());
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = truth.data[i] == codes[c];
            b[i] = pred.data[i] == codes[c];
        }
        s.classes[std::size_t(c)] = dice(a, b);
    }
    for (Composite c : {Composite::et, Composite::tc, Composite::wt})
        s.composites[std::size_t(c)] = dice(composite_mask(truth.data, c), composite_mask(pred.data, c));
    s.mean_composites = (s.composites[0] + s.composites[1] + s.composites[2]) / 3.0;
    return s;
}

CaseScores mean_scores(const std::vector<CaseScores>& rows, std::string id) {
    auto mean_of = [&](auto get) {
        double sum = 0;
        std::size_t n = 0;
        for (const auto& r : rows) {
            const double v = get(r);
            if (std::isnan(v)) continue;
            sum += v;
            ++n;
        }
        return n ? sum / double(n) : kNaN;
    };
    CaseScores m;
    m.id = std::move(id);
    for (std::size_t i = 0; i < 3; ++i) {
        m.classes[i] = mean_of([i](const CaseScores& r) { return r.classes[i]; });
        m.composites[i] = mean_of([i](const CaseScores& r) { return r.composites[i]; });
    }
    m.mean_composites = mean_of([](const CaseScores& r) { return r.mean_composites; });
    return m;
}

EvalReport evaluate_dataset(const std::vector<Case>& cases, const CasePipeline& pipeline, const std::string& condition,
                            bool binary) {
    if (cases.empty()) throw ValidationError("evaluate_dataset: no cases");
    EvalReport r;
    r.condition = condition;
    r.binary = binary;
    for (const Case& c : cases) {
        const auto preds = pipeline(c);
        if (preds.empty()) throw ValidationError("evaluate_dataset: pipeline returned no prediction for " + c.id);
        std::vector<CaseScores> per;
        for (const auto& p : preds) per.push_back(score_case(c.labels, p, binary, c.id));
        r.cases.push_back(mean_scores(per, c.id));
    }
    r.aggregate = mean_scores(r.cases, "mean");
    return r;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["condition"] = condition;
    j["mode"] = binary ? "binary" : "multiclass";
    j["aggregate"] = scores_json(aggregate);
    j["cases"] = nlohmann::json::array();
    for (const auto& c : cases) j["cases"].push_back(scores_json(c));
    if (localization)
        j["localization"] = {{"accuracy", localization->accuracy},
                             {"mean_confidence", localization->mean_confidence},
                             {"mean_box_loss", localization->mean_box_loss},
                             {"slices", localization->slices},
                             {"true_positives", localization->true_positives}};
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    try {
        EvalReport r;
        r.condition = j.at("condition").get<std::string>();
        r.binary = j.at("mode").get<std::string>() == "binary";
        r.aggregate = scores_from(j.at("aggregate"));
        for (const auto& c : j.at("cases")) r.cases.push_back(scores_from(c));
        if (j.contains("localization")) {
            const auto& l = j["localization"];
            r.localization = LocalizationMetrics{l.at("accuracy").get<double>(), l.at("mean_confidence").get<double>(),
                                                 l.at("mean_box_loss").get<double>(), l.at("slices").get<std::size_t>(),
                                                 l.at("true_positives").get<std::size_t>()};
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Metadata, std::string("eval report: ") + e.what());
    }
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "condition,case,netc,snfh,et_class,et,tc,wt,mean\n";
    auto row = [&](const CaseScores& s) {
        os << '"' << condition << "\"," << s.id << ',' << cell(s.classes[0]) << ',' << cell(s.classes[1]) << ','
           << cell(s.classes[2]) << ',' << cell(s.composites[0]) << ',' << cell(s.composites[1]) << ','
           << cell(s.composites[2]) << ',' << cell(s.mean_composites) << '\n';
    };
    for (const auto& c : cases) row(c);
    row(aggregate);
    return os.str();
}

std::string format_grid(const std::vector<EvalReport>& reports) {
    std::size_t width = 9;
    for (const auto& r : reports) width = std::max(width, r.condition.size());
    std::ostringstream os;
    auto pad = [](const std::string& s, std::size_t n) { return s + std::string(n > s.size() ? n - s.size() : 0, ' '); };
    os << pad("condition", width) << "  " << pad("ET", 8) << pad("TC", 8) << pad("WT", 8) << "mean\n";
    for (const auto& r : reports) {
        const auto& a = r.aggregate;
        os << pad(r.condition, width) << "  " << pad(cell(a.composites[0]), 8) << pad(cell(a.composites[1]), 8)
           << pad(cell(a.composites[2]), 8) << cell(a.mean_composites) << '\n';
    }
    return os.str();
}

}  // namespace samba
