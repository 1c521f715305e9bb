#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include "samba/box.hpp"
#include "samba/localizer.hpp"
#include "samba/promptnet.hpp"
#include "samba/volumes.hpp"

namespace samba {

// Masks are flat buffers; any nonzero value is foreground. Both empty scores 1.
// Throws ValidationError on a size mismatch.
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

struct SensitivityReport {
    std::vector<std::pair<int, int>> shifts;   // (dx, dy) actually evaluated
    std::vector<double> ious;                  // aligned with shifts
    std::vector<std::pair<int, int>> skipped;  // out-of-bounds shifts
    double min_iou = 1.0, mean_iou = 1.0;
};

using MaskPredictor = std::function<Mask2D(const Image2D&, const Prompt&)>;

/// Unit shifts (+x, -x, +y, -y), in that order.
inline constexpr std::array<std::pair<int, int>, 4> kUnitShifts{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

/// IoU between the mask for the prompt and the mask for each shifted prompt.
/// Throws ValidationError when the prompt itself or every shift is out of bounds.
SensitivityReport prompt_sensitivity(const MaskPredictor& predict, const Image2D& slice, const Prompt& prompt);
SensitivityReport prompt_sensitivity(const PromptModel<float>& m, const Image2D& slice, const Prompt& prompt);

struct LocalizationMetrics {
    double accuracy = 0.0;
    double mean_confidence = 0.0;  // over true positives; 0 when there are none
    double mean_box_loss = 0.0;    // over true positives
    std::size_t slices = 0, true_positives = 0;
};

/// A slice is correct when (detection present) == (truth box present).
/// Throws ValidationError on length mismatch.
LocalizationMetrics localization_metrics(const std::vector<std::optional<Detection>>& detections,
                                         const std::vector<std::optional<Box>>& truth, int image_h, int image_w);

/// NaN marks a score that does not apply (e.g. sub-classes of a binary prediction).
struct CaseScores {
    std::string id;
    std::array<double, 3> classes{};     // NETC, SNFH, ET
    std::array<double, 3> composites{};  // ET, TC, WT
    double mean_composites = 0.0;
};

/// Binary predictions (any nonzero label = tumor) are scored on WT only.
CaseScores score_case(const LabelVolume& truth, const LabelVolume& pred, bool binary, std::string id = {});
/// Element-wise mean, skipping NaN entries.
CaseScores mean_scores(const std::vector<CaseScores>& rows, std::string id);

struct EvalReport {
    std::string condition;
    bool binary = true;
    std::vector<CaseScores> cases;
    CaseScores aggregate;
    std::optional<LocalizationMetrics> localization;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    /// One row per case plus the aggregate.
    std::string to_csv() const;
};

/// One or more predictions per case (e.g. one per modality); their scores are averaged.
using CasePipeline = std::function<std::vector<LabelVolume>(const Case&)>;

EvalReport evaluate_dataset(const std::vector<Case>& cases, const CasePipeline& pipeline, const std::string& condition,
                            bool binary);

/// Plain-text grid: one row per report, columns ET, TC, WT, mean.
std::string format_grid(const std::vector<EvalReport>& reports);

}  // namespace samba
