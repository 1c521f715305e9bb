#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "samba/box.hpp"
#include "samba/losses.hpp"
#include "samba/nn/layers.hpp"
#include "samba/volumes.hpp"

namespace samba {

struct LocalizerConfig {
    std::array<int, 4> widths{8, 16, 32, 32};
    std::uint64_t seed = 0;
};

namespace localizer {
/// Input pixels per grid cell along each axis.
inline constexpr int kStride = 16;
inline constexpr int kOutputs = 5;  // objectness, cx, cy, w, h
}  // namespace localizer

/// Per-cell decoded predictions, row-major over an (rows x cols) grid.
struct DetectionGrid {
    int rows = 0, cols = 0;
    std::vector<double> objectness;  // logits
    std::vector<double> cx, cy;      // in [0,1] within the cell
    std::vector<double> w, h;        // fractions of the image extent
};

struct Detection {
    Box box;
    double confidence = 0.0;
};

enum class LocalizerGroup : int { backbone = 0, head = 1 };

template <class T>
class Localizer {
public:
    explicit Localizer(const LocalizerConfig& cfg);

    const LocalizerConfig& config() const { return cfg_; }
    std::array<nn::ParamGroup<T>, 2>& groups() { return groups_; }
    const std::array<nn::ParamGroup<T>, 2>& groups() const { return groups_; }
    std::size_t parameter_count() const { return groups_[0].count() + groups_[1].count(); }

    struct Trace {
        std::array<nn::Tensor<T>, 4> in, pre, act;
        nn::Tensor<T> head_in;
    };

    /// slice (1,1,H,W), H and W multiples of 16 -> raw head output (5, 1, H/16, W/16).
    nn::Tensor<T> raw(const nn::Tensor<T>& slice, Trace* trace) const;
    void backward(const Trace& t, const nn::Tensor<T>& draw);

    DetectionGrid forward(const nn::Tensor<T>& slice) const;

private:
    LocalizerConfig cfg_;
    std::array<nn::ParamGroup<T>, 2> groups_;
    std::array<nn::Conv, 4> stages_;
    nn::Conv head_;
};

template <class T>
DetectionGrid decode_grid(const nn::Tensor<T>& raw);

/// Highest-objectness cell (row-major first on ties); none when its sigmoid confidence is
/// below the threshold. Box corners: round(center -/+ extent/2), the upper one minus 1, clipped.
std::optional<Detection> decode_detection(const DetectionGrid& grid, int image_h, int image_w,
                                          double conf_threshold = 0.5);

/// Pads the slice, runs the localizer and decodes the best cell in the original image bounds.
std::optional<Detection> detect(const Localizer<float>& m, const Image2D& slice,
                                double conf_threshold = 0.5);

/// Tight inclusive box of a composite region on one label slice.
std::optional<Box> box_from_labels(const LabelSlice& labels, Composite target = Composite::wt);

Box full_brain_box(int h, int w);

/// Continuous box [x1, x2) x [y1, y2) in pixel units.
struct BoxF {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    static BoxF from(const Box& b) { return {double(b.x_min), double(b.y_min), double(b.x_max + 1), double(b.y_max + 1)}; }
    double area() const { return (x2 - x1) * (y2 - y1); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
};

double iou(const BoxF& a, const BoxF& b);

/// (1 - IoU) + Euclidean distance between centers with x normalized by W and y by H.
double box_loss(const BoxF& pred, const BoxF& truth, int image_h, int image_w);
double box_loss(const Box& pred, const Box& truth, int image_h, int image_w);

/// Gradient of box_loss with respect to (cx, cy, width, height) of the predicted box.
struct BoxLossGrad {
    double loss = 0, d_cx = 0, d_cy = 0, d_w = 0, d_h = 0;
};
BoxLossGrad box_loss_grad(double cx, double cy, double w, double h, const BoxF& truth, int image_h,
                          int image_w);

/// Grid cell (row, col) holding the center of the box.
std::pair<int, int> responsible_cell(const Box& truth, int rows, int cols);

/// Training loss on one slice: mean objectness BCE over all cells, plus objectness BCE and
/// box_loss at the responsible cell. With no truth box every cell is a negative.
template <class T>
LossGrad<T> localizer_loss(const nn::Tensor<T>& raw, const std::optional<Box>& truth, int image_h, int image_w);

}  // namespace samba
