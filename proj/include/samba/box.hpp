#pragma once

#include <algorithm>
#include <string>
#include <variant>

#include "samba/errors.hpp"

namespace samba {

/// Inclusive pixel box; x is the column, y the row.
struct Box {
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    /// Canonicalizes two arbitrary corners to (min, max) order.
    static Box from_corners(int xa, int ya, int xb, int yb) {
        return {std::min(xa, xb), std::min(ya, yb), std::max(xa, xb), std::max(ya, yb)};
    }

    int width() const { return x_max - x_min + 1; }
    int height() const { return y_max - y_min + 1; }
    long area() const { return long(width()) * height(); }
    bool contains(int x, int y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }

    bool in_bounds(int h, int w) const {
        return 0 <= x_min && x_min <= x_max && x_max < w && 0 <= y_min && y_min <= y_max && y_max < h;
    }
    void validate(int h, int w) const {
        if (!in_bounds(h, w))
            throw ValidationError("box (" + std::to_string(x_min) + "," + std::to_string(y_min) + "," +
                                  std::to_string(x_max) + "," + std::to_string(y_max) +
                                  ") outside " + std::to_string(h) + "x" + std::to_string(w) + " image");
    }
    Box shifted(int dx, int dy) const { return {x_min + dx, y_min + dy, x_max + dx, y_max + dy}; }

    bool operator==(const Box&) const = default;
};

enum class Polarity { negative = 0, positive = 1 };

struct PointPrompt {
    int x = 0, y = 0;
    Polarity polarity = Polarity::positive;

    bool in_bounds(int h, int w) const { return x >= 0 && x < w && y >= 0 && y < h; }
    void validate(int h, int w) const {
        if (!in_bounds(h, w))
            throw ValidationError("point (" + std::to_string(x) + "," + std::to_string(y) +
                                  ") outside " + std::to_string(h) + "x" + std::to_string(w) + " image");
    }
    PointPrompt shifted(int dx, int dy) const { return {x + dx, y + dy, polarity}; }

    bool operator==(const PointPrompt&) const = default;
};

using Prompt = std::variant<Box, PointPrompt>;

inline void validate(const Prompt& p, int h, int w) {
    std::visit([&](const auto& v) { v.validate(h, w); }, p);
}

inline Prompt shifted(const Prompt& p, int dx, int dy) {
    return std::visit([&](const auto& v) -> Prompt { return v.shifted(dx, dy); }, p);
}

inline bool in_bounds(const Prompt& p, int h, int w) {
    return std::visit([&](const auto& v) { return v.in_bounds(h, w); }, p);
}

}  // namespace samba
