#pragma once

#include <algorithm>
#include <stdexcept>

namespace mae {

// Axis-aligned box in image pixel coordinates, corners (x1,y1)-(x2,y2).
struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool valid() const { return x2 > x1 && y2 > y1; }

    Box clipped(double w, double h) const {
        return {std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h),
                std::clamp(x2, 0.0, w), std::clamp(y2, 0.0, h)};
    }

    bool operator==(const Box&) const = default;
};

inline double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
    double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    double inter = ix * iy;
    if (inter <= 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

}  // namespace mae
