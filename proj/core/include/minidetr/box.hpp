#pragma once

#include <array>

namespace minidetr {

// Axis-aligned box, normalized center form: (cx, cy, w, h) in [0,1].
struct Box {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;

    double x0() const { return cx - w / 2.0; }
    double y0() const { return cy - h / 2.0; }
    double x1() const { return cx + w / 2.0; }
    double y1() const { return cy + h / 2.0; }
    double area() const { return w * h; }

    static Box from_corners(double x0, double y0, double x1, double y1) {
        return Box{(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0};
    }
    std::array<double, 4> to_array() const { return {cx, cy, w, h}; }
};

// intersection-over-union; zero-area union yields 0
double iou(const Box& a, const Box& b);

bool box_in_unit_square(const Box& b, double tol = 1e-9);

}  // namespace minidetr
