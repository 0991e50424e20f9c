#pragma once

#include <vector>

#include "minidetr/tensor.hpp"

namespace minidetr {

// RGB raster, row-major (y, x, channel), values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // height*width*3

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, fill) {}

    double& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    size_t size() const { return pixels.size(); }
    bool empty() const { return pixels.empty(); }
};

// CHW [3,H,W] tensor view for the conv stem, and back.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

// mean squared error over all channels; images must have equal dims
double image_mse(const Image& a, const Image& b);

// clamp all pixels into [0,1] in place
void clamp_pixels(Image& img);

}  // namespace minidetr
