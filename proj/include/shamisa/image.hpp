#pragma once

#include <cstddef>
#include <vector>

#include "shamisa/tensor.hpp"

namespace shamisa {

// H x W x 3 raster, channel-interleaved, values nominally in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w * 3, fill) {}

    double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * 3 + c]; }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

void clamp_unit(Image& img);
bool all_finite(const Image& img);
double max_abs_diff(const Image& a, const Image& b);
double mean_sq_diff(const Image& a, const Image& b);

Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
// 2x2 box-filter downsampling; odd trailing rows/columns are dropped.
Image downsample_half(const Image& img);

// Stacks equally sized images into an (N, 3, H, W) tensor.
Tensor to_tensor(const std::vector<Image>& images);
Tensor to_tensor(const std::vector<const Image*>& images);

}  // namespace shamisa
