#include "shamisa/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace shamisa {

void clamp_unit(Image& img) {
    for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

bool all_finite(const Image& img) {
    return std::all_of(img.data.begin(), img.data.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: image shapes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double mean_sq_diff(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mean_sq_diff: image shapes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return s / static_cast<double>(a.data.size());
}

Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    if (top + h > img.height || left + w > img.width)
        throw std::invalid_argument("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                                    std::to_string(top) + "," + std::to_string(left) +
                                    ") exceeds image " + std::to_string(img.height) + "x" +
                                    std::to_string(img.width));
    Image out(h, w);
    for (std::size_t y = 0; y < h; ++y)
        std::copy_n(img.data.begin() + static_cast<long>(((top + y) * img.width + left) * 3), w * 3,
                    out.data.begin() + static_cast<long>(y * w * 3));
    return out;
}

Image downsample_half(const Image& img) {
    const std::size_t h = img.height / 2, w = img.width / 2;
    if (h == 0 || w == 0) throw std::invalid_argument("downsample_half: image too small");
    Image out(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out.at(y, x, c) = 0.25 * (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) +
                                          img.at(2 * y + 1, 2 * x, c) + img.at(2 * y + 1, 2 * x + 1, c));
    return out;
}

Tensor to_tensor(const std::vector<const Image*>& images) {
    if (images.empty()) throw std::invalid_argument("to_tensor: no images");
    const std::size_t h = images[0]->height, w = images[0]->width;
    Tensor t({images.size(), 3, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = *images[n];
        if (img.height != h || img.width != w) throw std::invalid_argument("to_tensor: image sizes differ");
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) t[((n * 3 + c) * h + y) * w + x] = img.at(y, x, c);
    }
    return t;
}

Tensor to_tensor(const std::vector<Image>& images) {
    std::vector<const Image*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    return to_tensor(ptrs);
}

}  // namespace shamisa
