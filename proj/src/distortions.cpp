#include "shamisa/distortions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace shamisa {

const char* category_name(Category c) {
    switch (c) {
        case Category::Brightness: return "brightness";
        case Category::Blur: return "blur";
        case Category::Spatial: return "spatial";
        case Category::Noise: return "noise";
        case Category::Color: return "color";
        case Category::Compression: return "compression";
        case Category::SharpnessContrast: return "sharpness_contrast";
    }
    return "?";
}

void validate_anchors(const AnchorTable& anchors) {
    if (anchors.front().first != 0.0 || anchors.back().first != 1.0)
        throw std::invalid_argument("anchor table must span severities 0 and 1");
    for (std::size_t i = 1; i < anchors.size(); ++i)
        if (!(anchors[i].first > anchors[i - 1].first))
            throw std::invalid_argument("anchor severities must be strictly increasing");
}

double calibrate_severity(const AnchorTable& anchors, double u) {
    if (!(u >= 0.0 && u <= 1.0)) throw std::out_of_range("severity must lie in [0,1], got " + std::to_string(u));
    for (std::size_t i = 1; i < anchors.size(); ++i) {
        const auto [u0, p0] = anchors[i - 1];
        const auto [u1, p1] = anchors[i];
        if (u <= u1) {
            if (u == u1) return p1;
            return p0 + (p1 - p0) * (u - u0) / (u1 - u0);
        }
    }
    return anchors.back().second;
}

double calibrate_severity(const DistortionFunction& fn, double u) { return calibrate_severity(fn.anchors, u); }

double normalize_severity(const AnchorTable& anchors, double native) {
    const bool increasing = anchors.back().second > anchors.front().second;
    auto before = [&](double a, double b) { return increasing ? a <= b : a >= b; };
    if (!before(anchors.front().second, native) || !before(native, anchors.back().second))
        throw std::out_of_range("native parameter outside the anchor range");
    for (std::size_t i = 1; i < anchors.size(); ++i) {
        const auto [u0, p0] = anchors[i - 1];
        const auto [u1, p1] = anchors[i];
        if (before(native, p1)) {
            if (native == p1) return u1;
            return u0 + (u1 - u0) * (native - p0) / (p1 - p0);
        }
    }
    return 1.0;
}

Image apply_at_severity(const DistortionFunction& fn, const Image& img, double u, RngStream& rng) {
    Image out = fn.apply(img, calibrate_severity(fn, u), rng);
    clamp_unit(out);
    return out;
}

void DistortionRegistry::add(DistortionFunction fn) {
    validate_anchors(fn.anchors);
    for (const auto& f : functions_)
        if (f.id == fn.id) throw std::invalid_argument("duplicate distortion id '" + fn.id + "'");
    functions_.push_back(std::move(fn));
}

const DistortionFunction& DistortionRegistry::get(const std::string& id) const {
    for (const auto& f : functions_)
        if (f.id == id) return f;
    throw std::out_of_range("unknown distortion '" + id + "'");
}

std::vector<const DistortionFunction*> DistortionRegistry::in_category(Category c) const {
    std::vector<const DistortionFunction*> out;
    for (const auto& f : functions_)
        if (f.category == c) out.push_back(&f);
    return out;
}

namespace distort {

Image brightness_shift(const Image& img, double delta) {
    if (delta == 0.0) return img;
    Image out = img;
    for (auto& v : out.data) v += delta;
    return out;
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= total;

    const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
    auto clampi = [](long v, long hi) { return std::clamp(v, 0L, hi - 1); };
    Image tmp(img.height, img.width), out(img.height, img.width);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img.at(y, clampi(x + i, w), c);
                tmp.at(y, x, c) = s;
            }
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(clampi(y + i, h), x, c);
                out.at(y, x, c) = s;
            }
    return out;
}

Image pixelate(const Image& img, double block) {
    const auto b = static_cast<std::size_t>(std::max(1L, std::lround(block)));
    if (b == 1) return img;
    Image out(img.height, img.width);
    for (std::size_t by = 0; by < img.height; by += b)
        for (std::size_t bx = 0; bx < img.width; bx += b) {
            const std::size_t ey = std::min(img.height, by + b), ex = std::min(img.width, bx + b);
            const double area = static_cast<double>((ey - by) * (ex - bx));
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (std::size_t y = by; y < ey; ++y)
                    for (std::size_t x = bx; x < ex; ++x) s += img.at(y, x, c);
                for (std::size_t y = by; y < ey; ++y)
                    for (std::size_t x = bx; x < ex; ++x) out.at(y, x, c) = s / area;
            }
        }
    return out;
}

Image white_noise(const Image& img, double sigma, RngStream& rng) {
    if (sigma <= 0.0) return img;
    Image out = img;
    for (auto& v : out.data) v += sigma * rng.normal();
    return out;
}

namespace {
double luma(const Image& img, std::size_t y, std::size_t x) {
    return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

// Orthonormal DCT-II basis of size n: basis[k * n + i].
std::vector<double> dct_basis(std::size_t n) {
    std::vector<double> b(n * n);
    for (std::size_t k = 0; k < n; ++k) {
        const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            b[k * n + i] = scale * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
    }
    return b;
}
}  // namespace

Image desaturate(const Image& img, double amount) {
    if (amount <= 0.0) return img;
    Image out = img;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            const double g = luma(img, y, x);
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = g + (1.0 - amount) * (img.at(y, x, c) - g);
        }
    return out;
}

Image block_dct_quantize(const Image& img, double step) {
    if (step <= 0.0) return img;
    constexpr std::size_t kBlock = 8;
    Image out = img;
    for (std::size_t by = 0; by < img.height; by += kBlock)
        for (std::size_t bx = 0; bx < img.width; bx += kBlock) {
            const std::size_t nh = std::min(kBlock, img.height - by), nw = std::min(kBlock, img.width - bx);
            const auto bh = dct_basis(nh), bw = dct_basis(nw);
            std::vector<double> blk(nh * nw), tmp(nh * nw), coef(nh * nw);
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t y = 0; y < nh; ++y)
                    for (std::size_t x = 0; x < nw; ++x) blk[y * nw + x] = img.at(by + y, bx + x, c) - 0.5;
                // rows then columns
                for (std::size_t y = 0; y < nh; ++y)
                    for (std::size_t v = 0; v < nw; ++v) {
                        double s = 0.0;
                        for (std::size_t x = 0; x < nw; ++x) s += bw[v * nw + x] * blk[y * nw + x];
                        tmp[y * nw + v] = s;
                    }
                for (std::size_t u = 0; u < nh; ++u)
                    for (std::size_t v = 0; v < nw; ++v) {
                        double s = 0.0;
                        for (std::size_t y = 0; y < nh; ++y) s += bh[u * nh + y] * tmp[y * nw + v];
                        const double q = step * (1.0 + 0.5 * static_cast<double>(u + v));
                        coef[u * nw + v] = q * std::round(s / q);
                    }
                for (std::size_t y = 0; y < nh; ++y)
                    for (std::size_t v = 0; v < nw; ++v) {
                        double s = 0.0;
                        for (std::size_t u = 0; u < nh; ++u) s += bh[u * nh + y] * coef[u * nw + v];
                        tmp[y * nw + v] = s;
                    }
                for (std::size_t y = 0; y < nh; ++y)
                    for (std::size_t x = 0; x < nw; ++x) {
                        double s = 0.0;
                        for (std::size_t v = 0; v < nw; ++v) s += bw[v * nw + x] * tmp[y * nw + v];
                        out.at(by + y, bx + x, c) = s + 0.5;
                    }
            }
        }
    return out;
}

Image contrast_reduce(const Image& img, double amount) {
    if (amount <= 0.0) return img;
    double mean = 0.0;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) mean += luma(img, y, x);
    mean /= static_cast<double>(img.height * img.width);
    Image out = img;
    for (auto& v : out.data) v = mean + (1.0 - amount) * (v - mean);
    return out;
}

}  // namespace distort

DistortionRegistry DistortionRegistry::standard() {
    DistortionRegistry r;
    auto det = [](auto f) {
        return [f](const Image& img, double p, RngStream&) { return f(img, p); };
    };
    r.add({"brighten", Category::Brightness, {{{0, 0}, {0.25, 0.08}, {0.5, 0.18}, {0.75, 0.3}, {1, 0.45}}}, false,
           det([](const Image& im, double p) { return distort::brightness_shift(im, p); })});
    r.add({"darken", Category::Brightness, {{{0, 0}, {0.25, 0.08}, {0.5, 0.18}, {0.75, 0.3}, {1, 0.45}}}, false,
           det([](const Image& im, double p) { return distort::brightness_shift(im, -p); })});
    r.add({"gaussian_blur", Category::Blur, {{{0, 0}, {0.25, 0.6}, {0.5, 1.2}, {0.75, 2.0}, {1, 3.0}}}, false,
           det(distort::gaussian_blur)});
    r.add({"pixelate", Category::Spatial, {{{0, 1}, {0.25, 2}, {0.5, 3}, {0.75, 5}, {1, 8}}}, false,
           det(distort::pixelate)});
    r.add({"white_noise", Category::Noise, {{{0, 0}, {0.25, 0.03}, {0.5, 0.07}, {0.75, 0.13}, {1, 0.22}}}, true,
           [](const Image& im, double p, RngStream& rng) { return distort::white_noise(im, p, rng); }});
    r.add({"desaturate", Category::Color, {{{0, 0}, {0.25, 0.25}, {0.5, 0.5}, {0.75, 0.75}, {1, 1.0}}}, false,
           det(distort::desaturate)});
    r.add({"block_dct", Category::Compression, {{{0, 0}, {0.25, 0.03}, {0.5, 0.07}, {0.75, 0.14}, {1, 0.25}}}, false,
           det(distort::block_dct_quantize)});
    r.add({"contrast_reduce", Category::SharpnessContrast, {{{0, 0}, {0.25, 0.2}, {0.5, 0.4}, {0.75, 0.6}, {1, 0.8}}},
           false, det(distort::contrast_reduce)});
    return r;
}

}  // namespace shamisa
