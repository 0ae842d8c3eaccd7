#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "shamisa/image.hpp"
#include "shamisa/rng.hpp"

namespace shamisa {

enum class Category : int {
    Brightness = 0,
    Blur,
    Spatial,
    Noise,
    Color,
    Compression,
    SharpnessContrast,
};
inline constexpr int kNumCategories = 7;
const char* category_name(Category c);

// (normalized severity, native parameter), strictly increasing in severity
// with endpoints 0 and 1.
using AnchorTable = std::array<std::pair<double, double>, 5>;

struct DistortionFunction {
    std::string id;
    Category category = Category::Brightness;
    AnchorTable anchors{};
    bool stochastic = false;
    // Image, native parameter, random stream (used only when stochastic).
    std::function<Image(const Image&, double, RngStream&)> apply;

    double native_min() const { return anchors.front().second; }
    double native_max() const { return anchors.back().second; }
};

void validate_anchors(const AnchorTable& anchors);

// Severity u in [0,1] to native parameter by linear interpolation between
// bracketing anchors.
double calibrate_severity(const AnchorTable& anchors, double u);
double calibrate_severity(const DistortionFunction& fn, double u);
// Inverse map, native parameter to normalized severity. Requires native
// parameters to be strictly monotone across the table.
double normalize_severity(const AnchorTable& anchors, double native);

// Runs fn at normalized severity u, then clamps to [0,1].
Image apply_at_severity(const DistortionFunction& fn, const Image& img, double u, RngStream& rng);

class DistortionRegistry {
public:
    void add(DistortionFunction fn);
    const std::vector<DistortionFunction>& functions() const { return functions_; }
    const DistortionFunction& get(const std::string& id) const;
    std::vector<const DistortionFunction*> in_category(Category c) const;

    // One or two functions per category: brighten/darken, gaussian_blur,
    // pixelate, white_noise, desaturate, block_dct, contrast_reduce.
    static DistortionRegistry standard();

private:
    std::vector<DistortionFunction> functions_;
};

// Atomic operations exposed for direct testing.
namespace distort {
Image brightness_shift(const Image& img, double delta);
Image gaussian_blur(const Image& img, double sigma);
Image pixelate(const Image& img, double block);
Image white_noise(const Image& img, double sigma, RngStream& rng);
Image desaturate(const Image& img, double amount);
Image block_dct_quantize(const Image& img, double step);
Image contrast_reduce(const Image& img, double amount);
}  // namespace distort

}  // namespace shamisa
