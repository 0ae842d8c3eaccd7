#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "shamisa/image.hpp"

namespace shamisa::io {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// P6 PPM (maxval 255) or 8-bit RGB/RGBA PNG. Values are scaled to [0, 1].
Image decode_image(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_ppm(const Image& img);

Image read_image(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

struct ManifestRecord {
    std::string path;
    double score = 0.0;
    std::optional<std::string> ref_id;
    std::optional<std::string> split;
};

// CSV with header `path,score[,ref_id][,split]`. Rejects duplicate paths and
// non-finite scores, naming the offending line.
std::vector<ManifestRecord> parse_manifest(const std::string& text);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

// Feature file layout (little-endian):
//   "SHAF" | version u32 | rows u32 | cols u32 | f32 payload rows x cols |
//   rows x (path length u32 | UTF-8 path)
inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct FeatureTable {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> values;
    std::vector<std::string> paths;
};

void export_features(const std::filesystem::path& out, const std::vector<std::vector<double>>& features,
                     const std::vector<std::string>& paths);
FeatureTable read_features(const std::filesystem::path& in);

// Procedural pristine corpus: smooth gradients, oriented textures, shapes and
// band-limited noise. Writes img_XXXX.ppm plus manifest.csv into `out_dir`.
std::vector<ManifestRecord> generate_fixture_corpus(std::size_t n, std::size_t size, std::uint64_t seed,
                                                    const std::filesystem::path& out_dir);
Image generate_fixture_image(std::size_t size, std::uint64_t seed, std::size_t index);

std::vector<Image> load_images(const std::vector<ManifestRecord>& records,
                               const std::filesystem::path& base_dir);

}  // namespace shamisa::io
