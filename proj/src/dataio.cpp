#include "shamisa/dataio.hpp"

#include <png.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include "shamisa/binio.hpp"
#include "shamisa/rng.hpp"

namespace shamisa::io {

namespace {

Image decode_ppm(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 2;
    auto next_token = [&]() -> long {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError("ppm: malformed header");
        long v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > (1L << 24)) throw FormatError("ppm: header value too large");
        }
        return v;
    };
    const long w = next_token(), h = next_token(), maxval = next_token();
    if (w <= 0 || h <= 0) throw FormatError("ppm: non-positive dimensions");
    if (maxval != 255) throw FormatError("ppm: unsupported bit depth (maxval " + std::to_string(maxval) + ")");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("ppm: malformed header");
    ++pos;
    const std::size_t expected = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
    const std::size_t actual = bytes.size() - pos;
    if (actual < expected)
        throw FormatError("ppm: truncated payload, expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(actual));
    Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    for (std::size_t i = 0; i < expected; ++i) img.data[i] = bytes[pos + i] / 255.0;
    return img;
}

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw FormatError(std::string("png: ") + png.message);
    if (png.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&png);
        throw FormatError("png: unsupported bit depth (16-bit)");
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr))
        throw FormatError(std::string("png: ") + png.message);
    Image img(png.height, png.width);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = buf[i] / 255.0;
    return img;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    return s.substr(b);
}

}  // namespace

Image decode_image(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
    if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G')
        return decode_png(bytes);
    throw FormatError("unrecognized image format (expected P6 PPM or PNG)");
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.data.size());
    for (double v : img.data) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    return out;
}

Image read_image(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return decode_image(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    auto bytes = encode_ppm(img);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<ManifestRecord> parse_manifest(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("manifest: empty file");
    auto header = split_csv(trim(line));
    for (auto& h : header) h = trim(h);
    if (header.size() < 2 || header[0] != "path" || header[1] != "score")
        throw FormatError("manifest: header must start with 'path,score'");
    int ref_col = -1, split_col = -1;
    for (std::size_t c = 2; c < header.size(); ++c) {
        if (header[c] == "ref_id" && ref_col < 0) ref_col = static_cast<int>(c);
        else if (header[c] == "split" && split_col < 0) split_col = static_cast<int>(c);
        else throw FormatError("manifest: unexpected column '" + header[c] + "'");
    }
    std::vector<ManifestRecord> out;
    std::set<std::string> seen;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty()) continue;
        auto cols = split_csv(line);
        if (cols.size() != header.size())
            throw FormatError("manifest line " + std::to_string(lineno) + ": expected " +
                              std::to_string(header.size()) + " columns, got " + std::to_string(cols.size()));
        ManifestRecord r;
        r.path = trim(cols[0]);
        if (r.path.empty()) throw FormatError("manifest line " + std::to_string(lineno) + ": empty path");
        try {
            std::size_t used = 0;
            r.score = std::stod(trim(cols[1]), &used);
        } catch (const std::exception&) {
            throw FormatError("manifest line " + std::to_string(lineno) + ": unparsable score '" + cols[1] + "'");
        }
        if (!std::isfinite(r.score))
            throw FormatError("manifest line " + std::to_string(lineno) + ": non-finite score");
        if (ref_col >= 0) r.ref_id = trim(cols[static_cast<std::size_t>(ref_col)]);
        if (split_col >= 0) r.split = trim(cols[static_cast<std::size_t>(split_col)]);
        if (!seen.insert(r.path).second)
            throw FormatError("manifest line " + std::to_string(lineno) + ": duplicate path '" + r.path + "'");
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_manifest(ss.str());
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    bool has_ref = !records.empty() && records.front().ref_id.has_value();
    bool has_split = !records.empty() && records.front().split.has_value();
    os << "path,score" << (has_ref ? ",ref_id" : "") << (has_split ? ",split" : "") << '\n';
    os.precision(17);
    for (const auto& r : records) {
        os << r.path << ',' << r.score;
        if (has_ref) os << ',' << r.ref_id.value_or("");
        if (has_split) os << ',' << r.split.value_or("");
        os << '\n';
    }
}

void export_features(const std::filesystem::path& out, const std::vector<std::vector<double>>& features,
                     const std::vector<std::string>& paths) {
    if (features.size() != paths.size())
        throw std::invalid_argument("export_features: " + std::to_string(features.size()) + " rows but " +
                                    std::to_string(paths.size()) + " paths");
    const std::size_t cols = features.empty() ? 0 : features.front().size();
    for (const auto& row : features)
        if (row.size() != cols) throw std::invalid_argument("export_features: ragged feature rows");
    std::ofstream os(out, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + out.string() + " for writing");
    binio::put_magic(os, "SHAF");
    binio::put_uint<std::uint32_t>(os, kFeatureFileVersion);
    binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(features.size()));
    binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(cols));
    for (const auto& row : features)
        for (double v : row) binio::put_f32(os, static_cast<float>(v));
    for (const auto& p : paths) {
        binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(p.size()));
        os.write(p.data(), static_cast<std::streamsize>(p.size()));
    }
    if (!os) throw std::runtime_error("export_features: write failed for " + out.string());
}

FeatureTable read_features(const std::filesystem::path& in) {
    std::ifstream is(in, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open feature file " + in.string());
    binio::expect_magic(is, "SHAF", "feature file");
    FeatureTable t;
    const auto version = binio::get_uint<std::uint32_t>(is);
    if (version != kFeatureFileVersion)
        throw FormatError("feature file: unsupported version " + std::to_string(version));
    t.rows = binio::get_uint<std::uint32_t>(is);
    t.cols = binio::get_uint<std::uint32_t>(is);
    t.values.resize(static_cast<std::size_t>(t.rows) * t.cols);
    for (auto& v : t.values) v = binio::get_f32(is);
    for (std::uint32_t r = 0; r < t.rows; ++r) {
        const auto len = binio::get_uint<std::uint32_t>(is);
        std::string p(len, '\0');
        if (!is.read(p.data(), len)) throw FormatError("feature file: truncated path index");
        t.paths.push_back(std::move(p));
    }
    return t;
}

Image generate_fixture_image(std::size_t size, std::uint64_t seed, std::size_t index) {
    RngStream rng = RngStream::derive(seed, "fixture", {index});
    const double pi = std::numbers::pi;
    const double s = static_cast<double>(size);
    Image img(size, size);

    double c0[3], c1[3], tint[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = 0.1 + 0.8 * rng.uniform();
        c1[c] = 0.1 + 0.8 * rng.uniform();
        tint[c] = 0.3 + 0.7 * rng.uniform();
    }
    const double grad_angle = 2 * pi * rng.uniform();
    const double tex_amp = 0.05 + 0.2 * rng.uniform();
    const double tex_freq = 2.0 + 10.0 * rng.uniform();
    const double tex_angle = pi * rng.uniform();
    const double tex_phase = 2 * pi * rng.uniform();

    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves(6);
    for (auto& w : waves) {
        w = {1.0 + 5.0 * rng.uniform(), 1.0 + 5.0 * rng.uniform(), 2 * pi * rng.uniform(), 0.02 + 0.04 * rng.uniform()};
        if (rng.uniform() < 0.5) w.fx = -w.fx;
    }

    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double u = x / s, v = y / s;
            double t = 0.5 + 0.5 * ((u - 0.5) * std::cos(grad_angle) + (v - 0.5) * std::sin(grad_angle)) * 1.4;
            t = std::clamp(t, 0.0, 1.0);
            const double tex =
                tex_amp * std::sin(2 * pi * tex_freq * (u * std::cos(tex_angle) + v * std::sin(tex_angle)) + tex_phase);
            double band = 0.0;
            for (const auto& w : waves) band += w.amp * std::sin(2 * pi * (w.fx * u + w.fy * v) + w.phase);
            for (std::size_t c = 0; c < 3; ++c)
                img.at(y, x, c) = (1 - t) * c0[c] + t * c1[c] + tex * tint[c] + band;
        }

    const std::size_t shapes = 2 + rng.below(5);
    for (std::size_t k = 0; k < shapes; ++k) {
        const bool circle = rng.uniform() < 0.5;
        const double cx = s * rng.uniform(), cy = s * rng.uniform();
        const double r = s * (0.06 + 0.2 * rng.uniform());
        const double alpha = 0.6 + 0.4 * rng.uniform();
        double col[3];
        for (auto& c : col) c = rng.uniform();
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const bool inside = circle ? dx * dx + dy * dy <= r * r : std::abs(dx) <= r && std::abs(dy) <= 0.6 * r;
                if (!inside) continue;
                for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = (1 - alpha) * img.at(y, x, c) + alpha * col[c];
            }
    }
    clamp_unit(img);
    return img;
}

std::vector<ManifestRecord> generate_fixture_corpus(std::size_t n, std::size_t size, std::uint64_t seed,
                                                    const std::filesystem::path& out_dir) {
    if (n == 0) throw std::invalid_argument("fixture corpus needs n >= 1");
    if (size < 32) throw std::invalid_argument("fixture corpus needs size >= 32");
    std::filesystem::create_directories(out_dir);
    std::vector<ManifestRecord> records;
    for (std::size_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%04zu.ppm", i);
        write_ppm(out_dir / name, generate_fixture_image(size, seed, i));
        records.push_back({name, 1.0, std::to_string(i), std::nullopt});
    }
    write_manifest(out_dir / "manifest.csv", records);
    return records;
}

std::vector<Image> load_images(const std::vector<ManifestRecord>& records, const std::filesystem::path& base_dir) {
    std::vector<Image> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        std::filesystem::path p(r.path);
        out.push_back(read_image(p.is_absolute() ? p : base_dir / p));
    }
    return out;
}

}  // namespace shamisa::io
