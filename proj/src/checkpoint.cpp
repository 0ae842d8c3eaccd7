#include "shamisa/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <stdexcept>

#include "shamisa/binio.hpp"

namespace shamisa {

void write_checkpoint(std::ostream& os, const NamedTensors& entries) {
    binio::put_magic(os, "SHCK");
    binio::put_uint<std::uint32_t>(os, kCheckpointVersion);
    binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max())
            throw std::invalid_argument("checkpoint entry name too long: " + name);
        if (t.rank() > 255) throw std::invalid_argument("checkpoint entry rank too large: " + name);
        binio::put_uint<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        binio::put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
        for (auto e : t.shape()) binio::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(e));
        for (double v : t.values()) binio::put_f64(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed");
}

NamedTensors read_checkpoint(std::istream& is) {
    binio::expect_magic(is, "SHCK", "checkpoint");
    const auto version = binio::get_uint<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto count = binio::get_uint<std::uint32_t>(is);
    NamedTensors out;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = binio::get_uint<std::uint16_t>(is);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw std::runtime_error("checkpoint: truncated entry name");
        const auto rank = binio::get_uint<std::uint8_t>(is);
        Shape shape(rank);
        for (auto& x : shape) x = binio::get_uint<std::uint32_t>(is);
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = binio::get_f64(is);
        if (!out.emplace(name, Tensor(std::move(shape), std::move(data))).second)
            throw std::runtime_error("checkpoint: duplicate entry '" + name + "'");
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_checkpoint(os, entries);
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    return read_checkpoint(is);
}

}  // namespace shamisa
