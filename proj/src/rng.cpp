#include "shamisa/rng.hpp"

#include <cmath>
#include <numbers>

namespace shamisa {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {
std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fold(std::uint64_t key, std::string_view name,
                   std::initializer_list<std::uint64_t> indices) {
    std::uint64_t h = mix64(key ^ fnv1a(name));
    for (auto v : indices) h = mix64(h ^ mix64(v + 0x632BE59BD9B4E019ull));
    return h;
}
}  // namespace

RngStream RngStream::derive(std::uint64_t master, std::string_view name,
                            std::initializer_list<std::uint64_t> indices) {
    return RngStream(fold(mix64(master), name, indices));
}

RngStream RngStream::child(std::string_view name, std::initializer_list<std::uint64_t> indices) const {
    return RngStream(fold(key_, name, indices));
}

std::uint64_t RngStream::next_u64() {
    return mix64(key_ ^ mix64(counter_++));
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::below(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

}  // namespace shamisa
