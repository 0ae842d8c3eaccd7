#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace shamisa {

// Counter-based random stream. Every draw is a pure function of (key,
// counter), so a stream can be saved as two integers and replayed exactly.
class RngStream {
public:
    RngStream() = default;
    explicit RngStream(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

    // Named sub-stream of a master seed, optionally keyed by indices such as
    // (i, j, k, l).
    static RngStream derive(std::uint64_t master, std::string_view name,
                            std::initializer_list<std::uint64_t> indices = {});
    RngStream child(std::string_view name, std::initializer_list<std::uint64_t> indices = {}) const;

    std::uint64_t next_u64();
    double uniform();                   // [0, 1)
    double normal();                    // standard normal, Box-Muller
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    std::size_t below(std::size_t n);   // uniform on [0, n)

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }
    void set_counter(std::uint64_t c) { counter_ = c; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);

template <class It>
void shuffle(It first, It last, RngStream& rng) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = rng.below(i);
        std::swap(first[i - 1], first[j]);
    }
}

}  // namespace shamisa
