#pragma once

#include "shamisa/rng.hpp"
#include "shamisa/tensor.hpp"

namespace shamisa::testing {

inline Tensor random_tensor(RngStream& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

// Values bounded away from zero, for primitives with kinks or poles at 0.
inline Tensor random_away_from_zero(RngStream& rng, Shape shape, double margin = 0.1) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) {
        double m = margin + (1.0 - margin) * rng.uniform();
        v = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

inline Tensor random_positive(RngStream& rng, Shape shape, double lo = 0.2, double hi = 2.0) {
    return random_tensor(rng, std::move(shape), lo, hi);
}

}  // namespace shamisa::testing
