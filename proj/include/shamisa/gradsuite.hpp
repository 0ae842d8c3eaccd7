#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace shamisa {

struct GradSuiteEntry {
    std::string name;
    std::size_t cases = 0;
    double max_rel_error = 0.0;
    std::string worst;  // case label and input of the largest error
    bool passed = false;
};

// Central finite-difference checks of every graph primitive, the soft
// assignment, each loss term and the composed objective, on at least five
// random shapes apiece.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, double tolerance = 1e-4);

}  // namespace shamisa
