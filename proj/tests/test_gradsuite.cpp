#include <set>

#include "doctest.h"
#include "shamisa/gradsuite.hpp"

using namespace shamisa;

TEST_CASE("gradient suite covers every primitive and loss term") {
    const auto entries = run_gradient_suite(1);
    std::set<std::string> names;
    for (const auto& e : entries) {
        names.insert(e.name);
        CHECK_MESSAGE(e.passed, e.name, " ", e.worst);
        CHECK(e.cases >= 5);
    }
    for (const char* n : {"add", "subtract", "multiply", "scale", "matmul", "conv2d", "relu", "exp", "log", "sqrt",
                          "square", "sum", "mean", "row_softmax", "global_avg_pool", "pair_sq_dist", "soft_assign",
                          "loss_var", "loss_cov", "graph_regularizer", "ot_loss", "total_loss"})
        CHECK_MESSAGE(names.count(n) == 1, n);
}

TEST_CASE("gradient suite is deterministic and reports failures") {
    const auto a = run_gradient_suite(3), b = run_gradient_suite(3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].max_rel_error == b[i].max_rel_error);
    // an impossible tolerance fails every check
    for (const auto& e : run_gradient_suite(3, 0.0)) CHECK_FALSE(e.passed);
}
