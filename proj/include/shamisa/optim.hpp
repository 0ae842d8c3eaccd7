#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "shamisa/tensor.hpp"

namespace shamisa {

using ParamSet = std::map<std::string, Tensor>;

struct SgdConfig {
    double lr = 1.5e-3;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    // Cosine annealing with warm restarts.
    std::size_t restart_period = 1000;
    double period_mult = 2.0;
    double min_lr_ratio = 0.01;
    // Global gradient-norm ceiling; 0 disables clipping.
    double clip_norm = 0.0;

    void validate() const;
};

// Closed-form cosine value at position `t` inside a cycle of length `period`.
double cosine_anneal(double base, double floor, double t, double period);

// Learning rate at a global step, walking restart cycles whose lengths grow
// by `period_mult`.
double scheduled_lr(const SgdConfig& cfg, std::size_t step);

// SGD with heavy-ball momentum and coupled weight decay:
//   v <- mu * v + g + wd * p;  p <- p - lr(step) * v
// With clip_norm > 0, g is first rescaled so its global norm is at most
// clip_norm.
class Sgd {
public:
    explicit Sgd(SgdConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    double step(ParamSet& params, const ParamSet& grads, std::size_t step_index);

    const SgdConfig& config() const { return cfg_; }
    double last_grad_norm() const { return last_norm_; }
    ParamSet& momentum() { return momentum_; }
    const ParamSet& momentum() const { return momentum_; }

private:
    SgdConfig cfg_;
    ParamSet momentum_;
    double last_norm_ = 0.0;
};

}  // namespace shamisa
