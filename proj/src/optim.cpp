#include "shamisa/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace shamisa {

void SgdConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("optimizer.lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optimizer.momentum must be in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("optimizer.weight_decay must be >= 0");
    if (restart_period == 0) throw std::invalid_argument("optimizer.restart_period must be >= 1");
    if (period_mult < 1.0) throw std::invalid_argument("optimizer.period_mult must be >= 1");
    if (!(min_lr_ratio > 0.0) || min_lr_ratio > 1.0)
        throw std::invalid_argument("optimizer.min_lr_ratio must be in (0,1]");
    if (!(clip_norm >= 0.0) || !std::isfinite(clip_norm))
        throw std::invalid_argument("optimizer.clip_norm must be >= 0");
}

double cosine_anneal(double base, double floor, double t, double period) {
    return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * t / period));
}

double scheduled_lr(const SgdConfig& cfg, std::size_t step) {
    double t = static_cast<double>(step);
    double period = static_cast<double>(cfg.restart_period);
    while (t >= period) {
        t -= period;
        period = std::floor(period * cfg.period_mult);
    }
    return cosine_anneal(cfg.lr, cfg.lr * cfg.min_lr_ratio, t, period);
}

double Sgd::step(ParamSet& params, const ParamSet& grads, std::size_t step_index) {
    const double lr = scheduled_lr(cfg_, step_index);
    double sq = 0.0;
    for (const auto& [name, p] : params)
        if (auto git = grads.find(name); git != grads.end())
            for (double x : git->second.values()) sq += x * x;
    last_norm_ = std::sqrt(sq);
    const double gscale = cfg_.clip_norm > 0.0 && last_norm_ > cfg_.clip_norm ? cfg_.clip_norm / last_norm_ : 1.0;
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Tensor& g = git->second;
        if (g.shape() != p.shape())
            throw ShapeError("sgd: gradient for '" + name + "' has shape " + shape_str(g.shape()) +
                             ", parameter has " + shape_str(p.shape()));
        if (!g.all_finite()) throw NumericError("sgd: non-finite gradient for '" + name + "'");
        auto [it, fresh] = momentum_.try_emplace(name, Tensor(p.shape()));
        Tensor& v = it->second;
        if (v.shape() != p.shape()) throw ShapeError("sgd: momentum buffer shape mismatch for '" + name + "'");
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = cfg_.momentum * v[i] + gscale * g[i] + cfg_.weight_decay * p[i];
            p[i] -= lr * v[i];
        }
    }
    return lr;
}

}  // namespace shamisa
