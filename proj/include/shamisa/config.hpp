#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "shamisa/engine.hpp"
#include "shamisa/model.hpp"
#include "shamisa/objective.hpp"
#include "shamisa/optim.hpp"

namespace shamisa {

struct GraphConfig {
    double kappa = 2.0;
    std::size_t k_n = 31;
    std::size_t K_d = 4096;
    double K_g_mult = 8.0;  // K_g = K_g_mult * N
    double w_rr = 0.5766;
    bool use_grd = true;
    bool use_gdd = true;
    bool use_grr = true;
    bool use_gknn = true;
    bool use_go = true;

    std::size_t K_g(std::size_t n) const { return static_cast<std::size_t>(K_g_mult * static_cast<double>(n)); }
    std::size_t source_count() const;
};

struct OtConfig {
    std::size_t K = 32;
    double tau_c = 0.1;
    double eps_sk = 0.05;
    std::size_t iterations = 3;
};

struct EvalConfig {
    std::size_t n_splits = 10;
    std::string split_mode = "reference_disjoint";
    std::uint64_t split_seed = 0;
    std::size_t gmad_bins = 10;
};

struct TrainConfig {
    std::string preset = "desk";
    EngineConfig engine;
    ModelConfig model;
    LossWeights loss;
    Reduction reduction = Reduction::Mean;
    double var_eps = 1e-4;
    GraphConfig graphs;
    OtConfig ot;
    SgdConfig optimizer;
    EvalConfig eval;
    std::size_t steps = 200;
    std::size_t checkpoint_interval = 5000;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the first offending key.
    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error(key + ": " + message), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

// Known presets: "paper-a0", "desk".
TrainConfig preset_config(const std::string& name);

// Line-oriented `section.key = value` document; `#` starts a comment. An
// optional `preset = <name>` line selects the base values. Unknown keys and
// malformed or out-of-range values raise ConfigError.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);

// SHAMISA_SEED overrides train.seed when set.
void apply_env_overrides(TrainConfig& cfg);

// Every key, in a form parse_config reads back to an identical config.
std::string render_config(const TrainConfig& cfg);

}  // namespace shamisa
