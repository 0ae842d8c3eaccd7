#include "shamisa/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <tuple>
#include <vector>

namespace shamisa {

std::size_t GraphConfig::source_count() const {
    return static_cast<std::size_t>(use_grd) + use_gdd + use_grr + use_gknn + use_go;
}

TrainConfig preset_config(const std::string& name) {
    TrainConfig c;
    c.preset = name;
    if (name == "paper-a0") {
        c.engine = {2, 3, 4, 5, 7, 224};
        c.model.encoder.channels = {32, 64, 128, 256, 512};
        c.model.encoder.d_h = 2048;
        c.model.encoder.input_size = 224;
        c.model.projector = {2048, 256};
        c.graphs.k_n = 31;
        c.graphs.K_d = 4096;
        c.ot.K = 32;
        c.steps = 140000 / 6;
        c.checkpoint_interval = 5000;
    } else if (name == "desk") {
        c.engine = {2, 3, 4, 5, 7, 64};
        c.model.encoder.channels = {8, 16, 32, 64};
        c.model.encoder.d_h = 128;
        c.model.encoder.input_size = 64;
        c.model.projector = {128, 64};
        c.graphs.k_n = 7;
        c.graphs.K_d = 256;
        c.ot.K = 8;
        c.optimizer.lr = 5e-3;
        c.optimizer.momentum = 0.5;
        c.optimizer.clip_norm = 10.0;
        c.steps = 200;
        c.checkpoint_interval = 100;
    } else {
        throw ConfigError("preset", "unknown preset '" + name + "' (expected paper-a0 or desk)");
    }
    return c;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
    try {
        return static_cast<std::size_t>(std::stoull(v));
    } catch (const std::exception&) {
        throw ConfigError(key, "integer out of range: '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d))
        throw ConfigError(key, "expected a finite number, got '" + v + "'");
    return d;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
    if (out.empty()) throw ConfigError(key, "expected a comma-separated list");
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string fmt(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Field {
    std::function<void(TrainConfig&, const std::string& key, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <class T>
Field size_field(T TrainConfig::*outer, std::size_t T::*inner) {
    return {[=](TrainConfig& c, const std::string& k, const std::string& v) { c.*outer.*inner = to_size(k, v); },
            [=](const TrainConfig& c) { return std::to_string(c.*outer.*inner); }};
}

template <class T>
Field double_field(T TrainConfig::*outer, double T::*inner) {
    return {[=](TrainConfig& c, const std::string& k, const std::string& v) { c.*outer.*inner = to_double(k, v); },
            [=](const TrainConfig& c) { return fmt(c.*outer.*inner); }};
}

template <class T>
Field bool_field(T TrainConfig::*outer, bool T::*inner) {
    return {[=](TrainConfig& c, const std::string& k, const std::string& v) { c.*outer.*inner = to_bool(k, v); },
            [=](const TrainConfig& c) { return std::string(c.*outer.*inner ? "true" : "false"); }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        using C = TrainConfig;
        f["engine.B"] = size_field(&C::engine, &EngineConfig::B);
        f["engine.R"] = size_field(&C::engine, &EngineConfig::R);
        f["engine.C"] = size_field(&C::engine, &EngineConfig::C);
        f["engine.L"] = size_field(&C::engine, &EngineConfig::L);
        f["engine.M_d"] = size_field(&C::engine, &EngineConfig::M_d);
        f["engine.crop"] = {[](C& c, const std::string& k, const std::string& v) {
                                c.engine.crop = c.model.encoder.input_size = to_size(k, v);
                            },
                            [](const C& c) { return std::to_string(c.engine.crop); }};
        f["model.channels"] = {[](C& c, const std::string& k, const std::string& v) { c.model.encoder.channels = to_sizes(k, v); },
                               [](const C& c) { return fmt(c.model.encoder.channels); }};
        f["model.d_h"] = {[](C& c, const std::string& k, const std::string& v) { c.model.encoder.d_h = to_size(k, v); },
                          [](const C& c) { return std::to_string(c.model.encoder.d_h); }};
        f["model.hidden"] = {[](C& c, const std::string& k, const std::string& v) { c.model.projector.hidden = to_size(k, v); },
                             [](const C& c) { return std::to_string(c.model.projector.hidden); }};
        f["model.d_z"] = {[](C& c, const std::string& k, const std::string& v) { c.model.projector.d_z = to_size(k, v); },
                          [](const C& c) { return std::to_string(c.model.projector.d_z); }};
        f["loss.alpha"] = double_field(&C::loss, &LossWeights::alpha);
        f["loss.beta"] = double_field(&C::loss, &LossWeights::beta);
        f["loss.gamma"] = double_field(&C::loss, &LossWeights::gamma);
        f["loss.eta"] = double_field(&C::loss, &LossWeights::eta);
        f["loss.xi"] = double_field(&C::loss, &LossWeights::xi);
        f["loss.reduction"] = {[](C& c, const std::string& k, const std::string& v) {
                                   if (v == "mean") c.reduction = Reduction::Mean;
                                   else if (v == "sum") c.reduction = Reduction::Sum;
                                   else throw ConfigError(k, "expected mean or sum, got '" + v + "'");
                               },
                               [](const C& c) { return std::string(c.reduction == Reduction::Mean ? "mean" : "sum"); }};
        f["loss.var_eps"] = {[](C& c, const std::string& k, const std::string& v) { c.var_eps = to_double(k, v); },
                             [](const C& c) { return fmt(c.var_eps); }};
        f["graphs.kappa"] = double_field(&C::graphs, &GraphConfig::kappa);
        f["graphs.k_n"] = size_field(&C::graphs, &GraphConfig::k_n);
        f["graphs.K_d"] = size_field(&C::graphs, &GraphConfig::K_d);
        f["graphs.K_g_mult"] = double_field(&C::graphs, &GraphConfig::K_g_mult);
        f["graphs.w_rr"] = double_field(&C::graphs, &GraphConfig::w_rr);
        f["graphs.use_grd"] = bool_field(&C::graphs, &GraphConfig::use_grd);
        f["graphs.use_gdd"] = bool_field(&C::graphs, &GraphConfig::use_gdd);
        f["graphs.use_grr"] = bool_field(&C::graphs, &GraphConfig::use_grr);
        f["graphs.use_gknn"] = bool_field(&C::graphs, &GraphConfig::use_gknn);
        f["graphs.use_go"] = bool_field(&C::graphs, &GraphConfig::use_go);
        f["ot.K"] = size_field(&C::ot, &OtConfig::K);
        f["ot.tau_c"] = double_field(&C::ot, &OtConfig::tau_c);
        f["ot.eps_sk"] = double_field(&C::ot, &OtConfig::eps_sk);
        f["ot.iterations"] = size_field(&C::ot, &OtConfig::iterations);
        f["optimizer.lr"] = double_field(&C::optimizer, &SgdConfig::lr);
        f["optimizer.momentum"] = double_field(&C::optimizer, &SgdConfig::momentum);
        f["optimizer.weight_decay"] = double_field(&C::optimizer, &SgdConfig::weight_decay);
        f["optimizer.restart_period"] = size_field(&C::optimizer, &SgdConfig::restart_period);
        f["optimizer.period_mult"] = double_field(&C::optimizer, &SgdConfig::period_mult);
        f["optimizer.min_lr_ratio"] = double_field(&C::optimizer, &SgdConfig::min_lr_ratio);
        f["optimizer.clip_norm"] = double_field(&C::optimizer, &SgdConfig::clip_norm);
        f["eval.n_splits"] = size_field(&C::eval, &EvalConfig::n_splits);
        f["eval.split_mode"] = {[](C& c, const std::string& k, const std::string& v) {
                                    if (v != "reference_disjoint" && v != "random")
                                        throw ConfigError(k, "expected reference_disjoint or random, got '" + v + "'");
                                    c.eval.split_mode = v;
                                },
                                [](const C& c) { return c.eval.split_mode; }};
        f["eval.split_seed"] = {[](C& c, const std::string& k, const std::string& v) { c.eval.split_seed = to_size(k, v); },
                                [](const C& c) { return std::to_string(c.eval.split_seed); }};
        f["eval.gmad_bins"] = size_field(&C::eval, &EvalConfig::gmad_bins);
        f["train.steps"] = {[](C& c, const std::string& k, const std::string& v) { c.steps = to_size(k, v); },
                            [](const C& c) { return std::to_string(c.steps); }};
        f["train.checkpoint_interval"] = {
            [](C& c, const std::string& k, const std::string& v) { c.checkpoint_interval = to_size(k, v); },
            [](const C& c) { return std::to_string(c.checkpoint_interval); }};
        f["train.seed"] = {[](C& c, const std::string& k, const std::string& v) { c.seed = to_size(k, v); },
                           [](const C& c) { return std::to_string(c.seed); }};
        return f;
    }();
    return table;
}

template <class F>
void check(const std::string& key, F&& fn) {
    try {
        fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(key, e.what());
    }
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key, what);
}

}  // namespace

void TrainConfig::validate() const {
    check("engine", [&] { engine.validate(); });
    require(model.encoder.input_size == engine.crop, "engine.crop", "encoder input size must equal the crop");
    check("model", [&] { model.validate(); });
    check("loss", [&] { loss.validate(); });
    require(var_eps >= 0.0, "loss.var_eps", "must be >= 0");
    require(graphs.kappa > 0.0, "graphs.kappa", "must be > 0");
    require(graphs.k_n >= 1 && graphs.k_n < engine.rows(), "graphs.k_n", "must satisfy 1 <= k_n < N");
    require(graphs.K_g_mult >= 0.0, "graphs.K_g_mult", "must be >= 0");
    require(graphs.w_rr > 0.0 && graphs.w_rr <= 1.0, "graphs.w_rr", "must lie in (0,1]");
    require(graphs.source_count() >= 1, "graphs.use_grd", "at least one source graph must be enabled");
    require(ot.K >= 1, "ot.K", "must be >= 1");
    require(ot.tau_c > 0.0, "ot.tau_c", "must be > 0");
    require(ot.eps_sk > 0.0, "ot.eps_sk", "must be > 0");
    require(ot.iterations >= 1, "ot.iterations", "must be >= 1");
    check("optimizer", [&] { optimizer.validate(); });
    require(eval.n_splits >= 1, "eval.n_splits", "must be >= 1");
    require(eval.gmad_bins >= 1, "eval.gmad_bins", "must be >= 1");
    require(steps >= 1, "train.steps", "must be >= 1");
    require(checkpoint_interval >= 1, "train.checkpoint_interval", "must be >= 1");
}

TrainConfig parse_config(const std::string& text) {
    std::vector<std::tuple<std::size_t, std::string, std::string>> entries;
    std::istringstream is(text);
    std::string line, preset = "desk";
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key == "preset") preset = value;
        else entries.emplace_back(lineno, key, value);
    }
    TrainConfig c = preset_config(preset);
    for (const auto& [ln, key, value] : entries) {
        auto it = fields().find(key);
        if (it == fields().end()) throw ConfigError(key, "unknown config key (line " + std::to_string(ln) + ")");
        it->second.set(c, key, value);
    }
    c.validate();
    return c;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_env_overrides(TrainConfig& cfg) {
    if (const char* s = std::getenv("SHAMISA_SEED"); s && *s) cfg.seed = to_size("SHAMISA_SEED", s);
}

std::string render_config(const TrainConfig& cfg) {
    std::string out = "preset = " + cfg.preset + "\n";
    for (const auto& [key, f] : fields()) out += key + " = " + f.get(cfg) + "\n";
    return out;
}

}  // namespace shamisa
