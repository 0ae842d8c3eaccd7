#include "shamisa/model.hpp"

#include <cmath>

#include "shamisa/checkpoint.hpp"
#include "shamisa/rng.hpp"

namespace shamisa {

void EncoderConfig::validate() const {
    if (channels.empty()) throw std::invalid_argument("encoder needs at least one conv block");
    for (auto c : channels)
        if (c == 0) throw std::invalid_argument("encoder block with zero channels");
    if (d_h == 0) throw std::invalid_argument("encoder d_h must be >= 1");
    feature_sizes(input_size);
}

std::vector<std::size_t> EncoderConfig::feature_sizes(std::size_t s) const {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < channels.size(); ++b) {
        if (s + 2 * kPadding < kKernel)
            throw std::invalid_argument("input of size " + std::to_string(s) + " vanishes at block " + std::to_string(b));
        s = (s + 2 * kPadding - kKernel) / kStride + 1;
        out.push_back(s);
    }
    return out;
}

void ProjectorConfig::validate() const {
    if (hidden == 0) throw std::invalid_argument("projector hidden width must be >= 1");
    if (d_z < 2) throw std::invalid_argument("projector d_z must be >= 2");
}

void ModelConfig::validate() const {
    encoder.validate();
    projector.validate();
}

std::size_t encoder_parameter_count(const EncoderConfig& cfg) {
    cfg.validate();
    std::size_t n = 0, in = 3;
    for (auto c : cfg.channels) {
        n += c * in * EncoderConfig::kKernel * EncoderConfig::kKernel + c;
        in = c;
    }
    return n + in * cfg.d_h + cfg.d_h;
}

std::size_t projector_parameter_count(const ModelConfig& cfg) {
    const auto& p = cfg.projector;
    return cfg.encoder.d_h * p.hidden + p.hidden + p.hidden * p.d_z + p.d_z;
}

namespace {

Tensor he_normal(RngStream& rng, Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = sd * rng.normal();
    return t;
}

std::string conv_name(std::size_t b, const char* suffix) { return "enc.conv" + std::to_string(b) + suffix; }

}  // namespace

ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    RngStream rng = RngStream::derive(seed, "init");
    constexpr std::size_t k = EncoderConfig::kKernel;
    ParamSet p;
    std::size_t in = 3;
    for (std::size_t b = 0; b < cfg.encoder.channels.size(); ++b) {
        const std::size_t out = cfg.encoder.channels[b];
        p[conv_name(b, ".w")] = he_normal(rng, {out, in, k, k}, in * k * k);
        p[conv_name(b, ".b")] = Tensor({out}, 0.0);
        in = out;
    }
    p["enc.fc.w"] = he_normal(rng, {in, cfg.encoder.d_h}, in);
    p["enc.fc.b"] = Tensor({1, cfg.encoder.d_h}, 0.0);
    p["proj.fc1.w"] = he_normal(rng, {cfg.encoder.d_h, cfg.projector.hidden}, cfg.encoder.d_h);
    p["proj.fc1.b"] = Tensor({1, cfg.projector.hidden}, 0.0);
    p["proj.fc2.w"] = he_normal(rng, {cfg.projector.hidden, cfg.projector.d_z}, cfg.projector.hidden);
    p["proj.fc2.b"] = Tensor({1, cfg.projector.d_z}, 0.0);
    return p;
}

VarMap bind_params(ng::Graph& g, const ParamSet& params, bool requires_grad) {
    VarMap out;
    for (const auto& [name, t] : params) out[name] = g.input(name, t, requires_grad);
    return out;
}

ng::Var encode(ng::Graph& g, const VarMap& vars, const EncoderConfig& cfg, ng::Var X, bool check_size) {
    const Tensor& x = g.value(X);
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != x.dim(3))
        throw ShapeError("encode expects (N, 3, s, s) input, got " + shape_str(x.shape()));
    if (check_size && x.dim(2) != cfg.input_size)
        throw ShapeError("encode: input size " + std::to_string(x.dim(2)) + " does not match configured " +
                         std::to_string(cfg.input_size));
    cfg.feature_sizes(x.dim(2));
    ng::Var h = X;
    for (std::size_t b = 0; b < cfg.channels.size(); ++b)
        h = g.relu(g.conv2d(h, vars.at(conv_name(b, ".w")), vars.at(conv_name(b, ".b")), EncoderConfig::kStride,
                            EncoderConfig::kPadding));
    return g.linear(g.global_avg_pool(h), vars.at("enc.fc.w"), vars.at("enc.fc.b"));
}

ng::Var project(ng::Graph& g, const VarMap& vars, ng::Var H) {
    ng::Var a = g.relu(g.linear(H, vars.at("proj.fc1.w"), vars.at("proj.fc1.b")));
    return g.linear(a, vars.at("proj.fc2.w"), vars.at("proj.fc2.b"));
}

FrozenEncoder::FrozenEncoder(EncoderConfig cfg, const ParamSet& params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (const auto& [name, t] : params)
        if (name.rfind("enc.", 0) == 0) params_.emplace(name, t);
    ng::Graph probe;
    VarMap vars = bind_params(probe, params_, false);
    for (std::size_t b = 0; b < cfg_.channels.size(); ++b)
        if (!vars.count(conv_name(b, ".w")) || !vars.count(conv_name(b, ".b")))
            throw std::invalid_argument("frozen encoder: missing parameters for block " + std::to_string(b));
    if (!vars.count("enc.fc.w") || !vars.count("enc.fc.b")) throw std::invalid_argument("frozen encoder: missing fc layer");
}

Tensor FrozenEncoder::encode(const Tensor& X) const {
    ng::Graph g;
    VarMap vars = bind_params(g, params_, false);
    return g.value(shamisa::encode(g, vars, cfg_, g.constant(X), false));
}

Tensor FrozenEncoder::encode(const std::vector<const Image*>& images) const { return encode(to_tensor(images)); }

Tensor FrozenEncoder::project(const Tensor&) const {
    throw FrozenError("frozen encoder: the projector is discarded after pre-training");
}

ParamSet FrozenEncoder::gradient(const Tensor&) const {
    throw FrozenError("frozen encoder: gradients are not available");
}

FrozenEncoder freeze(const ModelConfig& cfg, const ParamSet& params) { return FrozenEncoder(cfg.encoder, params); }

namespace {

Tensor sizes_tensor(const std::vector<std::size_t>& v) {
    return Tensor({v.size()}, std::vector<double>(v.begin(), v.end()));
}

std::size_t as_size(double v) { return static_cast<std::size_t>(std::llround(v)); }

bool is_param(const std::string& name) {
    for (const char* prefix : {"model.", "opt.", "rng.", "train."})
        if (name.rfind(prefix, 0) == 0) return false;
    return true;
}

}  // namespace

void save_model(const std::string& path, const ModelConfig& cfg, const ParamSet& params,
                const std::map<std::string, Tensor>& extra) {
    NamedTensors all = extra;
    for (const auto& [name, t] : params) all[name] = t;
    all["model.channels"] = sizes_tensor(cfg.encoder.channels);
    all["model.dims"] = sizes_tensor({cfg.encoder.d_h, cfg.encoder.input_size, cfg.projector.hidden, cfg.projector.d_z});
    save_checkpoint(path, all);
}

LoadedModel load_model(const std::string& path) {
    NamedTensors all = load_checkpoint(path);
    if (!all.count("model.channels") || !all.count("model.dims"))
        throw std::runtime_error(path + ": not a model checkpoint (missing model.* entries)");
    LoadedModel m;
    m.config.encoder.channels.clear();
    for (double c : all.at("model.channels").values()) m.config.encoder.channels.push_back(as_size(c));
    const Tensor& dims = all.at("model.dims");
    if (dims.size() != 4) throw std::runtime_error(path + ": malformed model.dims");
    m.config.encoder.d_h = as_size(dims[0]);
    m.config.encoder.input_size = as_size(dims[1]);
    m.config.projector.hidden = as_size(dims[2]);
    m.config.projector.d_z = as_size(dims[3]);
    m.config.validate();
    for (auto& [name, t] : all) {
        if (name.rfind("model.", 0) == 0) continue;
        (is_param(name) ? m.params : m.extra)[name] = std::move(t);
    }
    return m;
}

FrozenEncoder load_frozen(const std::string& path) {
    LoadedModel m = load_model(path);
    return freeze(m.config, m.params);
}

}  // namespace shamisa
