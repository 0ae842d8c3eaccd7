#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "shamisa/image.hpp"
#include "shamisa/numgrad.hpp"
#include "shamisa/optim.hpp"

namespace shamisa {

// Conv blocks are 3x3, stride 2, zero padding 1, each followed by relu.
struct EncoderConfig {
    std::vector<std::size_t> channels{8, 16, 32, 64};
    std::size_t d_h = 128;
    std::size_t input_size = 64;

    static constexpr std::size_t kKernel = 3;
    static constexpr std::size_t kStride = 2;
    static constexpr std::size_t kPadding = 1;

    void validate() const;
    // Spatial extent after every block for an s x s input.
    std::vector<std::size_t> feature_sizes(std::size_t s) const;
};

struct ProjectorConfig {
    std::size_t hidden = 128;
    std::size_t d_z = 64;

    void validate() const;
};

struct ModelConfig {
    EncoderConfig encoder;
    ProjectorConfig projector;

    void validate() const;
};

std::size_t encoder_parameter_count(const EncoderConfig& cfg);
std::size_t projector_parameter_count(const ModelConfig& cfg);

// He-normal weights, zero biases. Names: enc.conv<i>.w/.b, enc.fc.w/.b,
// proj.fc1.w/.b, proj.fc2.w/.b.
ParamSet init_params(const ModelConfig& cfg, std::uint64_t seed);

using VarMap = std::map<std::string, ng::Var>;
VarMap bind_params(ng::Graph& g, const ParamSet& params, bool requires_grad = true);

// X: (N, 3, s, s). With `check_size`, s must equal the configured input size.
ng::Var encode(ng::Graph& g, const VarMap& vars, const EncoderConfig& cfg, ng::Var X, bool check_size = true);
ng::Var project(ng::Graph& g, const VarMap& vars, ng::Var H);

class FrozenError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Read-only encoder. The projector is dropped at construction.
class FrozenEncoder {
public:
    FrozenEncoder(EncoderConfig cfg, const ParamSet& params);

    // Any square input whose blocks keep a positive extent.
    Tensor encode(const Tensor& X) const;
    Tensor encode(const std::vector<const Image*>& images) const;

    const EncoderConfig& config() const { return cfg_; }
    std::size_t width() const { return cfg_.d_h; }

    [[noreturn]] Tensor project(const Tensor& H) const;
    [[noreturn]] ParamSet gradient(const Tensor& X) const;

private:
    EncoderConfig cfg_;
    ParamSet params_;
};

FrozenEncoder freeze(const ModelConfig& cfg, const ParamSet& params);

// Model checkpoints carry the architecture as model.* entries next to the
// parameters, plus any extra named tensors (optimizer, rng).
void save_model(const std::string& path, const ModelConfig& cfg, const ParamSet& params,
                const std::map<std::string, Tensor>& extra = {});
struct LoadedModel {
    ModelConfig config;
    ParamSet params;
    std::map<std::string, Tensor> extra;
};
LoadedModel load_model(const std::string& path);
FrozenEncoder load_frozen(const std::string& path);

}  // namespace shamisa
