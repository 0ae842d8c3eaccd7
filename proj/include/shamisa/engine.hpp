#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "shamisa/distortions.hpp"
#include "shamisa/image.hpp"
#include "shamisa/rng.hpp"

namespace shamisa {

struct EngineConfig {
    std::size_t B = 2;   // tiny-batches
    std::size_t R = 3;   // references per tiny-batch
    std::size_t C = 4;   // composition groups per tiny-batch
    std::size_t L = 5;   // severity levels per group
    std::size_t M_d = 7; // max functions per composition
    std::size_t crop = 224;

    void validate() const;
    std::size_t n_ref() const { return B * R; }
    std::size_t n_comp() const { return C * L; }
    std::size_t rows() const { return n_ref() * (n_comp() + 1); }
};

// Folded normal |N(0, 0.5^2)| clipped at 1.
double severity_from_draw(double eps);
double sample_severity(RngStream& rng);

struct CompositionSpec {
    std::vector<Category> categories;    // S, in sampled order
    std::vector<std::string> functions;  // f, one per category
    std::vector<std::size_t> order;      // pi: order[t] is the coordinate applied at stage t
    std::vector<double> base;            // lambda^(0)
    std::size_t varying = 0;             // m*
    std::vector<double> levels;          // s^(l), sampled order

    std::size_t size() const { return categories.size(); }
    // lambda^(l): base with coordinate m* replaced by levels[l].
    std::vector<double> severities(std::size_t level) const;
    void validate(const DistortionRegistry& registry) const;
};

CompositionSpec sample_composition(RngStream& rng, std::size_t max_functions, std::size_t levels,
                                   const DistortionRegistry& registry);

// Applies the level-l composition in order pi, clamping after every stage.
// Stochastic stages draw from `rng.child("stage", {t})`.
Image apply_composition(const Image& image, const CompositionSpec& spec, std::size_t level,
                        const DistortionRegistry& registry, const RngStream& rng);

enum class RowRole { Reference, Distorted };

inline constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

struct RowMeta {
    RowRole role = RowRole::Reference;
    std::size_t i = 0, j = 0;
    std::size_t k = kNoIndex, l = kNoIndex;
    double severity = 0.0;  // varying-coordinate severity; 0 for references
};

struct BatchMeta {
    EngineConfig config;
    std::vector<RowMeta> rows;
    std::vector<CompositionSpec> groups;  // indexed by i * C + k
    std::vector<std::size_t> sources;     // corpus index per reference (i * R + j)

    std::size_t n() const { return rows.size(); }
    std::size_t ref_row(std::size_t i, std::size_t j) const { return i * config.R + j; }
    std::size_t dist_row(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return config.n_ref() + (k * config.L + l) * config.n_ref() + i * config.R + j;
    }
    const CompositionSpec& group(std::size_t i, std::size_t k) const { return groups.at(i * config.C + k); }
    void validate() const;
};

// Row metadata for the given groups (indexed i * C + k) without images.
BatchMeta make_batch_meta(const EngineConfig& config, std::vector<CompositionSpec> groups,
                          std::vector<std::size_t> source_ids = {});

struct Batch {
    std::vector<Image> images;
    BatchMeta meta;
};

// Rows: the B*R references first (ordered by i then j), then the distorted
// sets X^(d) for d = k*L + l, each holding one row per reference.
// `refs` holds B*R pristine images; `source_ids` optionally records their
// corpus indices.
Batch build_batch(const std::vector<const Image*>& refs, const EngineConfig& config,
                  const DistortionRegistry& registry, const RngStream& rng,
                  std::vector<std::size_t> source_ids = {});

// Quality proxy used for fixture evaluation sets: 1 - mean(lambda^(l)).
double pseudo_mos(const CompositionSpec& spec, std::size_t level);

}  // namespace shamisa
