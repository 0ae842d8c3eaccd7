#include "shamisa/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace shamisa {

void EngineConfig::validate() const {
    if (B == 0 || R == 0 || C == 0 || L == 0) throw std::invalid_argument("engine: B, R, C, L must be >= 1");
    if (M_d == 0 || M_d > static_cast<std::size_t>(kNumCategories))
        throw std::invalid_argument("engine: M_d must be in [1, 7]");
    if (crop == 0) throw std::invalid_argument("engine: crop must be >= 1");
}

double severity_from_draw(double eps) { return std::min(1.0, std::abs(eps)); }

double sample_severity(RngStream& rng) { return severity_from_draw(0.5 * rng.normal()); }

std::vector<double> CompositionSpec::severities(std::size_t level) const {
    std::vector<double> s = base;
    s.at(varying) = levels.at(level);
    return s;
}

void CompositionSpec::validate(const DistortionRegistry& registry) const {
    const std::size_t m = categories.size();
    if (m == 0 || m > static_cast<std::size_t>(kNumCategories)) throw std::invalid_argument("composition: bad size");
    if (functions.size() != m || order.size() != m || base.size() != m)
        throw std::invalid_argument("composition: field lengths disagree");
    std::set<Category> seen(categories.begin(), categories.end());
    if (seen.size() != m) throw std::invalid_argument("composition: repeated category");
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t t = 0; t < m; ++t)
        if (sorted[t] != t) throw std::invalid_argument("composition: order is not a permutation");
    if (varying >= m) throw std::invalid_argument("composition: varying coordinate out of range");
    for (std::size_t t = 0; t < m; ++t) {
        if (registry.get(functions[t]).category != categories[t])
            throw std::invalid_argument("composition: function " + functions[t] + " not in its category");
        if (base[t] < 0.0 || base[t] > 1.0) throw std::invalid_argument("composition: base severity out of [0,1]");
    }
    for (double s : levels)
        if (s < 0.0 || s > 1.0) throw std::invalid_argument("composition: level severity out of [0,1]");
}

CompositionSpec sample_composition(RngStream& rng, std::size_t max_functions, std::size_t levels,
                                   const DistortionRegistry& registry) {
    if (max_functions == 0 || max_functions > static_cast<std::size_t>(kNumCategories))
        throw std::invalid_argument("sample_composition: M_d must be in [1, 7]");
    CompositionSpec spec;
    const std::size_t m = 1 + rng.below(max_functions);

    std::vector<int> cats(kNumCategories);
    std::iota(cats.begin(), cats.end(), 0);
    shuffle(cats.begin(), cats.end(), rng);
    for (std::size_t t = 0; t < m; ++t) {
        const auto cat = static_cast<Category>(cats[t]);
        auto options = registry.in_category(cat);
        if (options.empty())
            throw std::invalid_argument(std::string("registry has no function for category ") + category_name(cat));
        spec.categories.push_back(cat);
        spec.functions.push_back(options[rng.below(options.size())]->id);
    }
    spec.order.resize(m);
    std::iota(spec.order.begin(), spec.order.end(), std::size_t{0});
    shuffle(spec.order.begin(), spec.order.end(), rng);
    for (std::size_t t = 0; t < m; ++t) spec.base.push_back(sample_severity(rng));
    spec.varying = rng.below(m);
    for (std::size_t l = 0; l < levels; ++l) spec.levels.push_back(sample_severity(rng));
    return spec;
}

Image apply_composition(const Image& image, const CompositionSpec& spec, std::size_t level,
                        const DistortionRegistry& registry, const RngStream& rng) {
    const auto sev = spec.severities(level);
    Image cur = image;
    for (std::size_t t = 0; t < spec.order.size(); ++t) {
        const std::size_t m = spec.order[t];
        const DistortionFunction& fn = registry.get(spec.functions[m]);
        RngStream stage = rng.child("stage", {t});
        cur = apply_at_severity(fn, cur, sev[m], stage);
        if (!all_finite(cur))
            throw NumericError("composition stage " + std::to_string(t) + " (" + fn.id + ") produced non-finite pixels");
    }
    return cur;
}

void BatchMeta::validate() const {
    config.validate();
    if (rows.size() != config.rows()) throw std::invalid_argument("batch meta: row count mismatch");
    if (groups.size() != config.B * config.C) throw std::invalid_argument("batch meta: group count mismatch");
    for (std::size_t i = 0; i < config.B; ++i)
        for (std::size_t j = 0; j < config.R; ++j) {
            const auto& r = rows[ref_row(i, j)];
            if (r.role != RowRole::Reference || r.i != i || r.j != j)
                throw std::invalid_argument("batch meta: inconsistent reference row");
            for (std::size_t k = 0; k < config.C; ++k)
                for (std::size_t l = 0; l < config.L; ++l) {
                    const auto& d = rows[dist_row(i, j, k, l)];
                    if (d.role != RowRole::Distorted || d.i != i || d.j != j || d.k != k || d.l != l)
                        throw std::invalid_argument("batch meta: inconsistent distorted row");
                }
        }
}

BatchMeta make_batch_meta(const EngineConfig& config, std::vector<CompositionSpec> groups,
                          std::vector<std::size_t> source_ids) {
    config.validate();
    if (groups.size() != config.B * config.C)
        throw std::invalid_argument("batch meta: expected " + std::to_string(config.B * config.C) + " groups");
    for (const auto& g : groups)
        if (g.levels.size() != config.L) throw std::invalid_argument("batch meta: group level count mismatch");
    if (source_ids.empty()) {
        source_ids.resize(config.n_ref());
        std::iota(source_ids.begin(), source_ids.end(), std::size_t{0});
    }
    if (source_ids.size() != config.n_ref()) throw std::invalid_argument("batch meta: source id count mismatch");
    BatchMeta meta;
    meta.config = config;
    meta.groups = std::move(groups);
    meta.sources = std::move(source_ids);
    meta.rows.resize(config.rows());
    for (std::size_t i = 0; i < config.B; ++i)
        for (std::size_t j = 0; j < config.R; ++j) {
            meta.rows[meta.ref_row(i, j)] = {RowRole::Reference, i, j, kNoIndex, kNoIndex, 0.0};
            for (std::size_t k = 0; k < config.C; ++k)
                for (std::size_t l = 0; l < config.L; ++l)
                    meta.rows[meta.dist_row(i, j, k, l)] = {RowRole::Distorted, i, j, k, l,
                                                            meta.group(i, k).levels[l]};
        }
    return meta;
}

Batch build_batch(const std::vector<const Image*>& refs, const EngineConfig& config,
                  const DistortionRegistry& registry, const RngStream& rng, std::vector<std::size_t> source_ids) {
    config.validate();
    if (refs.size() != config.n_ref())
        throw std::invalid_argument("build_batch: expected " + std::to_string(config.n_ref()) + " references, got " +
                                    std::to_string(refs.size()));

    Batch batch;
    std::vector<CompositionSpec> groups;
    for (std::size_t i = 0; i < config.B; ++i)
        for (std::size_t k = 0; k < config.C; ++k) {
            RngStream gr = rng.child("composition", {i, k});
            groups.push_back(sample_composition(gr, config.M_d, config.L, registry));
        }
    batch.meta = make_batch_meta(config, std::move(groups), std::move(source_ids));
    const BatchMeta& meta = batch.meta;
    batch.images.resize(config.rows());

    for (std::size_t i = 0; i < config.B; ++i)
        for (std::size_t j = 0; j < config.R; ++j) {
            const Image& src = *refs[i * config.R + j];
            if (src.height < config.crop || src.width < config.crop)
                throw std::invalid_argument("build_batch: crop " + std::to_string(config.crop) +
                                            " larger than source image " + std::to_string(src.height) + "x" +
                                            std::to_string(src.width));
            RngStream cr = rng.child("crop", {i, j});
            const std::size_t top = cr.below(src.height - config.crop + 1);
            const std::size_t left = cr.below(src.width - config.crop + 1);
            batch.images[meta.ref_row(i, j)] = crop(src, top, left, config.crop, config.crop);
        }

    for (std::size_t i = 0; i < config.B; ++i)
        for (std::size_t k = 0; k < config.C; ++k)
            for (std::size_t j = 0; j < config.R; ++j)
                for (std::size_t l = 0; l < config.L; ++l)
                    batch.images[meta.dist_row(i, j, k, l)] =
                        apply_composition(batch.images[meta.ref_row(i, j)], meta.group(i, k), l, registry,
                                          rng.child("noise", {i, j, k, l}));
    return batch;
}

double pseudo_mos(const CompositionSpec& spec, std::size_t level) {
    const auto sev = spec.severities(level);
    return 1.0 - std::accumulate(sev.begin(), sev.end(), 0.0) / static_cast<double>(sev.size());
}

}  // namespace shamisa
