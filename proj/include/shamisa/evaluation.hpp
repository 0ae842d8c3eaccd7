#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shamisa/dataio.hpp"
#include "shamisa/engine.hpp"
#include "shamisa/image.hpp"
#include "shamisa/model.hpp"

namespace shamisa {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- statistics ----

double median(std::vector<double> v);
std::vector<double> fractional_ranks(const std::vector<double>& x);
double pearson(const std::vector<double>& x, const std::vector<double>& y);
// Pearson correlation of mid-ranks. Throws EvalError when either side is all
// tied.
double srcc(const std::vector<double>& x, const std::vector<double>& y);

// q(s) = (b1 - b2) / (1 + exp(-(s - b3) / |b4|)) + b2
double logistic4(const std::array<double, 4>& beta, double s);

struct PlccResult {
    double value = 0.0;
    std::array<double, 4> beta{};
    bool fallback = false;  // fit failed; value is the raw Pearson correlation
};

// Least-squares 4PL fit of scores on predictions by Nelder-Mead, started at
// b1 = max y, b2 = min y, b3 = median s, b4 = std s (plus two narrower b4
// starts, best fit kept); then Pearson(q(s), y).
PlccResult plcc_4pl(const std::vector<double>& predictions, const std::vector<double>& scores);

// ---- features ----

struct CropOffset {
    std::size_t top = 0, left = 0;
    bool operator==(const CropOffset&) const = default;
};

// Top-left, top-right, bottom-left, bottom-right, centre.
std::array<CropOffset, 5> five_crop_offsets(std::size_t height, std::size_t width, std::size_t crop);

// Five rows (one per crop) of [full-scale | half-scale] pooled features,
// width 2 d_h. Crops are placed on the 2x2 box-downsampled image; the
// full-scale feature encodes the matching 2*crop region of the original.
using FeatureBlock = Tensor;

FeatureBlock extract_features(const FrozenEncoder& enc, const Image& image, std::size_t crop);
std::vector<FeatureBlock> extract_features(const FrozenEncoder& enc, const std::vector<Image>& images,
                                           std::size_t crop);
// |h_ref - h_dist| on matching crops.
FeatureBlock fr_features(const FrozenEncoder& enc, const Image& reference, const Image& distorted, std::size_t crop);

// ---- ridge probe ----

// 100 log-spaced values in [1e-3, 1e3].
std::vector<double> ridge_alpha_grid();

struct ProbeModel {
    std::vector<double> weights;
    double bias = 0.0;
    double alpha = 0.0;
};

// Closed-form ridge on centred data: (Xc^T Xc + alpha I) w = Xc^T yc,
// bias = mean(y) - mean(x) w. Rows of X are samples.
ProbeModel ridge_solve(const std::vector<std::vector<double>>& X, const std::vector<double>& y, double alpha);

// Ridge path over the alpha grid, reusing one eigendecomposition.
class RidgePath {
public:
    RidgePath(const std::vector<std::vector<double>>& X, const std::vector<double>& y);
    ProbeModel solve(double alpha) const;

private:
    std::vector<double> mean_x_;
    double mean_y_ = 0.0;
    std::vector<double> evals_;
    std::vector<std::vector<double>> evecs_;  // column t is eigenvector t
    std::vector<double> proj_;                // V^T Xc^T yc
};

double predict(const ProbeModel& probe, const std::vector<double>& x);
// Mean of the per-crop predictions.
double predict(const ProbeModel& probe, const FeatureBlock& block);

// Per-image training rows: the crop-mean feature.
std::vector<double> crop_mean(const FeatureBlock& block);

// Picks the alpha maximising validation SRCC; ties go to the smaller alpha.
ProbeModel ridge_fit(const std::vector<FeatureBlock>& train, const std::vector<double>& train_y,
                     const std::vector<FeatureBlock>& val, const std::vector<double>& val_y);

// ---- splits and protocols ----

enum class SplitMode { ReferenceDisjoint, Random };
SplitMode parse_split_mode(const std::string& s);

struct Split {
    std::vector<std::size_t> train, val, test;
};

// 70/10/20 partitions, deterministic from the seed. Reference-disjoint mode
// partitions reference ids and carries every image with its reference.
std::vector<Split> make_splits(const std::vector<io::ManifestRecord>& records, SplitMode mode, std::size_t n_splits,
                               std::uint64_t seed);

struct FeatureSet {
    std::vector<FeatureBlock> blocks;
    std::vector<double> scores;
};

struct SplitResult {
    double srcc = 0.0;
    double plcc = 0.0;
    bool plcc_fallback = false;
    ProbeModel probe;
};

struct ProtocolResult {
    std::vector<SplitResult> splits;
    double alpha = 0.0;  // shared alpha maximising the median validation SRCC
    double median_srcc = 0.0;
    double median_plcc = 0.0;
};

// Fits one probe per split. Alpha maximises the median validation SRCC
// across splits, then each split is scored on its test partition.
ProtocolResult probe_protocol(const FeatureSet& data, const std::vector<Split>& splits);

// Probes and alpha come from the source splits only; each split's probe is
// applied unchanged to the test partition of the matching target split.
ProtocolResult cross_dataset_eval(const FeatureSet& source, const std::vector<Split>& source_splits,
                                  const FeatureSet& target, const std::vector<Split>& target_splits);

// ---- fixture evaluation sets ----

struct FixtureItem {
    std::string name;    // dist_SSSS_K_L.ppm
    std::string ref_id;  // ref_SSSS
    std::size_t source = 0;
    std::size_t i = 0, j = 0, k = 0, l = 0;
    Image image;
    double score = 0.0;  // pseudo-MOS
    CompositionSpec spec;
};

struct EvalFixture {
    std::vector<Image> references;  // ref_SSSS.ppm, pristine
    std::vector<FixtureItem> items;
};

// References are taken R at a time as tiny-batch i, each distorted by the
// engine's C composition groups at L levels on the full (square) image.
// Tiny-batch i draws from derive(seed, "distort", {i}). Items are ordered by
// source, then k, then l; scores are 1 - mean severity.
EvalFixture make_eval_fixture(std::vector<Image> references, const EngineConfig& engine, std::uint64_t seed);
// Procedural references of side `size`.
EvalFixture make_eval_fixture(std::size_t n_refs, std::size_t size, const EngineConfig& engine, std::uint64_t seed);

// ---- gMAD ----

struct GmadPair {
    std::size_t bin = 0;
    std::size_t first = 0, second = 0;  // first < second
    double gap = 0.0;                   // |attacker_first - attacker_second|
};

// Equal-count bins by defender score (stable by index); in each requested bin
// the pair with the largest attacker gap, ties to the lexicographically
// smallest index pair. Default bins: lowest and highest.
std::vector<GmadPair> gmad_select(const std::vector<double>& defender, const std::vector<double>& attacker,
                                  std::size_t n_bins = 10, std::vector<std::size_t> bins = {});

}  // namespace shamisa
