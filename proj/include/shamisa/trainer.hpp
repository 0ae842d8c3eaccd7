#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "shamisa/checkpoint.hpp"
#include "shamisa/config.hpp"
#include "shamisa/image.hpp"
#include "shamisa/objective.hpp"

namespace shamisa {

struct Diagnostics {
    double corr = 0.0;      // mean |off-diagonal correlation| of Z
    std::size_t rank = 0;   // singular values of H above 1e-3 of the largest
    double inv = 0.0;       // mean squared Z distance over positive pairs
    bool degenerate = false;
};

Diagnostics diagnostics(const Tensor& H, const Tensor& Z, const PairList& pairs);

struct StepRecord {
    std::size_t step = 0;
    double total = 0.0, var = 0.0, cov = 0.0, inv = 0.0, ot = 0.0, reg = 0.0;
    std::vector<std::string> sources;
    std::vector<double> omega;
    std::vector<std::size_t> edges;  // nnz per source
    std::size_t aggregate_edges = 0;
    std::size_t log_clamps = 0;
    Diagnostics diag;
    double lr = 0.0;
    double grad_norm = 0.0;  // before clipping
    double wall_seconds = 0.0;
};

void write_step_header(std::ostream& os, const std::vector<std::string>& sources);
// Deterministic columns only; wall time goes to the timing log.
void write_step_row(std::ostream& os, const StepRecord& r);

struct TrainOptions {
    std::filesystem::path out_dir;   // empty: nothing is written
    bool dump_graphs = false;
    bool quiet = true;
};

// Pre-training loop state. Every random draw derives from the master seed
// through named streams: "init", "prototypes", "aggregator", "epoch"{e} and
// "batch"{step}.
class Trainer {
public:
    Trainer(TrainConfig cfg, std::vector<Image> corpus);

    StepRecord step();
    std::size_t steps_done() const { return step_; }

    const TrainConfig& config() const { return cfg_; }
    const ParamSet& params() const { return params_; }
    ParamSet& params() { return params_; }
    std::vector<std::string> source_names() const;

    // Parameters, momentum buffers and loop counters.
    NamedTensors checkpoint_entries() const;
    void save(const std::filesystem::path& path) const;
    void restore(const std::filesystem::path& path);

    void set_graph_dump(std::ostream* os) { dump_ = os; }

private:
    std::vector<std::size_t> next_references();

    TrainConfig cfg_;
    std::vector<Image> corpus_;
    DistortionRegistry registry_;
    ParamSet params_;
    Sgd opt_;
    std::size_t step_ = 0;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
    std::ostream* dump_ = nullptr;
};

struct PretrainResult {
    std::vector<StepRecord> records;
    std::vector<std::filesystem::path> checkpoints;
    ParamSet params;
};

// Runs cfg.steps steps. With an output directory it writes config.resolved,
// steps.csv, timing.csv, ckpt_<step>.shck at every checkpoint interval and
// at the last step, and graphs.csv when dumping graphs.
PretrainResult pretrain(const TrainConfig& cfg, std::vector<Image> corpus, const TrainOptions& opt = {});

// Median over trajectories (i, j, k) of the Spearman correlation between
// level severity and ||Z_dist - Z_ref||, on `batches` engine batches drawn
// from the "probe" stream.
double trajectory_consistency(const TrainConfig& cfg, const ParamSet& params, const std::vector<Image>& corpus,
                              std::size_t batches, std::uint64_t seed);

// Minimum per-dimension standard deviation of Z on one engine batch.
double min_embedding_std(const TrainConfig& cfg, const ParamSet& params, const std::vector<Image>& corpus,
                         std::uint64_t seed);

}  // namespace shamisa
