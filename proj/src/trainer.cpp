#include "shamisa/trainer.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <iostream>
#include <numeric>

#include "shamisa/evaluation.hpp"
#include "shamisa/graphs.hpp"
#include "shamisa/model.hpp"
#include "shamisa/ot.hpp"

namespace shamisa {

Diagnostics diagnostics(const Tensor& H, const Tensor& Z, const PairList& pairs) {
    if (Z.rank() != 2 || H.rank() != 2 || Z.dim(0) < 2 || H.dim(0) != Z.dim(0))
        throw ShapeError("diagnostics: need matching 2-D H and Z with N >= 2");
    Diagnostics d;
    const std::size_t n = Z.dim(0), dz = Z.dim(1);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> z(Z.raw().data(), n, dz);
    Eigen::MatrixXd zc = z.rowwise() - z.colwise().mean();
    Eigen::MatrixXd cov = zc.transpose() * zc / static_cast<double>(n - 1);
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < dz; ++a)
        for (std::size_t b = 0; b < dz; ++b) {
            if (a == b) continue;
            const double denom = std::sqrt(cov(a, a) * cov(b, b));
            if (denom == 0.0) {
                d.degenerate = true;
                continue;
            }
            acc += std::abs(cov(a, b)) / denom;
            ++count;
        }
    d.corr = count ? acc / static_cast<double>(count) : 0.0;

    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> h(H.raw().data(), H.dim(0),
                                                                                              H.dim(1));
    Eigen::VectorXd sv = Eigen::MatrixXd(h).jacobiSvd().singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) {
        d.degenerate = true;
    } else {
        for (Eigen::Index t = 0; t < sv.size(); ++t)
            if (sv(t) > 1e-3 * sv(0)) ++d.rank;
    }

    if (!pairs.empty()) {
        for (auto [u, v] : pairs) d.inv += (z.row(u) - z.row(v)).squaredNorm();
        d.inv /= static_cast<double>(pairs.size());
    }
    return d;
}

void write_step_header(std::ostream& os, const std::vector<std::string>& sources) {
    os << "step,total,var,cov,inv,ot,reg";
    for (const auto& s : sources) os << ",omega_" << s;
    for (const auto& s : sources) os << ",edges_" << s;
    os << ",edges_aggregate,log_clamps,corr,rank,inv_proxy,lr,grad_norm\n";
}

void write_step_row(std::ostream& os, const StepRecord& r) {
    const auto old = os.precision(17);
    os << r.step << ',' << r.total << ',' << r.var << ',' << r.cov << ',' << r.inv << ',' << r.ot << ',' << r.reg;
    for (double w : r.omega) os << ',' << w;
    for (auto e : r.edges) os << ',' << e;
    os << ',' << r.aggregate_edges << ',' << r.log_clamps << ',' << r.diag.corr << ',' << r.diag.rank << ','
       << r.diag.inv << ',' << r.lr << ',' << r.grad_norm << '\n';
    os.precision(old);
}

namespace {

void init_trainable(ParamSet& p, const TrainConfig& cfg) {
    p = init_params(cfg.model, cfg.seed);
    RngStream proto = RngStream::derive(cfg.seed, "prototypes");
    Tensor C({cfg.ot.K, cfg.model.encoder.d_h});
    const double sd = std::sqrt(1.0 / static_cast<double>(cfg.model.encoder.d_h));
    for (auto& v : C.values()) v = sd * proto.normal();
    p["proto"] = std::move(C);
    RngStream agg = RngStream::derive(cfg.seed, "aggregator");
    init_aggregator(p, cfg.graphs.source_count(), agg);
}

Tensor seed_tensor(std::uint64_t seed) {
    return Tensor({2}, {static_cast<double>(seed >> 32), static_cast<double>(seed & 0xffffffffULL)});
}

std::uint64_t tensor_seed(const Tensor& t) {
    return (static_cast<std::uint64_t>(t[0]) << 32) | static_cast<std::uint64_t>(t[1]);
}

std::vector<const Image*> pointers(const std::vector<Image>& corpus, const std::vector<std::size_t>& idx) {
    std::vector<const Image*> out;
    for (auto i : idx) out.push_back(&corpus.at(i));
    return out;
}

void dump_graph(std::ostream& os, std::size_t step, const std::string& id, const SparseGraph& g) {
    const auto old = os.precision(17);
    for (const auto& e : g.edges) os << step << ',' << id << ',' << e.src << ',' << e.dst << ',' << e.weight << '\n';
    os.precision(old);
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<Image> corpus)
    : cfg_(std::move(cfg)), corpus_(std::move(corpus)), registry_(DistortionRegistry::standard()), opt_(cfg_.optimizer) {
    cfg_.validate();
    if (corpus_.empty()) throw std::invalid_argument("pretrain: empty corpus");
    for (std::size_t i = 0; i < corpus_.size(); ++i)
        if (corpus_[i].height < cfg_.engine.crop || corpus_[i].width < cfg_.engine.crop)
            throw std::invalid_argument("pretrain: corpus image " + std::to_string(i) + " is smaller than the crop " +
                                        std::to_string(cfg_.engine.crop));
    init_trainable(params_, cfg_);
}

std::vector<std::string> Trainer::source_names() const {
    std::vector<std::string> s;
    if (cfg_.graphs.use_grd) s.push_back("grd");
    if (cfg_.graphs.use_gdd) s.push_back("gdd");
    if (cfg_.graphs.use_grr) s.push_back("grr");
    if (cfg_.graphs.use_gknn) s.push_back("gknn");
    if (cfg_.graphs.use_go) s.push_back("go");
    return s;
}

std::vector<std::size_t> Trainer::next_references() {
    std::vector<std::size_t> refs;
    while (refs.size() < cfg_.engine.n_ref()) {
        if (cursor_ >= order_.size()) {
            if (!order_.empty()) ++epoch_;
            order_.resize(corpus_.size());
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            RngStream er = RngStream::derive(cfg_.seed, "epoch", {epoch_});
            shuffle(order_.begin(), order_.end(), er);
            cursor_ = 0;
        }
        refs.push_back(order_[cursor_++]);
    }
    return refs;
}

StepRecord Trainer::step() {
    const auto t0 = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.step = step_ + 1;
    rec.sources = source_names();

    const auto refs = next_references();
    Batch batch = build_batch(pointers(corpus_, refs), cfg_.engine, registry_,
                              RngStream::derive(cfg_.seed, "batch", {step_}), refs);
    const BatchMeta& meta = batch.meta;

    ng::Graph g;
    VarMap vars = bind_params(g, params_);
    ng::Var X = g.constant(to_tensor(batch.images));
    ng::Var H = encode(g, vars, cfg_.model.encoder, X);
    ng::Var Z = project(g, vars, H);
    const Tensor Hs = g.value(H);

    std::vector<SparseGraph> sources;
    const auto& gc = cfg_.graphs;
    if (gc.use_grd) sources.push_back(build_grd(meta, gc.kappa));
    if (gc.use_gdd) sources.push_back(build_gdd(meta, gc.kappa, gc.K_d));
    if (gc.use_grr) sources.push_back(build_grr(meta, gc.w_rr));
    if (gc.use_gknn) sources.push_back(build_gknn(Hs, gc.k_n));
    ng::Var A = soft_assign(g, H, vars.at("proto"), cfg_.ot.tau_c);
    const Tensor T = sinkhorn_targets(g.value(A), cfg_.ot.eps_sk, cfg_.ot.iterations);
    if (gc.use_go) sources.push_back(build_go(g.value(A), gc.K_g(meta.n())));

    Aggregate agg = aggregate_graphs(g, sources, bind_aggregator(vars));
    LossTerms terms = total_loss(g, Z, agg, A, T, cross_content_pairs(meta), cfg_.loss, {cfg_.reduction, cfg_.var_eps});

    const std::pair<const char*, ng::Var> named[] = {{"L_var", terms.var}, {"L_cov", terms.cov}, {"L_inv", terms.inv},
                                                      {"L_ot", terms.ot},   {"R_graph", terms.reg}, {"L_total", terms.total}};
    for (const auto& [name, v] : named)
        if (!g.value(v).all_finite())
            throw NumericError("step " + std::to_string(rec.step) + ": non-finite " + name);

    auto grads = g.backward(terms.total);
    grads.erase(kSourceWeightsInput);
    rec.lr = opt_.step(params_, grads, step_);
    rec.grad_norm = opt_.last_grad_norm();

    rec.total = g.value(terms.total).item();
    rec.var = g.value(terms.var).item();
    rec.cov = g.value(terms.cov).item();
    rec.inv = g.value(terms.inv).item();
    rec.ot = g.value(terms.ot).item();
    rec.reg = g.value(terms.reg).item();
    rec.omega.assign(g.value(agg.omega).values().begin(), g.value(agg.omega).values().end());
    for (const auto& s : sources) rec.edges.push_back(s.nnz());
    rec.aggregate_edges = agg.positive_edges;
    rec.log_clamps = g.log_clamp_count();
    rec.diag = diagnostics(Hs, g.value(Z), build_grd(meta, gc.kappa).pairs());

    if (dump_) {
        const auto names = source_names();
        for (std::size_t t = 0; t < sources.size(); ++t) dump_graph(*dump_, rec.step, names[t], sources[t]);
        dump_graph(*dump_, rec.step, "aggregate", agg.graph);
    }
    ++step_;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

NamedTensors Trainer::checkpoint_entries() const {
    NamedTensors e;
    for (const auto& [name, m] : opt_.momentum()) e["opt.momentum/" + name] = m;
    e["opt.step"] = Tensor::scalar(static_cast<double>(step_));
    e["rng.seed"] = seed_tensor(cfg_.seed);
    e["rng.batch"] = Tensor::scalar(static_cast<double>(step_));
    e["rng.epoch"] = Tensor::scalar(static_cast<double>(epoch_));
    e["train.cursor"] = Tensor::scalar(static_cast<double>(cursor_));
    return e;
}

void Trainer::save(const std::filesystem::path& path) const {
    save_model(path.string(), cfg_.model, params_, checkpoint_entries());
}

void Trainer::restore(const std::filesystem::path& path) {
    LoadedModel m = load_model(path.string());
    for (const auto& [name, t] : params_)
        if (!m.params.count(name) || m.params.at(name).shape() != t.shape())
            throw std::runtime_error(path.string() + ": parameter " + name + " missing or mis-shaped");
    params_ = m.params;
    if (tensor_seed(m.extra.at("rng.seed")) != cfg_.seed)
        throw std::runtime_error(path.string() + ": checkpoint was written with a different seed");
    opt_.momentum().clear();
    for (const auto& [name, t] : m.extra)
        if (name.rfind("opt.momentum/", 0) == 0) opt_.momentum()[name.substr(13)] = t;
    step_ = static_cast<std::size_t>(m.extra.at("opt.step").item());
    epoch_ = static_cast<std::size_t>(m.extra.at("rng.epoch").item());
    cursor_ = static_cast<std::size_t>(m.extra.at("train.cursor").item());
    order_.resize(corpus_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    RngStream er = RngStream::derive(cfg_.seed, "epoch", {epoch_});
    shuffle(order_.begin(), order_.end(), er);
}

PretrainResult pretrain(const TrainConfig& cfg, std::vector<Image> corpus, const TrainOptions& opt) {
    Trainer tr(cfg, std::move(corpus));
    PretrainResult res;
    std::ofstream steps, timing, graphs;
    const bool write = !opt.out_dir.empty();
    if (write) {
        std::filesystem::create_directories(opt.out_dir);
        std::ofstream(opt.out_dir / "config.resolved") << render_config(tr.config());
        steps.open(opt.out_dir / "steps.csv");
        timing.open(opt.out_dir / "timing.csv");
        write_step_header(steps, tr.source_names());
        timing << "step,wall_seconds\n";
        if (opt.dump_graphs) {
            graphs.open(opt.out_dir / "graphs.csv");
            graphs << "step,graph,i,j,weight\n";
            tr.set_graph_dump(&graphs);
        }
    }
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        StepRecord r = tr.step();
        if (write) {
            write_step_row(steps, r);
            timing << r.step << ',' << r.wall_seconds << '\n';
            if (r.step % cfg.checkpoint_interval == 0 || r.step == cfg.steps) {
                char name[32];
                std::snprintf(name, sizeof name, "ckpt_%06zu.shck", r.step);
                tr.save(opt.out_dir / name);
                res.checkpoints.push_back(opt.out_dir / name);
            }
        }
        if (!opt.quiet && (r.step == 1 || r.step % 10 == 0 || r.step == cfg.steps))
            std::cerr << "step " << r.step << "/" << cfg.steps << "  L_total " << r.total << "  lr " << r.lr << "  ("
                      << r.wall_seconds << " s)\n";
        res.records.push_back(std::move(r));
    }
    res.params = tr.params();
    return res;
}

namespace {

Batch probe_batch(const TrainConfig& cfg, const std::vector<Image>& corpus, const DistortionRegistry& registry,
                  std::size_t b, std::uint64_t seed) {
    RngStream pick = RngStream::derive(seed, "probe-refs", {b});
    std::vector<std::size_t> idx;
    for (std::size_t r = 0; r < cfg.engine.n_ref(); ++r) idx.push_back(pick.below(corpus.size()));
    return build_batch(pointers(corpus, idx), cfg.engine, registry, RngStream::derive(seed, "probe", {b}), idx);
}

Tensor embed(const TrainConfig& cfg, const ParamSet& params, const Batch& batch) {
    ng::Graph g;
    VarMap vars = bind_params(g, params, false);
    return g.value(project(g, vars, encode(g, vars, cfg.model.encoder, g.constant(to_tensor(batch.images)))));
}

double row_distance(const Tensor& Z, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < Z.dim(1); ++c) s += (Z.at(a, c) - Z.at(b, c)) * (Z.at(a, c) - Z.at(b, c));
    return std::sqrt(s);
}

}  // namespace

double trajectory_consistency(const TrainConfig& cfg, const ParamSet& params, const std::vector<Image>& corpus,
                              std::size_t batches, std::uint64_t seed) {
    const auto registry = DistortionRegistry::standard();
    std::vector<double> per_traj;
    for (std::size_t b = 0; b < batches; ++b) {
        Batch batch = probe_batch(cfg, corpus, registry, b, seed);
        const BatchMeta& m = batch.meta;
        const Tensor Z = embed(cfg, params, batch);
        const auto& c = m.config;
        for (std::size_t i = 0; i < c.B; ++i)
            for (std::size_t j = 0; j < c.R; ++j)
                for (std::size_t k = 0; k < c.C; ++k) {
                    std::vector<double> sev, dist;
                    for (std::size_t l = 0; l < c.L; ++l) {
                        sev.push_back(m.group(i, k).levels[l]);
                        dist.push_back(row_distance(Z, m.ref_row(i, j), m.dist_row(i, j, k, l)));
                    }
                    // trajectories whose levels or distances are all tied carry no rank information
                    if (std::adjacent_find(sev.begin(), sev.end(), std::not_equal_to<>()) == sev.end()) continue;
                    if (std::adjacent_find(dist.begin(), dist.end(), std::not_equal_to<>()) == dist.end()) continue;
                    per_traj.push_back(srcc(sev, dist));
                }
    }
    if (per_traj.empty()) throw std::runtime_error("trajectory_consistency: no informative trajectories");
    return median(per_traj);
}

double min_embedding_std(const TrainConfig& cfg, const ParamSet& params, const std::vector<Image>& corpus,
                         std::uint64_t seed) {
    const auto registry = DistortionRegistry::standard();
    const Tensor Z = embed(cfg, params, probe_batch(cfg, corpus, registry, 0, seed));
    const std::size_t n = Z.dim(0);
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < Z.dim(1); ++c) {
        double mu = 0.0, ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) mu += Z.at(r, c) / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) ss += (Z.at(r, c) - mu) * (Z.at(r, c) - mu);
        lo = std::min(lo, std::sqrt(ss / static_cast<double>(n - 1)));
    }
    return lo;
}

}  // namespace shamisa
