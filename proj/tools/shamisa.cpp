#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "shamisa/config.hpp"
#include "shamisa/dataio.hpp"
#include "shamisa/evaluation.hpp"
#include "shamisa/gradsuite.hpp"
#include "shamisa/trainer.hpp"

using namespace shamisa;
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// Usage and config problems exit 2, everything else 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

TrainConfig resolve_config(const std::string& path) {
    TrainConfig cfg = path.empty() ? preset_config("desk") : load_config(path);
    apply_env_overrides(cfg);
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void prepare_out(const fs::path& out, const TrainConfig& cfg) {
    fs::create_directories(out);
    write_text(out / "config.resolved", render_config(cfg));
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && (ext == ".ppm" || ext == ".png")) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw std::runtime_error("no .ppm or .png images in " + dir.string());
    return out;
}

struct Dataset {
    fs::path dir;
    std::vector<io::ManifestRecord> records;
    std::vector<Image> images;
};

Dataset load_dataset(const fs::path& dir) {
    Dataset d;
    d.dir = dir;
    d.records = io::read_manifest(dir / "manifest.csv");
    d.images = io::load_images(d.records, dir);
    return d;
}

std::vector<Image> load_corpus(const fs::path& dir) {
    if (fs::exists(dir / "manifest.csv")) return load_dataset(dir).images;
    std::vector<Image> out;
    for (const auto& p : list_images(dir)) out.push_back(io::read_image(p));
    return out;
}

FeatureSet nr_features(const FrozenEncoder& enc, const Dataset& d) {
    FeatureSet fs;
    fs.blocks = extract_features(enc, d.images, enc.config().input_size);
    for (const auto& r : d.records) fs.scores.push_back(r.score);
    return fs;
}

ordered_json protocol_json(const ProtocolResult& r) {
    ordered_json j;
    j["alpha"] = r.alpha;
    j["median_srcc"] = r.median_srcc;
    j["median_plcc"] = r.median_plcc;
    j["splits"] = ordered_json::array();
    for (const auto& s : r.splits)
        j["splits"].push_back({{"srcc", s.srcc}, {"plcc", s.plcc}, {"plcc_fallback", s.plcc_fallback}});
    return j;
}

void write_splits(const fs::path& path, const std::vector<Split>& splits, const std::vector<io::ManifestRecord>& recs) {
    std::ofstream out(path);
    out << "split,partition,path\n";
    for (std::size_t s = 0; s < splits.size(); ++s) {
        auto dump = [&](const char* name, const std::vector<std::size_t>& idx) {
            for (auto i : idx) out << s << ',' << name << ',' << recs[i].path << '\n';
        };
        dump("train", splits[s].train);
        dump("val", splits[s].val);
        dump("test", splits[s].test);
    }
}

std::vector<Split> splits_for(const TrainConfig& cfg, const std::vector<io::ManifestRecord>& recs) {
    return make_splits(recs, parse_split_mode(cfg.eval.split_mode), cfg.eval.n_splits, cfg.eval.split_seed);
}

void print_protocol(const char* what, const ProtocolResult& r) {
    std::printf("%s: median SRCC %.4f  median PLCC %.4f  alpha %g  (%zu splits)\n", what, r.median_srcc, r.median_plcc,
                r.alpha, r.splits.size());
}

// ---- subcommands ----

int cmd_distort(const std::string& input, const std::string& out_dir, const std::string& config) {
    const TrainConfig cfg = resolve_config(config);
    const fs::path out = out_dir;
    prepare_out(out, cfg);
    const auto paths = list_images(input);
    std::vector<Image> refs;
    for (const auto& p : paths) refs.push_back(io::read_image(p));
    const EvalFixture fx = make_eval_fixture(std::move(refs), cfg.engine, cfg.seed);

    fs::create_directories(out / "refs");
    fs::create_directories(out / "images");
    for (std::size_t r = 0; r < fx.references.size(); ++r) {
        char name[32];
        std::snprintf(name, sizeof name, "ref_%04zu.ppm", r);
        io::write_ppm(out / "refs" / name, fx.references[r]);
    }
    std::vector<io::ManifestRecord> manifest;
    std::ofstream meta(out / "metadata.jsonl");
    for (const auto& it : fx.items) {
        const std::string rel = "images/" + it.name;
        io::write_ppm(out / rel, it.image);
        manifest.push_back({rel, it.score, it.ref_id, std::nullopt});

        ordered_json j;
        j["source"] = paths[it.source].filename().string();
        j["i"] = it.i;
        j["j"] = it.j;
        j["k"] = it.k;
        j["l"] = it.l;
        j["categories"] = ordered_json::array();
        for (auto c : it.spec.categories) j["categories"].push_back(category_name(c));
        j["function_ids"] = it.spec.functions;
        j["order"] = it.spec.order;
        j["base_severities"] = it.spec.base;
        j["varying_coordinate"] = it.spec.varying;
        j["level_severity"] = it.spec.levels.at(it.l);
        meta << j.dump() << '\n';
    }
    io::write_manifest(out / "manifest.csv", manifest);
    std::printf("wrote %zu distorted images from %zu references to %s\n", fx.items.size(), fx.references.size(),
                out.string().c_str());
    return 0;
}

int cmd_pretrain(const std::string& config, const std::string& corpus_dir, std::size_t synthetic,
                 const std::string& out_dir, bool dump_graphs, bool quiet) {
    const TrainConfig cfg = resolve_config(config);
    const fs::path out = out_dir;
    fs::create_directories(out);
    std::vector<Image> corpus;
    if (!corpus_dir.empty()) {
        corpus = load_corpus(corpus_dir);
    } else if (synthetic > 0) {
        const auto dir = out / "corpus";
        const auto recs = io::generate_fixture_corpus(synthetic, cfg.engine.crop, cfg.seed, dir);
        corpus = io::load_images(recs, dir);
    } else {
        throw UsageError("pretrain needs --corpus or --synthetic");
    }
    const auto res = pretrain(cfg, std::move(corpus), {out, dump_graphs, quiet});
    const auto& last = res.records.back();
    std::printf("%zu steps, final loss %.6g, checkpoint %s\n", res.records.size(), last.total,
                res.checkpoints.back().string().c_str());
    return 0;
}

int cmd_probe(const std::string& ckpt, const std::string& data, const std::string& out_dir, const std::string& config) {
    const TrainConfig cfg = resolve_config(config);
    const fs::path out = out_dir;
    prepare_out(out, cfg);
    const FrozenEncoder enc = load_frozen(ckpt);
    const Dataset d = load_dataset(data);
    const auto splits = splits_for(cfg, d.records);
    const auto res = probe_protocol(nr_features(enc, d), splits);
    write_splits(out / "splits.csv", splits, d.records);
    write_text(out / "probe.json", protocol_json(res).dump(2) + "\n");
    print_protocol("probe", res);
    return 0;
}

int cmd_cross(const std::string& ckpt, const std::string& source, const std::string& target, const std::string& out_dir,
              const std::string& config) {
    const TrainConfig cfg = resolve_config(config);
    const fs::path out = out_dir;
    prepare_out(out, cfg);
    const FrozenEncoder enc = load_frozen(ckpt);
    const Dataset s = load_dataset(source), t = load_dataset(target);
    const auto res =
        cross_dataset_eval(nr_features(enc, s), splits_for(cfg, s.records), nr_features(enc, t), splits_for(cfg, t.records));
    write_text(out / "cross.json", protocol_json(res).dump(2) + "\n");
    print_protocol("cross", res);
    return 0;
}

int cmd_fr_probe(const std::string& ckpt, const std::string& data, const std::string& out_dir, const std::string& config) {
    const TrainConfig cfg = resolve_config(config);
    const fs::path out = out_dir;
    prepare_out(out, cfg);
    const FrozenEncoder enc = load_frozen(ckpt);
    const Dataset d = load_dataset(data);
    std::map<std::string, Image> refs;
    FeatureSet fs;
    for (std::size_t n = 0; n < d.records.size(); ++n) {
        const auto& rec = d.records[n];
        if (!rec.ref_id) throw std::runtime_error("fr-probe: manifest row '" + rec.path + "' has no ref_id");
        auto it = refs.find(*rec.ref_id);
        if (it == refs.end()) it = refs.emplace(*rec.ref_id, io::read_image(d.dir / "refs" / (*rec.ref_id + ".ppm"))).first;
        fs.blocks.push_back(fr_features(enc, it->second, d.images[n], enc.config().input_size));
        fs.scores.push_back(rec.score);
    }
    const auto splits = splits_for(cfg, d.records);
    const auto res = probe_protocol(fs, splits);
    write_splits(out / "splits.csv", splits, d.records);
    write_text(out / "fr_probe.json", protocol_json(res).dump(2) + "\n");
    print_protocol("fr-probe", res);
    return 0;
}

std::vector<double> probe_predictions(const std::string& ckpt, const TrainConfig& cfg, const Dataset& train,
                                      const Dataset& pool) {
    const FrozenEncoder enc = load_frozen(ckpt);
    const auto splits = make_splits(train.records, parse_split_mode(cfg.eval.split_mode), 1, cfg.eval.split_seed);
    const auto fitted = probe_protocol(nr_features(enc, train), splits);
    const auto& probe = fitted.splits.at(0).probe;
    std::vector<double> out;
    for (const auto& block : extract_features(enc, pool.images, enc.config().input_size)) out.push_back(predict(probe, block));
    return out;
}

int cmd_gmad(const std::string& defender, const std::string& attacker, const std::string& train_dir,
             const std::string& pool_dir, const std::string& out_dir, const std::string& config) {
    const TrainConfig cfg = resolve_config(config);
    const fs::path out = out_dir;
    prepare_out(out, cfg);
    const Dataset train = load_dataset(train_dir), pool = load_dataset(pool_dir);
    const auto d = probe_predictions(defender, cfg, train, pool);
    const auto a = probe_predictions(attacker, cfg, train, pool);
    const auto pairs = gmad_select(d, a, cfg.eval.gmad_bins);
    std::ofstream csv(out / "gmad.csv");
    csv << "bin,first,second,defender_first,defender_second,attacker_first,attacker_second,gap\n";
    csv.precision(17);
    for (const auto& p : pairs) {
        csv << p.bin << ',' << pool.records[p.first].path << ',' << pool.records[p.second].path << ',' << d[p.first] << ','
            << d[p.second] << ',' << a[p.first] << ',' << a[p.second] << ',' << p.gap << '\n';
        std::printf("bin %zu: %s vs %s  attacker gap %.4f\n", p.bin, pool.records[p.first].path.c_str(),
                    pool.records[p.second].path.c_str(), p.gap);
    }
    return 0;
}

int cmd_export(const std::string& ckpt, const std::string& data, const std::string& out_file) {
    const FrozenEncoder enc = load_frozen(ckpt);
    const Dataset d = load_dataset(data);
    std::vector<std::vector<double>> rows;
    std::vector<std::string> paths;
    for (std::size_t n = 0; n < d.images.size(); ++n) {
        rows.push_back(crop_mean(extract_features(enc, d.images[n], enc.config().input_size)));
        paths.push_back(d.records[n].path);
    }
    const fs::path out = out_file;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    io::export_features(out, rows, paths);
    std::printf("wrote %zu x %zu features to %s\n", rows.size(), rows.empty() ? 0 : rows[0].size(), out.string().c_str());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol) {
    const auto entries = run_gradient_suite(seed, tol);
    bool ok = true;
    std::printf("%-26s %6s %12s  %-6s %s\n", "check", "cases", "max rel err", "result", "worst");
    for (const auto& e : entries) {
        std::printf("%-26s %6zu %12.3e  %-6s %s\n", e.name.c_str(), e.cases, e.max_rel_error, e.passed ? "pass" : "FAIL",
                    e.worst.c_str());
        ok = ok && e.passed;
    }
    std::printf("%s (tolerance %g)\n", ok ? "all checks passed" : "some checks FAILED", tol);
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Relation-graph self-supervised image quality pre-training and probing"};
    app.require_subcommand(1);

    std::string config, out, input, corpus, ckpt, data, source, target, defender, attacker, pool;
    std::size_t synthetic = 0;
    bool dump_graphs = false, quiet = false;
    std::uint64_t seed = 0;
    double tol = 1e-4;

    auto* distort = app.add_subcommand("distort", "Distort a directory of pristine images into a scored fixture set");
    distort->add_option("--input", input, "Directory of pristine .ppm/.png images")->required();
    distort->add_option("--out", out, "Output directory")->required();
    distort->add_option("--config", config, "Config file (default: desk preset)");

    auto* pre = app.add_subcommand("pretrain", "Pre-train an encoder");
    pre->add_option("--config", config, "Config file (default: desk preset)");
    pre->add_option("--corpus", corpus, "Directory of pristine images (or with manifest.csv)");
    pre->add_option("--synthetic", synthetic, "Generate this many procedural images instead of --corpus");
    pre->add_option("--out", out, "Output directory")->required();
    pre->add_flag("--dump-graphs", dump_graphs, "Write every built graph to graphs.csv");
    pre->add_flag("--quiet", quiet, "No per-step progress");

    auto* probe = app.add_subcommand("probe", "Ridge probe on frozen features over repeated splits");
    probe->add_option("checkpoint", ckpt, "Model checkpoint")->required();
    probe->add_option("--data", data, "Directory with manifest.csv")->required();
    probe->add_option("--out", out, "Output directory")->required();
    probe->add_option("--config", config, "Config file for eval.* settings");

    auto* cross = app.add_subcommand("cross", "Fit on one dataset, test on another");
    cross->add_option("checkpoint", ckpt, "Model checkpoint")->required();
    cross->add_option("--source", source, "Training dataset directory")->required();
    cross->add_option("--target", target, "Test dataset directory")->required();
    cross->add_option("--out", out, "Output directory")->required();
    cross->add_option("--config", config, "Config file for eval.* settings");

    auto* gmad = app.add_subcommand("gmad", "Select maximally discriminating pairs between two models");
    gmad->add_option("--defender", defender, "Defender checkpoint")->required();
    gmad->add_option("--attacker", attacker, "Attacker checkpoint")->required();
    gmad->add_option("--train", data, "Scored dataset used to fit both probes")->required();
    gmad->add_option("--pool", pool, "Candidate pool directory with manifest.csv")->required();
    gmad->add_option("--out", out, "Output directory")->required();
    gmad->add_option("--config", config, "Config file for eval.* settings");

    auto* fr = app.add_subcommand("fr-probe", "Full-reference probe on |h_ref - h_dist| features");
    fr->add_option("checkpoint", ckpt, "Model checkpoint")->required();
    fr->add_option("--data", data, "Directory with manifest.csv and refs/")->required();
    fr->add_option("--out", out, "Output directory")->required();
    fr->add_option("--config", config, "Config file for eval.* settings");

    auto* exp = app.add_subcommand("export-features", "Write frozen features to a binary feature file");
    exp->add_option("checkpoint", ckpt, "Model checkpoint")->required();
    exp->add_option("--data", data, "Directory with manifest.csv")->required();
    exp->add_option("--out", out, "Output .shaf file")->required();

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    grad->add_option("--seed", seed, "Random seed");
    grad->add_option("--tolerance", tol, "Relative error bound")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*distort) return cmd_distort(input, out, config);
        if (*pre) return cmd_pretrain(config, corpus, synthetic, out, dump_graphs, quiet);
        if (*probe) return cmd_probe(ckpt, data, out, config);
        if (*cross) return cmd_cross(ckpt, source, target, out, config);
        if (*gmad) return cmd_gmad(defender, attacker, data, pool, out, config);
        if (*fr) return cmd_fr_probe(ckpt, data, out, config);
        if (*exp) return cmd_export(ckpt, data, out);
        if (*grad) return cmd_gradcheck(seed, tol);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error at %s\n", e.what());
        return 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
