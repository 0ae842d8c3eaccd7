#include "shamisa/evaluation.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "shamisa/rng.hpp"

namespace shamisa {

namespace {

void require_same_length(const std::vector<double>& x, const std::vector<double>& y, std::size_t min_n,
                         const char* what) {
    if (x.size() != y.size())
        throw EvalError(std::string(what) + ": length mismatch " + std::to_string(x.size()) + " vs " +
                        std::to_string(y.size()));
    if (x.size() < min_n)
        throw EvalError(std::string(what) + ": need at least " + std::to_string(min_n) + " values, got " +
                        std::to_string(x.size()));
}

}  // namespace

double median(std::vector<double> v) {
    if (v.empty()) throw EvalError("median of empty sequence");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> fractional_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    require_same_length(x, y, 2, "pearson");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw EvalError("correlation undefined: zero variance");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double srcc(const std::vector<double>& x, const std::vector<double>& y) {
    require_same_length(x, y, 2, "srcc");
    return pearson(fractional_ranks(x), fractional_ranks(y));
}

double logistic4(const std::array<double, 4>& beta, double s) {
    return (beta[0] - beta[1]) / (1.0 + std::exp(-(s - beta[2]) / std::abs(beta[3]))) + beta[1];
}

namespace {

using Point = std::array<double, 4>;

// Nelder-Mead on R^4 with standard coefficients. Converged once the simplex
// spans at most xtol (relative) and its values differ by at most fatol.
template <class F>
Point nelder_mead(F&& f, Point start, const Point& step, std::size_t max_evals, double xtol, double fatol,
                  bool& converged) {
    constexpr std::size_t D = 4;
    std::array<Point, D + 1> simplex;
    std::array<double, D + 1> fv;
    simplex[0] = start;
    for (std::size_t d = 0; d < D; ++d) {
        simplex[d + 1] = start;
        simplex[d + 1][d] += step[d];
    }
    std::size_t evals = 0;
    auto eval = [&](const Point& p) {
        ++evals;
        const double v = f(p);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    for (std::size_t i = 0; i <= D; ++i) fv[i] = eval(simplex[i]);
    converged = false;
    std::array<std::size_t, D + 1> idx;
    while (evals < max_evals) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = idx[0], worst = idx[D], second = idx[D - 1];
        double spread = 0.0;
        for (std::size_t i = 0; i <= D; ++i)
            for (std::size_t d = 0; d < D; ++d)
                spread = std::max(spread, std::abs(simplex[i][d] - simplex[best][d]) / (1.0 + std::abs(simplex[best][d])));
        if (spread <= xtol && fv[worst] - fv[best] <= fatol) {
            converged = true;
            break;
        }
        Point centroid{};
        for (std::size_t i = 0; i <= D; ++i) {
            if (i == worst) continue;
            for (std::size_t d = 0; d < D; ++d) centroid[d] += simplex[i][d] / D;
        }
        auto along = [&](double t) {
            Point p;
            for (std::size_t d = 0; d < D; ++d) p[d] = centroid[d] + t * (simplex[worst][d] - centroid[d]);
            return p;
        };
        const Point xr = along(-1.0);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            const Point xe = along(-2.0);
            const double fe = eval(xe);
            if (fe < fr) {
                simplex[worst] = xe;
                fv[worst] = fe;
            } else {
                simplex[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            simplex[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        const bool outside = fr < fv[worst];
        const Point xc = along(outside ? -0.5 : 0.5);
        const double fc = eval(xc);
        if (fc < (outside ? fr : fv[worst])) {
            simplex[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i <= D; ++i) {
            if (i == best) continue;
            for (std::size_t d = 0; d < D; ++d) simplex[i][d] = simplex[best][d] + 0.5 * (simplex[i][d] - simplex[best][d]);
            fv[i] = eval(simplex[i]);
        }
    }
    const auto b = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    return simplex[b];
}

double stddev(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / n);
}

}  // namespace

PlccResult plcc_4pl(const std::vector<double>& predictions, const std::vector<double>& scores) {
    require_same_length(predictions, scores, 5, "plcc");
    const double s_std = stddev(predictions);
    if (s_std == 0.0) throw EvalError("plcc: constant predictions");
    if (stddev(scores) == 0.0) throw EvalError("plcc: constant scores");

    auto sse = [&](const Point& b) {
        if (b[3] == 0.0) return std::numeric_limits<double>::infinity();
        double e = 0.0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            const double r = logistic4(b, predictions[i]) - scores[i];
            e += r * r;
        }
        return e;
    };

    const auto [ymin, ymax] = std::minmax_element(scores.begin(), scores.end());
    const Point init{*ymax, *ymin, median(predictions), s_std};
    const double yr = *ymax - *ymin;
    double sst = 0.0;
    {
        const double my = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
        for (double y : scores) sst += (y - my) * (y - my);
    }

    // Documented start first; narrower slopes guard against the flat
    // near-linear basin.
    Point beta = init;
    bool converged = false;
    double best = std::numeric_limits<double>::infinity();
    for (double slope : {1.0, 0.5, 0.25}) {
        Point b = init;
        b[3] *= slope;
        bool conv = false;
        double prev = sse(b);
        for (int round = 0; round < 20; ++round) {
            const Point step{0.1 * yr, 0.1 * yr, 0.1 * s_std, 0.1 * std::max(std::abs(b[3]), 1e-3 * s_std)};
            b = nelder_mead(sse, b, step, 20000, 1e-10, 1e-24 * sst, conv);
            const double cur = sse(b);
            if (conv && prev - cur <= 1e-12 * prev + 1e-24 * sst) break;
            prev = cur;
        }
        const double cur = sse(b);
        if (cur < best) {
            best = cur;
            beta = b;
            converged = conv;
        }
    }
    beta[3] = std::abs(beta[3]);

    PlccResult out;
    out.beta = beta;
    std::vector<double> q(predictions.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = logistic4(beta, predictions[i]);
    bool ok = converged && std::isfinite(sse(beta));
    if (ok) {
        try {
            out.value = pearson(q, scores);
        } catch (const EvalError&) {
            ok = false;
        }
    }
    if (!ok) {
        out.fallback = true;
        out.value = pearson(predictions, scores);
    }
    return out;
}

std::array<CropOffset, 5> five_crop_offsets(std::size_t height, std::size_t width, std::size_t crop) {
    if (height < crop || width < crop)
        throw EvalError("image " + std::to_string(height) + "x" + std::to_string(width) + " smaller than crop " +
                        std::to_string(crop));
    const std::size_t dy = height - crop, dx = width - crop;
    return {CropOffset{0, 0}, CropOffset{0, dx}, CropOffset{dy, 0}, CropOffset{dy, dx}, CropOffset{dy / 2, dx / 2}};
}

FeatureBlock extract_features(const FrozenEncoder& enc, const Image& image, std::size_t crop) {
    const std::size_t min_side = 2 * crop;
    if (image.height < min_side || image.width < min_side)
        throw EvalError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                        " too small for crop " + std::to_string(crop) + ": need at least " +
                        std::to_string(min_side) + "x" + std::to_string(min_side));
    const Image half = downsample_half(image);
    const auto offsets = five_crop_offsets(half.height, half.width, crop);
    std::vector<Image> full_crops, half_crops;
    for (const auto& o : offsets) {
        half_crops.push_back(shamisa::crop(half, o.top, o.left, crop, crop));
        full_crops.push_back(shamisa::crop(image, 2 * o.top, 2 * o.left, 2 * crop, 2 * crop));
    }
    const Tensor hf = enc.encode(to_tensor(full_crops));
    const Tensor hh = enc.encode(to_tensor(half_crops));
    const std::size_t d = enc.width();
    Tensor out({5, 2 * d});
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            out.at(r, c) = hf.at(r, c);
            out.at(r, d + c) = hh.at(r, c);
        }
    return out;
}

std::vector<FeatureBlock> extract_features(const FrozenEncoder& enc, const std::vector<Image>& images,
                                           std::size_t crop) {
    std::vector<FeatureBlock> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(extract_features(enc, img, crop));
    return out;
}

FeatureBlock fr_features(const FrozenEncoder& enc, const Image& reference, const Image& distorted, std::size_t crop) {
    if (!reference.same_shape(distorted)) throw EvalError("reference and distorted image sizes differ");
    FeatureBlock u = extract_features(enc, reference, crop);
    const FeatureBlock hd = extract_features(enc, distorted, crop);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::abs(u[i] - hd[i]);
    return u;
}

std::vector<double> ridge_alpha_grid() {
    std::vector<double> grid(100);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = std::pow(10.0, -3.0 + 6.0 * static_cast<double>(i) / 99.0);
    grid.front() = 1e-3;
    grid.back() = 1e3;
    return grid;
}

namespace {

void check_design(const std::vector<std::vector<double>>& X, const std::vector<double>& y) {
    if (X.empty()) throw EvalError("ridge: empty training set");
    if (X.size() != y.size()) throw EvalError("ridge: feature/score count mismatch");
    const std::size_t d = X.front().size();
    if (d == 0) throw EvalError("ridge: zero-width features");
    for (const auto& row : X)
        if (row.size() != d) throw EvalError("ridge: ragged feature rows");
}

}  // namespace

RidgePath::RidgePath(const std::vector<std::vector<double>>& X, const std::vector<double>& y) {
    check_design(X, y);
    const std::size_t n = X.size(), d = X.front().size();
    mean_x_.assign(d, 0.0);
    for (const auto& row : X)
        for (std::size_t c = 0; c < d; ++c) mean_x_[c] += row[c] / static_cast<double>(n);
    mean_y_ = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

    Eigen::MatrixXd xc(n, d);
    Eigen::VectorXd yc(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) xc(r, c) = X[r][c] - mean_x_[c];
        yc(r) = y[r] - mean_y_;
    }
    const Eigen::MatrixXd gram = xc.transpose() * xc;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw EvalError("ridge: eigendecomposition failed");
    const Eigen::VectorXd p = es.eigenvectors().transpose() * (xc.transpose() * yc);
    evals_.resize(d);
    proj_.resize(d);
    evecs_.assign(d, std::vector<double>(d));
    for (std::size_t t = 0; t < d; ++t) {
        evals_[t] = std::max(0.0, es.eigenvalues()(static_cast<Eigen::Index>(t)));
        proj_[t] = p(static_cast<Eigen::Index>(t));
        for (std::size_t c = 0; c < d; ++c)
            evecs_[t][c] = es.eigenvectors()(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t));
    }
}

ProbeModel RidgePath::solve(double alpha) const {
    if (!(alpha > 0.0)) throw EvalError("ridge: alpha must be positive");
    const std::size_t d = mean_x_.size();
    ProbeModel m;
    m.alpha = alpha;
    m.weights.assign(d, 0.0);
    for (std::size_t t = 0; t < d; ++t) {
        const double coef = proj_[t] / (evals_[t] + alpha);
        if (coef == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) m.weights[c] += coef * evecs_[t][c];
    }
    m.bias = mean_y_;
    for (std::size_t c = 0; c < d; ++c) m.bias -= mean_x_[c] * m.weights[c];
    return m;
}

ProbeModel ridge_solve(const std::vector<std::vector<double>>& X, const std::vector<double>& y, double alpha) {
    check_design(X, y);
    if (!(alpha > 0.0)) throw EvalError("ridge: alpha must be positive");
    const std::size_t n = X.size(), d = X.front().size();
    Eigen::VectorXd mx = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (const auto& row : X)
        for (std::size_t c = 0; c < d; ++c) mx(static_cast<Eigen::Index>(c)) += row[c] / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    Eigen::MatrixXd xc(n, d);
    Eigen::VectorXd yc(n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) xc(r, c) = X[r][c] - mx(static_cast<Eigen::Index>(c));
        yc(r) = y[r] - my;
    }
    Eigen::MatrixXd a = xc.transpose() * xc;
    a.diagonal().array() += alpha;
    const Eigen::VectorXd w = a.ldlt().solve(xc.transpose() * yc);
    ProbeModel m;
    m.alpha = alpha;
    m.weights.assign(w.data(), w.data() + w.size());
    m.bias = my - mx.dot(w);
    return m;
}

double predict(const ProbeModel& probe, const std::vector<double>& x) {
    if (x.size() != probe.weights.size())
        throw EvalError("predict: feature width " + std::to_string(x.size()) + " does not match probe width " +
                        std::to_string(probe.weights.size()));
    double s = probe.bias;
    for (std::size_t i = 0; i < x.size(); ++i) s += probe.weights[i] * x[i];
    return s;
}

double predict(const ProbeModel& probe, const FeatureBlock& block) {
    if (block.rank() != 2 || block.dim(1) != probe.weights.size())
        throw EvalError("predict: feature block " + shape_str(block.shape()) + " does not match probe width " +
                        std::to_string(probe.weights.size()));
    double total = 0.0;
    for (std::size_t r = 0; r < block.dim(0); ++r) {
        double s = probe.bias;
        for (std::size_t c = 0; c < block.dim(1); ++c) s += probe.weights[c] * block.at(r, c);
        total += s;
    }
    return total / static_cast<double>(block.dim(0));
}

std::vector<double> crop_mean(const FeatureBlock& block) {
    std::vector<double> m(block.dim(1), 0.0);
    for (std::size_t r = 0; r < block.dim(0); ++r)
        for (std::size_t c = 0; c < block.dim(1); ++c) m[c] += block.at(r, c) / static_cast<double>(block.dim(0));
    return m;
}

namespace {

// Undefined correlations rank below every defined one.
double srcc_or(const std::vector<double>& x, const std::vector<double>& y, double fallback) {
    try {
        return srcc(x, y);
    } catch (const EvalError&) {
        return fallback;
    }
}

std::vector<std::vector<double>> mean_rows(const std::vector<FeatureBlock>& blocks) {
    std::vector<std::vector<double>> rows;
    rows.reserve(blocks.size());
    for (const auto& b : blocks) rows.push_back(crop_mean(b));
    return rows;
}

std::vector<double> predict_all(const ProbeModel& probe, const std::vector<FeatureBlock>& blocks) {
    std::vector<double> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks) out.push_back(predict(probe, b));
    return out;
}

template <class T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v.at(i));
    return out;
}

// Validation SRCC for every grid alpha.
std::vector<double> validation_curve(const RidgePath& path, const std::vector<FeatureBlock>& val,
                                     const std::vector<double>& val_y, const std::vector<double>& grid) {
    std::vector<double> curve;
    curve.reserve(grid.size());
    for (double a : grid)
        curve.push_back(srcc_or(predict_all(path.solve(a), val), val_y, -std::numeric_limits<double>::infinity()));
    return curve;
}

std::size_t argmax_first(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace

ProbeModel ridge_fit(const std::vector<FeatureBlock>& train, const std::vector<double>& train_y,
                     const std::vector<FeatureBlock>& val, const std::vector<double>& val_y) {
    if (val.empty()) throw EvalError("ridge_fit: empty validation set");
    if (val.size() != val_y.size()) throw EvalError("ridge_fit: validation feature/score count mismatch");
    const RidgePath path(mean_rows(train), train_y);
    const auto grid = ridge_alpha_grid();
    return path.solve(grid[argmax_first(validation_curve(path, val, val_y, grid))]);
}

SplitMode parse_split_mode(const std::string& s) {
    if (s == "reference_disjoint") return SplitMode::ReferenceDisjoint;
    if (s == "random") return SplitMode::Random;
    throw EvalError("unknown split mode '" + s + "' (expected reference_disjoint or random)");
}

std::vector<Split> make_splits(const std::vector<io::ManifestRecord>& records, SplitMode mode, std::size_t n_splits,
                               std::uint64_t seed) {
    if (records.empty()) throw EvalError("make_splits: empty manifest");
    if (n_splits == 0) throw EvalError("make_splits: n_splits must be positive");

    // Units are reference ids (disjoint mode) or single images.
    std::vector<std::vector<std::size_t>> units;
    if (mode == SplitMode::ReferenceDisjoint) {
        std::map<std::string, std::vector<std::size_t>> by_ref;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!records[i].ref_id || records[i].ref_id->empty())
                throw EvalError("make_splits: record '" + records[i].path +
                                "' has no reference id (required for reference_disjoint splits)");
            by_ref[*records[i].ref_id].push_back(i);
        }
        for (auto& [id, members] : by_ref) units.push_back(std::move(members));
    } else {
        for (std::size_t i = 0; i < records.size(); ++i) units.push_back({i});
    }
    const std::size_t n = units.size();
    if (n < 3) throw EvalError("make_splits: need at least 3 units, got " + std::to_string(n));
    std::size_t n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
    std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
    n_train = std::min(n_train, n - n_val - 1);

    std::vector<Split> out;
    for (std::size_t s = 0; s < n_splits; ++s) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto rng = RngStream::derive(seed, "split", {s});
        shuffle(order.begin(), order.end(), rng);
        Split sp;
        for (std::size_t u = 0; u < n; ++u) {
            auto& dst = u < n_train ? sp.train : (u < n_train + n_val ? sp.val : sp.test);
            for (auto i : units[order[u]]) dst.push_back(i);
        }
        std::sort(sp.train.begin(), sp.train.end());
        std::sort(sp.val.begin(), sp.val.end());
        std::sort(sp.test.begin(), sp.test.end());
        out.push_back(std::move(sp));
    }
    return out;
}

namespace {

struct Fitted {
    std::vector<RidgePath> paths;
    double alpha = 0.0;
};

Fitted fit_protocol(const FeatureSet& data, const std::vector<Split>& splits) {
    if (data.blocks.size() != data.scores.size()) throw EvalError("feature/score count mismatch");
    if (splits.empty()) throw EvalError("no splits");
    const auto grid = ridge_alpha_grid();
    Fitted f;
    std::vector<std::vector<double>> curves;
    for (const auto& sp : splits) {
        if (sp.train.empty() || sp.val.empty()) throw EvalError("split with empty train or val partition");
        f.paths.emplace_back(mean_rows(gather(data.blocks, sp.train)), gather(data.scores, sp.train));
        curves.push_back(validation_curve(f.paths.back(), gather(data.blocks, sp.val), gather(data.scores, sp.val), grid));
    }
    std::vector<double> med(grid.size());
    for (std::size_t a = 0; a < grid.size(); ++a) {
        std::vector<double> col;
        for (const auto& c : curves) col.push_back(c[a]);
        med[a] = median(col);
    }
    f.alpha = grid[argmax_first(med)];
    return f;
}

SplitResult score_split(const ProbeModel& probe, const FeatureSet& data, const std::vector<std::size_t>& test) {
    SplitResult r;
    r.probe = probe;
    const auto pred = predict_all(probe, gather(data.blocks, test));
    const auto y = gather(data.scores, test);
    r.srcc = srcc_or(pred, y, 0.0);
    try {
        const auto p = plcc_4pl(pred, y);
        r.plcc = p.value;
        r.plcc_fallback = p.fallback;
    } catch (const EvalError&) {
        r.plcc = 0.0;
        r.plcc_fallback = true;
    }
    return r;
}

void summarize(ProtocolResult& out) {
    std::vector<double> s, p;
    for (const auto& r : out.splits) {
        s.push_back(r.srcc);
        p.push_back(r.plcc);
    }
    out.median_srcc = median(s);
    out.median_plcc = median(p);
}

}  // namespace

ProtocolResult probe_protocol(const FeatureSet& data, const std::vector<Split>& splits) {
    const Fitted f = fit_protocol(data, splits);
    ProtocolResult out;
    out.alpha = f.alpha;
    for (std::size_t s = 0; s < splits.size(); ++s) {
        if (splits[s].test.empty()) throw EvalError("split with empty test partition");
        out.splits.push_back(score_split(f.paths[s].solve(f.alpha), data, splits[s].test));
    }
    summarize(out);
    return out;
}

ProtocolResult cross_dataset_eval(const FeatureSet& source, const std::vector<Split>& source_splits,
                                  const FeatureSet& target, const std::vector<Split>& target_splits) {
    if (target_splits.size() != source_splits.size())
        throw EvalError("cross_dataset_eval: source and target split counts differ");
    if (target.blocks.size() != target.scores.size()) throw EvalError("target feature/score count mismatch");
    const Fitted f = fit_protocol(source, source_splits);
    ProtocolResult out;
    out.alpha = f.alpha;
    for (std::size_t s = 0; s < source_splits.size(); ++s) {
        if (target_splits[s].test.empty()) throw EvalError("target split with empty test partition");
        out.splits.push_back(score_split(f.paths[s].solve(f.alpha), target, target_splits[s].test));
    }
    summarize(out);
    return out;
}

EvalFixture make_eval_fixture(std::vector<Image> references, const EngineConfig& engine, std::uint64_t seed) {
    if (references.empty()) throw EvalError("fixture: need at least one reference");
    const std::size_t side = references[0].height;
    for (const auto& r : references)
        if (r.height != side || r.width != side)
            throw EvalError("fixture: references must share one square size, got " + std::to_string(r.height) + "x" +
                            std::to_string(r.width) + " next to " + std::to_string(side) + "x" + std::to_string(side));
    const auto registry = DistortionRegistry::standard();
    EvalFixture fx;
    fx.references = std::move(references);
    const std::size_t n = fx.references.size();
    char buf[64];
    for (std::size_t i = 0, first = 0; first < n; ++i, first += engine.R) {
        const std::size_t count = std::min(engine.R, n - first);
        const EngineConfig cfg{1, count, engine.C, engine.L, engine.M_d, side};
        std::vector<const Image*> refs;
        for (std::size_t j = 0; j < count; ++j) refs.push_back(&fx.references[first + j]);
        Batch batch = build_batch(refs, cfg, registry, RngStream::derive(seed, "distort", {i}));
        for (std::size_t j = 0; j < count; ++j)
            for (std::size_t k = 0; k < cfg.C; ++k)
                for (std::size_t l = 0; l < cfg.L; ++l) {
                    FixtureItem item;
                    item.source = first + j;
                    item.i = i, item.j = j, item.k = k, item.l = l;
                    item.spec = batch.meta.group(0, k);
                    item.image = std::move(batch.images[batch.meta.dist_row(0, j, k, l)]);
                    item.score = pseudo_mos(item.spec, l);
                    std::snprintf(buf, sizeof buf, "ref_%04zu", item.source);
                    item.ref_id = buf;
                    std::snprintf(buf, sizeof buf, "dist_%04zu_%zu_%zu.ppm", item.source, k, l);
                    item.name = buf;
                    fx.items.push_back(std::move(item));
                }
    }
    return fx;
}

EvalFixture make_eval_fixture(std::size_t n_refs, std::size_t size, const EngineConfig& engine, std::uint64_t seed) {
    std::vector<Image> refs;
    for (std::size_t r = 0; r < n_refs; ++r) refs.push_back(io::generate_fixture_image(size, seed, r));
    return make_eval_fixture(std::move(refs), engine, seed);
}

std::vector<GmadPair> gmad_select(const std::vector<double>& defender, const std::vector<double>& attacker,
                                  std::size_t n_bins, std::vector<std::size_t> bins) {
    if (defender.size() != attacker.size()) throw EvalError("gmad: defender/attacker length mismatch");
    if (n_bins == 0) throw EvalError("gmad: n_bins must be positive");
    const std::size_t n = defender.size();
    if (n < 2 * n_bins)
        throw EvalError("gmad: pool of " + std::to_string(n) + " is smaller than 2 * n_bins = " +
                        std::to_string(2 * n_bins));
    if (bins.empty()) bins = n_bins == 1 ? std::vector<std::size_t>{0} : std::vector<std::size_t>{0, n_bins - 1};

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return defender[a] < defender[b]; });

    std::vector<GmadPair> out;
    for (auto b : bins) {
        if (b >= n_bins) throw EvalError("gmad: bin " + std::to_string(b) + " out of range");
        const std::size_t lo = b * n / n_bins, hi = (b + 1) * n / n_bins;
        if (hi - lo < 2) throw EvalError("gmad: bin " + std::to_string(b) + " has fewer than 2 images");
        std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));
        std::sort(members.begin(), members.end());
        // Smallest index holding the minimum and the maximum attacker score.
        std::size_t imin = members[0], imax = members[0];
        for (auto i : members) {
            if (attacker[i] < attacker[imin]) imin = i;
            if (attacker[i] > attacker[imax]) imax = i;
        }
        GmadPair p;
        p.bin = b;
        if (imin == imax) {
            p.first = members[0];
            p.second = members[1];
        } else {
            p.first = std::min(imin, imax);
            p.second = std::max(imin, imax);
        }
        p.gap = std::abs(attacker[p.first] - attacker[p.second]);
        out.push_back(p);
    }
    return out;
}

}  // namespace shamisa
