#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "shamisa/dataio.hpp"
#include "shamisa/evaluation.hpp"
#include "test_util.hpp"

using namespace shamisa;

namespace {

std::vector<double> random_with_ties(RngStream& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    // Copy some entries over others and snap a few onto a coarse grid.
    for (std::size_t t = 0; t < n / 4; ++t) v[rng.below(n)] = v[rng.below(n)];
    for (std::size_t t = 0; t < n / 5; ++t) {
        auto& x = v[rng.below(n)];
        x = std::round(x * 2.0) / 2.0;
    }
    return v;
}

ModelConfig tiny_model() {
    ModelConfig m;
    m.encoder.channels = {4, 8};
    m.encoder.d_h = 6;
    m.encoder.input_size = 16;
    m.projector = {8, 4};
    return m;
}

Image random_image(std::size_t h, std::size_t w, RngStream& rng) {
    Image img(h, w);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

FeatureBlock block_from_rows(const std::vector<std::vector<double>>& rows) {
    Tensor t({rows.size(), rows[0].size()});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[0].size(); ++c) t.at(r, c) = rows[r][c];
    return t;
}

FeatureBlock single_row_block(const std::vector<double>& x) {
    return block_from_rows(std::vector<std::vector<double>>(5, x));
}

// Linear data with noise, one 5-crop block per sample.
FeatureSet linear_set(std::size_t n, std::size_t d, RngStream& rng, double noise) {
    std::vector<double> w(d);
    for (auto& v : w) v = rng.normal();
    FeatureSet fs;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> x(d);
        for (auto& v : x) v = rng.normal();
        double y = 0.3;
        for (std::size_t c = 0; c < d; ++c) y += w[c] * x[c];
        fs.blocks.push_back(single_row_block(x));
        fs.scores.push_back(y + noise * rng.normal());
    }
    return fs;
}

std::vector<io::ManifestRecord> records_with_refs(std::size_t n_refs, std::size_t per_ref) {
    std::vector<io::ManifestRecord> recs;
    for (std::size_t r = 0; r < n_refs; ++r)
        for (std::size_t t = 0; t < per_ref; ++t)
            recs.push_back({"d" + std::to_string(r) + "_" + std::to_string(t), 0.5, "r" + std::to_string(r), {}});
    return recs;
}

}  // namespace

TEST_CASE("srcc examples") {
    CHECK(srcc({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
    CHECK(srcc({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(srcc({1, 2, 2, 3}, {10, 20, 30, 40}) == doctest::Approx(0.9487).epsilon(1e-3));
    CHECK_THROWS_AS(srcc({2, 2, 2}, {1, 2, 3}), EvalError);
    CHECK_THROWS_AS(srcc({1}, {1}), EvalError);
    CHECK_THROWS_AS(srcc({1, 2}, {1, 2, 3}), EvalError);
}

TEST_CASE("srcc matches the rank oracle on tied vectors") {
    RngStream rng = RngStream::derive(11, "srcc");
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 5 + rng.below(46);
        const auto x = random_with_ties(rng, n);
        const auto y = random_with_ties(rng, n);
        const auto ox = oracle::mid_ranks(x), oy = oracle::mid_ranks(y);
        if (std::all_of(ox.begin(), ox.end(), [&](double r) { return r == ox[0]; }) ||
            std::all_of(oy.begin(), oy.end(), [&](double r) { return r == oy[0]; }))
            continue;
        REQUIRE(std::abs(srcc(x, y) - oracle::spearman(x, y)) <= 1e-12);
    }
}

TEST_CASE("srcc is invariant under increasing transforms") {
    RngStream rng = RngStream::derive(12, "srcc-mono");
    for (int trial = 0; trial < 100; ++trial) {
        const auto x = random_with_ties(rng, 30);
        const auto y = random_with_ties(rng, 30);
        std::vector<double> tx(x.size());
        std::transform(x.begin(), x.end(), tx.begin(), [](double v) { return std::exp(3.0 * v) + 7.0; });
        CHECK(srcc(tx, y) == doctest::Approx(srcc(x, y)).epsilon(1e-12));
    }
}

TEST_CASE("fractional ranks average ties") {
    const auto r = fractional_ranks({3, 1, 3, 2, 3});
    CHECK(r == std::vector<double>{4, 1, 4, 2, 4});
}

TEST_CASE("plcc recovers generating logistic parameters") {
    RngStream rng = RngStream::derive(13, "plcc");
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::array<double, 4> beta{3.0 + 2.0 * rng.uniform(), rng.uniform(), rng.uniform() * 2.0 - 1.0,
                                         0.3 + 1.2 * rng.uniform()};
        const std::size_t n = 20 + rng.below(31);
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) s[i] = beta[2] + beta[3] * (rng.uniform() * 12.0 - 6.0);
        // Repeated prediction values.
        for (std::size_t t = 0; t < n / 5; ++t) s[rng.below(n)] = s[rng.below(n)];
        for (std::size_t i = 0; i < n; ++i) y[i] = logistic4(beta, s[i]);

        const auto fit = plcc_4pl(s, y);
        REQUIRE_FALSE(fit.fallback);
        std::vector<double> q(n);
        for (std::size_t i = 0; i < n; ++i) q[i] = logistic4(beta, s[i]);
        CHECK(std::abs(fit.value - oracle::pearson(q, y)) <= 1e-6);
        CHECK(fit.value == doctest::Approx(1.0).epsilon(1e-9));
        for (int k = 0; k < 4; ++k) CHECK(std::abs(fit.beta[k] - beta[k]) <= 1e-3);
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("plcc on a linear relation equals raw pearson") {
    RngStream rng = RngStream::derive(14, "plcc-linear");
    std::vector<double> s(40), y(40);
    for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = rng.uniform();
        y[i] = 2.0 * s[i] + 1.0;
    }
    const auto fit = plcc_4pl(s, y);
    CHECK(std::abs(fit.value - oracle::pearson(s, y)) <= 1e-6);
}

TEST_CASE("plcc rejects degenerate input") {
    CHECK_THROWS_AS(plcc_4pl({1, 1, 1, 1, 1}, {1, 2, 3, 4, 5}), EvalError);
    CHECK_THROWS_AS(plcc_4pl({1, 2, 3, 4}, {1, 2, 3, 4}), EvalError);
}

TEST_CASE("five crop offsets") {
    const auto o = five_crop_offsets(100, 100, 64);
    CHECK(o[0] == CropOffset{0, 0});
    CHECK(o[1] == CropOffset{0, 36});
    CHECK(o[2] == CropOffset{36, 0});
    CHECK(o[3] == CropOffset{36, 36});
    CHECK(o[4] == CropOffset{18, 18});
    CHECK_THROWS_AS(five_crop_offsets(63, 100, 64), EvalError);
}

TEST_CASE("feature extraction shape and degenerate geometry") {
    const auto cfg = tiny_model();
    const FrozenEncoder enc = freeze(cfg, init_params(cfg, 3));
    RngStream rng = RngStream::derive(15, "feat");

    // Exactly crop-sized at half scale: every crop is the whole image.
    const Image img = random_image(32, 32, rng);
    const auto block = extract_features(enc, img, 16);
    REQUIRE(block.shape() == Shape{5, 12});
    for (std::size_t r = 1; r < 5; ++r)
        for (std::size_t c = 0; c < 12; ++c) CHECK(block.at(r, c) == block.at(0, c));

    // The half-scale half of a crop equals encoding that crop directly.
    const Image big = random_image(50, 44, rng);
    const auto b2 = extract_features(enc, big, 16);
    const Image half = downsample_half(big);
    const auto off = five_crop_offsets(half.height, half.width, 16);
    const Image c1 = crop(half, off[1].top, off[1].left, 16, 16);
    const Tensor h1 = enc.encode(std::vector<const Image*>{&c1});
    for (std::size_t c = 0; c < 6; ++c) CHECK(b2.at(1, 6 + c) == doctest::Approx(h1.at(0, c)).epsilon(1e-12));
    const Image f4 = crop(big, 2 * off[4].top, 2 * off[4].left, 32, 32);
    const Tensor h4 = enc.encode(std::vector<const Image*>{&f4});
    for (std::size_t c = 0; c < 6; ++c) CHECK(b2.at(4, c) == doctest::Approx(h4.at(0, c)).epsilon(1e-12));

    try {
        extract_features(enc, random_image(30, 40, rng), 16);
        FAIL("expected EvalError");
    } catch (const EvalError& e) {
        CHECK(std::string(e.what()).find("32x32") != std::string::npos);
    }
}

TEST_CASE("alpha grid") {
    const auto grid = ridge_alpha_grid();
    REQUIRE(grid.size() == 100);
    CHECK(grid.front() == 1e-3);
    CHECK(grid.back() == 1e3);
    for (std::size_t i = 1; i < grid.size(); ++i)
        CHECK(std::log10(grid[i]) - std::log10(grid[i - 1]) == doctest::Approx(6.0 / 99.0).epsilon(1e-9));
}

TEST_CASE("ridge matches the normal-equations oracle") {
    RngStream rng = RngStream::derive(16, "ridge");
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 8 + rng.below(30), d = 1 + rng.below(7);
        std::vector<std::vector<double>> X(n, std::vector<double>(d));
        std::vector<double> w(d), y(n);
        for (auto& v : w) v = rng.normal();
        for (std::size_t r = 0; r < n; ++r) {
            y[r] = -0.7;
            for (std::size_t c = 0; c < d; ++c) {
                X[r][c] = rng.normal();
                y[r] += w[c] * X[r][c];
            }
        }
        const double alpha = ridge_alpha_grid().front();
        const auto oracle_w = oracle::ridge_normal_equations(X, y, alpha);
        const auto direct = ridge_solve(X, y, alpha);
        const auto path = RidgePath(X, y).solve(alpha);
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(std::abs(direct.weights[c] - oracle_w[c]) <= 1e-6);
            CHECK(std::abs(path.weights[c] - oracle_w[c]) <= 1e-6);
            // Noiseless data: smallest alpha is close to the generating weights.
            CHECK(std::abs(path.weights[c] - w[c]) <= 1e-3);
        }
        CHECK(std::abs(path.bias - oracle_w[d]) <= 1e-6);
    }
}

TEST_CASE("ridge on a constant target") {
    RngStream rng = RngStream::derive(17, "ridge-const");
    std::vector<std::vector<double>> X(10, std::vector<double>(3));
    for (auto& row : X)
        for (auto& v : row) v = rng.normal();
    const std::vector<double> y(10, 2.5);
    const auto m = RidgePath(X, y).solve(0.1);
    for (double w : m.weights) CHECK(std::abs(w) <= 1e-12);
    CHECK(m.bias == doctest::Approx(2.5));
}

TEST_CASE("ridge training residual is non-increasing as alpha decreases") {
    RngStream rng = RngStream::derive(18, "ridge-residual");
    const auto fs = linear_set(30, 12, rng, 0.5);
    std::vector<std::vector<double>> X;
    for (const auto& b : fs.blocks) X.push_back(crop_mean(b));
    const RidgePath path(X, fs.scores);
    auto grid = ridge_alpha_grid();
    double prev = std::numeric_limits<double>::infinity();
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
        const auto m = path.solve(*it);
        double sse = 0.0;
        for (std::size_t i = 0; i < X.size(); ++i) sse += std::pow(predict(m, X[i]) - fs.scores[i], 2);
        CHECK(sse <= prev * (1.0 + 1e-12));
        prev = sse;
    }
}

TEST_CASE("predict averages crop predictions") {
    ProbeModel p;
    p.weights = {2.0, -1.0};
    p.bias = 0.5;
    const auto block = block_from_rows({{1, 0}, {0, 1}, {2, 2}, {-1, 3}, {0.5, 0.5}});
    // crops: 2.5, -0.5, 2.5, -4.5, 1.0 -> mean 0.2
    CHECK(predict(p, block) == doctest::Approx(0.2));
    CHECK(predict(p, single_row_block({1.5, 2.0})) == doctest::Approx(predict(p, std::vector<double>{1.5, 2.0})));
    ProbeModel zero;
    zero.weights = {0.0, 0.0};
    zero.bias = -3.0;
    CHECK(predict(zero, block) == -3.0);
    CHECK_THROWS_AS(predict(p, single_row_block({1, 2, 3})), EvalError);
}

TEST_CASE("ridge_fit selects an alpha on the grid") {
    RngStream rng = RngStream::derive(19, "ridge-fit");
    const auto train = linear_set(40, 10, rng, 0.3);
    const auto val = linear_set(15, 10, rng, 0.3);
    const auto m = ridge_fit(train.blocks, train.scores, val.blocks, val.scores);
    const auto grid = ridge_alpha_grid();
    CHECK(std::find(grid.begin(), grid.end(), m.alpha) != grid.end());
    CHECK_THROWS_AS(ridge_fit(train.blocks, train.scores, {}, {}), EvalError);
}

TEST_CASE("reference-disjoint splits") {
    const auto recs = records_with_refs(30, 4);
    const auto splits = make_splits(recs, SplitMode::ReferenceDisjoint, 10, 5);
    REQUIRE(splits.size() == 10);
    for (const auto& sp : splits) {
        std::set<std::string> tr, va, te;
        for (auto i : sp.train) tr.insert(*recs[i].ref_id);
        for (auto i : sp.val) va.insert(*recs[i].ref_id);
        for (auto i : sp.test) te.insert(*recs[i].ref_id);
        for (const auto& r : tr) CHECK((va.count(r) == 0 && te.count(r) == 0));
        for (const auto& r : va) CHECK(te.count(r) == 0);
        CHECK(sp.train.size() + sp.val.size() + sp.test.size() == recs.size());
        CHECK(std::abs(static_cast<double>(tr.size()) / 30.0 - 0.7) <= 1.0 / 30.0);
    }
    CHECK(splits[0].train != splits[1].train);
    const auto again = make_splits(recs, SplitMode::ReferenceDisjoint, 10, 5);
    for (std::size_t s = 0; s < 10; ++s) {
        CHECK(again[s].train == splits[s].train);
        CHECK(again[s].val == splits[s].val);
        CHECK(again[s].test == splits[s].test);
    }
}

TEST_CASE("random splits and missing reference ids") {
    auto recs = records_with_refs(10, 5);
    const auto splits = make_splits(recs, SplitMode::Random, 3, 1);
    for (const auto& sp : splits) {
        CHECK(sp.train.size() == 35);
        CHECK(sp.val.size() == 5);
        CHECK(sp.test.size() == 10);
    }
    recs[7].ref_id.reset();
    CHECK_THROWS_AS(make_splits(recs, SplitMode::ReferenceDisjoint, 3, 1), EvalError);
    CHECK_THROWS_AS(parse_split_mode("stratified"), EvalError);
}

TEST_CASE("probe protocol on noiseless linear data") {
    RngStream rng = RngStream::derive(20, "protocol");
    const auto fs = linear_set(100, 5, rng, 0.0);
    std::vector<io::ManifestRecord> recs(100);
    for (std::size_t i = 0; i < recs.size(); ++i) recs[i].path = std::to_string(i);
    const auto res = probe_protocol(fs, make_splits(recs, SplitMode::Random, 10, 2));
    REQUIRE(res.splits.size() == 10);
    CHECK(res.median_srcc == doctest::Approx(1.0));
    CHECK(res.median_plcc >= 0.999);
}

TEST_CASE("cross-dataset evaluation is zero-shot") {
    RngStream rng = RngStream::derive(21, "cross");
    const auto source = linear_set(60, 6, rng, 0.4);
    const auto target_a = linear_set(60, 6, rng, 0.4);
    const auto target_b = linear_set(60, 6, rng, 0.1);
    std::vector<io::ManifestRecord> recs(60);
    for (std::size_t i = 0; i < recs.size(); ++i) recs[i].path = std::to_string(i);
    const auto splits = make_splits(recs, SplitMode::Random, 10, 3);

    const auto within = probe_protocol(source, splits);
    const auto self = cross_dataset_eval(source, splits, source, splits);
    CHECK(self.alpha == within.alpha);
    for (std::size_t s = 0; s < 10; ++s) CHECK(self.splits[s].srcc == within.splits[s].srcc);

    const auto ra = cross_dataset_eval(source, splits, target_a, splits);
    const auto rb = cross_dataset_eval(source, splits, target_b, splits);
    for (std::size_t s = 0; s < 10; ++s) {
        CHECK(ra.splits[s].probe.weights == rb.splits[s].probe.weights);
        CHECK(ra.splits[s].probe.bias == rb.splits[s].probe.bias);
    }
}

TEST_CASE("gmad examples") {
    RngStream rng = RngStream::derive(22, "gmad");
    std::vector<double> d(40);
    for (auto& v : d) v = rng.uniform();
    const auto same = gmad_select(d, d, 10);
    REQUIRE(same.size() == 2);
    std::vector<double> sorted = d;
    std::sort(sorted.begin(), sorted.end());
    CHECK(same[0].gap == doctest::Approx(sorted[3] - sorted[0]));
    CHECK(same[1].gap == doctest::Approx(sorted[39] - sorted[36]));

    const std::vector<double> flat(40, 0.25);
    const auto c = gmad_select(d, flat, 10, {0, 4, 9});
    for (const auto& p : c) {
        CHECK(p.gap == 0.0);
        std::vector<std::size_t> members;
        std::vector<std::size_t> order(40);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return d[a] < d[b]; });
        members.assign(order.begin() + p.bin * 4, order.begin() + p.bin * 4 + 4);
        std::sort(members.begin(), members.end());
        CHECK(p.first == members[0]);
        CHECK(p.second == members[1]);
    }
    CHECK_THROWS_AS(gmad_select(std::vector<double>(19, 0.0), std::vector<double>(19, 0.0), 10), EvalError);
    CHECK_THROWS_AS(gmad_select(d, d, 10, {10}), EvalError);
}

TEST_CASE("gmad matches exhaustive search with ties") {
    RngStream rng = RngStream::derive(23, "gmad-oracle");
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 20 + rng.below(481);
        std::vector<double> def(n), att(n);
        for (std::size_t i = 0; i < n; ++i) {
            def[i] = std::round(rng.uniform() * 30.0);
            att[i] = std::round(rng.uniform() * 8.0);
        }
        std::vector<std::size_t> all(10);
        std::iota(all.begin(), all.end(), std::size_t{0});
        const auto got = gmad_select(def, att, 10, all);
        const auto want = oracle::gmad_exhaustive(def, att, 10);
        for (std::size_t b = 0; b < 10; ++b) {
            CHECK(got[b].first == want[b].first);
            CHECK(got[b].second == want[b].second);
            CHECK(got[b].gap == want[b].gap);
        }
    }
}

TEST_CASE("full-reference features") {
    const auto cfg = tiny_model();
    const FrozenEncoder enc = freeze(cfg, init_params(cfg, 4));
    RngStream rng = RngStream::derive(24, "fr");
    const Image ref = random_image(40, 40, rng);
    Image dist = ref;
    for (auto& v : dist.data) v = std::clamp(v + 0.2 * rng.normal(), 0.0, 1.0);

    const auto zero = fr_features(enc, ref, ref, 16);
    for (double v : zero.values()) CHECK(v == 0.0);
    ProbeModel p;
    p.weights.assign(12, 0.7);
    p.bias = 1.25;
    CHECK(predict(p, zero) == 1.25);

    const auto u = fr_features(enc, ref, dist, 16);
    const auto swapped = fr_features(enc, dist, ref, 16);
    CHECK(u.raw() == swapped.raw());
    for (double v : u.values()) CHECK(v >= 0.0);
    CHECK_THROWS_AS(fr_features(enc, ref, random_image(40, 42, rng), 16), EvalError);
}

TEST_CASE("fixture evaluation set") {
    const EngineConfig engine{2, 2, 2, 3, 3, 64};
    const auto fx = make_eval_fixture(3, 48, engine, 9);
    REQUIRE(fx.references.size() == 3);
    REQUIRE(fx.items.size() == 3 * 2 * 3);
    for (const auto& it : fx.items) {
        CHECK(it.score == doctest::Approx(pseudo_mos(it.spec, it.l)));
        CHECK(it.image.height == 48);
        CHECK(all_finite(it.image));
    }
    // third reference opens the second tiny-batch
    const auto& it = fx.items[2 * 6 + 1 * 3 + 2];
    CHECK(it.ref_id == "ref_0002");
    CHECK(it.name == "dist_0002_1_2.ppm");
    CHECK((it.i == 1 && it.j == 0 && it.k == 1 && it.l == 2));
    // references in one tiny-batch share their composition groups
    CHECK(fx.items[0].spec.functions == fx.items[6].spec.functions);
    CHECK(fx.items[0].spec.levels == fx.items[6].spec.levels);
    const auto again = make_eval_fixture(3, 48, engine, 9);
    for (std::size_t i = 0; i < fx.items.size(); ++i) CHECK(again.items[i].image.data == fx.items[i].image.data);
    CHECK_THROWS_AS(make_eval_fixture(std::vector<Image>{Image(8, 8), Image(8, 9)}, engine, 1), EvalError);
}
