#include <chrono>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "shamisa/model.hpp"
#include "test_util.hpp"

using namespace shamisa;
using shamisa::testing::random_tensor;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.encoder.channels = {4, 6};
    c.encoder.d_h = 5;
    c.encoder.input_size = 8;
    c.projector.hidden = 6;
    c.projector.d_z = 3;
    return c;
}

}  // namespace

TEST_CASE("init_params") {
    ModelConfig c;
    c.encoder.channels = {8, 16};
    c.encoder.d_h = 32;
    c.encoder.input_size = 32;
    // conv0: 8*3*9 + 8, conv1: 16*8*9 + 16, fc: 16*32 + 32
    CHECK(encoder_parameter_count(c.encoder) == 224 + 1168 + 544);
    auto p = init_params(c, 7);
    std::size_t enc = 0;
    for (const auto& [name, t] : p)
        if (name.rfind("enc.", 0) == 0) enc += t.size();
    CHECK(enc == 1936);

    auto q = init_params(c, 7);
    for (const auto& [name, t] : p) CHECK(q.at(name).raw() == t.raw());
    CHECK(init_params(c, 8).at("enc.conv0.w").raw() != p.at("enc.conv0.w").raw());

    ModelConfig bad = c;
    bad.encoder.channels.clear();
    CHECK_THROWS(init_params(bad, 1));
    bad = c;
    bad.projector.d_z = 1;
    CHECK_THROWS(init_params(bad, 1));
}

TEST_CASE("encode and project") {
    ModelConfig c = tiny_config();
    auto p = init_params(c, 3);
    RngStream rng(1);
    for (auto& [name, t] : p)
        if (name.find(".b") != std::string::npos) t = random_tensor(rng, t.shape());

    ng::Graph g;
    auto vars = bind_params(g, p);
    Tensor X({3, 3, 8, 8}, 0.0);
    Tensor img = random_tensor(rng, {1, 3, 8, 8}, 0, 1);
    for (std::size_t i = 0; i < 192; ++i) X[192 + i] = X[384 + i] = img[i];
    auto H = encode(g, vars, c.encoder, g.input("X", X, false));
    const Tensor& h = g.value(H);
    REQUIRE(h.shape() == Shape{3, 5});
    for (std::size_t t = 0; t < 5; ++t) CHECK(h.at(1, t) == h.at(2, t));

    auto Z = g.value(project(g, vars, H));
    CHECK(Z.shape() == Shape{3, 3});
    {
        // all-zero images collapse to the bias-only forward pass
        ng::Graph g2;
        auto v2 = bind_params(g2, p);
        auto h2 = g2.value(encode(g2, v2, c.encoder, g2.input("X", Tensor({2, 3, 8, 8}, 0.0), false)));
        for (std::size_t t = 0; t < 5; ++t) {
            CHECK(h2.at(0, t) == h.at(0, t));
            CHECK(h2.at(1, t) == h.at(0, t));
        }
    }

    ng::Graph gz;
    ParamSet zp = p;
    for (auto& [name, t] : zp)
        if (name.rfind("proj.", 0) == 0 && name.find(".b") != std::string::npos) t = Tensor(t.shape(), 0.0);
    auto vz = bind_params(gz, zp);
    auto Zz = gz.value(project(gz, vz, gz.input("H", Tensor({4, 5}, 0.0), false)));
    for (double v : Zz.values()) CHECK(v == 0.0);

    ng::Graph gs;
    auto vs = bind_params(gs, p);
    CHECK_THROWS_AS(encode(gs, vs, c.encoder, gs.input("X", Tensor({1, 3, 10, 10}, 0.0), false)), ShapeError);
}

TEST_CASE("encoder and projector gradients") {
    ModelConfig c = tiny_config();
    RngStream rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        auto p = init_params(c, 10 + trial);
        for (auto& [name, t] : p)
            if (name.find(".b") != std::string::npos) t = random_tensor(rng, t.shape(), -0.1, 0.1);
        {
            ng::Graph g;
            VarMap vars;
            for (const auto& [name, t] : p) vars[name] = g.input(name, t, name.rfind("enc.", 0) == 0);
            auto H = encode(g, vars, c.encoder, g.input("X", random_tensor(rng, {2, 3, 8, 8}, 0, 1), false));
            CHECK(ng::check_gradients(g, g.sum(g.square(H))).max_rel_error <= 1e-4);
        }
        {
            ng::Graph g;
            VarMap vars;
            for (const auto& [name, t] : p) vars[name] = g.input(name, t, name.rfind("proj.", 0) == 0);
            auto Z = project(g, vars, g.input("H", random_tensor(rng, {4, 5}), false));
            CHECK(ng::check_gradients(g, g.sum(g.square(Z))).max_rel_error <= 1e-4);
        }
    }
}

TEST_CASE("frozen encoder") {
    ModelConfig c = tiny_config();
    auto p = init_params(c, 4);
    RngStream rng(3);
    Tensor X = random_tensor(rng, {2, 3, 8, 8}, 0, 1);
    ng::Graph g;
    auto vars = bind_params(g, p);
    Tensor before = g.value(encode(g, vars, c.encoder, g.input("X", X, false)));

    FrozenEncoder f = freeze(c, p);
    CHECK(f.encode(X).raw() == before.raw());
    CHECK(f.encode(X).raw() == f.encode(X).raw());
    CHECK_THROWS_AS(f.project(before), FrozenError);
    CHECK_THROWS_AS(f.gradient(X), FrozenError);
    CHECK(f.encode(random_tensor(rng, {1, 3, 16, 16}, 0, 1)).shape() == Shape{1, 5});

    auto path = std::filesystem::temp_directory_path() / "shamisa_model_test.shck";
    save_model(path.string(), c, p, {{"opt.step", Tensor::scalar(3)}});
    auto loaded = load_model(path.string());
    CHECK(loaded.config.encoder.channels == c.encoder.channels);
    CHECK(loaded.config.projector.d_z == 3);
    CHECK(loaded.extra.count("opt.step") == 1);
    CHECK(loaded.params.size() == p.size());
    CHECK(load_frozen(path.string()).encode(X).raw() == before.raw());
    std::filesystem::remove(path);
}

TEST_CASE("desk encoder step cost") {
    ModelConfig c;  // 4 blocks, d_h 128, crop 64
    auto p = init_params(c, 1);
    RngStream rng(4);
    Tensor X = random_tensor(rng, {126, 3, 64, 64}, 0, 1);
    auto t0 = std::chrono::steady_clock::now();
    ng::Graph g;
    auto vars = bind_params(g, p);
    auto Z = project(g, vars, encode(g, vars, c.encoder, g.input("X", X, false)));
    auto grads = g.backward(g.sum(g.square(Z)));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("forward+backward on 126x3x64x64: " << secs << " s");
    CHECK(grads.size() == p.size());
    CHECK(secs < 2.0);
}
