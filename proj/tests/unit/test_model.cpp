#include <cmath>

#include "doctest.h"
#include "grad_suite.hpp"
#include "tofdetect/error.hpp"
#include "tofdetect/model.hpp"

using namespace tofd;

namespace {

NetworkConfig toy(int levels, int base, int side) {
    NetworkConfig c;
    c.levels = levels;
    c.base_channels = base;
    c.input_dims = side;
    c.se_ratio = 2;
    c.p_drop = 0.0;
    return c;
}

Tensor<float> random_input(int side, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<float> x({1, 1, side, side, side});
    for (auto& v : x.values()) v = float(rng.uniform());
    return x;
}

}  // namespace

TEST_CASE("network shapes") {
    auto c = toy(2, 4, 16);
    auto m = Model<float>::build(c, 1);
    CHECK(level_channels(c, 2) == 16);
    auto deep = m.find("enc2.down.weight");
    CHECK(deep->value.shape() == Shape5{16, 8, 3, 3, 3});
    // the deepest level runs on 16 / 2^2 = 4 voxels per side
    Tape<float> tape(false);
    auto h = conv_block(tape, make_leaf(Tensor<float>({1, 8, 8, 8, 8}), false),
                        ConvBlockParams<float>{deep, m.find("enc2.down.norm.gamma"), m.find("enc2.down.norm.beta"), 2},
                        BlockSettings{});
    CHECK(h->value.shape() == Shape5{1, 16, 4, 4, 4});

    auto out = m.predict(random_input(16, 2));
    CHECK(out.shape() == Shape5{1, 3, 16, 16, 16});
    for (std::size_t i = 0; i < out.spatial(); ++i) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += out.plane(0, k)[i];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
    CHECK_THROWS_AS(m.predict(random_input(8, 1)), Error);
}

TEST_CASE("full depth network shape contract") {
    NetworkConfig c;
    c.levels = 4;
    c.base_channels = 1;
    c.se_ratio = 1;
    c.input_dims = 32;
    auto m = Model<float>::build(c, 5);
    CHECK(m.predict(random_input(32, 3)).shape() == Shape5{1, 3, 32, 32, 32});
}

TEST_CASE("determinism") {
    auto c = toy(2, 2, 8);
    c.p_drop = 0.3;
    auto a = Model<float>::build(c, 42);
    auto b = Model<float>::build(c, 42);
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters()[i].name == b.parameters()[i].name);
        CHECK(a.parameters()[i].node->value == b.parameters()[i].node->value);
    }
    auto other = Model<float>::build(c, 43);
    CHECK(!(other.find("enc0.in.weight")->value == a.find("enc0.in.weight")->value));

    const auto x = random_input(8, 9);
    CHECK(a.predict(x) == a.predict(x));

    a.set_mode(Mode::Train);
    auto run = [&](std::uint64_t s) {
        Rng rng(s);
        Tape<float> t(false);
        return a.forward(t, make_leaf(x, false), &rng)->value;
    };
    CHECK(run(7) == run(7));
    CHECK(!(run(7) == run(8)));
    Tape<float> t(false);
    CHECK_THROWS_AS(a.forward(t, make_leaf(x, false), nullptr), Error);
}

TEST_CASE("validate") {
    auto c = toy(2, 4, 16);
    CHECK_NOTHROW(validate(c));
    auto bad = c;
    bad.input_dims = 18;
    CHECK_THROWS_AS(validate(bad), Error);
    bad = c;
    bad.se_ratio = 3;
    CHECK_THROWS_WITH(validate(bad), doctest::Contains("se_ratio"));
    bad.attention = AttentionPosition::None;
    CHECK_NOTHROW(validate(bad));
    bad = c;
    bad.p_drop = 1.0;
    CHECK_THROWS_AS(validate(bad), Error);

    NetworkConfig full;  // 4 levels, 16 base, ratio 16 at the middle
    CHECK(se_site_channels(full) == std::vector<int>{256, 128});
    CHECK_NOTHROW(validate(full));
    CHECK(parse_attention("upsample") == AttentionPosition::Upsample);
    CHECK(attention_name(AttentionPosition::Downsample) == "downsample");
    CHECK_THROWS_AS(parse_attention("sideways"), Error);
}

TEST_CASE("se_block") {
    Rng rng(1);
    auto p = make_se_params<float>(256, 16, rng);
    CHECK(p.fc1_weights->value.shape() == Shape5{16, 256, 1, 1, 1});
    CHECK(p.fc1_weights->value.size() + p.fc1_bias->value.size() == 4112);
    CHECK_THROWS_AS(make_se_params<float>(24, 16, rng), Error);

    auto z = make_se_params<float>(8, 2, rng);
    for (auto* n : {&z.fc1_weights, &z.fc2_weights}) (*n)->value.fill(0.0f);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<float> x({1, 8, 3, 4, 5});
        for (auto& v : x.values()) v = float(rng.normal(0, 10));
        Tape<float> t(false);
        auto y = se_block(t, make_leaf(x, false), z);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y->value[i] - 0.5f * x[i]) < 1e-7);
    }
}

TEST_CASE("context module with zero convs is the identity") {
    Rng rng(2);
    ConvBlockParams<float> zero{make_leaf(Tensor<float>({8, 8, 3, 3, 3}), true),
                                make_leaf(Tensor<float>({8, 1, 1, 1, 1}, 1.0f), true),
                                make_leaf(Tensor<float>({8, 1, 1, 1, 1}), true), 1};
    Tensor<float> x({1, 8, 8, 8, 8});
    for (auto& v : x.values()) v = float(rng.normal());
    Tape<float> t(false);
    auto y = context_module(t, make_leaf(x, false), ContextParams<float>{zero, zero}, BlockSettings{}, nullptr);
    CHECK(y->value == x);
}

TEST_CASE("localization halves channels") {
    Rng rng(3);
    LocalizationParams<float> p{
        {make_leaf(glorot_uniform<float>({8, 16, 3, 3, 3}, rng), true), make_leaf(Tensor<float>({8, 1, 1, 1, 1}, 1.0f), true),
         make_leaf(Tensor<float>({8, 1, 1, 1, 1}), true), 1},
        {make_leaf(glorot_uniform<float>({8, 8, 1, 1, 1}, rng), true), make_leaf(Tensor<float>({8, 1, 1, 1, 1}, 1.0f), true),
         make_leaf(Tensor<float>({8, 1, 1, 1, 1}), true), 1}};
    Tape<float> t(false);
    auto y = localization_module(t, make_leaf(Tensor<float>({1, 16, 8, 8, 8}, 1.0f), false), p, BlockSettings{});
    CHECK(y->value.shape() == Shape5{1, 8, 8, 8, 8});
}

TEST_CASE("deep supervision sum") {
    Rng rng(4);
    Tensor<float> m({1, 3, 4, 4, 4});
    for (auto& v : m.values()) v = float(rng.normal());
    Tape<float> t(false);
    auto z1 = make_leaf(Tensor<float>({1, 3, 1, 1, 1}), false);
    auto z2 = make_leaf(Tensor<float>({1, 3, 2, 2, 2}), false);
    auto y = deep_supervision_sum(t, {z1, z2, make_leaf(m, false)});
    auto want = softmax_channels_forward(m);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(y->value[i] == doctest::Approx(want[i]).epsilon(1e-6));

    Tensor<float> a({1, 3, 1, 1, 1}, 2.0f), b({1, 3, 2, 2, 2}, 2.0f), c({1, 3, 4, 4, 4}, 2.0f);
    auto u = deep_supervision_sum(t, {make_leaf(a, false), make_leaf(b, false), make_leaf(c, false)});
    for (float v : u->value.values()) CHECK(v == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(deep_supervision_sum(t, {make_leaf(c, false), make_leaf(c, false)}), Error);
}

TEST_CASE("precision cast keeps outputs close") {
    auto m = Model<float>::build(toy(2, 2, 8), 11);
    auto d = m.cast<double>();
    const auto x = random_input(8, 12);
    auto yf = m.predict(x);
    auto yd = d.predict(x.cast<double>());
    for (std::size_t i = 0; i < yf.size(); ++i) CHECK(yf[i] == doctest::Approx(yd[i]).epsilon(1e-4));
}

TEST_CASE("full toy network gradients") {
    for (auto pos : {AttentionPosition::Middle, AttentionPosition::None}) {
        auto o = gradsuite::network_check(pos);
        INFO(o.name);
        CHECK(o.max_relative_error < 1e-4);
    }
}
