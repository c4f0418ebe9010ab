#include <cmath>

#include "doctest.h"
#include "grad_suite.hpp"
#include "tofdetect/error.hpp"
#include "tofdetect/layers.hpp"
#include "tofdetect/optim.hpp"

using namespace tofd;

namespace {

// Direct 7-loop convolution with zero "same" padding.
Tensor<double> naive_conv(const Tensor<double>& in, const Tensor<double>& w, const std::vector<double>& bias,
                          int stride) {
    const int od = conv_out_dim(in.d(), stride), oh = conv_out_dim(in.h(), stride), ow = conv_out_dim(in.w(), stride);
    Tensor<double> out({in.n(), w.n(), od, oh, ow});
    const int pd = w.d() / 2, ph = w.h() / 2, pw = w.w() / 2;
    for (int b = 0; b < in.n(); ++b)
        for (int o = 0; o < w.n(); ++o)
            for (int z = 0; z < od; ++z)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x) {
                        double s = bias.empty() ? 0.0 : bias[o];
                        for (int c = 0; c < in.c(); ++c)
                            for (int kz = 0; kz < w.d(); ++kz)
                                for (int ky = 0; ky < w.h(); ++ky)
                                    for (int kx = 0; kx < w.w(); ++kx) {
                                        const int iz = z * stride + kz - pd, iy = y * stride + ky - ph,
                                                  ix = x * stride + kx - pw;
                                        if (iz < 0 || iy < 0 || ix < 0 || iz >= in.d() || iy >= in.h() ||
                                            ix >= in.w())
                                            continue;
                                        s += w.at(o, c, kz, ky, kx) * in.at(b, c, iz, iy, ix);
                                    }
                        out.at(b, o, z, y, x) = s;
                    }
    return out;
}

}  // namespace

TEST_CASE("conv3d matches direct evaluation") {
    Rng rng(1);
    for (int stride : {1, 2}) {
        for (int trial = 0; trial < 3; ++trial) {
            auto in = gradsuite::random_tensor({2, 3, 5 + trial, 6, 7 - trial}, rng);
            auto w = gradsuite::random_tensor({4, 3, 3, 3, 3}, rng);
            std::vector<double> b{0.5, -1.0, 2.0, 0.0};
            auto got = conv3d_forward<double>(in, w, b, stride);
            auto want = naive_conv(in, w, b, stride);
            REQUIRE(got.shape() == want.shape());
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
    auto in = gradsuite::random_tensor({1, 2, 3, 4, 5}, rng);
    Tensor<double> id({2, 2, 1, 1, 1});
    id.at(0, 0, 0, 0, 0) = 1;
    id.at(1, 1, 0, 0, 0) = 1;
    std::vector<double> zero{0, 0};
    CHECK(conv3d_forward<double>(in, id, zero, 1) == in);

    Tensor<float> ones({1, 1, 5, 5, 5}, 1.0f), k({1, 1, 3, 3, 3}, 1.0f);
    CHECK(conv3d_forward<float>(ones, k, {}, 1).at(0, 0, 2, 2, 2) == 27.0f);
    CHECK(conv3d_forward<float>(Tensor<float>({1, 2, 8, 8, 8}), Tensor<float>({1, 2, 3, 3, 3}), {}, 2).shape() ==
          Shape5{1, 1, 4, 4, 4});
    CHECK_THROWS_AS(conv3d_forward<float>(ones, Tensor<float>({1, 2, 3, 3, 3}), {}, 1), Error);
}

TEST_CASE("upsample_repeat") {
    Tensor<float> a({1, 1, 2, 2, 2});
    for (int i = 0; i < 8; ++i) a[i] = float(i + 1);
    CHECK(upsample_repeat_forward(a, 1) == a);
    auto u = upsample_repeat_forward(a, 2);
    CHECK(u.shape() == Shape5{1, 1, 4, 4, 4});
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) CHECK(u.at(0, 0, z, y, x) == a.at(0, 0, z / 2, y / 2, x / 2));
    auto g = upsample_repeat_backward(Tensor<float>({1, 1, 4, 4, 4}, 1.0f), 2);
    for (float v : g.values()) CHECK(v == 8.0f);
}

TEST_CASE("leaky_relu") {
    Tensor<float> x({1, 1, 1, 1, 3}, std::vector<float>{-1.0f, 0.0f, 2.0f});
    auto y = leaky_relu_forward(x, 0.01f);
    CHECK(y[0] == doctest::Approx(-0.01));
    CHECK(y[1] == 0.0f);
    CHECK(y[2] == 2.0f);
    auto g = leaky_relu_backward(x, Tensor<float>({1, 1, 1, 1, 3}, 1.0f), 0.01f);
    CHECK(g[0] == doctest::Approx(0.01));
    CHECK(g[1] == 1.0f);
    CHECK(g[2] == 1.0f);
}

TEST_CASE("instance_norm") {
    std::vector<double> one{1.0}, zero{0.0};
    Tensor<double> c({1, 1, 3, 3, 3}, 4.0);
    const auto zeros = instance_norm_forward<double>(c, one, zero, 1e-5);
    for (double v : zeros.values()) CHECK(v == 0.0);

    Rng rng(4);
    auto x = gradsuite::random_tensor({2, 3, 4, 4, 4}, rng, 5.0);
    std::vector<double> g3{1, 1, 1}, b3{0, 0, 0};
    auto y = instance_norm_forward<double>(x, g3, b3, 1e-8);
    for (int b = 0; b < 2; ++b)
        for (int ch = 0; ch < 3; ++ch) {
            const double* p = y.plane(b, ch);
            double m = 0, v = 0;
            for (std::size_t i = 0; i < y.spatial(); ++i) m += p[i];
            m /= double(y.spatial());
            for (std::size_t i = 0; i < y.spatial(); ++i) v += (p[i] - m) * (p[i] - m);
            v /= double(y.spatial());
            CHECK(std::abs(m) < 1e-5);
            CHECK(std::abs(v - 1.0) < 1e-3);
        }
}

TEST_CASE("dropout") {
    Rng rng(8);
    Tensor<float> x({1, 1, 10, 100, 100}, 1.0f);
    CHECK(dropout_forward(x, 0.0, rng, true) == x);
    CHECK(dropout_forward(x, 0.5, rng, false) == x);
    auto y = dropout_forward(x, 0.3, rng, true);
    std::size_t kept = 0;
    double sum = 0;
    for (float v : y.values()) {
        kept += v != 0.0f;
        sum += v;
    }
    CHECK(std::abs(double(kept) / 1e5 - 0.7) <= 0.01);
    CHECK(std::abs(sum / 1e5 - 1.0) <= 0.02);
    CHECK_THROWS_AS(dropout_forward(x, 1.0, rng, true), Error);
}

TEST_CASE("global_max_pool") {
    Tensor<float> x({1, 2, 2, 2, 2});
    for (int i = 0; i < 8; ++i) x.plane(0, 0)[i] = float(i + 1);
    for (int i = 0; i < 8; ++i) x.plane(0, 1)[i] = 3.0f;
    std::vector<std::size_t> arg;
    auto p = global_max_pool_forward(x, &arg);
    CHECK(p[0] == 8.0f);
    CHECK(p[1] == 3.0f);
    auto g = global_max_pool_backward(x.shape(), arg, Tensor<float>({1, 2, 1, 1, 1}, 1.0f));
    CHECK(g.plane(0, 1)[0] == 1.0f);
    for (int i = 1; i < 8; ++i) CHECK(g.plane(0, 1)[i] == 0.0f);
}

TEST_CASE("dense") {
    Tensor<float> x({2, 3, 1, 1, 1}, std::vector<float>{1, 2, 3, 4, 5, 6});
    Tensor<float> eye({3, 3, 1, 1, 1});
    for (int i = 0; i < 3; ++i) eye.at(i, i, 0, 0, 0) = 1.0f;
    std::vector<float> zero(3, 0.0f), b{7, 8, 9};
    CHECK(dense_forward<float>(x, eye, zero) == x);
    auto c = dense_forward<float>(x, Tensor<float>({3, 3, 1, 1, 1}), b);
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 3; ++i) CHECK(c.at(n, i, 0, 0, 0) == b[i]);
}

TEST_CASE("sigmoid and softmax") {
    Tensor<float> z({1, 3, 1, 1, 1}, 0.0f);
    const auto half = sigmoid_forward(z);
    for (float v : half.values()) CHECK(v == 0.5f);
    const auto third = softmax_channels_forward(z);
    for (float v : third.values()) CHECK(v == doctest::Approx(1.0 / 3.0));
    Rng rng(3);
    auto l = gradsuite::random_tensor({2, 4, 2, 3, 2}, rng, 30.0);
    auto s = softmax_channels_forward(l);
    for (int b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < s.spatial(); ++i) {
            double t = 0;
            for (int c = 0; c < 4; ++c) {
                t += s.plane(b, c)[i];
                CHECK(std::isfinite(s.plane(b, c)[i]));
            }
            CHECK(t == doctest::Approx(1.0));
        }
}

TEST_CASE("glorot_uniform") {
    CHECK(glorot_limit({16, 8, 3, 3, 3}) == doctest::Approx(std::sqrt(6.0 / 648.0)));
    CHECK(glorot_limit({16, 8, 3, 3, 3}) == doctest::Approx(0.09623).epsilon(1e-4));
    CHECK(glorot_limit({4, 4, 1, 1, 1}) == doctest::Approx(0.8660).epsilon(1e-4));
    Rng a(5), b(5);
    auto t = glorot_uniform<float>({16, 8, 3, 3, 3}, a);
    CHECK(t == glorot_uniform<float>({16, 8, 3, 3, 3}, b));
    const double lim = glorot_limit({16, 8, 3, 3, 3});
    for (float v : t.values()) CHECK(std::abs(v) <= lim);
}

TEST_CASE("adam_step") {
    SUBCASE("zero gradient") {
        Tensor<float> p({1, 1, 1, 1, 4}, 2.0f), g({1, 1, 1, 1, 4}, 0.0f);
        Tensor<float>* ps[] = {&p};
        const Tensor<float>* gs[] = {&g};
        AdamState<float> st;
        adam_step<float>(ps, gs, st, 0.1);
        for (float v : p.values()) CHECK(v == 2.0f);
    }
    SUBCASE("first step moves by lr against the gradient sign") {
        Tensor<double> p({1, 1, 1, 1, 2}, std::vector<double>{1.0, 1.0});
        Tensor<double> g({1, 1, 1, 1, 2}, std::vector<double>{3.0, -0.5});
        Tensor<double>* ps[] = {&p};
        const Tensor<double>* gs[] = {&g};
        AdamState<double> st;
        adam_step<double>(ps, gs, st, 1e-3);
        CHECK(p[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
        CHECK(p[1] == doctest::Approx(1.0 + 1e-3).epsilon(1e-9));
    }
    SUBCASE("quadratic") {
        Tensor<double> p({1, 1, 1, 1, 1}, 1.0);
        AdamState<double> st;
        for (int i = 0; i < 200; ++i) {
            Tensor<double> g({1, 1, 1, 1, 1}, 2.0 * p[0]);
            Tensor<double>* ps[] = {&p};
            const Tensor<double>* gs[] = {&g};
            adam_step<double>(ps, gs, st, 0.05);
        }
        CHECK(std::abs(p[0]) < 0.1);
    }
}

TEST_CASE("grad_check on layers") {
    for (const auto& o : gradsuite::layer_checks()) {
        INFO(o.name);
        CHECK(o.checked > 0);
        CHECK(o.max_relative_error < 1e-6);
        if (o.name == "dense") CHECK(o.max_relative_error < 1e-9);
    }
}

TEST_CASE("grad_check detects a wrong gradient") {
    Tensor<double> x({1, 1, 1, 1, 3}, std::vector<double>{0.5, -1.0, 2.0});
    Tensor<double> wrong({1, 1, 1, 1, 3}, std::vector<double>{1.0, -2.0, 4.1});  // d/dx x^2 except last
    GradCheckTarget t{&x, &wrong};
    auto res = grad_check([&] { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; }, std::span(&t, 1));
    CHECK(res.max_relative_error > 1e-3);
    CHECK(res.worst_index == 2);
}
