#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "tofdetect/error.hpp"
#include "tofdetect/rng.hpp"
#include "tofdetect/volume.hpp"

using namespace tofd;

namespace {

Volume from_values(Index3 dims, std::vector<float> v, Vec3 spacing = {1, 1, 1}) {
    return Volume(dims, spacing, std::move(v));
}

BinaryMask random_mask(Index3 dims, double p, Rng& rng) {
    BinaryMask m(dims);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < p);
    return m;
}

oracle::Grid grid(Index3 d) { return {d.x, d.y, d.z}; }

}  // namespace

TEST_CASE("normalize_intensity maps endpoints") {
    auto a = normalize_intensity(from_values({2, 1, 1}, {0, 2048}), 1024);
    CHECK(a[0] == 0.0f);
    CHECK(a[1] == 1024.0f);

    auto b = normalize_intensity(from_values({3, 1, 1}, {10, 20, 30}), 1024);
    CHECK(b[0] == 0.0f);
    CHECK(b[1] == doctest::Approx(512.0));
    CHECK(b[2] == 1024.0f);

    auto same = from_values({3, 1, 1}, {0, 300, 1024});
    CHECK(normalize_intensity(same, 1024) == same);

    try {
        normalize_intensity(from_values({2, 1, 1}, {5, 5}), 1024);
        FAIL("expected ConstantVolume");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ConstantVolume);
    }
}

TEST_CASE("resample_isotropic") {
    Volume v({10, 10, 5}, {1, 1, 2});
    for (int z = 0; z < 5; ++z)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) v.at(x, y, z) = float(z);
    auto [out, t] = resample_isotropic(v);
    CHECK(out.dims() == Index3{10, 10, 10});
    CHECK(out.spacing() == Vec3{1, 1, 1});
    // interior output slices fall half way between two source slices
    for (int z = 1; z + 1 < 10; ++z) {
        const double src = (z + 0.5) * 0.5 - 0.5;
        CHECK(out.at(4, 4, z) == doctest::Approx(src).epsilon(1e-6));
    }
    CHECK(out.at(4, 4, 1) == doctest::Approx(0.25));

    SUBCASE("already isotropic") {
        Rng rng(3);
        Volume iso({4, 5, 6}, {0.7, 0.7, 0.7});
        for (auto& x : iso.data()) x = float(rng.uniform());
        auto [o, tr] = resample_isotropic(iso, Interpolation::Nearest);
        CHECK(tr.is_identity());
        CHECK(o.voxels() == iso.voxels());
    }
}

TEST_CASE("resize_to geometry") {
    {
        Volume v({8, 8, 8}, {1, 1, 1}, 1.0f);
        auto [o, t] = resize_to(v, {8, 8, 8});
        CHECK(t.is_identity());
        CHECK(o.voxels() == v.voxels());
    }
    {
        Volume v({32, 32, 32}, {1, 1, 1});
        auto [o, t] = resize_to(v, {16, 16, 16});
        CHECK(t.scale == Vec3{2, 2, 2});
        const Vec3 back = t.to_original({8, 8, 8});
        CHECK(std::abs(back.x - 16) <= 0.5);
        CHECK(std::abs(back.z - 16) <= 0.5);
    }
    {
        Volume v({12, 16, 8}, {1, 1, 1});
        auto [o, t] = resize_to(v, {16, 16, 16});
        CHECK(t.scale.x == doctest::Approx(0.75));
        CHECK(t.scale.y == doctest::Approx(1.0));
        CHECK(t.scale.z == doctest::Approx(0.5));
        Rng rng(11);
        for (int i = 0; i < 20; ++i) {
            const Vec3 p{double(rng.below(12)), double(rng.below(16)), double(rng.below(8))};
            const Vec3 q = t.to_original(t.to_target(p));
            CHECK(std::abs(q.x - p.x) <= 0.5);
            CHECK(std::abs(q.y - p.y) <= 0.5);
            CHECK(std::abs(q.z - p.z) <= 0.5);
        }
    }
}

TEST_CASE("flip_transverse") {
    Volume v({2, 2, 10}, {1, 1, 1});
    v.at(1, 0, 0) = 5.0f;
    auto f = flip_transverse(v);
    CHECK(f.at(1, 0, 9) == 5.0f);
    CHECK(f.at(1, 0, 0) == 0.0f);
    CHECK(flip_transverse(f) == v);

    Volume one({3, 3, 1}, {1, 1, 1}, 2.0f);
    CHECK(flip_transverse(one) == one);
}

TEST_CASE("histogram_equalize") {
    SUBCASE("two-valued") {
        std::vector<float> vals(64);
        for (int i = 0; i < 64; ++i) vals[i] = i < 32 ? 0.0f : 1024.0f;
        auto out = histogram_equalize(from_values({4, 4, 4}, vals), 64);
        std::set<float> distinct(out.voxels().begin(), out.voxels().end());
        CHECK(distinct.size() == 2);
        CHECK(out.min_max().second == 1024.0f);
    }
    SUBCASE("skewed ramp flattens") {
        // bin b of 64 over [0, 1024] holds 2b + 1 evenly spaced values
        std::vector<float> vals;
        for (int b = 0; b < 64; ++b)
            for (int k = 0; k < 2 * b + 1; ++k) vals.push_back(float(16.0 * (b + (k + 0.5) / (2 * b + 1))));
        vals.front() = 0.0f;
        vals.back() = 1024.0f;
        REQUIRE(vals.size() == 4096);
        auto out = histogram_equalize(from_values({16, 16, 16}, vals), 64);
        std::vector<int> counts(64, 0);
        for (float x : out.voxels()) counts[std::min(int(x / 16.0f), 63)]++;
        for (int c : counts) CHECK(std::abs(c - 64) <= 64 * 0.05);
    }
    SUBCASE("uniform histogram is nearly unchanged") {
        std::vector<float> vals(4096);
        for (int i = 0; i < 4096; ++i) vals[i] = float(i) / 4095.0f * 1024.0f;
        auto out = histogram_equalize(from_values({16, 16, 16}, vals), 256);
        const double width = 1024.0 / 256.0;
        for (int i = 0; i < 4096; ++i) CHECK(std::abs(out[i] - vals[i]) <= width + 1e-3);
    }
}

TEST_CASE("discrete gaussian kernel") {
    CHECK(effective_kernel_width(32) == 33);
    CHECK(effective_kernel_width(5) == 5);
    auto k = discrete_gaussian_kernel(1.0, 5);
    REQUIRE(k.size() == 5);
    double z = 0.0;
    for (int i = -2; i <= 2; ++i) z += std::exp(-i * i / 2.0);
    for (int i = -2; i <= 2; ++i) CHECK(k[i + 2] == doctest::Approx(std::exp(-i * i / 2.0) / z).epsilon(1e-12));
    CHECK(k[2] == doctest::Approx(0.4026).epsilon(1e-3));

    Volume c({6, 6, 6}, {1, 1, 1}, 7.0f);
    auto s = gaussian_smooth_discrete(c, 4.0, 32);
    for (float x : s.voxels()) CHECK(x == doctest::Approx(7.0).epsilon(1e-5));

    Volume imp({9, 9, 9}, {1, 1, 1});
    imp.at(4, 4, 4) = 1.0f;
    auto r = gaussian_smooth_discrete(imp, 1.0, 5);
    for (int dz = -2; dz <= 2; ++dz)
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx)
                CHECK(r.at(4 + dx, 4 + dy, 4 + dz) ==
                      doctest::Approx(k[dx + 2] * k[dy + 2] * k[dz + 2]).epsilon(1e-5));
}

TEST_CASE("spherical_dilate") {
    BinaryMask m({9, 9, 9});
    m.set(4, 4, 4);
    CHECK(spherical_dilate(m, 0.0) == m);
    CHECK(spherical_dilate(m, 1.0).count() == 7);
    CHECK(spherical_dilate(m, 2.0).count() == std::size_t(oracle::lattice_ball_count(2)));
    CHECK(oracle::lattice_ball_count(2) == 33);

    Rng rng(5);
    auto rm = random_mask({10, 10, 10}, 0.05, rng);
    auto d = spherical_dilate(rm, 1.5);
    CHECK(is_subset(rm, d));
    // brute force distance check
    for (int z = 0; z < 10; ++z)
        for (int y = 0; y < 10; ++y)
            for (int x = 0; x < 10; ++x) {
                bool near = false;
                for (int zz = 0; zz < 10 && !near; ++zz)
                    for (int yy = 0; yy < 10 && !near; ++yy)
                        for (int xx = 0; xx < 10 && !near; ++xx)
                            if (rm.at(xx, yy, zz)) {
                                const int dd = (x - xx) * (x - xx) + (y - yy) * (y - yy) + (z - zz) * (z - zz);
                                near = dd <= 2;  // 1.5^2 = 2.25
                            }
                CHECK(d.at(x, y, z) == near);
            }
}

TEST_CASE("connected_components") {
    CHECK(connected_components(BinaryMask({4, 4, 4}), Connectivity::Six).empty());

    BinaryMask corner({4, 4, 4});
    corner.set(1, 1, 1);
    corner.set(2, 2, 2);
    CHECK(connected_components(corner, Connectivity::TwentySix).size() == 1);
    CHECK(connected_components(corner, Connectivity::Six).size() == 2);

    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        auto m = random_mask({16, 16, 16}, 0.2 + 0.01 * trial, rng);
        std::vector<std::uint8_t> bits(m.bits().begin(), m.bits().end());
        for (auto conn : {Connectivity::Six, Connectivity::TwentySix}) {
            auto comps = connected_components(m, conn);
            std::vector<std::size_t> sizes;
            std::vector<int> owner(m.size(), -1);
            for (std::size_t c = 0; c < comps.size(); ++c) {
                sizes.push_back(comps[c].voxel_indices.size());
                for (auto i : comps[c].voxel_indices) owner[i] = int(c);
            }
            std::sort(sizes.begin(), sizes.end());
            CHECK(sizes == oracle::component_sizes(grid(m.dims()), bits, conn == Connectivity::TwentySix));
            for (std::size_t i = 0; i < m.size(); ++i) CHECK((owner[i] >= 0) == m[i]);
        }
    }
}

TEST_CASE("remap_mask") {
    Rng rng(2);
    auto m = random_mask({6, 6, 6}, 0.3, rng);
    CHECK(remap_mask(m, GeometricTransform::identity(m.dims())) == m);

    // 8^3 cube centered in a 32^3 target of a 64^3 original
    Volume orig({64, 64, 64}, {1, 1, 1});
    auto [small, t] = resize_to(orig, {32, 32, 32});
    BinaryMask cube({32, 32, 32});
    for (int z = 12; z < 20; ++z)
        for (int y = 12; y < 20; ++y)
            for (int x = 12; x < 20; ++x) cube.set(x, y, z);
    auto back = remap_mask(cube, t);
    CHECK(back.dims() == Index3{64, 64, 64});
    auto comps = connected_components(back, Connectivity::Six);
    REQUIRE(comps.size() == 1);
    int lo = 64, hi = -1;
    for (auto i : comps[0].voxel_indices) {
        const auto p = unravel_index(back.dims(), i);
        lo = std::min(lo, p.x);
        hi = std::max(hi, p.x);
    }
    CHECK(std::abs(lo - 24) <= 1);
    CHECK(std::abs(hi - 39) <= 1);

    SUBCASE("round trip through 64^3") {
        for (int trial = 0; trial < 5; ++trial) {
            BinaryMask blobs({32, 32, 32});
            for (int b = 0; b < 4; ++b) {
                const int cx = 4 + int(rng.below(24)), cy = 4 + int(rng.below(24)), cz = 4 + int(rng.below(24));
                const int r = 2 + int(rng.below(2));
                for (int z = cz - r; z <= cz + r; ++z)
                    for (int y = cy - r; y <= cy + r; ++y)
                        for (int x = cx - r; x <= cx + r; ++x)
                            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz) <= r * r)
                                blobs.set(x, y, z);
            }
            Volume v32({32, 32, 32}, {1, 1, 1});
            auto [v64, t64] = resize_to(v32, {64, 64, 64});
            auto up = resize_mask(blobs, {64, 64, 64});
            auto down = remap_mask(up, t64);
            for (const auto& c : connected_components(blobs, Connectivity::TwentySix)) {
                if (c.voxel_indices.size() < 27) continue;
                std::size_t inter = 0, uni = 0;
                for (auto i : c.voxel_indices) inter += down[i];
                BinaryMask comp({32, 32, 32});
                for (auto i : c.voxel_indices) comp.set(i);
                auto d2 = mask_intersection(down, spherical_dilate(comp, 1.0));
                uni = mask_union(comp, d2).count();
                CHECK(double(inter) / double(uni) >= 0.9);
            }
        }
    }
}

TEST_CASE("mask algebra") {
    Rng rng(9);
    auto a = random_mask({5, 5, 5}, 0.4, rng);
    auto b = random_mask({5, 5, 5}, 0.4, rng);
    auto u = mask_union(a, b);
    auto i = mask_intersection(a, b);
    CHECK(u.count() + i.count() == a.count() + b.count());
    CHECK(is_subset(i, a));
    CHECK(is_subset(a, u));
    CHECK(mask_difference(a, b).count() == a.count() - i.count());
    CHECK_THROWS_AS(mask_union(a, BinaryMask({4, 5, 5})), Error);
}

TEST_CASE("properties") {
    Rng rng(12);
    SUBCASE("dilation is extensive and monotone") {
        for (int t = 0; t < 20; ++t) {
            auto a = random_mask({8, 8, 8}, 0.05, rng);
            auto b = mask_union(a, random_mask({8, 8, 8}, 0.05, rng));
            const double r = rng.uniform(0.0, 2.5);
            auto da = spherical_dilate(a, r), db = spherical_dilate(b, r);
            CHECK(is_subset(a, da));
            CHECK(is_subset(da, db));
        }
    }
    SUBCASE("smoothing keeps the sum of a constant-bordered volume") {
        Volume v({20, 20, 20}, {1, 1, 1}, 10.0f);
        for (int z = 8; z < 12; ++z)
            for (int y = 8; y < 12; ++y)
                for (int x = 8; x < 12; ++x) v.at(x, y, z) = float(rng.uniform(0, 500));
        double before = 0, after = 0;
        for (float x : v.voxels()) before += x;
        const Volume smooth = gaussian_smooth_discrete(v, 1.0, 7);
        for (float x : smooth.voxels()) after += x;
        CHECK(after == doctest::Approx(before).epsilon(1e-3));
        double taps = 0;
        for (double k : discrete_gaussian_kernel(4.0, 32)) taps += k;
        CHECK(std::abs(taps - 1.0) < 1e-6);
    }
    SUBCASE("components on 4^3 against union-find") {
        auto compare = [](const BinaryMask& m) {
            std::vector<std::uint8_t> bits(m.bits().begin(), m.bits().end());
            for (auto conn : {Connectivity::Six, Connectivity::TwentySix}) {
                std::vector<std::size_t> sizes;
                for (const auto& c : connected_components(m, conn)) sizes.push_back(c.voxel_indices.size());
                std::sort(sizes.begin(), sizes.end());
                CHECK(sizes == oracle::component_sizes({4, 4, 4}, bits, conn == Connectivity::TwentySix));
            }
        };
        for (int t = 0; t < 200; ++t) compare(random_mask({4, 4, 4}, rng.uniform(0.1, 0.7), rng));
        // every mask with at most three set voxels
        for (int a = 0; a < 64; ++a)
            for (int b = a; b < 64; ++b)
                for (int c = b; c < 64; ++c) {
                    BinaryMask m({4, 4, 4});
                    m.set(std::size_t(a));
                    m.set(std::size_t(b));
                    m.set(std::size_t(c));
                    compare(m);
                }
    }
    SUBCASE("transform round trip on corners and center") {
        Volume v({12, 16, 8}, {1, 1, 1});
        auto [o, t] = resize_to(v, {20, 20, 20});
        for (int x : {0, 6, 11})
            for (int y : {0, 8, 15})
                for (int z : {0, 4, 7}) {
                    const Vec3 p{double(x), double(y), double(z)};
                    const Vec3 q = t.to_original(t.to_target(p));
                    CHECK(std::abs(q.x - p.x) <= 0.5);
                    CHECK(std::abs(q.y - p.y) <= 0.5);
                    CHECK(std::abs(q.z - p.z) <= 0.5);
                }
    }
}
