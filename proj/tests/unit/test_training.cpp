#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "tofdetect/error.hpp"
#include "tofdetect/phantom.hpp"
#include "tofdetect/training.hpp"

using namespace tofd;

namespace {

LabeledCase blank_case(Index3 d) {
    LabeledCase c;
    c.case_id = "c";
    c.volume = Volume(d, {1, 1, 1});
    c.aneurysm_mask = BinaryMask(d);
    c.vessel_mask = BinaryMask(d);
    return c;
}

LabeledCase phantom_case(std::uint64_t seed, bool positive) {
    DatasetTemplate t;
    t.dims = {16, 16, 16};
    t.vessel_radius_min = 2.0;
    t.vessel_radius_max = 2.5;
    t.aneurysm_radius_min = 2.5;
    t.aneurysm_radius_max = 3.0;
    auto spec = draw_phantom_spec(t, positive, seed);
    auto ph = generate_phantom(spec);
    ph.case_id = "p" + std::to_string(seed);
    return labeled_case_from_phantom(ph);
}

}  // namespace

TEST_CASE("prepare_label") {
    SUBCASE("single voxel, radius 30") {
        auto c = blank_case({64, 64, 64});
        c.positive = true;
        c.aneurysm_mask.set(32, 32, 32);
        auto l = prepare_label(c, 30);
        CHECK(l.count(kAneurysm) == std::size_t(oracle::lattice_ball_count(30)));
        CHECK(l.count(kAneurysm) == 113081);
        CHECK(l.count(kVessel) == 0);
    }
    SUBCASE("clipped at the border") {
        auto c = blank_case({8, 8, 8});
        c.positive = true;
        c.aneurysm_mask.set(0, 0, 0);
        // one octant of the radius-2 ball
        long n = 0;
        for (int x = 0; x <= 2; ++x)
            for (int y = 0; y <= 2; ++y)
                for (int z = 0; z <= 2; ++z) n += x * x + y * y + z * z <= 4;
        CHECK(prepare_label(c, 2).count(kAneurysm) == std::size_t(n));
    }
    SUBCASE("aneurysm has priority over vessel") {
        auto c = blank_case({10, 10, 10});
        c.positive = true;
        for (int x = 0; x < 10; ++x) c.vessel_mask.set(x, 5, 5);
        c.aneurysm_mask.set(5, 5, 5);
        auto l = prepare_label(c, 1);
        CHECK(l.labels[linear_index(l.dims, 5, 5, 5)] == kAneurysm);
        CHECK(l.labels[linear_index(l.dims, 4, 5, 5)] == kAneurysm);
        CHECK(l.labels[linear_index(l.dims, 3, 5, 5)] == kVessel);
        CHECK(l.count(kVessel) == 7);
    }
    SUBCASE("negative case") {
        auto c = blank_case({6, 6, 6});
        c.vessel_mask.set(1, 1, 1);
        auto l = prepare_label(c, 30);
        CHECK(l.count(kAneurysm) == 0);
        CHECK(l.count(kVessel) == 1);
    }
    SUBCASE("positive without voxels") {
        auto c = blank_case({6, 6, 6});
        c.positive = true;
        try {
            prepare_label(c, 3);
            FAIL("expected EmptyAnnotation");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::EmptyAnnotation);
        }
    }
    SUBCASE("labels commute with the transverse flip") {
        for (std::uint64_t s = 1; s <= 6; ++s) {
            auto c = phantom_case(s, true);
            auto f = augment_case(c, kAugFlip);
            auto a = prepare_label(c, 3), b = prepare_label(f, 3);
            for (int z = 0; z < 16; ++z)
                for (int y = 0; y < 16; ++y)
                    for (int x = 0; x < 16; ++x)
                        CHECK(a.labels[linear_index(a.dims, x, y, z)] == b.labels[linear_index(b.dims, x, y, 15 - z)]);
        }
    }
}

TEST_CASE("augmentation") {
    auto vars = augmentation_variants();
    CHECK(vars.size() == 8);
    CHECK(std::set<unsigned>(vars.begin(), vars.end()).size() == 8);
    CHECK(vars.front() == 0u);

    auto c = phantom_case(3, true);
    auto id = augment_case(c, 0u);
    CHECK(id.volume == c.volume);
    CHECK(id.aneurysm_mask == c.aneurysm_mask);
    auto ff = augment_case(augment_case(c, kAugFlip), kAugFlip);
    CHECK(ff.volume == c.volume);
    CHECK(ff.aneurysm_mask == c.aneurysm_mask);
    CHECK(ff.vessel_mask == c.vessel_mask);

    // fixed order noise -> flip -> histeq
    auto all = augment_case(c, kAugNoise | kAugFlip | kAugHisteq);
    auto manual = histogram_equalize(flip_transverse(gaussian_smooth_discrete(c.volume, 4.0, 32)), 256);
    CHECK(all.volume == manual);
    CHECK(all.aneurysm_mask == flip_transverse(c.aneurysm_mask));

    std::vector<LabeledCase> three{c, phantom_case(4, false), phantom_case(5, true)};
    auto aug = augment_dataset(three);
    CHECK(aug.size() == 24);
    std::set<std::string> ids;
    for (const auto& a : aug) ids.insert(a.case_id);
    CHECK(ids.size() == 24);
}

TEST_CASE("losses") {
    Tensor<double> t({1, 3, 2, 2, 2});
    for (int i = 0; i < 8; ++i) t.plane(0, i % 3)[i] = 1.0;
    CHECK(soft_dice_loss(t, t).value < 1e-4);

    Tensor<double> p({1, 3, 2, 2, 2});
    for (int i = 0; i < 8; ++i) p.plane(0, (i + 1) % 3)[i] = 1.0;
    CHECK(soft_dice_loss(p, t).value == doctest::Approx(1.0).epsilon(1e-4));

    // hand-evaluated two-class case
    Tensor<double> q({1, 2, 1, 1, 2}, std::vector<double>{0.4, 0.7, 0.6, 0.3});
    Tensor<double> y({1, 2, 1, 1, 2}, std::vector<double>{0, 1, 1, 0});
    const double dice = (2 * 0.6 + 1e-5) / (0.9 + 1 + 1e-5);
    auto l = soft_dice_loss(q, y);
    CHECK(l.value == doctest::Approx(1.0 - dice).epsilon(1e-12));
    // gradient by central differences
    for (std::size_t i = 0; i < q.size(); ++i) {
        auto qp = q, qm = q;
        qp[i] += 1e-6;
        qm[i] -= 1e-6;
        const double num = (soft_dice_loss(qp, y).value - soft_dice_loss(qm, y).value) / 2e-6;
        CHECK(l.grad[i] == doctest::Approx(num).epsilon(1e-6));
    }
    auto ce = cross_entropy_loss(q, y);
    CHECK(ce.value == doctest::Approx(-(std::log(0.6) + std::log(0.7)) / 2).epsilon(1e-12));
    auto both = compute_loss(LossKind::DicePlusCe, q, y);
    CHECK(both.value == doctest::Approx(l.value + ce.value));
    CHECK(parse_loss(loss_name(LossKind::DicePlusCe)) == LossKind::DicePlusCe);
    CHECK_THROWS_AS(parse_loss("hinge"), Error);
    CHECK_THROWS_AS(soft_dice_loss(q, t), Error);
}

TEST_CASE("one_hot and samples") {
    LabelVolume lv{{2, 1, 1}, {kVessel, kAneurysm}};
    auto oh = one_hot<float>(lv, 3);
    CHECK(oh.shape() == Shape5{1, 3, 1, 1, 2});
    CHECK(oh.at(0, 2, 0, 0, 0) == 1.0f);
    CHECK(oh.at(0, 1, 0, 0, 1) == 1.0f);
    CHECK(oh.at(0, 0, 0, 0, 0) == 0.0f);

    auto c = phantom_case(7, true);
    auto s = make_sample(c, 16, 2);
    CHECK(s.input.shape() == Shape5{1, 1, 16, 16, 16});
    CHECK(s.target.shape() == Shape5{1, 3, 16, 16, 16});
    for (float v : s.input.values()) CHECK((v >= 0.0f && v <= 1.0f));
    float total = 0;
    for (float v : s.target.values()) total += v;
    CHECK(total == 4096.0f);
}

TEST_CASE("early stopping arithmetic") {
    EarlyStopper st(5);
    int stopped = 0;
    for (int e = 1; e <= 20; ++e) {
        st.observe(e, e <= 3 ? 10.0 - e : 9.0);
        if (st.should_stop()) {
            stopped = e;
            break;
        }
    }
    CHECK(stopped == 8);
    CHECK(st.best_epoch() == 3);
}

TEST_CASE("training is deterministic and restores the best checkpoint") {
    NetworkConfig nc;
    nc.levels = 2;
    nc.base_channels = 2;
    nc.se_ratio = 2;
    nc.input_dims = 16;
    nc.p_drop = 0.1;
    std::vector<Sample> train_set{make_sample(phantom_case(1, true), 16, 2), make_sample(phantom_case(2, true), 16, 2)};
    std::vector<Sample> val{make_sample(phantom_case(9, true), 16, 2)};
    TrainConfig tc;
    tc.max_epochs = 4;
    tc.seed = 5;
    tc.lr = 2e-3;
    auto run = [&] {
        auto m = Model<float>::build(nc, 1);
        auto r = train(m, train_set, val, tc);
        return std::pair{m.find("enc0.in.weight")->value, r};
    };
    auto [wa, ra] = run();
    auto [wb, rb] = run();
    CHECK(wa == wb);
    REQUIRE(ra.history.size() == 4);
    for (int e = 0; e < 4; ++e) {
        CHECK(ra.history[e].train_loss == rb.history[e].train_loss);
        CHECK(ra.history[e].val_loss == rb.history[e].val_loss);
        CHECK(ra.history[e].epoch == e + 1);
    }
    double best = 1e9;
    int best_epoch = 0;
    for (const auto& h : ra.history)
        if (*h.val_loss < best) best = *h.val_loss, best_epoch = h.epoch;
    CHECK(ra.best.epoch == best_epoch);
    CHECK(wa == ra.best.parameters[0].second);

    int calls = 0;
    auto m = Model<float>::build(nc, 1);
    auto r = train(m, train_set, {}, tc, [&](const EpochRecord&) { return ++calls < 2; });
    CHECK(r.history.size() == 2);
    CHECK(!r.history[0].val_loss);

    TrainConfig bad = tc;
    bad.lr = 0;
    CHECK_THROWS_AS(train(m, train_set, val, bad), Error);
    CHECK_THROWS_AS(train(m, {}, val, tc), Error);
}

TEST_CASE("kfold_split") {
    auto folds = kfold_split(166, 5, 1);
    REQUIRE(folds.size() == 5);
    std::vector<std::size_t> test_sizes, train_sizes;
    std::multiset<std::size_t> all_test;
    for (const auto& f : folds) {
        test_sizes.push_back(f.test.size());
        train_sizes.push_back(f.train.size());
        all_test.insert(f.test.begin(), f.test.end());
        std::set<std::size_t> tr(f.train.begin(), f.train.end());
        for (auto i : f.test) CHECK(tr.count(i) == 0);
    }
    CHECK(test_sizes == std::vector<std::size_t>{34, 33, 33, 33, 33});
    CHECK(train_sizes == std::vector<std::size_t>{132, 133, 133, 133, 133});
    CHECK(all_test.size() == 166);
    CHECK(std::set<std::size_t>(all_test.begin(), all_test.end()).size() == 166);

    for (const auto& f : kfold_split(10, 5, 3)) CHECK(f.test.size() == 2);
    auto a = kfold_split(20, 4, 9), b = kfold_split(20, 4, 9);
    for (int i = 0; i < 4; ++i) CHECK(a[i].test == b[i].test);

    try {
        kfold_split(3, 5, 1);
        FAIL("expected TooFewCases");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::TooFewCases);
    }
    CHECK_THROWS_AS(kfold_split(10, 1, 1), Error);

    std::vector<std::size_t> items{4, 8, 15, 16, 23, 42, 7, 9, 11, 13};
    auto [kept, held] = holdout_split(items, 0.1, 2);
    CHECK(held.size() == 1);
    CHECK(kept.size() == 9);
}
