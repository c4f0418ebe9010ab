#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "tofdetect/error.hpp"
#include "tofdetect/evaluation.hpp"

using namespace tofd;

namespace {

// A row of `n` voxels along x starting at (x0, 0, 0) in a 100x4x4 volume.
GroundTruthAneurysm row(int x0, int n, double diameter = 4.0) {
    GroundTruthAneurysm a;
    for (int i = 0; i < n; ++i) a.voxels.push_back(linear_index({100, 4, 4}, x0 + i, 0, 0));
    a.max_diameter_mm = diameter;
    return a;
}

Detection box(int x0, int w) {
    Detection d;
    d.box_min = {x0, 0, 0};
    d.box_size = {w, 4, 4};
    return d;
}

CaseResult case_with(int n_aneurysms, int n_hit, std::vector<double> diam) {
    CaseResult c;
    for (int i = 0; i < n_aneurysms; ++i) {
        c.diameters_mm.push_back(diam[i]);
        c.aneurysm_match.push_back(i < n_hit ? i : -1);
    }
    c.tp = n_hit;
    c.fn = n_aneurysms - n_hit;
    return c;
}

}  // namespace

TEST_CASE("hit rule is strictly above 30%") {
    CHECK(is_hit(4, 10));
    CHECK(!is_hit(3, 10));
    CHECK(is_hit(31, 100));
    CHECK(!is_hit(30, 100));
    CHECK(!is_hit(0, 0));

    GroundTruth gt{"c", {100, 4, 4}, {row(10, 10)}};
    auto three = match_case({box(17, 5)}, gt);  // covers x 17..21 -> 3 voxels
    CHECK(voxels_in_box(box(17, 5), gt.aneurysms[0].voxels, gt.dims) == 3);
    CHECK(three.tp == 0);
    CHECK(three.fn == 1);
    CHECK(three.fp == 1);
    auto four = match_case({box(16, 5)}, gt);
    CHECK(four.tp == 1);
    CHECK(four.fp == 0);
}

TEST_CASE("matching gives single credit") {
    GroundTruth gt{"c", {100, 4, 4}, {row(10, 10)}};
    auto r = match_case({box(10, 6), box(12, 8)}, gt);
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    CHECK(r.fn == 0);
    // the larger overlap (8/10) wins over 6/10
    CHECK(r.aneurysm_match[0] == 1);
    CHECK(r.detection_match[0] == -1);

    GroundTruth two{"c", {100, 4, 4}, {row(10, 10), row(40, 10)}};
    auto r2 = match_case({box(40, 10), box(0, 30)}, two);
    CHECK(r2.tp == 2);
    CHECK(r2.fp == 0);
    auto none = match_case({}, two);
    CHECK(none.fn == 2);
    CHECK(none.fp == 0);
}

TEST_CASE("sensitivity and fp rate") {
    CHECK(sensitivity(61, 6) == doctest::Approx(61.0 / 67.0));
    CHECK(format_percent(sensitivity(61, 6)) == "91.0%");
    CHECK(sensitivity(85, 1) == doctest::Approx(0.988).epsilon(1e-3));
    CHECK(format_percent(sensitivity(85, 1)) == "98.8%");
    CHECK(sensitivity(0, 5) == 0.0);
    try {
        sensitivity(0, 0);
        FAIL("expected NoPositives");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NoPositives);
    }
    CHECK(fp_per_case(5, 2) == 2.5);
    CHECK(fp_per_case(0, 65) == 0.0);
    // every FP count that rounds to 2.48 per case over 65 cases
    std::vector<int> consistent;
    for (int n = 0; n < 300; ++n)
        if (std::lround(fp_per_case(n, 65) * 100) == 248) consistent.push_back(n);
    CHECK(consistent == std::vector<int>{161});  // 162 / 65 = 2.492
    CHECK_THROWS_AS(fp_per_case(1, 0), Error);
}

TEST_CASE("size subgroups") {
    CHECK(size_bin_index(2.99) == 0);
    CHECK(size_bin_index(3.0) == 1);
    CHECK(size_bin_index(4.99) == 1);
    CHECK(size_bin_index(5.0) == 2);
    CHECK(size_bin_index(10.0) == 3);

    // 67 aneurysms spread over the bins 11 / 16 / 29 / 11
    std::vector<CaseResult> cases;
    const int counts[4] = {11, 16, 29, 11};
    const double mid[4] = {2.0, 4.0, 7.0, 15.0};
    for (int b = 0; b < 4; ++b)
        for (int i = 0; i < counts[b]; ++i) cases.push_back(case_with(1, i % 5 != 0, {mid[b]}));
    auto bins = subgroup_by_size(cases);
    REQUIRE(bins.size() == 4);
    int total = 0;
    for (int b = 0; b < 4; ++b) {
        CHECK(bins[b].total == counts[b]);
        total += bins[b].total;
    }
    CHECK(total == 67);

    std::vector<CaseResult> one_bin{case_with(2, 1, {6.0, 7.0}), case_with(1, 1, {8.0})};
    auto b1 = subgroup_by_size(one_bin);
    REQUIRE(b1.size() == 1);
    CHECK(b1[0].label == "5.0-9.9");
    auto rep = make_report(one_bin);
    CHECK(b1[0].sensitivity == doctest::Approx(*rep.sensitivity));
}

TEST_CASE("report aggregates recompute from rows") {
    std::vector<CaseResult> rows{case_with(2, 1, {4, 6}), case_with(0, 0, {}), case_with(1, 1, {12})};
    rows[0].fp = 3;
    rows[1].fp = 1;
    auto r = make_report(rows);
    CHECK(r.tp == 2);
    CHECK(r.fn == 1);
    CHECK(r.fp == 4);
    CHECK(*r.sensitivity == doctest::Approx(2.0 / 3.0));
    CHECK(r.fp_per_case == doctest::Approx(4.0 / 3.0));
    auto empty = make_report({case_with(0, 0, {})});
    CHECK(!empty.sensitivity);
}

TEST_CASE("crossval summary") {
    auto ones = crossval_summary({1, 1, 1, 1, 1});
    CHECK(ones.mean == 1.0);
    CHECK(ones.std == 0.0);
    auto two = crossval_summary({0.5, 1.0});
    CHECK(two.mean == 0.75);
    CHECK(two.std == 0.25);
    std::vector<double> folds{0.9688, 0.9812, 0.9667, 0.9800, 0.9750};
    auto s = crossval_summary(folds);
    CHECK(s.best == 0.9812);
    CHECK(s.best_fold == 1);
    CHECK(format_percent(s.best, 2) == "98.12%");
    auto [m, sd] = oracle::mean_std(folds);
    CHECK(s.mean == doctest::Approx(m));
    CHECK(s.std == doctest::Approx(sd));
    CHECK_THROWS_AS(crossval_summary({0.9}), Error);
}
