#include "tofdetect/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "tofdetect/error.hpp"

namespace tofd {

std::size_t voxels_in_box(const Detection& det, const std::vector<std::size_t>& aneurysm, Index3 dims) {
    std::size_t n = 0;
    for (std::size_t i : aneurysm) {
        const Index3 p = unravel_index(dims, i);
        if (det.contains(p.x, p.y, p.z)) ++n;
    }
    return n;
}

bool is_hit(std::size_t inside, std::size_t total, double fraction) {
    if (total == 0) return false;
    if (fraction == kHitFraction) return inside * 10 > total * 3;
    return static_cast<double>(inside) > fraction * static_cast<double>(total);
}

CaseResult match_case(const std::vector<Detection>& dets, const GroundTruth& gt, double fraction) {
    CaseResult r;
    r.case_id = gt.case_id;
    r.detections = dets;
    r.detection_match.assign(dets.size(), -1);
    r.aneurysm_match.assign(gt.aneurysms.size(), -1);
    for (const GroundTruthAneurysm& a : gt.aneurysms) r.diameters_mm.push_back(a.max_diameter_mm);

    struct Pair {
        int det;
        int an;
        std::size_t inside;
        std::size_t total;
    };
    std::vector<Pair> hits;
    for (std::size_t d = 0; d < dets.size(); ++d)
        for (std::size_t a = 0; a < gt.aneurysms.size(); ++a) {
            const std::size_t total = gt.aneurysms[a].voxels.size();
            const std::size_t inside = voxels_in_box(dets[d], gt.aneurysms[a].voxels, gt.dims);
            if (is_hit(inside, total, fraction)) hits.push_back({int(d), int(a), inside, total});
        }
    // Exact comparison of inside/total fractions via cross-multiplication.
    std::stable_sort(hits.begin(), hits.end(), [](const Pair& p, const Pair& q) {
        const unsigned long long lhs = static_cast<unsigned long long>(p.inside) * q.total;
        const unsigned long long rhs = static_cast<unsigned long long>(q.inside) * p.total;
        if (lhs != rhs) return lhs > rhs;
        if (p.det != q.det) return p.det < q.det;
        return p.an < q.an;
    });
    for (const Pair& h : hits) {
        if (r.detection_match[h.det] >= 0 || r.aneurysm_match[h.an] >= 0) continue;
        r.detection_match[h.det] = h.an;
        r.aneurysm_match[h.an] = h.det;
    }
    r.tp = static_cast<int>(std::count_if(r.aneurysm_match.begin(), r.aneurysm_match.end(), [](int m) { return m >= 0; }));
    r.fn = static_cast<int>(gt.aneurysms.size()) - r.tp;
    r.fp = static_cast<int>(dets.size()) - r.tp;
    return r;
}

double sensitivity(int tp, int fn) {
    if (tp < 0 || fn < 0) fail(ErrorKind::InvalidArgument, "sensitivity: counts must be >= 0");
    if (tp + fn == 0) fail(ErrorKind::NoPositives, "sensitivity is undefined without positive aneurysms");
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double fp_per_case(int fp, int n_cases) {
    if (n_cases <= 0) fail(ErrorKind::InvalidArgument, "fp_per_case: n_cases must be > 0");
    return static_cast<double>(fp) / static_cast<double>(n_cases);
}

namespace {

struct BinEdge {
    const char* label;
    double lo;
    double hi;
};
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr BinEdge kBins[] = {{"<3.0", 0.0, 3.0}, {"3.0-4.9", 3.0, 5.0}, {"5.0-9.9", 5.0, 10.0}, {">=10.0", 10.0, kInf}};

}  // namespace

int size_bin_index(double d) {
    if (d < 3.0) return 0;
    if (d < 5.0) return 1;
    if (d < 10.0) return 2;
    return 3;
}

std::vector<SizeBin> subgroup_by_size(const std::vector<CaseResult>& cases) {
    std::vector<SizeBin> bins;
    for (const BinEdge& e : kBins) bins.push_back({e.label, e.lo, e.hi, 0, 0, 0.0});
    for (const CaseResult& c : cases)
        for (std::size_t a = 0; a < c.diameters_mm.size(); ++a) {
            SizeBin& b = bins[size_bin_index(c.diameters_mm[a])];
            ++b.total;
            if (a < c.aneurysm_match.size() && c.aneurysm_match[a] >= 0) ++b.tp;
        }
    std::vector<SizeBin> out;
    for (SizeBin& b : bins) {
        if (b.total == 0) continue;
        b.sensitivity = sensitivity(b.tp, b.total - b.tp);
        out.push_back(b);
    }
    return out;
}

EvalReport make_report(std::vector<CaseResult> cases) {
    EvalReport r;
    for (const CaseResult& c : cases) {
        r.tp += c.tp;
        r.fp += c.fp;
        r.fn += c.fn;
    }
    if (r.tp + r.fn > 0) r.sensitivity = sensitivity(r.tp, r.fn);
    r.fp_per_case = cases.empty() ? 0.0 : fp_per_case(r.fp, static_cast<int>(cases.size()));
    r.size_bins = subgroup_by_size(cases);
    r.per_case = std::move(cases);
    return r;
}

CrossvalSummary crossval_summary(const std::vector<double>& v) {
    if (v.size() < 2) fail(ErrorKind::InvalidArgument, "crossval_summary needs at least two folds");
    CrossvalSummary s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size()));
    const auto it = std::max_element(v.begin(), v.end());
    s.best = *it;
    s.best_fold = static_cast<int>(it - v.begin());
    return s;
}

std::string format_percent(double fraction, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f%%", decimals, fraction * 100.0);
    return buf;
}

}  // namespace tofd
