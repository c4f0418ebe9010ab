#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tofdetect/detection.hpp"

namespace tofd {

struct GroundTruthAneurysm {
    std::vector<std::size_t> voxels;  // linear indices in original space
    double max_diameter_mm = 0.0;
};

struct GroundTruth {
    std::string case_id;
    Index3 dims;
    std::vector<GroundTruthAneurysm> aneurysms;
};

inline constexpr double kHitFraction = 0.30;

/// Voxels of `aneurysm` inside the box of `det`.
std::size_t voxels_in_box(const Detection& det, const std::vector<std::size_t>& aneurysm, Index3 dims);

/// Strictly more than `fraction` of the aneurysm lies in the box (exact integer comparison at 0.30).
bool is_hit(std::size_t inside, std::size_t total, double fraction = kHitFraction);

struct CaseResult {
    std::string case_id;
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::vector<Detection> detections;
    std::vector<int> detection_match;  // aneurysm index per detection, -1 = FP
    std::vector<int> aneurysm_match;   // detection index per aneurysm, -1 = FN
    std::vector<double> diameters_mm;
};

/// Greedy one-to-one matching by descending overlap fraction (ties: detection
/// order, then aneurysm order). Unmatched detections are FP, unmatched aneurysms FN.
CaseResult match_case(const std::vector<Detection>& dets, const GroundTruth& gt, double fraction = kHitFraction);

/// tp / (tp + fn); throws NoPositives when there is nothing to find.
double sensitivity(int tp, int fn);
double fp_per_case(int fp, int n_cases);

struct SizeBin {
    std::string label;
    double lo_mm = 0.0;
    double hi_mm = 0.0;  // exclusive; infinity for the last bin
    int total = 0;
    int tp = 0;
    double sensitivity = 0.0;
};

/// Bin edges at 3, 5 and 10 mm.
int size_bin_index(double diameter_mm);
/// Per-bin sensitivity; bins without aneurysms are left out.
std::vector<SizeBin> subgroup_by_size(const std::vector<CaseResult>& cases);

struct EvalReport {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::optional<double> sensitivity;  // absent when there are no positives
    double fp_per_case = 0.0;
    std::vector<CaseResult> per_case;
    std::vector<SizeBin> size_bins;
};

/// Aggregates recomputed from the per-case rows.
EvalReport make_report(std::vector<CaseResult> cases);

struct CrossvalSummary {
    double mean = 0.0;
    double std = 0.0;  // population (1/k)
    double best = 0.0;
    int best_fold = 0;
};

CrossvalSummary crossval_summary(const std::vector<double>& per_fold);

/// "91.0%" style rendering of a fraction.
std::string format_percent(double fraction, int decimals = 1);

}  // namespace tofd
