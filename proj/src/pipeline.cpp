#include "tofdetect/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "tofdetect/error.hpp"
#include "tofdetect/rng.hpp"

namespace tofd {

ExperimentConfig desk_scale_config() {
    ExperimentConfig c;
    c.network.levels = 3;
    c.network.base_channels = 4;
    c.network.p_drop = 0.1;
    c.network.se_ratio = 4;
    c.network.attention = AttentionPosition::Middle;
    c.network.input_dims = 32;
    c.train.lr = 2e-3;
    c.train.max_epochs = 60;
    c.train.early_stop_patience = 15;
    c.train.loss = LossKind::DicePlusCe;
    c.detection.planar_radius_limit = 4.0;
    c.detection.min_box_side = 8;
    c.label_sphere_radius = 3;
    c.augment = false;
    return c;
}

DataCase data_case_from_phantom(const Phantom& ph) {
    DataCase c;
    c.case_id = ph.case_id;
    c.volume = ph.volume;
    c.truth = {ph.case_id, ph.volume.dims(), {}};
    for (const PlantedAneurysm& a : ph.aneurysms) c.truth.aneurysms.push_back({a.voxels, a.max_diameter_mm});
    return c;
}

LabeledCase labeled_case(const DataCase& c, const VoiParams& voi) {
    LabeledCase out;
    out.case_id = c.case_id;
    out.volume = c.volume;
    out.aneurysm_mask = BinaryMask(c.volume.dims());
    for (const GroundTruthAneurysm& a : c.truth.aneurysms) {
        for (std::size_t i : a.voxels) out.aneurysm_mask.set(i);
        out.diameters_mm.push_back(a.max_diameter_mm);
    }
    out.positive = !c.truth.aneurysms.empty();
    out.vessel_mask = extract_voi(c.volume, voi).vessel_mask;
    return out;
}

TrainedModel train_model(const std::vector<DataCase>& cases, const ExperimentConfig& config,
                         const EpochCallback& on_epoch) {
    if (cases.empty()) fail(ErrorKind::TooFewCases, "train_model: no cases");
    std::vector<std::size_t> ids(cases.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const auto [train_ids, val_ids] = holdout_split(ids, config.train.validation_fraction, config.train.seed);

    const int side = config.network.input_dims;
    std::vector<LabeledCase> train_cases;
    for (std::size_t i : train_ids) train_cases.push_back(labeled_case(cases[i], config.voi));
    if (config.augment) train_cases = augment_dataset(train_cases, config.augment_params);
    std::vector<Sample> train_set, val_set;
    for (const LabeledCase& c : train_cases) train_set.push_back(make_sample(c, side, config.label_sphere_radius));
    for (std::size_t i : val_ids)
        val_set.push_back(make_sample(labeled_case(cases[i], config.voi), side, config.label_sphere_radius));

    TrainedModel out{Model<float>::build(config.network, config.model_seed), {}};
    out.result = train(out.model, train_set, val_set, config.train, on_epoch);
    return out;
}

EvalReport evaluate_model(const Model<float>& model, const std::vector<DataCase>& cases, const DetectionParams& params) {
    std::vector<CaseResult> rows;
    for (const DataCase& c : cases) {
        std::vector<Detection> dets;
        try {
            dets = detect(model, c.volume, params);
        } catch (const Error& e) {
            // No seeds means no VOI and so nothing to detect in this case.
            if (e.kind() != ErrorKind::EmptySeeds) throw;
        }
        rows.push_back(match_case(dets, c.truth));
    }
    return make_report(std::move(rows));
}

CrossvalResult crossval(const std::vector<DataCase>& cases, int k, const ExperimentConfig& config, std::uint64_t seed,
                        const std::function<void(const FoldResult&)>& on_fold) {
    CrossvalResult out;
    out.k = k;
    out.seed = seed;
    const std::vector<Fold> folds = kfold_split(cases.size(), k, seed);
    std::vector<double> sens;
    double fp_sum = 0.0;
    for (int f = 0; f < k; ++f) {
        ExperimentConfig cfg = config;
        cfg.train.seed = Rng::mix(config.train.seed ^ Rng::mix(seed + static_cast<std::uint64_t>(f)));
        cfg.model_seed = Rng::mix(config.model_seed + 0x51ed27ULL * static_cast<std::uint64_t>(f + 1));
        std::vector<DataCase> train_cases, test_cases;
        for (std::size_t i : folds[f].train) train_cases.push_back(cases[i]);
        for (std::size_t i : folds[f].test) test_cases.push_back(cases[i]);
        const TrainedModel tm = train_model(train_cases, cfg);

        FoldResult fr;
        fr.fold = f;
        for (const DataCase& c : test_cases) fr.test_ids.push_back(c.case_id);
        fr.epochs = static_cast<int>(tm.result.history.size());
        fr.best_epoch = tm.result.best.epoch;
        fr.report = evaluate_model(tm.model, test_cases, cfg.detection_params());
        if (fr.report.sensitivity) sens.push_back(*fr.report.sensitivity);
        fp_sum += fr.report.fp_per_case;
        if (on_fold) on_fold(fr);
        out.folds.push_back(std::move(fr));
    }
    if (sens.size() >= 2) out.summary = crossval_summary(sens);
    out.mean_fp_per_case = fp_sum / k;
    return out;
}

std::vector<AblationCell> ablate_attention(const std::vector<DataCase>& cases,
                                           const std::vector<AttentionPosition>& positions,
                                           const std::vector<int>& ratios, int k, const ExperimentConfig& config,
                                           std::uint64_t seed) {
    std::vector<AblationCell> cells;
    for (int ratio : ratios)
        for (AttentionPosition pos : positions) {
            AblationCell cell;
            cell.position = pos;
            cell.ratio = ratio;
            ExperimentConfig cfg = config;
            cfg.network.attention = pos;
            cfg.network.se_ratio = ratio;
            try {
                validate(cfg.network);
            } catch (const Error& e) {
                cell.error = std::string(e.kind_name()) + ": " + e.what();
                cells.push_back(std::move(cell));
                continue;
            }
            cell.result = crossval(cases, k, cfg, seed);
            cells.push_back(std::move(cell));
        }
    return cells;
}

// ---------------------------------------------------------------- tables

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string sens_text(const std::optional<double>& s) { return s ? format_percent(*s) : std::string("n/a"); }

}  // namespace

std::string format_report_table(const EvalReport& r) {
    std::ostringstream os;
    os << "case          gt  tp  fp  fn\n";
    for (const CaseResult& c : r.per_case) {
        char line[128];
        std::snprintf(line, sizeof line, "%-12s %3d %3d %3d %3d\n", c.case_id.c_str(), c.tp + c.fn, c.tp, c.fp, c.fn);
        os << line;
    }
    os << "sensitivity: " << sens_text(r.sensitivity) << " (" << r.tp << "/" << r.tp + r.fn << ")\n";
    os << "FPs/case:    " << fmt("%.2f", r.fp_per_case) << " (" << r.fp << "/" << r.per_case.size() << ")\n";
    if (!r.size_bins.empty()) {
        os << "size bin (mm)   n  sensitivity\n";
        for (const SizeBin& b : r.size_bins) {
            char line[96];
            std::snprintf(line, sizeof line, "%-12s %4d  %s\n", b.label.c_str(), b.total,
                          format_percent(b.sensitivity).c_str());
            os << line;
        }
    }
    return os.str();
}

std::string format_crossval_table(const CrossvalResult& r) {
    std::ostringstream os;
    os << "fold  sensitivity  FPs/case  epochs\n";
    for (const FoldResult& f : r.folds) {
        char line[96];
        std::snprintf(line, sizeof line, "%4d  %11s  %8.2f  %6d\n", f.fold + 1, sens_text(f.report.sensitivity).c_str(),
                      f.report.fp_per_case, f.epochs);
        os << line;
    }
    if (r.summary) {
        os << "sensitivity: " << fmt("%.2f", r.summary->mean * 100.0) << " ± " << fmt("%.2f", r.summary->std * 100.0)
           << "%\n";
        os << "best fold:   " << r.summary->best_fold + 1 << " (" << format_percent(r.summary->best, 2) << ")\n";
    } else {
        os << "sensitivity: n/a (fewer than two folds with positives)\n";
    }
    os << "FPs/case:    " << fmt("%.2f", r.mean_fp_per_case) << "\n";
    return os.str();
}

std::string format_ablation_table(const std::vector<AblationCell>& cells) {
    std::vector<int> ratios;
    std::vector<AttentionPosition> positions;
    for (const AblationCell& c : cells) {
        if (std::find(ratios.begin(), ratios.end(), c.ratio) == ratios.end()) ratios.push_back(c.ratio);
        if (std::find(positions.begin(), positions.end(), c.position) == positions.end()) positions.push_back(c.position);
    }
    std::ostringstream os;
    char head[32];
    std::snprintf(head, sizeof head, "%-8s", "ratio");
    os << head;
    for (AttentionPosition p : positions) {
        char col[32];
        std::snprintf(col, sizeof col, "%14s", std::string(attention_name(p)).c_str());
        os << col;
    }
    os << "\n";
    for (int ratio : ratios) {
        char row[32];
        std::snprintf(row, sizeof row, "%-8d", ratio);
        os << row;
        for (AttentionPosition p : positions) {
            std::string cell = "-";
            for (const AblationCell& c : cells)
                if (c.ratio == ratio && c.position == p)
                    cell = c.result ? (c.result->summary ? format_percent(c.result->summary->mean, 2) : "n/a")
                                    : "invalid";
            char col[32];
            std::snprintf(col, sizeof col, "%14s", cell.c_str());
            os << col;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace tofd
