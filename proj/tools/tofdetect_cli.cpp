// tofdetect: phantom generation, VOI extraction, training, detection and evaluation.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tofdetect/error.hpp"
#include "tofdetect/io.hpp"
#include "tofdetect/pipeline.hpp"

using namespace tofd;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ExperimentConfig config_or_default(const std::string& path) {
    return path.empty() ? desk_scale_config() : load_config(path);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

void emit(const std::string& out_path, const std::string& json_text) {
    if (!out_path.empty()) write_file_atomic(out_path, json_text);
}

// One-line machine-readable summary after the human table.
void print_record(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }

nlohmann::json summary_record(const EvalReport& r) {
    return {{"tp", r.tp},
            {"fp", r.fp},
            {"fn", r.fn},
            {"sensitivity", r.sensitivity ? nlohmann::json(*r.sensitivity) : nlohmann::json(nullptr)},
            {"fp_per_case", r.fp_per_case},
            {"n_cases", r.per_case.size()}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cerebral aneurysm detection on TOF-MRA-like volumes"};
    app.require_subcommand(1);

    std::string config_path, out, data, in, model_path;
    std::uint64_t seed = 0;
    bool seed_given = false;

    // gen-phantom
    int cases = 8, dims = 32, vessels = 2;
    double rate = 0.5, noise = 15.0;
    auto* gen = app.add_subcommand("gen-phantom", "Write a synthetic dataset (volume + annotation per case)");
    gen->add_option("--cases", cases, "Number of cases")->check(CLI::PositiveNumber);
    gen->add_option("--rate", rate, "Fraction of positive cases")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--seed", seed, "Random seed");
    gen->add_option("--dims", dims, "Cube side in voxels")->check(CLI::Range(8, 512));
    gen->add_option("--vessels", vessels, "Vessels per case")->check(CLI::Range(1, 16));
    gen->add_option("--noise", noise, "Background noise std")->check(CLI::NonNegativeNumber);
    gen->add_option("--out", out, "Output directory")->required();

    // extract-voi
    std::string masked_out;
    auto* voi = app.add_subcommand("extract-voi", "Extract the vessel volume of interest from one volume");
    voi->add_option("--in", in, "Input volume header (.vhdr)")->required();
    voi->add_option("--out", out, "Output mask header (.vhdr)")->required();
    voi->add_option("--masked", masked_out, "Also write the masked normalized volume here");
    voi->add_option("--config", config_path, "Experiment configuration (JSON)");

    // train
    auto* tr = app.add_subcommand("train", "Train a model; writes config.json, metrics.jsonl and model.tfw");
    tr->add_option("--data", data, "Dataset directory")->required();
    tr->add_option("--out", out, "Run directory")->required();
    tr->add_option("--config", config_path, "Experiment configuration (JSON)");
    tr->add_option("--seed", seed, "Overrides the training and initialization seeds");

    // detect
    auto* det = app.add_subcommand("detect", "Detect aneurysms in one volume");
    det->add_option("--model", model_path, "Weights file")->required();
    det->add_option("--in", in, "Input volume header (.vhdr)")->required();
    det->add_option("--config", config_path, "Experiment configuration (JSON)");
    det->add_option("--out", out, "Detection report (JSON)");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Detect and score every case of a dataset");
    ev->add_option("--model", model_path, "Weights file")->required();
    ev->add_option("--data", data, "Dataset directory")->required();
    ev->add_option("--config", config_path, "Experiment configuration (JSON)");
    ev->add_option("--out", out, "Evaluation report (JSON)");

    // crossval
    int k = 5;
    auto* cv = app.add_subcommand("crossval", "k-fold cross-validation");
    cv->add_option("--k", k, "Number of folds")->check(CLI::Range(2, 1000));
    cv->add_option("--data", data, "Dataset directory")->required();
    cv->add_option("--config", config_path, "Experiment configuration (JSON)");
    cv->add_option("--seed", seed, "Fold assignment seed");
    cv->add_option("--out", out, "Cross-validation report (JSON)");

    // ablate-attention
    std::string positions_arg = "downsample,middle,upsample", ratios_arg = "8,16";
    auto* ab = app.add_subcommand("ablate-attention", "Cross-validate every SE position and ratio");
    ab->add_option("--positions", positions_arg, "Comma-separated: none, downsample, middle, upsample");
    ab->add_option("--ratios", ratios_arg, "Comma-separated SE ratios");
    ab->add_option("--k", k, "Number of folds")->check(CLI::Range(2, 1000));
    ab->add_option("--data", data, "Dataset directory")->required();
    ab->add_option("--config", config_path, "Experiment configuration (JSON)");
    ab->add_option("--seed", seed, "Fold assignment seed");
    ab->add_option("--out", out, "Ablation report (JSON)");

    // print-config
    auto* pc = app.add_subcommand("print-config", "Print the default (desk-scale) configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: UsageError: " << msg << "\n";
        return 2;
    }
    seed_given = tr->count("--seed") > 0;

    try {
        if (*gen) {
            DatasetTemplate t;
            t.dims = {dims, dims, dims};
            t.vessels = vessels;
            t.noise_std = noise;
            std::vector<DataCase> ds;
            for (const Phantom& ph : generate_dataset(cases, rate, t, seed)) ds.push_back(data_case_from_phantom(ph));
            save_dataset(ds, out);
            int positives = 0;
            for (const DataCase& c : ds) positives += c.truth.aneurysms.empty() ? 0 : 1;
            std::cout << "wrote " << ds.size() << " cases (" << positives << " positive) to " << out << "\n";
            print_record({{"cases", ds.size()}, {"positives", positives}, {"seed", seed}});
        } else if (*voi) {
            const ExperimentConfig cfg = config_or_default(config_path);
            const Volume vol = load_volume(in);
            const VoiResult r = extract_voi(vol, cfg.voi);
            save_volume(volume_from_mask(r.vessel_mask, vol.spacing()), out);
            if (!masked_out.empty()) save_volume(r.masked_volume, masked_out);
            std::cout << "VOI voxels: " << r.vessel_mask.count() << " of " << vol.size() << "\n"
                      << "seed stats: mu " << r.stats.mu << ", sigma " << r.stats.sigma << "\n"
                      << "window:     [" << r.window.lo << ", " << r.window.hi << "]\n";
            print_record({{"voi_voxels", r.vessel_mask.count()},
                          {"mu", r.stats.mu},
                          {"sigma", r.stats.sigma},
                          {"window", {r.window.lo, r.window.hi}}});
        } else if (*tr) {
            ExperimentConfig cfg = config_or_default(config_path);
            if (seed_given) {
                cfg.train.seed = seed;
                cfg.model_seed = seed;
            }
            const std::vector<DataCase> ds = load_dataset(data);
            const fs::path run(out);
            std::error_code ec;
            fs::create_directories(run, ec);
            if (ec) fail(ErrorKind::IoError, "cannot create run directory '" + out + "'");
            write_file_atomic(run / "config.json", config_to_json(cfg));
            std::string metrics;
            const TrainedModel tm = train_model(ds, cfg, [&](const EpochRecord& e) {
                metrics += epoch_to_json(e) + "\n";
                std::cerr << "epoch " << e.epoch << " train " << e.train_loss;
                if (e.val_loss) std::cerr << " val " << *e.val_loss;
                std::cerr << (e.improved ? " *" : "") << "\n";
                return true;
            });
            write_file_atomic(run / "metrics.jsonl", metrics);
            save_weights(tm.model, run / "model.tfw");
            std::cout << "epochs: " << tm.result.history.size() << ", best epoch " << tm.result.best.epoch
                      << " (loss " << tm.result.best.metric << ")\n";
            print_record({{"epochs", tm.result.history.size()},
                          {"best_epoch", tm.result.best.epoch},
                          {"best_metric", tm.result.best.metric},
                          {"early_stopped", tm.result.early_stopped}});
        } else if (*det) {
            const ExperimentConfig cfg = config_or_default(config_path);
            const Model<float> model = load_weights(model_path);
            const Volume vol = load_volume(in);
            const std::vector<Detection> dets = detect(model, vol, cfg.detection_params());
            const std::string id = fs::path(in).stem().string();
            std::cout << "detections: " << dets.size() << "\n";
            for (const Detection& d : dets)
                std::printf("  box min (%d, %d, %d) size %dx%dx%d score %.3f\n", d.box_min.x, d.box_min.y,
                            d.box_min.z, d.box_size.x, d.box_size.y, d.box_size.z, d.score);
            std::fflush(stdout);
            const std::string text = detections_to_json(id, dets);
            emit(out, text);
            print_record(nlohmann::json::parse(text));
        } else if (*ev) {
            const ExperimentConfig cfg = config_or_default(config_path);
            const Model<float> model = load_weights(model_path);
            const EvalReport r = evaluate_model(model, load_dataset(data), cfg.detection_params());
            std::cout << format_report_table(r);
            emit(out, report_to_json(r));
            print_record(summary_record(r));
        } else if (*cv) {
            const ExperimentConfig cfg = config_or_default(config_path);
            const std::vector<DataCase> ds = load_dataset(data);
            const CrossvalResult r = crossval(ds, k, cfg, seed, [](const FoldResult& f) {
                std::cerr << "fold " << f.fold + 1 << " done\n";
            });
            std::cout << format_crossval_table(r);
            emit(out, crossval_to_json(r));
            nlohmann::json rec = {{"k", r.k}, {"mean_fp_per_case", r.mean_fp_per_case}};
            rec["folds"] = nlohmann::json::array();
            for (const FoldResult& f : r.folds)
                rec["folds"].push_back(f.report.sensitivity ? nlohmann::json(*f.report.sensitivity) : nlohmann::json());
            if (r.summary) rec["summary"] = {{"mean", r.summary->mean}, {"std", r.summary->std}, {"best", r.summary->best}};
            print_record(rec);
        } else if (*ab) {
            std::vector<AttentionPosition> positions;
            std::vector<int> ratios;
            try {
                for (const std::string& p : split_list(positions_arg)) positions.push_back(parse_attention(p));
                for (const std::string& r : split_list(ratios_arg)) {
                    std::size_t used = 0;
                    const int v = std::stoi(r, &used);
                    if (used != r.size() || v < 1) throw UsageError("bad ratio '" + r + "'");
                    ratios.push_back(v);
                }
            } catch (const UsageError&) {
                throw;
            } catch (const std::exception& e) {
                throw UsageError(std::string("--positions/--ratios: ") + e.what());
            }
            if (positions.empty() || ratios.empty()) throw UsageError("--positions and --ratios must not be empty");
            const ExperimentConfig cfg = config_or_default(config_path);
            const auto cells = ablate_attention(load_dataset(data), positions, ratios, k, cfg, seed);
            std::cout << format_ablation_table(cells);
            emit(out, ablation_to_json(cells));
            print_record(nlohmann::json::parse(ablation_to_json(cells)));
        } else if (*pc) {
            std::cout << config_to_json(desk_scale_config());
        }
    } catch (const UsageError& e) {
        std::cerr << "error: UsageError: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: " << e.kind_name() << ": " << msg << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
