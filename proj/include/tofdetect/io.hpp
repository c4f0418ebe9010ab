#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tofdetect/evaluation.hpp"
#include "tofdetect/model.hpp"
#include "tofdetect/pipeline.hpp"
#include "tofdetect/volume.hpp"

namespace tofd {

namespace fs = std::filesystem;

enum class VoxelType { F32, I16 };

/// Writes `<stem>.vhdr` (JSON header) and `<stem>.raw` next to it. `header`
/// must end in .vhdr. i16 rounds to nearest and saturates.
void save_volume(const Volume& vol, const fs::path& header, VoxelType type = VoxelType::F32);
Volume load_volume(const fs::path& header);

BinaryMask mask_from_volume(const Volume& vol);  // voxel != 0
Volume volume_from_mask(const BinaryMask& mask, Vec3 spacing);

/// Run-length pairs (start, length) over sorted linear indices.
std::vector<std::pair<std::size_t, std::size_t>> rle_encode(std::vector<std::size_t> voxels);
std::vector<std::size_t> rle_decode(const std::vector<std::pair<std::size_t, std::size_t>>& runs);

struct AnnotationItem {
    std::vector<std::size_t> voxels;
    double max_diameter_mm = 0.0;
    std::string location;
};

struct Annotation {
    std::string case_id;
    Index3 dims;
    std::vector<AnnotationItem> aneurysms;
};

Annotation annotation_from_truth(const GroundTruth& gt);
GroundTruth truth_from_annotation(const Annotation& a);

std::string annotation_to_json(const Annotation& a);
Annotation annotation_from_json(std::string_view text);
void save_annotation(const Annotation& a, const fs::path& path);
Annotation load_annotation(const fs::path& path);

/// Magic, u64 manifest length, JSON manifest (config, names, shapes), then
/// little-endian f32 tensors in manifest order.
void save_weights(const Model<float>& model, const fs::path& path);
Model<float> load_weights(const fs::path& path);

std::string config_to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults from `base`; unknown keys are rejected.
ExperimentConfig config_from_json(std::string_view text, const ExperimentConfig& base = desk_scale_config());
ExperimentConfig load_config(const fs::path& path);

std::string detections_to_json(const std::string& case_id, const std::vector<Detection>& dets);
std::string report_to_json(const EvalReport& r);
std::string crossval_to_json(const CrossvalResult& r);
std::string ablation_to_json(const std::vector<AblationCell>& cells);
std::string epoch_to_json(const EpochRecord& e);

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

/// Saves <dir>/<case>.vhdr, .raw and .ann.json for every case.
void save_dataset(const std::vector<DataCase>& cases, const fs::path& dir);
/// Loads every *.vhdr with a matching .ann.json, sorted by case id.
std::vector<DataCase> load_dataset(const fs::path& dir);

}  // namespace tofd
