#include "tofdetect/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "tofdetect/error.hpp"

namespace tofd {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------- little-endian helpers

template <class U>
U to_little(U v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(U)];
        std::memcpy(b, &v, sizeof(U));
        std::reverse(b, b + sizeof(U));
        std::memcpy(&v, b, sizeof(U));
    }
    return v;
}

template <class U>
void put(std::string& out, U v) {
    v = to_little(v);
    out.append(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(const std::string& in, std::size_t pos) {
    U v;
    std::memcpy(&v, in.data() + pos, sizeof(U));
    return to_little(v);
}

// ---------------------------------------------------------------- JSON field access

// Finds the byte offset of a key in the source text so diagnostics can point at it.
class Doc {
public:
    explicit Doc(std::string_view text) : text_(text) {
        try {
            root_ = json::parse(text_.begin(), text_.end());
        } catch (const json::parse_error& e) {
            throw FormatError("json", static_cast<long long>(e.byte), "malformed JSON");
        }
    }

    const json& root() const { return root_; }

    long long offset_of(const std::string& field) const {
        const std::size_t dot = field.find_last_of('.');
        const std::string key = "\"" + (dot == std::string::npos ? field : field.substr(dot + 1)) + "\"";
        const std::size_t p = text_.find(key);
        return p == std::string_view::npos ? static_cast<long long>(text_.size()) : static_cast<long long>(p);
    }

    [[noreturn]] void bad(const std::string& field, const std::string& detail) const {
        throw FormatError(field, offset_of(field), detail);
    }

    const json& member(const json& obj, const std::string& key, const std::string& field) const {
        if (!obj.is_object()) bad(field, "expected an object");
        const auto it = obj.find(key);
        if (it == obj.end()) bad(field.empty() ? key : field + "." + key, "missing");
        return *it;
    }

    double number(const json& j, const std::string& field) const {
        if (!j.is_number()) bad(field, "expected a number");
        return j.get<double>();
    }
    long long integer(const json& j, const std::string& field) const {
        if (!j.is_number_integer()) bad(field, "expected an integer");
        return j.get<long long>();
    }
    std::string string(const json& j, const std::string& field) const {
        if (!j.is_string()) bad(field, "expected a string");
        return j.get<std::string>();
    }
    bool boolean(const json& j, const std::string& field) const {
        if (!j.is_boolean()) bad(field, "expected true or false");
        return j.get<bool>();
    }
    std::array<double, 3> triple(const json& j, const std::string& field) const {
        if (!j.is_array() || j.size() != 3) bad(field, "expected an array of 3 numbers");
        return {number(j[0], field), number(j[1], field), number(j[2], field)};
    }

private:
    std::string_view text_;
    json root_;
};

json index3_json(Index3 v) { return json::array({v.x, v.y, v.z}); }

Index3 dims_from(const Doc& d, const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 3) d.bad(field, "expected an array of 3 integers");
    Index3 out{};
    int* dst[3] = {&out.x, &out.y, &out.z};
    for (int a = 0; a < 3; ++a) {
        const long long v = d.integer(j[a], field);
        if (v < 1 || v > (1 << 20)) d.bad(field, "dimension out of range: " + std::to_string(v));
        *dst[a] = static_cast<int>(v);
    }
    return out;
}

std::string dtype_name(VoxelType t) { return t == VoxelType::F32 ? "f32" : "i16"; }

fs::path payload_path(const fs::path& header) {
    fs::path p = header;
    p.replace_extension(".raw");
    return p;
}

}  // namespace

// ---------------------------------------------------------------- files

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::IoError, "cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            fs::remove(tmp, ec);
            fail(ErrorKind::IoError, "write to '" + tmp.string() + "' failed");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        fail(ErrorKind::IoError, "cannot rename onto '" + path.string() + "'");
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- volumes

void save_volume(const Volume& vol, const fs::path& header, VoxelType type) {
    if (header.extension() != ".vhdr") fail(ErrorKind::InvalidArgument, "volume header must end in .vhdr");
    const fs::path raw = payload_path(header);
    std::string payload;
    payload.reserve(vol.size() * (type == VoxelType::F32 ? 4 : 2));
    for (float v : vol.data()) {
        if (type == VoxelType::F32) {
            put(payload, std::bit_cast<std::uint32_t>(v));
        } else {
            const double r = std::clamp(std::round(static_cast<double>(v)), -32768.0, 32767.0);
            put(payload, static_cast<std::int16_t>(r));
        }
    }
    const Vec3 s = vol.spacing();
    json h = {{"dims", index3_json(vol.dims())},
              {"spacing", json::array({s.x, s.y, s.z})},
              {"dtype", dtype_name(type)},
              {"byte_order", "little"},
              {"order", "x-fastest"},
              {"payload", raw.filename().string()}};
    write_file_atomic(raw, payload);
    write_file_atomic(header, h.dump(2) + "\n");
}

Volume load_volume(const fs::path& header) {
    const std::string text = read_file(header);
    const Doc d(text);
    const json& r = d.root();
    const Index3 dims = dims_from(d, d.member(r, "dims", ""), "dims");
    const auto sp = d.triple(d.member(r, "spacing", ""), "spacing");
    for (double v : sp)
        if (!(v > 0.0) || !std::isfinite(v)) d.bad("spacing", "components must be finite and > 0");
    const std::string dtype = d.string(d.member(r, "dtype", ""), "dtype");
    if (dtype != "f32" && dtype != "i16") d.bad("dtype", "unsupported dtype '" + dtype + "'");
    if (d.string(d.member(r, "byte_order", ""), "byte_order") != "little") d.bad("byte_order", "only little is supported");
    if (d.string(d.member(r, "order", ""), "order") != "x-fastest") d.bad("order", "only x-fastest is supported");
    const std::string name = d.string(d.member(r, "payload", ""), "payload");
    if (name.empty() || name.find('/') != std::string::npos) d.bad("payload", "must be a plain file name");

    const std::string bytes = read_file(header.parent_path() / name);
    const std::size_t width = dtype == "f32" ? 4 : 2;
    const std::size_t expected = dims.product() * width;
    if (bytes.size() != expected)
        throw FormatError("payload", static_cast<long long>(bytes.size()),
                          "expected " + std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
    std::vector<float> voxels(dims.product());
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        if (width == 4) {
            voxels[i] = std::bit_cast<float>(get<std::uint32_t>(bytes, i * 4));
            if (!std::isfinite(voxels[i]))
                throw FormatError("payload", static_cast<long long>(i * 4), "non-finite voxel value");
        } else {
            voxels[i] = static_cast<float>(get<std::int16_t>(bytes, i * 2));
        }
    }
    return Volume(dims, {sp[0], sp[1], sp[2]}, std::move(voxels));
}

BinaryMask mask_from_volume(const Volume& vol) {
    BinaryMask m(vol.dims());
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (vol[i] != 0.0f) m.set(i);
    return m;
}

Volume volume_from_mask(const BinaryMask& mask, Vec3 spacing) {
    Volume v(mask.dims(), spacing);
    for (std::size_t i = 0; i < mask.size(); ++i) v[i] = mask[i] ? 1.0f : 0.0f;
    return v;
}

// ---------------------------------------------------------------- annotations

std::vector<std::pair<std::size_t, std::size_t>> rle_encode(std::vector<std::size_t> voxels) {
    std::sort(voxels.begin(), voxels.end());
    voxels.erase(std::unique(voxels.begin(), voxels.end()), voxels.end());
    std::vector<std::pair<std::size_t, std::size_t>> runs;
    for (std::size_t v : voxels) {
        if (!runs.empty() && runs.back().first + runs.back().second == v)
            ++runs.back().second;
        else
            runs.emplace_back(v, 1);
    }
    return runs;
}

std::vector<std::size_t> rle_decode(const std::vector<std::pair<std::size_t, std::size_t>>& runs) {
    std::vector<std::size_t> out;
    for (const auto& [start, len] : runs)
        for (std::size_t k = 0; k < len; ++k) out.push_back(start + k);
    return out;
}

Annotation annotation_from_truth(const GroundTruth& gt) {
    Annotation a{gt.case_id, gt.dims, {}};
    for (const GroundTruthAneurysm& g : gt.aneurysms) a.aneurysms.push_back({g.voxels, g.max_diameter_mm, ""});
    return a;
}

GroundTruth truth_from_annotation(const Annotation& a) {
    GroundTruth gt{a.case_id, a.dims, {}};
    for (const AnnotationItem& it : a.aneurysms) gt.aneurysms.push_back({it.voxels, it.max_diameter_mm});
    return gt;
}

std::string annotation_to_json(const Annotation& a) {
    json items = json::array();
    for (const AnnotationItem& it : a.aneurysms) {
        json runs = json::array();
        for (const auto& [s, l] : rle_encode(it.voxels)) runs.push_back(json::array({s, l}));
        json j = {{"rle", runs}, {"max_diameter_mm", it.max_diameter_mm}};
        if (!it.location.empty()) j["location"] = it.location;
        items.push_back(j);
    }
    json root = {{"case_id", a.case_id}, {"dims", index3_json(a.dims)}, {"aneurysms", items}};
    return root.dump(2) + "\n";
}

Annotation annotation_from_json(std::string_view text) {
    const Doc d(text);
    const json& r = d.root();
    Annotation a;
    a.case_id = d.string(d.member(r, "case_id", ""), "case_id");
    a.dims = dims_from(d, d.member(r, "dims", ""), "dims");
    const json& items = d.member(r, "aneurysms", "");
    if (!items.is_array()) d.bad("aneurysms", "expected an array");
    const std::size_t total = a.dims.product();
    std::vector<std::uint8_t> seen(total, 0);
    for (std::size_t k = 0; k < items.size(); ++k) {
        const std::string base = "aneurysms[" + std::to_string(k) + "]";
        const json& it = items[k];
        AnnotationItem item;
        item.max_diameter_mm = d.number(d.member(it, "max_diameter_mm", base), "max_diameter_mm");
        if (!(item.max_diameter_mm > 0.0)) d.bad("max_diameter_mm", base + ": diameter must be > 0");
        if (it.contains("location")) item.location = d.string(it["location"], "location");
        const json& runs = d.member(it, "rle", base);
        if (!runs.is_array()) d.bad("rle", base + ": expected an array of [start, length] pairs");
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (const json& run : runs) {
            if (!run.is_array() || run.size() != 2) d.bad("rle", base + ": expected [start, length]");
            const long long s = d.integer(run[0], "rle"), l = d.integer(run[1], "rle");
            if (s < 0 || l < 1 || static_cast<unsigned long long>(s + l) > total)
                d.bad("rle", base + ": run [" + std::to_string(s) + ", " + std::to_string(l) + "] leaves the volume");
            pairs.emplace_back(static_cast<std::size_t>(s), static_cast<std::size_t>(l));
        }
        item.voxels = rle_decode(pairs);
        if (item.voxels.empty()) d.bad("rle", base + ": empty voxel set");
        for (std::size_t v : item.voxels) {
            if (seen[v]) d.bad("rle", base + ": voxel " + std::to_string(v) + " is listed twice");
            seen[v] = 1;
        }
        std::sort(item.voxels.begin(), item.voxels.end());
        a.aneurysms.push_back(std::move(item));
    }
    return a;
}

void save_annotation(const Annotation& a, const fs::path& path) { write_file_atomic(path, annotation_to_json(a)); }
Annotation load_annotation(const fs::path& path) { return annotation_from_json(read_file(path)); }

// ---------------------------------------------------------------- configuration

namespace {

json network_json(const NetworkConfig& n) {
    return {{"levels", n.levels},
            {"base_channels", n.base_channels},
            {"p_drop", n.p_drop},
            {"leaky_slope", n.leaky_slope},
            {"se_ratio", n.se_ratio},
            {"attention", std::string(attention_name(n.attention))},
            {"out_classes", n.out_classes},
            {"input_dims", n.input_dims},
            {"norm_eps", n.norm_eps}};
}

template <class Fn>
void each_key(const Doc& d, const json& obj, const std::string& section, Fn&& fn) {
    if (!obj.is_object()) d.bad(section, "expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string field = section.empty() ? it.key() : section + "." + it.key();
        if (!fn(it.key(), it.value(), field)) d.bad(field, "unknown key");
    }
}

int as_int(const Doc& d, const json& v, const std::string& field) {
    const long long x = d.integer(v, field);
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) d.bad(field, "out of range");
    return static_cast<int>(x);
}

NetworkConfig network_from(const Doc& d, const json& obj, const std::string& section, NetworkConfig n) {
    each_key(d, obj, section, [&](const std::string& k, const json& v, const std::string& f) {
        if (k == "levels") n.levels = as_int(d, v, f);
        else if (k == "base_channels") n.base_channels = as_int(d, v, f);
        else if (k == "p_drop") n.p_drop = d.number(v, f);
        else if (k == "leaky_slope") n.leaky_slope = d.number(v, f);
        else if (k == "se_ratio") n.se_ratio = as_int(d, v, f);
        else if (k == "attention") {
            try {
                n.attention = parse_attention(d.string(v, f));
            } catch (const FormatError&) {
                throw;
            } catch (const Error& e) {
                d.bad(f, e.what());
            }
        } else if (k == "out_classes") n.out_classes = as_int(d, v, f);
        else if (k == "input_dims") n.input_dims = as_int(d, v, f);
        else if (k == "norm_eps") n.norm_eps = d.number(v, f);
        else return false;
        return true;
    });
    return n;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& c) {
    const TrainConfig& t = c.train;
    const VoiParams& v = c.voi;
    const DetectionParams& det = c.detection;
    json root = {
        {"network", network_json(c.network)},
        {"train",
         {{"batch_size", t.batch_size},
          {"lr", t.lr},
          {"max_epochs", t.max_epochs},
          {"early_stop_patience", t.early_stop_patience},
          {"seed", t.seed},
          {"loss", std::string(loss_name(t.loss))},
          {"validation_fraction", t.validation_fraction},
          {"stop_below", t.stop_below}}},
        {"voi",
         {{"target_max", v.target_max},
          {"threshold", v.threshold},
          {"slice_fraction", v.slice_fraction},
          {"n_lines", v.n_lines},
          {"min_radius_fraction", v.min_radius_fraction},
          {"z_factor", v.z_factor},
          {"dilation_radius", v.dilation_radius}}},
        {"detection",
         {{"threshold", det.threshold},
          {"planar_radius_limit", det.planar_radius_limit},
          {"min_box_side", det.min_box_side}}},
        {"label_sphere_radius", c.label_sphere_radius},
        {"augment", c.augment},
        {"augment_params",
         {{"noise_variance", c.augment_params.noise_variance},
          {"max_kernel_width", c.augment_params.max_kernel_width},
          {"histeq_bins", c.augment_params.histeq_bins}}},
        {"model_seed", c.model_seed}};
    return root.dump(2) + "\n";
}

ExperimentConfig config_from_json(std::string_view text, const ExperimentConfig& base) {
    const Doc d(text);
    ExperimentConfig c = base;
    each_key(d, d.root(), "", [&](const std::string& key, const json& val, const std::string& field) {
        if (key == "network") {
            c.network = network_from(d, val, field, c.network);
        } else if (key == "train") {
            TrainConfig& t = c.train;
            each_key(d, val, field, [&](const std::string& k, const json& v, const std::string& f) {
                if (k == "batch_size") t.batch_size = as_int(d, v, f);
                else if (k == "lr") t.lr = d.number(v, f);
                else if (k == "max_epochs") t.max_epochs = as_int(d, v, f);
                else if (k == "early_stop_patience") t.early_stop_patience = as_int(d, v, f);
                else if (k == "seed") {
                    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
                        d.bad(f, "expected a non-negative integer");
                    t.seed = v.get<std::uint64_t>();
                } else if (k == "loss") {
                    try {
                        t.loss = parse_loss(d.string(v, f));
                    } catch (const FormatError&) {
                        throw;
                    } catch (const Error& e) {
                        d.bad(f, e.what());
                    }
                } else if (k == "validation_fraction") t.validation_fraction = d.number(v, f);
                else if (k == "stop_below") t.stop_below = d.number(v, f);
                else return false;
                return true;
            });
        } else if (key == "voi") {
            VoiParams& p = c.voi;
            each_key(d, val, field, [&](const std::string& k, const json& v, const std::string& f) {
                if (k == "target_max") p.target_max = static_cast<float>(d.number(v, f));
                else if (k == "threshold") p.threshold = d.number(v, f);
                else if (k == "slice_fraction") p.slice_fraction = d.number(v, f);
                else if (k == "n_lines") p.n_lines = as_int(d, v, f);
                else if (k == "min_radius_fraction") p.min_radius_fraction = d.number(v, f);
                else if (k == "z_factor") p.z_factor = d.number(v, f);
                else if (k == "dilation_radius") p.dilation_radius = d.number(v, f);
                else return false;
                return true;
            });
        } else if (key == "detection") {
            DetectionParams& p = c.detection;
            each_key(d, val, field, [&](const std::string& k, const json& v, const std::string& f) {
                if (k == "threshold") p.threshold = d.number(v, f);
                else if (k == "planar_radius_limit") p.planar_radius_limit = d.number(v, f);
                else if (k == "min_box_side") p.min_box_side = as_int(d, v, f);
                else return false;
                return true;
            });
        } else if (key == "label_sphere_radius") {
            c.label_sphere_radius = as_int(d, val, field);
        } else if (key == "augment") {
            c.augment = d.boolean(val, field);
        } else if (key == "augment_params") {
            AugmentParams& p = c.augment_params;
            each_key(d, val, field, [&](const std::string& k, const json& v, const std::string& f) {
                if (k == "noise_variance") p.noise_variance = d.number(v, f);
                else if (k == "max_kernel_width") p.max_kernel_width = as_int(d, v, f);
                else if (k == "histeq_bins") p.histeq_bins = as_int(d, v, f);
                else return false;
                return true;
            });
        } else if (key == "model_seed") {
            if (!val.is_number_integer() || (!val.is_number_unsigned() && val.get<long long>() < 0))
                d.bad(field, "expected a non-negative integer");
            c.model_seed = val.get<std::uint64_t>();
        } else {
            return false;
        }
        return true;
    });
    try {
        validate(c.network);
        validate(c.train);
    } catch (const Error& e) {
        throw FormatError("config", 0, e.what());
    }
    if (c.label_sphere_radius < 0) d.bad("label_sphere_radius", "must be >= 0");
    if (c.detection.min_box_side < 1) d.bad("min_box_side", "must be >= 1");
    if (!(c.detection.threshold > 0.0 && c.detection.threshold < 1.0)) d.bad("detection.threshold", "must lie in (0, 1)");
    return c;
}

ExperimentConfig load_config(const fs::path& path) { return config_from_json(read_file(path)); }

// ---------------------------------------------------------------- weights

namespace {
constexpr char kMagic[8] = {'T', 'O', 'F', 'D', 'W', 'T', '0', '1'};
}

void save_weights(const Model<float>& model, const fs::path& path) {
    json tensors = json::array();
    for (const auto& p : model.parameters()) {
        const Shape5& s = p.node->value.shape();
        tensors.push_back({{"name", p.name}, {"shape", json::array({s[0], s[1], s[2], s[3], s[4]})}});
    }
    const json manifest = {{"dtype", "f32"}, {"byte_order", "little"}, {"config", network_json(model.config())},
                           {"tensors", tensors}};
    const std::string text = manifest.dump();
    std::string out(kMagic, sizeof kMagic);
    put<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& p : model.parameters())
        for (float v : p.node->value.values()) put(out, std::bit_cast<std::uint32_t>(v));
    write_file_atomic(path, out);
}

Model<float> load_weights(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw FormatError("magic", 0, "not a tofdetect weights file");
    const std::uint64_t mlen = get<std::uint64_t>(bytes, 8);
    if (mlen > bytes.size() - 16)
        throw FormatError("manifest_length", 8,
                          "manifest of " + std::to_string(mlen) + " bytes exceeds the file size " +
                              std::to_string(bytes.size()));
    const std::string_view text(bytes.data() + 16, mlen);
    Doc d(text);
    const json& r = d.root();
    if (d.string(d.member(r, "dtype", ""), "dtype") != "f32") d.bad("dtype", "only f32 is supported");
    NetworkConfig config;
    try {
        config = network_from(d, d.member(r, "config", ""), "config", NetworkConfig{});
        validate(config);
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        d.bad("config", e.what());
    }
    Model<float> model = Model<float>::build(config, 0);
    const json& tensors = d.member(r, "tensors", "");
    if (!tensors.is_array()) d.bad("tensors", "expected an array");
    const auto& params = model.parameters();
    if (tensors.size() != params.size())
        d.bad("tensors", "lists " + std::to_string(tensors.size()) + " tensors, the configuration has " +
                             std::to_string(params.size()));
    std::size_t expected = 0;
    std::vector<std::pair<std::string, Tensor<float>>> values;
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        const std::string name = d.string(d.member(tensors[k], "name", "tensors"), "name");
        if (name != params[k].name) d.bad("name", "tensor " + std::to_string(k) + " is '" + name + "', expected '" +
                                                      params[k].name + "'");
        const json& sh = d.member(tensors[k], "shape", "tensors");
        if (!sh.is_array() || sh.size() != 5) d.bad("shape", "tensor '" + name + "' needs a 5-axis shape");
        Shape5 shape{};
        for (int a = 0; a < 5; ++a) shape[a] = as_int(d, sh[a], "shape");
        if (shape != params[k].node->value.shape())
            d.bad("shape", "tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                               shape_string(params[k].node->value.shape()));
        values.emplace_back(name, Tensor<float>(shape));
        expected += shape_size(shape) * 4;
    }
    const std::size_t start = 16 + mlen;
    const std::size_t actual = bytes.size() - start;
    if (actual != expected)
        throw FormatError("payload", static_cast<long long>(bytes.size()),
                          "expected " + std::to_string(expected) + " bytes, found " + std::to_string(actual));
    std::size_t pos = start;
    for (auto& [name, t] : values)
        for (float& v : t.values()) {
            v = std::bit_cast<float>(get<std::uint32_t>(bytes, pos));
            pos += 4;
        }
    model.load_values(values);
    return model;
}

// ---------------------------------------------------------------- reports

namespace {

json detection_json(const Detection& det, int match) {
    json j = {{"box_min", index3_json(det.box_min)},
              {"box_size", index3_json(det.box_size)},
              {"score", det.score},
              {"component_id", det.component_id}};
    if (match != -2) j["match"] = match;
    return j;
}

json report_json(const EvalReport& r) {
    json cases = json::array();
    for (const CaseResult& c : r.per_case) {
        json dets = json::array();
        for (std::size_t i = 0; i < c.detections.size(); ++i)
            dets.push_back(detection_json(c.detections[i], i < c.detection_match.size() ? c.detection_match[i] : -1));
        cases.push_back({{"case_id", c.case_id},
                         {"tp", c.tp},
                         {"fp", c.fp},
                         {"fn", c.fn},
                         {"diameters_mm", c.diameters_mm},
                         {"aneurysm_match", c.aneurysm_match},
                         {"detections", dets}});
    }
    json bins = json::array();
    for (const SizeBin& b : r.size_bins)
        bins.push_back({{"bin", b.label}, {"total", b.total}, {"tp", b.tp}, {"sensitivity", b.sensitivity}});
    json agg = {{"tp", r.tp},
                {"fp", r.fp},
                {"fn", r.fn},
                {"n_cases", r.per_case.size()},
                {"sensitivity", r.sensitivity ? json(*r.sensitivity) : json(nullptr)},
                {"fp_per_case", r.fp_per_case}};
    return {{"aggregate", agg}, {"size_bins", bins}, {"cases", cases}};
}

json crossval_json(const CrossvalResult& r) {
    json folds = json::array();
    for (const FoldResult& f : r.folds)
        folds.push_back({{"fold", f.fold},
                         {"test_ids", f.test_ids},
                         {"epochs", f.epochs},
                         {"best_epoch", f.best_epoch},
                         {"report", report_json(f.report)}});
    json j = {{"k", r.k}, {"seed", r.seed}, {"folds", folds}, {"mean_fp_per_case", r.mean_fp_per_case}};
    if (r.summary)
        j["summary"] = {{"mean", r.summary->mean},
                        {"std", r.summary->std},
                        {"best", r.summary->best},
                        {"best_fold", r.summary->best_fold}};
    else
        j["summary"] = nullptr;
    return j;
}

}  // namespace

std::string detections_to_json(const std::string& case_id, const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const Detection& d : dets) arr.push_back(detection_json(d, -2));
    return json({{"case_id", case_id}, {"detections", arr}}).dump(2) + "\n";
}

std::string report_to_json(const EvalReport& r) { return report_json(r).dump(2) + "\n"; }
std::string crossval_to_json(const CrossvalResult& r) { return crossval_json(r).dump(2) + "\n"; }

std::string ablation_to_json(const std::vector<AblationCell>& cells) {
    json arr = json::array();
    for (const AblationCell& c : cells) {
        json j = {{"position", std::string(attention_name(c.position))}, {"ratio", c.ratio}};
        if (c.result) j["crossval"] = crossval_json(*c.result);
        if (!c.error.empty()) j["error"] = c.error;
        arr.push_back(j);
    }
    return json({{"cells", arr}}).dump(2) + "\n";
}

std::string epoch_to_json(const EpochRecord& e) {
    json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"improved", e.improved}};
    j["val_loss"] = e.val_loss ? json(*e.val_loss) : json(nullptr);
    return j.dump();
}

// ---------------------------------------------------------------- datasets

void save_dataset(const std::vector<DataCase>& cases, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::IoError, "cannot create directory '" + dir.string() + "'");
    for (const DataCase& c : cases) {
        save_volume(c.volume, dir / (c.case_id + ".vhdr"));
        save_annotation(annotation_from_truth(c.truth), dir / (c.case_id + ".ann.json"));
    }
}

std::vector<DataCase> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail(ErrorKind::IoError, "'" + dir.string() + "' is not a directory");
    std::vector<fs::path> headers;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".vhdr") headers.push_back(e.path());
    std::sort(headers.begin(), headers.end());
    std::vector<DataCase> out;
    for (const fs::path& h : headers) {
        fs::path ann = h;
        ann.replace_extension(".ann.json");
        if (!fs::exists(ann)) continue;
        DataCase c;
        c.volume = load_volume(h);
        const Annotation a = load_annotation(ann);
        if (a.dims != c.volume.dims())
            throw FormatError("dims", 0, "annotation '" + ann.filename().string() + "' does not match its volume");
        c.case_id = a.case_id;
        c.truth = truth_from_annotation(a);
        out.push_back(std::move(c));
    }
    if (out.empty()) fail(ErrorKind::IoError, "no cases (.vhdr + .ann.json) found in '" + dir.string() + "'");
    return out;
}

}  // namespace tofd
