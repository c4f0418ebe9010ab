#include "tofdetect/training.hpp"

#include <algorithm>
#include <cmath>

#include "tofdetect/optim.hpp"
#include "tofdetect/rng.hpp"

namespace tofd {

LabeledCase labeled_case_from_phantom(const Phantom& ph, const VoiParams& voi) {
    LabeledCase c;
    c.case_id = ph.case_id;
    c.volume = ph.volume;
    c.aneurysm_mask = BinaryMask(ph.volume.dims());
    for (const PlantedAneurysm& a : ph.aneurysms) {
        for (std::size_t i : a.voxels) c.aneurysm_mask.set(i);
        c.diameters_mm.push_back(a.max_diameter_mm);
    }
    c.positive = !ph.aneurysms.empty();
    c.vessel_mask = extract_voi(ph.volume, voi).vessel_mask;
    return c;
}

std::size_t LabelVolume::count(std::uint8_t cls) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), cls));
}

namespace {

// Nearest integer; exact ties go toward the middle of [0, n-1] so that the
// result commutes with the mirror z -> n-1-z (a tie at the middle itself rounds down).
int round_toward_center(double v, int n) {
    const double fl = std::floor(v);
    const double frac = v - fl;
    if (frac < 0.5) return static_cast<int>(fl);
    if (frac > 0.5) return static_cast<int>(fl) + 1;
    const double mid = (n - 1) / 2.0;
    return v < mid ? static_cast<int>(fl) + 1 : static_cast<int>(fl);
}

}  // namespace

LabelVolume prepare_label(const LabeledCase& c, int sphere_radius) {
    const Index3 dims = c.volume.dims();
    if (c.aneurysm_mask.dims() != dims || c.vessel_mask.dims() != dims)
        fail(ErrorKind::GeometryMismatch, "prepare_label: masks do not match the volume");
    if (sphere_radius < 0) fail(ErrorKind::InvalidArgument, "prepare_label: sphere radius must be >= 0");
    if (c.positive && c.aneurysm_mask.empty())
        fail(ErrorKind::EmptyAnnotation, "case '" + c.case_id + "' is positive but has no annotated voxels");

    LabelVolume out{dims, std::vector<std::uint8_t>(dims.product(), kBackground)};
    for (std::size_t i = 0; i < out.labels.size(); ++i)
        if (c.vessel_mask[i]) out.labels[i] = kVessel;

    const long r2 = static_cast<long>(sphere_radius) * sphere_radius;
    for (const ConnectedComponent& comp : connected_components(c.aneurysm_mask, Connectivity::TwentySix)) {
        for (std::size_t i : comp.voxel_indices) out.labels[i] = kAneurysm;
        const int cx = round_toward_center(comp.centroid.x, dims.x);
        const int cy = round_toward_center(comp.centroid.y, dims.y);
        const int cz = round_toward_center(comp.centroid.z, dims.z);
        for (int z = std::max(0, cz - sphere_radius); z <= std::min(dims.z - 1, cz + sphere_radius); ++z)
            for (int y = std::max(0, cy - sphere_radius); y <= std::min(dims.y - 1, cy + sphere_radius); ++y)
                for (int x = std::max(0, cx - sphere_radius); x <= std::min(dims.x - 1, cx + sphere_radius); ++x) {
                    const long dx = x - cx, dy = y - cy, dz = z - cz;
                    if (dx * dx + dy * dy + dz * dz <= r2) out.labels[linear_index(dims, x, y, z)] = kAneurysm;
                }
    }
    return out;
}

// ---------------------------------------------------------------- augmentation

std::vector<unsigned> augmentation_variants() {
    return {0u,
            kAugNoise,
            kAugFlip,
            kAugHisteq,
            kAugNoise | kAugFlip,
            kAugNoise | kAugHisteq,
            kAugFlip | kAugHisteq,
            kAugNoise | kAugFlip | kAugHisteq};
}

std::string variant_name(unsigned variant) {
    std::string s;
    if (variant & kAugNoise) s += 'n';
    if (variant & kAugFlip) s += 'f';
    if (variant & kAugHisteq) s += 'h';
    return s.empty() ? "id" : s;
}

LabeledCase augment_case(const LabeledCase& c, unsigned variant, const AugmentParams& params) {
    LabeledCase out = c;
    if (variant == 0u) return out;
    out.case_id = c.case_id + "_" + variant_name(variant);
    if (variant & kAugNoise) out.volume = gaussian_smooth_discrete(out.volume, params.noise_variance, params.max_kernel_width);
    if (variant & kAugFlip) {
        out.volume = flip_transverse(out.volume);
        out.aneurysm_mask = flip_transverse(out.aneurysm_mask);
        out.vessel_mask = flip_transverse(out.vessel_mask);
    }
    if (variant & kAugHisteq) out.volume = histogram_equalize(out.volume, params.histeq_bins);
    return out;
}

std::vector<LabeledCase> augment_dataset(const std::vector<LabeledCase>& cases, const AugmentParams& params) {
    const std::vector<unsigned> variants = augmentation_variants();
    std::vector<LabeledCase> out;
    out.reserve(cases.size() * variants.size());
    for (const LabeledCase& c : cases)
        for (unsigned v : variants) out.push_back(augment_case(c, v, params));
    return out;
}

// ---------------------------------------------------------------- losses

std::string_view loss_name(LossKind k) {
    switch (k) {
        case LossKind::SoftDice: return "soft_dice";
        case LossKind::CrossEntropy: return "cross_entropy";
        case LossKind::DicePlusCe: return "dice_plus_ce";
    }
    return "?";
}

LossKind parse_loss(std::string_view name) {
    if (name == "soft_dice") return LossKind::SoftDice;
    if (name == "cross_entropy") return LossKind::CrossEntropy;
    if (name == "dice_plus_ce") return LossKind::DicePlusCe;
    fail(ErrorKind::ConfigInvalid, "unknown loss '" + std::string(name) + "'");
}

namespace {

template <class T>
void check_pair(const Tensor<T>& probs, const Tensor<T>& target) {
    if (probs.shape() != target.shape())
        fail(ErrorKind::ShapeMismatch,
             "loss: prediction " + shape_string(probs.shape()) + " vs target " + shape_string(target.shape()));
}

}  // namespace

template <class T>
LossValue<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<T>& target, double eps) {
    check_pair(probs, target);
    const int classes = probs.c();
    if (classes < 2) fail(ErrorKind::ShapeMismatch, "soft dice needs a background and at least one foreground class");
    const std::size_t sp = probs.spatial();
    LossValue<T> out{0.0, Tensor<T>(probs.shape())};
    const int fg = classes - 1;
    double dice_sum = 0.0;
    for (int b = 0; b < probs.n(); ++b)
        for (int ch = 1; ch < classes; ++ch) {
            const T* p = probs.plane(b, ch);
            const T* t = target.plane(b, ch);
            double inter = 0.0, sum = 0.0;
            for (std::size_t i = 0; i < sp; ++i) {
                inter += double(p[i]) * t[i];
                sum += double(p[i]) + t[i];
            }
            const double num = 2.0 * inter + eps;
            const double den = sum + eps;
            dice_sum += num / den;
            // d(num/den)/dp = 2t/den - num/den^2
            const double scale = -1.0 / (double(fg) * probs.n());
            T* g = out.grad.plane(b, ch);
            for (std::size_t i = 0; i < sp; ++i)
                g[i] = static_cast<T>(scale * (2.0 * t[i] / den - num / (den * den)));
        }
    out.value = 1.0 - dice_sum / (double(fg) * probs.n());
    return out;
}

template <class T>
LossValue<T> cross_entropy_loss(const Tensor<T>& probs, const Tensor<T>& target) {
    check_pair(probs, target);
    constexpr double floor_p = 1e-12;
    const std::size_t voxels = static_cast<std::size_t>(probs.n()) * probs.spatial();
    LossValue<T> out{0.0, Tensor<T>(probs.shape())};
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (target[i] == T(0)) continue;
        const double p = std::max(floor_p, double(probs[i]));
        total -= double(target[i]) * std::log(p);
        if (double(probs[i]) > floor_p) out.grad[i] = static_cast<T>(-double(target[i]) / (p * voxels));
    }
    out.value = total / voxels;
    return out;
}

template <class T>
LossValue<T> compute_loss(LossKind kind, const Tensor<T>& probs, const Tensor<T>& target) {
    switch (kind) {
        case LossKind::SoftDice: return soft_dice_loss(probs, target);
        case LossKind::CrossEntropy: return cross_entropy_loss(probs, target);
        case LossKind::DicePlusCe: {
            LossValue<T> a = soft_dice_loss(probs, target);
            const LossValue<T> b = cross_entropy_loss(probs, target);
            a.value += b.value;
            for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += b.grad[i];
            return a;
        }
    }
    fail(ErrorKind::ConfigInvalid, "unknown loss kind");
}

template <class T>
Tensor<T> one_hot(const LabelVolume& labels, int classes) {
    const Index3 d = labels.dims;
    Tensor<T> out({1, classes, d.z, d.y, d.x});
    const std::size_t sp = out.spatial();
    for (std::size_t i = 0; i < sp; ++i) {
        const int cls = labels.labels[i];
        if (cls >= classes) fail(ErrorKind::ShapeMismatch, "label value exceeds class count");
        out.plane(0, cls)[i] = T(1);
    }
    return out;
}

#define TOFD_LOSS_INSTANTIATE(T)                                                                 \
    template LossValue<T> soft_dice_loss(const Tensor<T>&, const Tensor<T>&, double);            \
    template LossValue<T> cross_entropy_loss(const Tensor<T>&, const Tensor<T>&);                \
    template LossValue<T> compute_loss(LossKind, const Tensor<T>&, const Tensor<T>&);            \
    template Tensor<T> one_hot(const LabelVolume&, int);
TOFD_LOSS_INSTANTIATE(float)
TOFD_LOSS_INSTANTIATE(double)
#undef TOFD_LOSS_INSTANTIATE

// ---------------------------------------------------------------- samples

Tensor<float> network_input(const Volume& masked_normalized, int side, GeometricTransform* transform) {
    const Index3 target{side, side, side};
    Volume v = masked_normalized;
    GeometricTransform t = GeometricTransform::identity(v.dims());
    if (v.dims() != target) std::tie(v, t) = resize_to(masked_normalized, target, Interpolation::Trilinear);
    if (transform) *transform = t;
    std::vector<float> data(v.data().begin(), v.data().end());
    for (float& x : data) x /= 1024.0f;
    return Tensor<float>({1, 1, side, side, side}, std::move(data));
}

Sample make_sample(const LabeledCase& c, int side, int sphere_radius, int classes) {
    Sample s;
    s.case_id = c.case_id;
    const Volume masked = apply_mask(normalize_intensity(c.volume, 1024.0f), c.vessel_mask);
    s.input = network_input(masked, side);

    LabelVolume labels = prepare_label(c, sphere_radius);
    const Index3 target{side, side, side};
    if (labels.dims != target) {
        BinaryMask an(labels.dims), ve(labels.dims);
        for (std::size_t i = 0; i < labels.labels.size(); ++i) {
            if (labels.labels[i] == kAneurysm) an.set(i);
            if (labels.labels[i] == kVessel) ve.set(i);
        }
        an = resize_mask(an, target);
        ve = resize_mask(ve, target);
        labels = LabelVolume{target, std::vector<std::uint8_t>(target.product(), kBackground)};
        for (std::size_t i = 0; i < labels.labels.size(); ++i)
            labels.labels[i] = an[i] ? kAneurysm : ve[i] ? kVessel : kBackground;
    }
    s.target = one_hot<float>(labels, classes);
    return s;
}

// ---------------------------------------------------------------- training loop

void validate(const TrainConfig& c) {
    if (c.batch_size < 1) fail(ErrorKind::ConfigInvalid, "batch_size must be >= 1");
    if (!(c.lr > 0.0) || !std::isfinite(c.lr)) fail(ErrorKind::ConfigInvalid, "lr must be > 0");
    if (c.max_epochs < 1) fail(ErrorKind::ConfigInvalid, "max_epochs must be >= 1");
    if (c.early_stop_patience < 1) fail(ErrorKind::ConfigInvalid, "early_stop_patience must be >= 1");
    if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0))
        fail(ErrorKind::ConfigInvalid, "validation_fraction must be in [0, 1)");
    if (!(c.stop_below >= 0.0)) fail(ErrorKind::ConfigInvalid, "stop_below must be >= 0");
}

bool EarlyStopper::observe(int epoch, double metric) {
    if (best_epoch_ == 0 || metric < best_metric_) {
        best_epoch_ = epoch;
        best_metric_ = metric;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

Checkpoint snapshot(const Model<float>& model, int epoch, double metric) {
    Checkpoint c{epoch, metric, {}};
    c.parameters.reserve(model.parameters().size());
    for (const auto& p : model.parameters()) c.parameters.emplace_back(p.name, p.node->value);
    return c;
}

void restore(Model<float>& model, const Checkpoint& checkpoint) { model.load_values(checkpoint.parameters); }

double evaluate_loss(const Model<float>& model, const std::vector<Sample>& samples, LossKind kind) {
    if (samples.empty()) return 0.0;
    double total = 0.0;
    for (const Sample& s : samples) total += compute_loss(kind, model.predict(s.input), s.target).value;
    return total / static_cast<double>(samples.size());
}

TrainResult train(Model<float>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
    validate(config);
    if (train_set.empty()) fail(ErrorKind::TooFewCases, "train: no training samples");

    std::vector<Tensor<float>*> values;
    for (const auto& p : model.parameters()) values.push_back(&p.node->value);
    std::vector<Tensor<float>> grads(values.size());
    std::vector<const Tensor<float>*> grad_ptrs;
    for (const Tensor<float>& g : grads) grad_ptrs.push_back(&g);

    AdamState<float> adam;
    Rng order_rng = Rng::derived(config.seed, "shuffle");
    Rng dropout_rng = Rng::derived(config.seed, "dropout");
    EarlyStopper stopper(config.early_stop_patience);
    TrainResult result;
    std::vector<std::size_t> order(train_set.size());

    const auto apply_update = [&](int batch) {
        const auto& params = model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Node<float>& node = *params[i].node;
            if (node.has_grad) {
                grads[i] = node.grad;
                if (batch > 1)
                    for (float& g : grads[i].values()) g /= static_cast<float>(batch);
            } else {
                grads[i] = Tensor<float>(node.value.shape());
            }
        }
        adam_step<float>(values, grad_ptrs, adam, config.lr);
        model.zero_grad();
    };

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        model.set_mode(Mode::Train);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);

        double total = 0.0;
        int in_batch = 0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const Sample& s = train_set[order[k]];
            Tape<float> tape;
            auto out = model.forward(tape, make_leaf(s.input, false), &dropout_rng);
            LossValue<float> loss = compute_loss(config.loss, out->value, s.target);
            if (!std::isfinite(loss.value))
                fail(ErrorKind::DivergenceDetected,
                     "loss became non-finite at epoch " + std::to_string(epoch) + " on case '" + s.case_id + "'");
            total += loss.value;
            tape.backward(out, loss.grad);
            if (++in_batch == config.batch_size || k + 1 == order.size()) {
                apply_update(in_batch);
                in_batch = 0;
            }
        }

        model.set_mode(Mode::Inference);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(order.size());
        if (!val.empty()) rec.val_loss = evaluate_loss(model, val, config.loss);
        const double metric = rec.val_loss ? *rec.val_loss : rec.train_loss;
        if (!std::isfinite(metric))
            fail(ErrorKind::DivergenceDetected, "monitored loss became non-finite at epoch " + std::to_string(epoch));
        rec.improved = stopper.observe(epoch, metric);
        if (rec.improved) result.best = snapshot(model, epoch, metric);
        result.history.push_back(rec);
        if (on_epoch && !on_epoch(rec)) break;
        if (config.stop_below > 0.0 && rec.train_loss < config.stop_below) break;
        if (stopper.should_stop()) {
            result.early_stopped = true;
            break;
        }
    }
    restore(model, result.best);
    model.set_mode(Mode::Inference);
    return result;
}

// ---------------------------------------------------------------- splitting

std::vector<Fold> kfold_split(std::size_t n_cases, int k, std::uint64_t seed) {
    if (k < 2) fail(ErrorKind::InvalidArgument, "kfold_split: k must be >= 2");
    if (n_cases < static_cast<std::size_t>(k))
        fail(ErrorKind::TooFewCases,
             "kfold_split: " + std::to_string(n_cases) + " cases cannot fill " + std::to_string(k) + " folds");
    std::vector<std::size_t> order(n_cases);
    for (std::size_t i = 0; i < n_cases; ++i) order[i] = i;
    Rng rng = Rng::derived(seed, "kfold");
    rng.shuffle(order);

    std::vector<Fold> folds(k);
    const std::size_t base = n_cases / k, extra = n_cases % k;
    std::size_t start = 0;
    for (int f = 0; f < k; ++f) {
        const std::size_t len = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
        for (std::size_t i = 0; i < n_cases; ++i) {
            if (i >= start && i < start + len)
                folds[f].test.push_back(order[i]);
            else
                folds[f].train.push_back(order[i]);
        }
        start += len;
    }
    return folds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(const std::vector<std::size_t>& items,
                                                                            double fraction, std::uint64_t seed) {
    std::vector<std::size_t> shuffled = items;
    Rng rng = Rng::derived(seed, "holdout");
    rng.shuffle(shuffled);
    std::size_t n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(items.size())));
    if (fraction > 0.0 && items.size() >= 2) n_hold = std::max<std::size_t>(n_hold, 1);
    n_hold = std::min(n_hold, items.size() > 0 ? items.size() - 1 : 0);
    std::vector<std::size_t> held(shuffled.begin(), shuffled.begin() + static_cast<long>(n_hold));
    std::vector<std::size_t> kept(shuffled.begin() + static_cast<long>(n_hold), shuffled.end());
    return {kept, held};
}

}  // namespace tofd
