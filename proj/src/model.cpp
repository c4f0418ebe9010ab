#include "tofdetect/model.hpp"

#include <algorithm>

namespace tofd {

std::string_view attention_name(AttentionPosition p) {
    switch (p) {
        case AttentionPosition::None: return "none";
        case AttentionPosition::Downsample: return "downsample";
        case AttentionPosition::Middle: return "middle";
        case AttentionPosition::Upsample: return "upsample";
    }
    return "none";
}

AttentionPosition parse_attention(std::string_view name) {
    if (name == "none") return AttentionPosition::None;
    if (name == "downsample") return AttentionPosition::Downsample;
    if (name == "middle") return AttentionPosition::Middle;
    if (name == "upsample") return AttentionPosition::Upsample;
    fail(ErrorKind::ConfigInvalid, "unknown attention position '" + std::string(name) + "'");
}

std::vector<int> se_site_channels(const NetworkConfig& c) {
    std::vector<int> sites;
    switch (c.attention) {
        case AttentionPosition::None: break;
        case AttentionPosition::Downsample:
            for (int i = 1; i < c.levels; ++i) sites.push_back(level_channels(c, i));
            break;
        case AttentionPosition::Middle:
            sites.push_back(level_channels(c, c.levels));
            sites.push_back(level_channels(c, c.levels - 1));
            break;
        case AttentionPosition::Upsample:
            for (int i = c.levels - 1; i >= 1; --i) sites.push_back(level_channels(c, i));
            break;
    }
    return sites;
}

void validate(const NetworkConfig& c) {
    auto bad = [](const std::string& msg) { fail(ErrorKind::ConfigInvalid, msg); };
    if (c.levels < 1) bad("levels must be >= 1");
    if (c.levels > 12) bad("levels must be <= 12");
    if (c.base_channels < 1) bad("base_channels must be >= 1");
    if (!(c.p_drop >= 0.0 && c.p_drop < 1.0)) bad("p_drop must be in [0, 1)");
    if (!(c.leaky_slope >= 0.0 && c.leaky_slope < 1.0)) bad("leaky_slope must be in [0, 1)");
    if (c.out_classes < 2) bad("out_classes must be >= 2");
    if (!(c.norm_eps > 0.0)) bad("norm_eps must be > 0");
    if (c.input_dims < 1 || c.input_dims % (1 << c.levels) != 0)
        bad("input_dims " + std::to_string(c.input_dims) + " must be divisible by 2^levels = " +
            std::to_string(1 << c.levels));
    if (c.attention != AttentionPosition::None) {
        if (c.se_ratio < 1) bad("se_ratio must be >= 1");
        for (int ch : se_site_channels(c))
            if (ch % c.se_ratio != 0)
                bad("se_ratio " + std::to_string(c.se_ratio) + " does not divide SE site width " + std::to_string(ch));
    }
}

// ---------------------------------------------------------------- blocks

template <class T>
NodePtr<T> conv_block(Tape<T>& tape, const NodePtr<T>& x, const ConvBlockParams<T>& p, const BlockSettings& s) {
    auto y = ag::conv3d(tape, x, p.weights, NodePtr<T>(), p.stride);
    y = ag::instance_norm(tape, y, p.gamma, p.beta, static_cast<T>(s.norm_eps));
    return ag::leaky_relu(tape, y, static_cast<T>(s.leaky_slope));
}

template <class T>
NodePtr<T> context_module(Tape<T>& tape, const NodePtr<T>& x, const ContextParams<T>& p, const BlockSettings& s,
                          Rng* rng) {
    auto y = conv_block(tape, x, p.first, s);
    if (s.training && s.p_drop > 0.0) {
        if (rng == nullptr) fail(ErrorKind::InvalidArgument, "context_module: dropout in train mode needs an rng");
        y = ag::dropout(tape, y, s.p_drop, *rng, true);
    }
    y = conv_block(tape, y, p.second, s);
    return ag::add(tape, y, x);
}

template <class T>
NodePtr<T> localization_module(Tape<T>& tape, const NodePtr<T>& x, const LocalizationParams<T>& p,
                               const BlockSettings& s) {
    return conv_block(tape, conv_block(tape, x, p.conv3, s), p.conv1, s);
}

template <class T>
NodePtr<T> se_block(Tape<T>& tape, const NodePtr<T>& x, const SeParams<T>& p) {
    auto squeezed = ag::global_max_pool(tape, x);
    auto hidden = ag::dense(tape, squeezed, p.fc1_weights, p.fc1_bias);
    hidden = ag::leaky_relu(tape, hidden, T(0));
    auto gates = ag::sigmoid(tape, ag::dense(tape, hidden, p.fc2_weights, p.fc2_bias));
    return ag::scale_channels(tape, x, gates);
}

template <class T>
NodePtr<T> deep_supervision_sum(Tape<T>& tape, const std::vector<NodePtr<T>>& maps) {
    if (maps.empty()) fail(ErrorKind::ShapeMismatch, "deep_supervision_sum needs at least one map");
    NodePtr<T> acc = maps.front();
    for (std::size_t i = 1; i < maps.size(); ++i) {
        const Shape5& fine = maps[i]->value.shape();
        const Shape5& coarse = acc->value.shape();
        if (fine[1] != coarse[1] || fine[2] != 2 * coarse[2] || fine[3] != 2 * coarse[3] || fine[4] != 2 * coarse[4])
            fail(ErrorKind::ShapeMismatch, "deep_supervision_sum: map " + std::to_string(i) + " shape " +
                                               shape_string(fine) + " is not twice " + shape_string(coarse));
        acc = ag::add(tape, ag::upsample(tape, acc, 2), maps[i]);
    }
    return ag::softmax_channels(tape, acc);
}

template <class T>
SeParams<T> make_se_params(int channels, int ratio, Rng& rng) {
    if (ratio < 1 || channels % ratio != 0)
        fail(ErrorKind::ConfigInvalid,
             "SE ratio " + std::to_string(ratio) + " does not divide channel count " + std::to_string(channels));
    const int hidden = channels / ratio;
    SeParams<T> p;
    p.fc1_weights = make_leaf(glorot_uniform<T>({hidden, channels, 1, 1, 1}, rng), true);
    p.fc1_bias = make_leaf(Tensor<T>({hidden, 1, 1, 1, 1}), true);
    p.fc2_weights = make_leaf(glorot_uniform<T>({channels, hidden, 1, 1, 1}, rng), true);
    p.fc2_bias = make_leaf(Tensor<T>({channels, 1, 1, 1, 1}), true);
    return p;
}

// ---------------------------------------------------------------- model

// Creates parameters on first request during the build pass.
template <class T>
class Model<T>::Builder {
public:
    Builder(Model& model, std::uint64_t seed) : model_(model), seed_(seed) {}

    enum class Init { Glorot, Zeros, Ones };

    void create(const std::string& name, const Shape5& shape, Init init) {
        if (model_.index_.count(name) != 0) fail(ErrorKind::ConfigInvalid, "duplicate parameter name " + name);
        Tensor<T> value(shape);
        if (init == Init::Glorot) {
            Rng rng = Rng::derived(seed_, name);
            value = glorot_uniform<T>(shape, rng);
        } else if (init == Init::Ones) {
            value.fill(T(1));
        }
        model_.index_[name] = model_.params_.size();
        model_.params_.push_back({name, make_leaf(std::move(value), true)});
    }

private:
    Model& model_;
    std::uint64_t seed_;
};

template <class T>
NodePtr<T> Model<T>::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) fail(ErrorKind::ConfigInvalid, "model has no parameter named " + std::string(name));
    return params_[it->second].node;
}

template <class T>
std::size_t Model<T>::count_parameters() const {
    std::size_t n = 0;
    for (const Param& p : params_) n += p.node->value.size();
    return n;
}

template <class T>
void Model<T>::zero_grad() {
    for (Param& p : params_) p.node->zero_grad();
}

template <class T>
Model<T> Model<T>::build(const NetworkConfig& config, std::uint64_t seed) {
    validate(config);
    Model m;
    m.config_ = config;
    Builder builder(m, seed);
    // A minimal input drives one pass that creates every parameter in use order.
    const int side = 1 << config.levels;
    Tape<T> tape(false);
    auto input = make_leaf(Tensor<T>({1, 1, side, side, side}), false);
    m.run(tape, input, nullptr, &builder);
    return m;
}

template <class T>
NodePtr<T> Model<T>::forward(Tape<T>& tape, const NodePtr<T>& input, Rng* rng) const {
    const Shape5& s = input->value.shape();
    const int side = config_.input_dims;
    if (s[1] != 1 || s[2] != side || s[3] != side || s[4] != side)
        fail(ErrorKind::ShapeMismatch, "model expects input (n, 1, " + std::to_string(side) + ", " +
                                           std::to_string(side) + ", " + std::to_string(side) + "), got " +
                                           shape_string(s));
    if (mode_ == Mode::Train && config_.p_drop > 0.0 && rng == nullptr)
        fail(ErrorKind::InvalidArgument, "train-mode forward needs an rng for dropout");
    return run(tape, input, rng, nullptr);
}

template <class T>
Tensor<T> Model<T>::predict(const Tensor<T>& input) const {
    Model view = *this;  // shares parameter nodes
    view.mode_ = Mode::Inference;
    Tape<T> tape(false);
    return view.forward(tape, make_leaf(input, false), nullptr)->value;
}

template <class T>
NodePtr<T> Model<T>::run(Tape<T>& tape, const NodePtr<T>& input, Rng* rng, Builder* builder) const {
    using Init = typename Builder::Init;
    const NetworkConfig& c = config_;
    const int L = c.levels;
    BlockSettings settings{c.leaky_slope, c.norm_eps, c.p_drop, mode_ == Mode::Train};

    auto param = [&](const std::string& name, const Shape5& shape, Init init) {
        if (builder != nullptr) builder->create(name, shape, init);
        NodePtr<T> p = find(name);
        if (p->value.shape() != shape)
            fail(ErrorKind::ShapeMismatch, "parameter " + name + " has shape " + shape_string(p->value.shape()) +
                                               ", expected " + shape_string(shape));
        return p;
    };
    auto conv_params = [&](const std::string& name, int in_c, int out_c, int k, int stride) {
        return ConvBlockParams<T>{param(name + ".weight", {out_c, in_c, k, k, k}, Init::Glorot),
                                  param(name + ".norm.gamma", {out_c, 1, 1, 1, 1}, Init::Ones),
                                  param(name + ".norm.beta", {out_c, 1, 1, 1, 1}, Init::Zeros), stride};
    };
    auto se = [&](const std::string& name, const NodePtr<T>& x) {
        const int ch = x->value.c();
        const int hidden = ch / c.se_ratio;
        SeParams<T> p{param(name + ".fc1.weight", {hidden, ch, 1, 1, 1}, Init::Glorot),
                      param(name + ".fc1.bias", {hidden, 1, 1, 1, 1}, Init::Zeros),
                      param(name + ".fc2.weight", {ch, hidden, 1, 1, 1}, Init::Glorot),
                      param(name + ".fc2.bias", {ch, 1, 1, 1, 1}, Init::Zeros)};
        return se_block(tape, x, p);
    };
    auto context = [&](const std::string& name, const NodePtr<T>& x, int ch) {
        ContextParams<T> p{conv_params(name + ".conv1", ch, ch, 3, 1), conv_params(name + ".conv2", ch, ch, 3, 1)};
        return context_module(tape, x, p, settings, rng);
    };
    const std::string enc = "enc";
    const std::string dec = "dec";

    std::vector<NodePtr<T>> skips(L + 1);
    NodePtr<T> x = conv_block(tape, input, conv_params("enc0.in", 1, level_channels(c, 0), 3, 1), settings);
    x = context("enc0.ctx", x, level_channels(c, 0));
    skips[0] = x;
    for (int i = 1; i <= L; ++i) {
        const std::string pre = enc + std::to_string(i);
        x = conv_block(tape, x, conv_params(pre + ".down", level_channels(c, i - 1), level_channels(c, i), 3, 2),
                       settings);
        x = context(pre + ".ctx", x, level_channels(c, i));
        if (c.attention == AttentionPosition::Downsample && i < L) x = se(pre + ".se", x);
        if (c.attention == AttentionPosition::Middle && i == L) x = se(pre + ".se", x);
        skips[i] = x;
    }

    std::vector<NodePtr<T>> seg_maps;  // coarse to fine
    for (int i = L - 1; i >= 0; --i) {
        const std::string pre = dec + std::to_string(i);
        const int ch = level_channels(c, i);
        x = ag::upsample(tape, x, 2);
        x = conv_block(tape, x, conv_params(pre + ".up", level_channels(c, i + 1), ch, 3, 1), settings);
        if (c.attention == AttentionPosition::Middle && i == L - 1) x = se(pre + ".up_se", x);
        x = ag::concat(tape, x, skips[i]);
        LocalizationParams<T> loc{conv_params(pre + ".loc.conv3", 2 * ch, ch, 3, 1),
                                  conv_params(pre + ".loc.conv1", ch, ch, 1, 1)};
        x = localization_module(tape, x, loc, settings);
        if (c.attention == AttentionPosition::Upsample && i >= 1) x = se(pre + ".se", x);
        if (i <= 2) {
            auto w = param(pre + ".seg.weight", {c.out_classes, ch, 1, 1, 1}, Init::Glorot);
            auto b = param(pre + ".seg.bias", {c.out_classes, 1, 1, 1, 1}, Init::Zeros);
            seg_maps.push_back(ag::conv3d(tape, x, w, b, 1));
        }
    }
    return deep_supervision_sum(tape, seg_maps);
}

template <class T>
template <class U>
Model<U> Model<T>::cast() const {
    Model<U> out;
    out.config_ = config_;
    out.mode_ = mode_;
    for (const Param& p : params_) {
        out.index_[p.name] = out.params_.size();
        out.params_.push_back({p.name, make_leaf(p.node->value.template cast<U>(), true)});
    }
    return out;
}

template <class T>
void Model<T>::load_values(const std::vector<std::pair<std::string, Tensor<T>>>& values) {
    for (const auto& [name, value] : values) {
        NodePtr<T> p = find(name);
        if (p->value.shape() != value.shape())
            fail(ErrorKind::ShapeMismatch, "parameter " + name + ": stored shape " + shape_string(value.shape()) +
                                               " differs from model shape " + shape_string(p->value.shape()));
    }
    for (const auto& [name, value] : values) find(name)->value = value;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

#define TOFD_INSTANTIATE_BLOCKS(T)                                                                                 \
    template NodePtr<T> conv_block(Tape<T>&, const NodePtr<T>&, const ConvBlockParams<T>&, const BlockSettings&); \
    template NodePtr<T> context_module(Tape<T>&, const NodePtr<T>&, const ContextParams<T>&, const BlockSettings&, \
                                       Rng*);                                                                      \
    template NodePtr<T> localization_module(Tape<T>&, const NodePtr<T>&, const LocalizationParams<T>&,            \
                                            const BlockSettings&);                                                 \
    template NodePtr<T> se_block(Tape<T>&, const NodePtr<T>&, const SeParams<T>&);                                \
    template NodePtr<T> deep_supervision_sum(Tape<T>&, const std::vector<NodePtr<T>>&);                           \
    template SeParams<T> make_se_params(int, int, Rng&);

TOFD_INSTANTIATE_BLOCKS(float)
TOFD_INSTANTIATE_BLOCKS(double)

#undef TOFD_INSTANTIATE_BLOCKS

}  // namespace tofd
