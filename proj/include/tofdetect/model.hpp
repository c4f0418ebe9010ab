#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tofdetect/graph.hpp"

namespace tofd {

enum class AttentionPosition { None, Downsample, Middle, Upsample };

std::string_view attention_name(AttentionPosition p);
AttentionPosition parse_attention(std::string_view name);

struct NetworkConfig {
    int levels = 4;
    int base_channels = 16;
    double p_drop = 0.3;
    double leaky_slope = 0.01;
    int se_ratio = 16;
    AttentionPosition attention = AttentionPosition::Middle;
    int out_classes = 3;
    int input_dims = 128;
    double norm_eps = 1e-5;

    bool operator==(const NetworkConfig&) const = default;
};

/// Throws ConfigInvalid describing the first violated constraint.
void validate(const NetworkConfig& config);

inline int level_channels(const NetworkConfig& c, int level) { return c.base_channels << level; }

/// Channel width of every SE site for the configured position, in build order.
std::vector<int> se_site_channels(const NetworkConfig& config);

enum class Mode { Train, Inference };

// ---------------------------------------------------------------- building blocks

template <class T>
struct ConvBlockParams {
    NodePtr<T> weights;  // (out_c, in_c, k, k, k), no bias: instance norm follows
    NodePtr<T> gamma;
    NodePtr<T> beta;
    int stride = 1;
};

template <class T>
struct SeParams {
    NodePtr<T> fc1_weights;  // (C/R, C, 1, 1, 1)
    NodePtr<T> fc1_bias;
    NodePtr<T> fc2_weights;  // (C, C/R, 1, 1, 1)
    NodePtr<T> fc2_bias;
};

template <class T>
struct ContextParams {
    ConvBlockParams<T> first;
    ConvBlockParams<T> second;
};

template <class T>
struct LocalizationParams {
    ConvBlockParams<T> conv3;
    ConvBlockParams<T> conv1;
};

/// Layer hyper-parameters shared by all blocks of one network.
struct BlockSettings {
    double leaky_slope = 0.01;
    double norm_eps = 1e-5;
    double p_drop = 0.0;
    bool training = false;
};

/// conv -> instance norm -> leaky ReLU
template <class T>
NodePtr<T> conv_block(Tape<T>& tape, const NodePtr<T>& x, const ConvBlockParams<T>& p, const BlockSettings& s);

/// conv block -> dropout -> conv block, plus the module input (residual).
template <class T>
NodePtr<T> context_module(Tape<T>& tape, const NodePtr<T>& x, const ContextParams<T>& p, const BlockSettings& s,
                          Rng* rng);

/// 3x3x3 conv block (halving channels) then 1x1x1 conv block.
template <class T>
NodePtr<T> localization_module(Tape<T>& tape, const NodePtr<T>& x, const LocalizationParams<T>& p,
                               const BlockSettings& s);

/// Squeeze-and-excitation: global max pool -> FC(C -> C/R) -> ReLU -> FC(C/R -> C)
/// -> sigmoid -> channelwise scale of x.
template <class T>
NodePtr<T> se_block(Tape<T>& tape, const NodePtr<T>& x, const SeParams<T>& p);

/// Sums segmentation logits given coarse-to-fine (each twice the previous
/// resolution), upsampling by repetition, then applies the channel softmax.
template <class T>
NodePtr<T> deep_supervision_sum(Tape<T>& tape, const std::vector<NodePtr<T>>& seg_maps_coarse_to_fine);

/// Fresh SE parameters for C channels at ratio R; throws ConfigInvalid when R does not divide C.
template <class T>
SeParams<T> make_se_params(int channels, int ratio, Rng& rng);

// ---------------------------------------------------------------- model

template <class T>
class Model {
public:
    struct Param {
        std::string name;
        NodePtr<T> node;
    };

    /// Builds the attention U-Net. Each parameter is initialised from a stream
    /// derived from (seed, parameter name).
    static Model build(const NetworkConfig& config, std::uint64_t seed);

    const NetworkConfig& config() const noexcept { return config_; }
    Mode mode() const noexcept { return mode_; }
    void set_mode(Mode m) noexcept { mode_ = m; }

    const std::vector<Param>& parameters() const noexcept { return params_; }
    NodePtr<T> find(std::string_view name) const;
    std::size_t count_parameters() const;
    void zero_grad();

    /// Class probabilities (n, out_classes, s, s, s). `rng` drives dropout and
    /// is required in train mode.
    NodePtr<T> forward(Tape<T>& tape, const NodePtr<T>& input, Rng* rng = nullptr) const;

    /// Inference-mode forward without recording gradients.
    Tensor<T> predict(const Tensor<T>& input) const;

    /// Same architecture and parameter values in another precision.
    template <class U>
    Model<U> cast() const;

    /// Replaces parameter values by name; shapes must match.
    void load_values(const std::vector<std::pair<std::string, Tensor<T>>>& values);

private:
    template <class U>
    friend class Model;
    class Builder;

    NodePtr<T> run(Tape<T>& tape, const NodePtr<T>& input, Rng* rng, Builder* builder) const;

    NetworkConfig config_;
    Mode mode_ = Mode::Inference;
    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace tofd
