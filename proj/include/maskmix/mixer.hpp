#pragma once

#include "maskmix/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace maskmix {

/// Architecture hyperparameters of the clip-based MLP-Mixer.
struct MixerConfig {
    static constexpr std::size_t kChannels = 6; // accelerometer xyz + gyroscope xyz

    std::size_t window_len = 128;
    std::size_t clip_len = 8;
    std::size_t hidden_dim = 256;
    std::size_t num_layers = 4;
    std::size_t num_classes = 18;
    /// Hidden width of the inter-clip MLP; 0 selects 4 * num_clips.
    std::size_t token_hidden = 0;
    /// Hidden width of the intra-clip MLP; 0 selects 4 * hidden_dim.
    std::size_t channel_hidden = 0;

    std::size_t num_clips() const { return window_len / clip_len; }
    std::size_t token_width() const { return token_hidden ? token_hidden : 4 * num_clips(); }
    std::size_t channel_width() const { return channel_hidden ? channel_hidden : 4 * hidden_dim; }
    std::size_t clip_features() const { return kChannels * clip_len; }

    /// Throws ConfigError when the window is not evenly divisible into clips
    /// or any extent is zero.
    void validate() const;

    bool operator==(const MixerConfig&) const = default;
};

/// The nine named variants: mixer/{es,ms,s}/{32,16,8}.
MixerConfig resolve_variant(std::string_view name);
std::vector<std::string> variant_names();

/// Exact trainable parameter count for `config`.
std::size_t count_params(const MixerConfig& config);
/// Multiply-accumulates of one forward pass on one window; LN, GELU,
/// residual adds and pooling are not counted.
std::size_t count_flops(const MixerConfig& config);

struct MixerBlock {
    LayerNormLayer token_norm;
    LinearLayer token_fc1;
    LinearLayer token_fc2;
    LayerNormLayer channel_norm;
    LinearLayer channel_fc1;
    LinearLayer channel_fc2;
};

class MixerModel {
  public:
    MixerModel(const MixerConfig& config, std::uint64_t seed);

    const MixerConfig& config() const { return config_; }

    /// Packs acc/gyro [B x L x 3] into per-clip rows [B x c x 6*clip_len];
    /// within a clip, sample t occupies columns 6t..6t+5 (acc xyz, gyro xyz).
    Tensor clip_inputs(const Tensor& acc, const Tensor& gyro) const;

    /// Per-clip bias-free embedding, [B x c x h].
    Var cut_and_embed(Tape& tape, const Tensor& acc, const Tensor& gyro);
    Var mixer_layer_forward(Tape& tape, const Var& e, std::size_t layer);
    /// Logits [B x K].
    Var forward(Tape& tape, const Tensor& acc, const Tensor& gyro);
    /// Inference on a throwaway tape.
    Tensor predict_logits(const Tensor& acc, const Tensor& gyro);

    /// Fixed order: embedding, blocks in order (token norm, fc1, fc2, channel
    /// norm, fc1, fc2; weight before bias), head weight, head bias.
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::size_t num_parameters() const;

    LinearLayer& embed() { return embed_; }
    MixerBlock& block(std::size_t i) { return blocks_.at(i); }
    LinearLayer& head() { return head_; }

  private:
    MixerConfig config_;
    LinearLayer embed_;
    std::vector<MixerBlock> blocks_;
    LinearLayer head_;
};

/// Checkpoint load failure; `kind` distinguishes the failure modes.
class CheckpointError : public std::runtime_error {
  public:
    enum class Kind { Io, BadMagic, VersionMismatch, Truncated, LengthMismatch, BadConfig };

    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const MixerModel& model, const std::filesystem::path& path);
MixerModel load_checkpoint(const std::filesystem::path& path);

} // namespace maskmix
