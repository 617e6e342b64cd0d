#include "maskmix/mixer.hpp"

#include "maskmix/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <random>
#include <regex>

namespace maskmix {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void MixerConfig::validate() const {
    if (window_len == 0 || clip_len == 0 || hidden_dim == 0 || num_layers == 0 || num_classes == 0) {
        throw ConfigError("mixer config: window_len, clip_len, hidden_dim, num_layers, num_classes must be positive");
    }
    if (window_len % clip_len != 0) {
        throw ConfigError("mixer config: window_len " + std::to_string(window_len) + " not divisible by clip_len " +
                          std::to_string(clip_len));
    }
}

namespace {

struct Scale {
    const char* tag;
    std::size_t layers;
    std::size_t dim;
};

constexpr std::array<Scale, 3> kScales{{{"es", 2, 128}, {"ms", 4, 256}, {"s", 8, 512}}};
constexpr std::array<std::size_t, 3> kClipLens{32, 16, 8};

} // namespace

std::vector<std::string> variant_names() {
    std::vector<std::string> names;
    for (const auto& s : kScales) {
        for (auto len : kClipLens) names.push_back(std::string("mixer/") + s.tag + "/" + std::to_string(len));
    }
    return names;
}

MixerConfig resolve_variant(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    static const std::regex pattern(R"(mixer/(es|ms|s)/(32|16|8))");
    std::smatch m;
    if (!std::regex_match(lower, m, pattern)) {
        std::string valid;
        for (const auto& v : variant_names()) valid += (valid.empty() ? "" : ", ") + v;
        throw ConfigError("unknown model variant '" + std::string(name) + "'; valid variants: " + valid);
    }
    MixerConfig cfg;
    for (const auto& s : kScales) {
        if (m[1] == s.tag) {
            cfg.num_layers = s.layers;
            cfg.hidden_dim = s.dim;
        }
    }
    cfg.clip_len = std::stoul(m[2]);
    return cfg;
}

std::size_t count_params(const MixerConfig& config) {
    config.validate();
    const std::size_t c = config.num_clips();
    const std::size_t h = config.hidden_dim;
    const std::size_t tw = config.token_width();
    const std::size_t cw = config.channel_width();
    const std::size_t embed = config.clip_features() * h;
    const std::size_t token = 2 * h + (c * tw + tw) + (tw * c + c);
    const std::size_t channel = 2 * h + (h * cw + cw) + (cw * h + h);
    const std::size_t head = h * config.num_classes + config.num_classes;
    return embed + config.num_layers * (token + channel) + head;
}

std::size_t count_flops(const MixerConfig& config) {
    config.validate();
    const std::size_t c = config.num_clips();
    const std::size_t h = config.hidden_dim;
    const std::size_t tw = config.token_width();
    const std::size_t cw = config.channel_width();
    const std::size_t embed = c * config.clip_features() * h;
    const std::size_t token = h * (c * tw + tw * c);
    const std::size_t channel = c * (h * cw + cw * h);
    const std::size_t head = h * config.num_classes;
    return embed + config.num_layers * (token + channel) + head;
}

MixerModel::MixerModel(const MixerConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    config_.token_hidden = config_.token_width();
    config_.channel_hidden = config_.channel_width();
    const std::size_t c = config_.num_clips();
    const std::size_t h = config_.hidden_dim;
    embed_ = LinearLayer("embed", config_.clip_features(), h, false);
    blocks_.reserve(config_.num_layers);
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        blocks_.push_back(MixerBlock{
            LayerNormLayer(p + "token_norm", h),
            LinearLayer(p + "token_fc1", c, config_.token_width(), true),
            LinearLayer(p + "token_fc2", config_.token_width(), c, true),
            LayerNormLayer(p + "channel_norm", h),
            LinearLayer(p + "channel_fc1", h, config_.channel_width(), true),
            LinearLayer(p + "channel_fc2", config_.channel_width(), h, true),
        });
    }
    head_ = LinearLayer("head", h, config_.num_classes, true);

    std::mt19937_64 rng(seed);
    embed_.init(rng);
    for (auto& b : blocks_) {
        b.token_fc1.init(rng);
        b.token_fc2.init(rng);
        b.channel_fc1.init(rng);
        b.channel_fc2.init(rng);
    }
    head_.init(rng);
}

Tensor MixerModel::clip_inputs(const Tensor& acc, const Tensor& gyro) const {
    const std::size_t L = config_.window_len;
    if (acc.rank() != 3 || acc.dim(1) != L || acc.dim(2) != 3) {
        throw DimensionError("acc must be [B x " + std::to_string(L) + " x 3], got " + shape_str(acc.shape()));
    }
    if (gyro.shape() != acc.shape()) {
        throw DimensionError("gyro shape " + shape_str(gyro.shape()) + " differs from acc " + shape_str(acc.shape()));
    }
    const std::size_t batch = acc.dim(0);
    const std::size_t c = config_.num_clips();
    // Row-major [B, L, 6] has the same layout as [B, c, clip_len * 6].
    Tensor out({batch, c, config_.clip_features()});
    double* dst = out.raw();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < L; ++t) {
            for (std::size_t ch = 0; ch < 3; ++ch) *dst++ = acc.at(b, t, ch);
            for (std::size_t ch = 0; ch < 3; ++ch) *dst++ = gyro.at(b, t, ch);
        }
    }
    return out;
}

Var MixerModel::cut_and_embed(Tape& tape, const Tensor& acc, const Tensor& gyro) {
    return embed_.forward(tape, tape.constant(clip_inputs(acc, gyro)));
}

Var MixerModel::mixer_layer_forward(Tape& tape, const Var& e, std::size_t layer) {
    const Shape expected{e.shape().empty() ? 0 : e.shape()[0], config_.num_clips(), config_.hidden_dim};
    if (e.shape() != expected) {
        throw DimensionError("mixer layer input " + shape_str(e.shape()) + ", expected " + shape_str(expected));
    }
    MixerBlock& b = blocks_.at(layer);

    // Inter-clip mixing: MLP over the clip axis for every feature column.
    Var t = ops::transpose(b.token_norm.forward(tape, e));
    t = b.token_fc2.forward(tape, gelu(b.token_fc1.forward(tape, t)));
    Var u = ops::add(e, ops::transpose(t));

    // Intra-clip mixing: MLP over features for every clip row.
    Var v = b.channel_norm.forward(tape, u);
    v = b.channel_fc2.forward(tape, gelu(b.channel_fc1.forward(tape, v)));
    return ops::add(u, v);
}

Var MixerModel::forward(Tape& tape, const Tensor& acc, const Tensor& gyro) {
    Var x = cut_and_embed(tape, acc, gyro);
    for (std::size_t i = 0; i < blocks_.size(); ++i) x = mixer_layer_forward(tape, x, i);
    return head_.forward(tape, global_avg_pool(x));
}

Tensor MixerModel::predict_logits(const Tensor& acc, const Tensor& gyro) {
    Tape tape;
    return forward(tape, acc, gyro).value();
}

std::vector<Parameter*> MixerModel::parameters() {
    std::vector<Parameter*> out;
    embed_.collect(out);
    for (auto& b : blocks_) {
        b.token_norm.collect(out);
        b.token_fc1.collect(out);
        b.token_fc2.collect(out);
        b.channel_norm.collect(out);
        b.channel_fc1.collect(out);
        b.channel_fc2.collect(out);
    }
    head_.collect(out);
    return out;
}

std::vector<const Parameter*> MixerModel::parameters() const {
    auto mut = const_cast<MixerModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::size_t MixerModel::num_parameters() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
}

// Checkpoint layout (little-endian):
//   8 bytes  magic "MXMIXCKP"
//   u32      format version
//   u32      number of config fields (7)
//   u64 x 7  window_len, clip_len, hidden_dim, num_layers, num_classes,
//            token width, channel width
//   u64      number of parameter tensors
//   per tensor: u64 element count, then that many f64 values
namespace {

constexpr std::array<char, 8> kMagic{'M', 'X', 'M', 'I', 'X', 'C', 'K', 'P'};
constexpr std::uint32_t kConfigFields = 7;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw CheckpointError(CheckpointError::Kind::Truncated, std::string("checkpoint truncated while reading ") + what);
    }
    return v;
}

} // namespace

void save_checkpoint(const MixerModel& model, const std::filesystem::path& path) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + tmp.string() + " for writing");
        os.write(kMagic.data(), kMagic.size());
        put<std::uint32_t>(os, kCheckpointVersion);
        put<std::uint32_t>(os, kConfigFields);
        const MixerConfig& c = model.config();
        for (std::uint64_t v : {c.window_len, c.clip_len, c.hidden_dim, c.num_layers, c.num_classes, c.token_width(),
                                c.channel_width()}) {
            put<std::uint64_t>(os, v);
        }
        const auto params = model.parameters();
        put<std::uint64_t>(os, params.size());
        for (const auto* p : params) {
            put<std::uint64_t>(os, p->value.size());
            os.write(reinterpret_cast<const char*>(p->value.raw()), std::streamsize(p->value.size() * sizeof(double)));
        }
        if (!os) throw CheckpointError(CheckpointError::Kind::Io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

MixerModel load_checkpoint(const std::filesystem::path& path) {
    using Kind = CheckpointError::Kind;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(Kind::Io, "cannot open checkpoint " + path.string());

    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size())) throw CheckpointError(Kind::Truncated, "checkpoint truncated in magic");
    if (magic != kMagic) throw CheckpointError(Kind::BadMagic, path.string() + " is not a mixer checkpoint");
    const auto version = get<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(Kind::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                                         ", this build reads version " +
                                                         std::to_string(kCheckpointVersion));
    }
    const auto fields = get<std::uint32_t>(is, "config field count");
    if (fields != kConfigFields) {
        throw CheckpointError(Kind::LengthMismatch, "config block has " + std::to_string(fields) + " fields, expected " +
                                                        std::to_string(kConfigFields));
    }
    std::array<std::uint64_t, kConfigFields> v{};
    for (auto& x : v) x = get<std::uint64_t>(is, "config block");
    MixerConfig cfg;
    cfg.window_len = v[0];
    cfg.clip_len = v[1];
    cfg.hidden_dim = v[2];
    cfg.num_layers = v[3];
    cfg.num_classes = v[4];
    cfg.token_hidden = v[5];
    cfg.channel_hidden = v[6];
    // Reject absurd sizes before allocating anything.
    constexpr std::uint64_t kLimit = 1u << 20;
    for (auto x : v) {
        if (x == 0 || x > kLimit) throw CheckpointError(Kind::BadConfig, "checkpoint config field out of range");
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError(Kind::BadConfig, e.what());
    }

    MixerModel model(cfg, 0);
    auto params = model.parameters();
    const auto count = get<std::uint64_t>(is, "tensor count");
    if (count != params.size()) {
        throw CheckpointError(Kind::LengthMismatch, "checkpoint holds " + std::to_string(count) +
                                                        " tensors, config implies " + std::to_string(params.size()));
    }
    for (auto* p : params) {
        const auto len = get<std::uint64_t>(is, "tensor length");
        if (len != p->value.size()) {
            throw CheckpointError(Kind::LengthMismatch, "tensor " + p->name + " has length " + std::to_string(len) +
                                                            ", config implies " + std::to_string(p->value.size()));
        }
        if (!is.read(reinterpret_cast<char*>(p->value.raw()), std::streamsize(len * sizeof(double)))) {
            throw CheckpointError(Kind::Truncated, "checkpoint truncated inside tensor " + p->name);
        }
    }
    if (is.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError(Kind::LengthMismatch, "trailing bytes after last tensor");
    }
    return model;
}

} // namespace maskmix
