#include "maskmix/run_config.hpp"

#include "maskmix/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <set>

#ifndef MASKMIX_VERSION
#define MASKMIX_VERSION "0.0.0"
#endif

namespace maskmix {

using nlohmann::json;

const char* library_version() { return MASKMIX_VERSION; }

void RunConfig::set_variant(const std::string& name) {
    model = resolve_variant(name);
    variant = name;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& dst) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            dst = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

} // namespace

RunConfig run_config_from_json(const json& j) {
    check_keys(j, {"model", "schedule", "adamw", "seed", "data", "out", "stream"}, "config");
    RunConfig c;
    if (auto it = j.find("model"); it != j.end()) {
        if (it->is_string()) {
            c.set_variant(it->get<std::string>());
        } else {
            check_keys(*it,
                       {"window_len", "clip_len", "hidden_dim", "num_layers", "num_classes", "token_hidden",
                        "channel_hidden"},
                       "model");
            MixerConfig m;
            read(*it, "window_len", m.window_len);
            read(*it, "clip_len", m.clip_len);
            read(*it, "hidden_dim", m.hidden_dim);
            read(*it, "num_layers", m.num_layers);
            read(*it, "num_classes", m.num_classes);
            read(*it, "token_hidden", m.token_hidden);
            read(*it, "channel_hidden", m.channel_hidden);
            m.validate();
            c.model = m;
            c.variant.clear();
        }
    }
    if (auto it = j.find("schedule"); it != j.end()) {
        check_keys(*it,
                   {"initial_lr", "decay_factor", "decay_every", "max_epochs", "patience", "min_improvement",
                    "batch_size"},
                   "schedule");
        read(*it, "initial_lr", c.schedule.initial_lr);
        read(*it, "decay_factor", c.schedule.decay_factor);
        read(*it, "decay_every", c.schedule.decay_every);
        read(*it, "max_epochs", c.schedule.max_epochs);
        read(*it, "patience", c.schedule.patience);
        read(*it, "min_improvement", c.schedule.min_improvement);
        read(*it, "batch_size", c.schedule.batch_size);
    }
    if (auto it = j.find("adamw"); it != j.end()) {
        check_keys(*it, {"beta1", "beta2", "epsilon", "weight_decay"}, "adamw");
        read(*it, "beta1", c.adamw.beta1);
        read(*it, "beta2", c.adamw.beta2);
        read(*it, "epsilon", c.adamw.epsilon);
        read(*it, "weight_decay", c.adamw.weight_decay);
    }
    if (auto it = j.find("stream"); it != j.end()) {
        check_keys(*it, {"stride", "silence_window", "cooldown"}, "stream");
        read(*it, "stride", c.stride);
        read(*it, "silence_window", c.reminder.silence_window);
        read(*it, "cooldown", c.reminder.cooldown);
    }
    read(j, "seed", c.seed);
    std::string path;
    if (j.contains("data")) {
        read(j, "data", path);
        c.data = path;
    }
    if (j.contains("out")) {
        read(j, "out", path);
        c.out = path;
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
    json model;
    if (!c.variant.empty()) {
        model = c.variant;
    } else {
        model = json{{"window_len", c.model.window_len},     {"clip_len", c.model.clip_len},
                     {"hidden_dim", c.model.hidden_dim},     {"num_layers", c.model.num_layers},
                     {"num_classes", c.model.num_classes},   {"token_hidden", c.model.token_width()},
                     {"channel_hidden", c.model.channel_width()}};
    }
    return json{{"model", model},
                {"schedule",
                 {{"initial_lr", c.schedule.initial_lr},
                  {"decay_factor", c.schedule.decay_factor},
                  {"decay_every", c.schedule.decay_every},
                  {"max_epochs", c.schedule.max_epochs},
                  {"patience", c.schedule.patience},
                  {"min_improvement", c.schedule.min_improvement},
                  {"batch_size", c.schedule.batch_size}}},
                {"adamw",
                 {{"beta1", c.adamw.beta1},
                  {"beta2", c.adamw.beta2},
                  {"epsilon", c.adamw.epsilon},
                  {"weight_decay", c.adamw.weight_decay}}},
                {"stream",
                 {{"stride", c.stride},
                  {"silence_window", c.reminder.silence_window},
                  {"cooldown", c.reminder.cooldown}}},
                {"seed", c.seed},
                {"data", c.data.string()},
                {"out", c.out.string()}};
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), std::size_t(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex.push_back(kHex[md[i] >> 4]);
        hex.push_back(kHex[md[i] & 0xf]);
    }
    return hex;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    json inputs = json::array();
    for (const auto& p : manifest.inputs) {
        inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}, {"bytes", std::filesystem::file_size(p)}});
    }
    const json j{{"schema_version", kManifestSchemaVersion},
                 {"command", manifest.command},
                 {"config", manifest.config},
                 {"seed", manifest.seed},
                 {"versions",
                  {{"maskmix", library_version()},
                   {"checkpoint_format", kCheckpointVersion},
                   {"compiler", __VERSION__}}},
                 {"inputs", inputs},
                 {"outputs", manifest.outputs}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
}

} // namespace maskmix
