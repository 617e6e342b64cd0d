#pragma once

#include "maskmix/mixer.hpp"
#include "maskmix/optim.hpp"
#include "maskmix/reminder.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace maskmix {

inline constexpr int kManifestSchemaVersion = 1;

/// Everything a run needs besides its subcommand. Loaded from a JSON config
/// file; CLI flags are applied on top (flags win).
struct RunConfig {
    /// Variant name when the model came from one; empty for explicit fields.
    std::string variant = "mixer/ms/8";
    MixerConfig model = resolve_variant("mixer/ms/8");
    TrainSchedule schedule;
    AdamWOptions adamw;
    std::uint64_t seed = 0;
    std::filesystem::path data;
    std::filesystem::path out;
    std::size_t stride = 64;
    ReminderOptions reminder;

    void set_variant(const std::string& name);
};

/// Rejects unknown keys with ConfigError naming the key.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

std::string sha256_file(const std::filesystem::path& path);

struct Manifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::vector<std::filesystem::path> inputs;
    std::vector<std::string> outputs;
};

/// Writes manifest JSON (schema, command, config, seed, versions, input
/// digests, outputs) to `path`.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

const char* library_version();

} // namespace maskmix
