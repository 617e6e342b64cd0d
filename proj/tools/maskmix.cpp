// maskmix: command-line entry point for data synthesis, training, evaluation,
// model accounting and streaming reminder replay.

#include "maskmix/data.hpp"
#include "maskmix/errors.hpp"
#include "maskmix/eval.hpp"
#include "maskmix/mixer.hpp"
#include "maskmix/reminder.hpp"
#include "maskmix/run_config.hpp"
#include "maskmix/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace maskmix;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Thrown for problems the user can fix by changing the command line.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Flags shared by subcommands that build a RunConfig. Unset flags leave the
/// config-file value alone.
struct RunFlags {
    std::string config;
    std::optional<std::string> model;
    std::optional<std::string> data;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> max_epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<std::size_t> patience;
    std::optional<double> weight_decay;

    void attach(CLI::App* app, bool training) {
        app->add_option("--config", config, "JSON run config; flags override its values")->check(CLI::ExistingFile);
        app->add_option("--model", model, "Variant name, e.g. mixer/ms/8");
        app->add_option("--seed", seed, "Base random seed");
        if (training) {
            app->add_option("--data", data, "JSON-lines segment file");
            app->add_option("--out", out, "Output directory");
            app->add_option("--epochs", max_epochs, "Maximum training epochs");
            app->add_option("--batch-size", batch_size, "Minibatch size");
            app->add_option("--lr", lr, "Initial learning rate");
            app->add_option("--patience", patience, "Early-stopping patience in epochs");
            app->add_option("--weight-decay", weight_decay, "AdamW decoupled weight decay");
        }
    }

    RunConfig resolve() const {
        RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
        if (model) c.set_variant(*model);
        if (data) c.data = *data;
        if (out) c.out = *out;
        if (seed) c.seed = *seed;
        if (max_epochs) c.schedule.max_epochs = *max_epochs;
        if (batch_size) c.schedule.batch_size = *batch_size;
        if (lr) c.schedule.initial_lr = *lr;
        if (patience) c.schedule.patience = *patience;
        if (weight_decay) c.adamw.weight_decay = *weight_decay;
        return c;
    }
};

void require_input(const fs::path& p, const char* what) {
    if (p.empty()) throw UsageError(std::string("missing ") + what + " path");
    if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " file not found: " + p.string());
}

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << j.dump(2) << '\n';
}

int run_synth(std::size_t subjects, std::size_t per_class, std::uint64_t seed, const SynthOptions& opts,
              const fs::path& out) {
    if (out.empty()) throw UsageError("missing --out path");
    if (subjects == 0) throw UsageError("--subjects must be >= 1");
    const auto segments = synth_generate(subjects, per_class, seed, opts);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_segments(out, segments);
    Manifest m;
    m.command = "synth";
    m.config = json{{"subjects", subjects},
                    {"per_class", per_class},
                    {"min_length", opts.min_length},
                    {"max_length", opts.max_length},
                    {"noise_std", opts.noise_std}};
    m.seed = seed;
    m.outputs = {out.filename().string()};
    write_manifest(out.string() + ".manifest.json", m);
    std::cout << "wrote " << segments.size() << " segments to " << out.string() << '\n';
    return 0;
}

int run_train(const RunConfig& cfg) {
    require_input(cfg.data, "data");
    if (cfg.out.empty()) throw UsageError("missing --out directory");
    const IngestResult data = ingest(cfg.data);
    if (data.normalized.empty()) throw UsageError("no usable segments in " + cfg.data.string());

    MixerModel model(cfg.model, cfg.seed);
    const TrainResult result = train(model, data.normalized, cfg.schedule, cfg.adamw, cfg.seed,
                                     [](const EpochRecord& r) {
                                         std::cerr << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.mean_loss
                                                   << '\n';
                                     });

    fs::create_directories(cfg.out);
    save_checkpoint(model, cfg.out / "model.ckpt");
    write_loss_csv(cfg.out / "loss.csv", result.history);
    write_json(cfg.out / "ingest.json", json(data.stats));
    Manifest m{"train", to_json(cfg), cfg.seed, {cfg.data}, {"model.ckpt", "loss.csv", "ingest.json"}};
    write_manifest(cfg.out / "manifest.json", m);
    std::cout << "trained " << result.history.size() << " epochs"
              << (result.stopped_early ? " (early stop)" : "") << ", final loss " << result.history.back().mean_loss
              << '\n';
    return 0;
}

int run_eval(const RunConfig& cfg, const std::string& protocol_name) {
    const Protocol protocol = [&] {
        try {
            return parse_protocol(protocol_name);
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    }();
    require_input(cfg.data, "data");
    if (cfg.out.empty()) throw UsageError("missing --out directory");
    const IngestResult data = ingest(cfg.data);
    const auto folds = protocol == Protocol::UserDependent ? make_user_dependent_folds(data.normalized)
                                                           : make_user_independent_folds(data.normalized);
    const EvalSettings settings{cfg.model, cfg.schedule, cfg.adamw, cfg.seed};
    const EvalReport report = run_folds(settings, data.normalized, folds, [](const FoldProgress& p) {
        std::cerr << "fold " << p.fold_index + 1 << "/" << p.num_folds << " accuracy " << p.metrics->accuracy << '\n';
    });

    write_report(cfg.out, report);
    write_json(cfg.out / "ingest.json", json(data.stats));
    write_json(cfg.out / "folds.json", json(folds));
    json config = to_json(cfg);
    config["protocol"] = protocol_name;
    Manifest m{"eval", config, cfg.seed, {cfg.data},
               {"report.json", "confusion.csv", "folds.csv", "folds.json", "ingest.json"}};
    write_manifest(cfg.out / "manifest.json", m);
    std::cout << to_string(protocol) << ": accuracy " << report.accuracy;
    if (report.micro.reminder) std::cout << ", reminder rate " << *report.micro.reminder;
    if (report.micro.silence) std::cout << ", silence rate " << *report.micro.silence;
    std::cout << '\n';
    return 0;
}

int run_count(const RunConfig& cfg, bool as_json) {
    const std::size_t params = count_params(cfg.model);
    const std::size_t flops = count_flops(cfg.model);
    if (as_json) {
        std::cout << json{{"model", cfg.variant}, {"params", params}, {"flops", flops}}.dump() << '\n';
    } else {
        std::printf("model   %s\nparams  %zu (%.2f M)\nflops   %zu (%.2f M)\n",
                    cfg.variant.empty() ? "custom" : cfg.variant.c_str(), params, double(params) / 1e6, flops,
                    double(flops) / 1e6);
    }
    return 0;
}

int run_stream(const RunConfig& cfg, const fs::path& model_path, const fs::path& trace_path, const fs::path& out) {
    require_input(model_path, "model checkpoint");
    require_input(trace_path, "trace");
    if (out.empty()) throw UsageError("missing --out path");
    MixerModel model = load_checkpoint(model_path);
    const Trace trace = load_trace(trace_path);
    const auto windows = stream_classify(model, trace, cfg.stride);
    const auto decisions = replay(trace, windows, cfg.reminder);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_decisions_csv(out, decisions);
    json config{{"stride", cfg.stride},
                {"silence_window", cfg.reminder.silence_window},
                {"cooldown", cfg.reminder.cooldown}};
    Manifest m{"stream", config, 0, {model_path, trace_path}, {out.filename().string()}};
    write_manifest(out.string() + ".manifest.json", m);
    std::size_t notifies = 0;
    for (const auto& d : decisions) notifies += d.decision == Decision::Notify ? 1 : 0;
    std::cout << decisions.size() << " windows, " << notifies << " notifications\n";
    return 0;
}

constexpr const char* kFormatsHelp = R"(
Files (full reference: docs/FORMATS.md):
  segments   JSON lines, one segment per line: subject_id (string), action_id
             (1..18), hand ("left"|"right"), acc and gyro ([[x,y,z], ...] of
             equal length); optional id, sample_rate (50), repeat_index,
             order_stamp.
  trace      JSON lines with acc and gyro arrays, concatenated in file order;
             labels optional; optional start_time and sample_rate.
  config     JSON object with optional keys model (variant name or object),
             schedule, adamw, stream, seed, data, out. Unknown keys are errors.
             Precedence: built-in defaults < --config file < flags.
  outputs    model.ckpt (binary checkpoint), loss.csv, ingest.json,
             report.json, confusion.csv, folds.csv, folds.json, decisions CSV,
             manifest.json (schema_version 1).
Exit status: 0 success, 1 runtime or input error, 2 usage or config error.)";

} // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Training reallocates the same large buffers every batch; keep them on the heap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"maskmix: clip-based MLP-Mixer for wrist IMU mask-wearing estimation"};
    app.footer(kFormatsHelp);
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic 18-class IMU segment file");
    std::size_t subjects = 6, per_class = 12;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    SynthOptions synth_opts;
    synth->add_option("--subjects", subjects, "Number of subjects")->capture_default_str();
    synth->add_option("--per-class", per_class, "Repeats per subject and class")->capture_default_str();
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
    synth->add_option("--min-length", synth_opts.min_length, "Shortest segment in samples")->capture_default_str();
    synth->add_option("--max-length", synth_opts.max_length, "Longest segment in samples")->capture_default_str();
    synth->add_option("--noise", synth_opts.noise_std, "Gaussian noise std")->capture_default_str();
    synth->add_option("--out", synth_out, "Output JSON-lines file")->required();

    auto* train_cmd = app.add_subcommand("train", "Train one model on a segment file");
    RunFlags train_flags;
    train_flags.attach(train_cmd, true);

    auto* eval_cmd = app.add_subcommand("eval", "Run a cross-validation protocol and write reports");
    RunFlags eval_flags;
    eval_flags.attach(eval_cmd, true);
    std::string protocol;
    eval_cmd->add_option("--protocol", protocol, "user-dependent | user-independent")->required();

    auto* count_cmd = app.add_subcommand("count", "Print parameter and FLOP counts of a model");
    RunFlags count_flags;
    count_flags.attach(count_cmd, false);
    bool count_json = false;
    count_cmd->add_flag("--json", count_json, "Emit JSON");

    auto* stream_cmd = app.add_subcommand("stream", "Replay a trace through a model and the reminder logic");
    RunFlags stream_flags;
    stream_cmd->add_option("--config", stream_flags.config, "JSON run config")->check(CLI::ExistingFile);
    std::string ckpt, trace, stream_out;
    std::optional<std::size_t> stride;
    std::optional<double> silence_window, cooldown;
    stream_cmd->add_option("--model", ckpt, "Checkpoint file")->required();
    stream_cmd->add_option("--trace", trace, "JSON-lines trace")->required();
    stream_cmd->add_option("--stride", stride, "Window stride in samples (default 64)");
    stream_cmd->add_option("--silence-window", silence_window, "Seconds of silence after a mask event (default 1800)");
    stream_cmd->add_option("--cooldown", cooldown, "Minimum seconds between reminders (default 300)");
    stream_cmd->add_option("--out", stream_out, "Decision CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(subjects, per_class, synth_seed, synth_opts, synth_out);
        if (train_cmd->parsed()) return run_train(train_flags.resolve());
        if (eval_cmd->parsed()) return run_eval(eval_flags.resolve(), protocol);
        if (count_cmd->parsed()) return run_count(count_flags.resolve(), count_json);
        if (stream_cmd->parsed()) {
            RunConfig cfg = stream_flags.resolve();
            if (stride) cfg.stride = *stride;
            if (silence_window) cfg.reminder.silence_window = *silence_window;
            if (cooldown) cfg.reminder.cooldown = *cooldown;
            return run_stream(cfg, ckpt, trace, stream_out);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: usage: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << '\n';
        return kExitUsage;
    } catch (const SchemaError& e) {
        std::cerr << "error: input: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
