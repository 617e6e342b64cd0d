#pragma once

#include "maskmix/mixer.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace maskmix {

/// A continuous six-channel recording; acc and gyro are [N x 3].
struct Trace {
    double sample_rate = 50.0;
    /// Timestamp of sample 0 in seconds.
    double start_time = 0.0;
    Tensor acc;
    Tensor gyro;

    std::size_t length() const { return acc.rank() ? acc.dim(0) : 0; }
    /// Time at which the window starting at `window_start` is complete.
    double window_end_time(std::size_t window_start) const;
};

/// Concatenates the records of a JSON-lines file (segment schema, labels
/// optional) into one trace. `start_time` may be given on the first record.
Trace load_trace(const std::filesystem::path& path);

struct WindowPrediction {
    std::size_t window_start = 0;
    int predicted_action = 0; // 1-based

    bool operator==(const WindowPrediction&) const = default;
};

/// Maps a batch of windows (acc, gyro [B x 128 x 3]) to 1-based actions.
using WindowClassifier = std::function<std::vector<int>(const Tensor& acc, const Tensor& gyro)>;

WindowClassifier model_classifier(MixerModel& model);

/// Classifies every full 128-sample window at the given stride; partial tail
/// windows are skipped. A trace shorter than one window yields no windows
/// and a warning on stderr.
std::vector<WindowPrediction> stream_classify(const WindowClassifier& classify, const Trace& trace, std::size_t stride,
                                              std::size_t batch_size = 64);
std::vector<WindowPrediction> stream_classify(MixerModel& model, const Trace& trace, std::size_t stride);

enum class Decision { Silent, Notify };

std::string_view to_string(Decision d);

struct ReminderOptions {
    /// Seconds after a mask-related detection during which no reminder fires.
    double silence_window = 1800.0;
    /// Minimum seconds between two reminders.
    double cooldown = 300.0;
};

struct ReminderState {
    std::optional<double> last_mask_event_time;
    std::optional<double> last_notify_time;
    std::optional<double> last_timestamp;
    std::vector<std::pair<double, Decision>> log;
};

/// Silent/notify state machine driven by window predictions.
///
/// Mask-related predictions (1..6) refresh the silence window. Any other
/// prediction notifies when no mask event happened within the silence window
/// and the cool-down since the last reminder has elapsed. Throws
/// StreamOrderError when `timestamp` goes backwards.
Decision update_state(ReminderState& state, const ReminderOptions& options, int predicted_action, double timestamp);

struct DecisionRecord {
    double timestamp = 0.0;
    std::size_t window_start = 0;
    int predicted_action = 0;
    Decision decision = Decision::Silent;
};

/// Runs the state machine over window predictions, stamping each with the
/// window's end time.
std::vector<DecisionRecord> replay(const Trace& trace, std::span<const WindowPrediction> windows,
                                   const ReminderOptions& options);

/// CSV with header "timestamp,window_start,predicted_action,decision".
void write_decisions_csv(const std::filesystem::path& path, std::span<const DecisionRecord> records);

} // namespace maskmix
