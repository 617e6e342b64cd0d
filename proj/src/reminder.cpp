#include "maskmix/reminder.hpp"

#include "maskmix/data.hpp"
#include "maskmix/errors.hpp"
#include "maskmix/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>

namespace maskmix {

using nlohmann::json;

double Trace::window_end_time(std::size_t window_start) const {
    return start_time + double(window_start + kWindowLen) / sample_rate;
}

Trace load_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file " + path.string());
    std::vector<double> acc;
    std::vector<double> gyro;
    Trace trace;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        if (!j.contains("acc") || !j.contains("gyro")) {
            throw SchemaError("line " + std::to_string(line_no) + ": trace records need \"acc\" and \"gyro\"");
        }
        const double rate = j.value("sample_rate", 50.0);
        if (first) {
            trace.sample_rate = rate;
            trace.start_time = j.value("start_time", 0.0);
            first = false;
        } else if (rate != trace.sample_rate) {
            throw SchemaError("line " + std::to_string(line_no) + ": sample_rate changes within a trace");
        }
        const auto& a = j.at("acc");
        const auto& g = j.at("gyro");
        if (!a.is_array() || !g.is_array() || a.size() != g.size()) {
            throw SchemaError("line " + std::to_string(line_no) + ": acc and gyro must be arrays of equal length");
        }
        try {
            for (std::size_t i = 0; i < a.size(); ++i) {
                if (a[i].size() != 3 || g[i].size() != 3) {
                    throw SchemaError("line " + std::to_string(line_no) + ": samples must be [x, y, z]");
                }
                for (std::size_t c = 0; c < 3; ++c) {
                    acc.push_back(a[i][c].get<double>());
                    gyro.push_back(g[i][c].get<double>());
                }
            }
        } catch (const json::exception& e) {
            throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!acc.empty()) {
        const std::size_t n = acc.size() / 3;
        trace.acc = Tensor({n, 3}, std::move(acc));
        trace.gyro = Tensor({n, 3}, std::move(gyro));
    }
    return trace;
}

WindowClassifier model_classifier(MixerModel& model) {
    return [&model](const Tensor& acc, const Tensor& gyro) {
        const Tensor logits = model.predict_logits(acc, gyro);
        const std::size_t k = logits.dim(1);
        std::vector<int> out;
        for (std::size_t r = 0; r < logits.dim(0); ++r) {
            out.push_back(int(argmax(std::span<const double>(logits.raw() + r * k, k))) + 1);
        }
        return out;
    };
}

std::vector<WindowPrediction> stream_classify(const WindowClassifier& classify, const Trace& trace, std::size_t stride,
                                              std::size_t batch_size) {
    if (stride == 0) throw ConfigError("stream_classify: stride must be positive");
    std::vector<WindowPrediction> out;
    if (trace.length() < kWindowLen) {
        std::cerr << "warning: trace has " << trace.length() << " samples, fewer than one " << kWindowLen
                  << "-sample window; nothing classified\n";
        return out;
    }
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + kWindowLen <= trace.length(); s += stride) starts.push_back(s);

    const std::size_t window = kWindowLen * 3;
    for (std::size_t i = 0; i < starts.size(); i += batch_size) {
        const std::size_t b = std::min(batch_size, starts.size() - i);
        Tensor acc({b, kWindowLen, 3});
        Tensor gyro({b, kWindowLen, 3});
        for (std::size_t j = 0; j < b; ++j) {
            std::copy_n(trace.acc.raw() + starts[i + j] * 3, window, acc.raw() + j * window);
            std::copy_n(trace.gyro.raw() + starts[i + j] * 3, window, gyro.raw() + j * window);
        }
        const auto preds = classify(acc, gyro);
        if (preds.size() != b) throw DimensionError("classifier returned wrong number of predictions");
        for (std::size_t j = 0; j < b; ++j) out.push_back({starts[i + j], preds[j]});
    }
    return out;
}

std::vector<WindowPrediction> stream_classify(MixerModel& model, const Trace& trace, std::size_t stride) {
    return stream_classify(model_classifier(model), trace, stride);
}

std::string_view to_string(Decision d) { return d == Decision::Notify ? "notify" : "silent"; }

Decision update_state(ReminderState& state, const ReminderOptions& options, int predicted_action, double timestamp) {
    if (state.last_timestamp && timestamp < *state.last_timestamp) {
        throw StreamOrderError("timestamp " + std::to_string(timestamp) + " precedes previous " +
                               std::to_string(*state.last_timestamp));
    }
    state.last_timestamp = timestamp;
    Decision d = Decision::Silent;
    if (is_mask_action(predicted_action)) {
        state.last_mask_event_time = timestamp;
    } else {
        const bool mask_stale =
            !state.last_mask_event_time || timestamp - *state.last_mask_event_time > options.silence_window;
        const bool cooled = !state.last_notify_time || timestamp - *state.last_notify_time >= options.cooldown;
        if (mask_stale && cooled) {
            d = Decision::Notify;
            state.last_notify_time = timestamp;
        }
    }
    state.log.emplace_back(timestamp, d);
    return d;
}

std::vector<DecisionRecord> replay(const Trace& trace, std::span<const WindowPrediction> windows,
                                   const ReminderOptions& options) {
    ReminderState state;
    std::vector<DecisionRecord> out;
    out.reserve(windows.size());
    for (const auto& w : windows) {
        const double t = trace.window_end_time(w.window_start);
        out.push_back({t, w.window_start, w.predicted_action, update_state(state, options, w.predicted_action, t)});
    }
    return out;
}

void write_decisions_csv(const std::filesystem::path& path, std::span<const DecisionRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.precision(12);
    out << "timestamp,window_start,predicted_action,decision\n";
    for (const auto& r : records) {
        out << r.timestamp << ',' << r.window_start << ',' << r.predicted_action << ',' << to_string(r.decision)
            << '\n';
    }
}

} // namespace maskmix
