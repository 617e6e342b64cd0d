#pragma once

#include "maskmix/data.hpp"
#include "maskmix/mixer.hpp"
#include "maskmix/optim.hpp"
#include "maskmix/train.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace maskmix {

/// K x K count matrix indexed [true][predicted], zero-based classes.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(std::size_t k = kNumActions) : k_(k), counts_(k * k, 0) {}

    void add(std::size_t truth, std::size_t predicted, std::size_t n = 1);
    void merge(const ConfusionMatrix& other);

    std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * k_ + predicted); }
    std::size_t classes() const { return k_; }
    std::size_t total() const;
    std::size_t trace() const;
    std::size_t row_sum(std::size_t truth) const;
    /// trace / total; NaN when empty.
    double accuracy() const;

    bool operator==(const ConfusionMatrix&) const = default;

  private:
    std::size_t k_;
    std::vector<std::size_t> counts_;
};

/// Group-level success rates. A rate is nullopt when its group has no test
/// samples.
struct BinaryRates {
    std::optional<double> reminder; // P(pred in 7..18 | true in 7..18)
    std::optional<double> silence;  // P(pred in 1..6 | true in 1..6)

    bool operator==(const BinaryRates&) const = default;
};

BinaryRates binary_reminder_metrics(const ConfusionMatrix& confusion);

/// Index of the largest element; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

struct Prediction {
    std::size_t index = 0; // into the evaluated dataset
    int truth = 0;         // 1-based action
    int predicted = 0;     // 1-based action
    std::string subject_id;
    Hand hand = Hand::Right;
};

struct FoldMetrics {
    std::size_t fold_index = 0;
    std::string held_out;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    double accuracy = 0.0;
    BinaryRates rates;
    ConfusionMatrix confusion;
    std::size_t epochs_run = 0;
    double final_train_loss = 0.0;
    std::vector<Prediction> predictions;
};

/// Classifies `indices` of `data` in batches. Throws ProtocolError on an empty
/// test set or a model whose class count is not 18.
FoldMetrics evaluate_fold(MixerModel& model, std::span<const NormalizedSegment> data,
                          std::span<const std::size_t> indices, std::size_t batch_size = 256);

struct EvalSettings {
    MixerConfig model;
    TrainSchedule schedule;
    AdamWOptions adamw;
    std::uint64_t base_seed = 0;
};

struct FoldSummary {
    std::size_t fold_index = 0;
    std::string held_out;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    double accuracy = 0.0;
    std::optional<double> reminder_rate;
    std::optional<double> silence_rate;
    std::size_t epochs_run = 0;
    double final_train_loss = 0.0;

    bool operator==(const FoldSummary&) const = default;
};

struct EvalReport {
    Protocol protocol = Protocol::UserDependent;
    std::vector<FoldSummary> folds;
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    /// Pooled over every test segment of every fold.
    BinaryRates micro;
    /// Mean of per-subject rates over subjects where the rate is defined.
    BinaryRates macro_by_subject;
    std::map<std::string, double> per_subject_accuracy;
    std::map<std::string, double> per_hand_accuracy;

    bool operator==(const EvalReport&) const = default;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

struct FoldProgress {
    std::size_t fold_index;
    std::size_t num_folds;
    const FoldMetrics* metrics;
};

using FoldCallback = std::function<void(const FoldProgress&)>;

/// Trains one model per fold (seed = base_seed + fold index), evaluates its
/// test split and aggregates.
EvalReport run_folds(const EvalSettings& settings, std::span<const NormalizedSegment> data,
                     std::span<const FoldSpec> folds, const FoldCallback& on_fold = {});
EvalReport run_protocol(const EvalSettings& settings, std::span<const NormalizedSegment> data, Protocol protocol,
                        const FoldCallback& on_fold = {});

/// Writes report.json, confusion.csv and folds.csv into `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

} // namespace maskmix
