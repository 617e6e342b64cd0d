#pragma once

#include "maskmix/data.hpp"
#include "maskmix/mixer.hpp"
#include "maskmix/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace maskmix {

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    bool stopped_early = false;
    std::size_t best_epoch = 0;
    double best_loss = 0.0;
    std::uint64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch training with per-epoch seeded shuffling, softmax cross-entropy,
/// AdamW and the staircase learning rate. Stops on early stopping (training
/// loss) or at max_epochs. Throws NonFiniteError with epoch/batch on a
/// non-finite loss.
TrainResult train(MixerModel& model, std::span<const NormalizedSegment> data, const TrainSchedule& schedule,
                  const AdamWOptions& adamw, std::uint64_t seed, const EpochCallback& on_epoch = {});

/// CSV with header "epoch,lr,mean_loss".
void write_loss_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

} // namespace maskmix
