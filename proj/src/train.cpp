#include "maskmix/train.hpp"

#include "maskmix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace maskmix {

TrainResult train(MixerModel& model, std::span<const NormalizedSegment> data, const TrainSchedule& schedule,
                  const AdamWOptions& adamw, std::uint64_t seed, const EpochCallback& on_epoch) {
    if (data.empty()) throw ProtocolError("train: empty dataset");
    const int k = int(model.config().num_classes);
    for (const auto& s : data) {
        if (s.action_id < 1 || s.action_id > k) {
            throw LabelError("train: action " + std::to_string(s.action_id) + " of " + s.parent_id +
                             " exceeds model classes " + std::to_string(k));
        }
    }
    if (schedule.batch_size == 0) throw ConfigError("train: batch_size must be positive");

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    AdamW optimizer(adamw);
    EarlyStopper stopper(schedule.patience, schedule.min_improvement);
    const auto params = model.parameters();
    TrainResult result;

    for (std::size_t epoch = 0; epoch < schedule.max_epochs; ++epoch) {
        const double lr = lr_at(schedule, epoch);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0, batch_no = 0; start < order.size(); start += schedule.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), start + schedule.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Batch batch = make_batch(data, idx);
            Tape tape;
            Var loss = softmax_cross_entropy(model.forward(tape, batch.acc, batch.gyro), batch.labels);
            const double lv = loss.value().item();
            if (!std::isfinite(lv)) {
                throw NonFiniteError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_no));
            }
            tape.backward(loss);
            optimizer.step(params, lr);
            loss_sum += lv * double(idx.size());
        }
        const EpochRecord rec{epoch, lr, loss_sum / double(order.size())};
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (stopper.update(rec.mean_loss)) {
            result.stopped_early = true;
            break;
        }
    }
    result.best_epoch = stopper.best_epoch();
    result.best_loss = stopper.best_loss();
    result.steps = optimizer.steps();
    return result;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.precision(17);
    out << "epoch,lr,mean_loss\n";
    for (const auto& r : history) out << r.epoch << ',' << r.lr << ',' << r.mean_loss << '\n';
}

} // namespace maskmix
