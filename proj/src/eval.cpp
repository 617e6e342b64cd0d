#include "maskmix/eval.hpp"

#include "maskmix/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>

namespace maskmix {

using nlohmann::json;

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::size_t n) {
    if (truth >= k_ || predicted >= k_) throw LabelError("confusion: class index outside [0, " + std::to_string(k_) + ")");
    counts_[truth * k_ + predicted] += n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw DimensionError("confusion: cannot merge matrices of different size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (auto c : counts_) n += c;
    return n;
}

std::size_t ConfusionMatrix::trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < k_; ++i) n += counts_[i * k_ + i];
    return n;
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < k_; ++j) n += counts_.at(truth * k_ + j);
    return n;
}

double ConfusionMatrix::accuracy() const {
    const std::size_t n = total();
    return n ? double(trace()) / double(n) : std::numeric_limits<double>::quiet_NaN();
}

BinaryRates binary_reminder_metrics(const ConfusionMatrix& confusion) {
    if (confusion.classes() != std::size_t(kNumActions)) {
        throw DimensionError("binary_reminder_metrics needs an 18x18 confusion matrix");
    }
    const std::size_t split = kLastMaskAction; // zero-based classes [0, 6) are mask-related
    std::size_t mask_total = 0, mask_ok = 0, other_total = 0, other_ok = 0;
    for (std::size_t t = 0; t < confusion.classes(); ++t) {
        for (std::size_t p = 0; p < confusion.classes(); ++p) {
            const std::size_t n = confusion.at(t, p);
            if (t < split) {
                mask_total += n;
                if (p < split) mask_ok += n;
            } else {
                other_total += n;
                if (p >= split) other_ok += n;
            }
        }
    }
    BinaryRates r;
    if (other_total) r.reminder = double(other_ok) / double(other_total);
    if (mask_total) r.silence = double(mask_ok) / double(mask_total);
    return r;
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

FoldMetrics evaluate_fold(MixerModel& model, std::span<const NormalizedSegment> data,
                          std::span<const std::size_t> indices, std::size_t batch_size) {
    if (indices.empty()) throw ProtocolError("evaluate_fold: empty test set");
    if (model.config().num_classes != std::size_t(kNumActions)) {
        throw ProtocolError("evaluate_fold: model has " + std::to_string(model.config().num_classes) +
                            " classes, expected 18");
    }
    FoldMetrics m;
    m.n_test = indices.size();
    const std::size_t k = model.config().num_classes;
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t end = std::min(indices.size(), start + batch_size);
        const auto idx = indices.subspan(start, end - start);
        const Batch batch = make_batch(data, idx);
        const Tensor logits = model.predict_logits(batch.acc, batch.gyro);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const std::size_t pred = argmax(std::span<const double>(logits.raw() + r * k, k));
            const NormalizedSegment& s = data[idx[r]];
            m.confusion.add(std::size_t(s.action_id - 1), pred);
            m.predictions.push_back({idx[r], s.action_id, int(pred) + 1, s.subject_id, s.hand});
        }
    }
    m.accuracy = m.confusion.accuracy();
    m.rates = binary_reminder_metrics(m.confusion);
    return m;
}

namespace {

std::optional<double> mean_defined(const std::vector<std::optional<double>>& xs) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& x : xs) {
        if (x) {
            sum += *x;
            ++n;
        }
    }
    if (!n) return std::nullopt;
    return sum / double(n);
}

} // namespace

EvalReport run_folds(const EvalSettings& settings, std::span<const NormalizedSegment> data,
                     std::span<const FoldSpec> folds, const FoldCallback& on_fold) {
    if (folds.empty()) throw ProtocolError("no folds to run");
    EvalReport report;
    report.protocol = folds.front().protocol;
    std::map<std::string, ConfusionMatrix> by_subject;
    std::map<std::string, std::pair<std::size_t, std::size_t>> by_hand; // correct, total

    for (const auto& fold : folds) {
        FoldMetrics m;
        try {
            if (fold.test.empty()) throw ProtocolError("empty test split");
            std::vector<NormalizedSegment> train_set;
            train_set.reserve(fold.train.size());
            for (auto i : fold.train) train_set.push_back(data[i]);
            MixerModel model(settings.model, settings.base_seed + fold.fold_index);
            const TrainResult tr = train(model, train_set, settings.schedule, settings.adamw,
                                         settings.base_seed + fold.fold_index);
            m = evaluate_fold(model, data, fold.test);
            m.epochs_run = tr.history.size();
            m.final_train_loss = tr.history.empty() ? 0.0 : tr.history.back().mean_loss;
        } catch (const std::exception& e) {
            throw ProtocolError("fold " + std::to_string(fold.fold_index) +
                                (fold.held_out.empty() ? "" : " (held out " + fold.held_out + ")") + " failed: " +
                                e.what());
        }
        m.fold_index = fold.fold_index;
        m.held_out = fold.held_out;
        m.n_train = fold.train.size();

        report.folds.push_back({m.fold_index, m.held_out, m.n_train, m.n_test, m.accuracy, m.rates.reminder,
                                m.rates.silence, m.epochs_run, m.final_train_loss});
        report.confusion.merge(m.confusion);
        for (const auto& p : m.predictions) {
            by_subject.try_emplace(p.subject_id).first->second.add(std::size_t(p.truth - 1),
                                                                   std::size_t(p.predicted - 1));
            auto& h = by_hand[std::string(to_string(p.hand))];
            h.first += p.truth == p.predicted ? 1 : 0;
            h.second += 1;
        }
        if (on_fold) on_fold({fold.fold_index, folds.size(), &m});
    }

    report.accuracy = report.confusion.accuracy();
    report.micro = binary_reminder_metrics(report.confusion);
    std::vector<std::optional<double>> reminders, silences;
    for (const auto& [subject, cm] : by_subject) {
        report.per_subject_accuracy[subject] = cm.accuracy();
        const BinaryRates r = binary_reminder_metrics(cm);
        reminders.push_back(r.reminder);
        silences.push_back(r.silence);
    }
    report.macro_by_subject = {mean_defined(reminders), mean_defined(silences)};
    for (const auto& [hand, counts] : by_hand) {
        report.per_hand_accuracy[hand] = double(counts.first) / double(counts.second);
    }
    return report;
}

EvalReport run_protocol(const EvalSettings& settings, std::span<const NormalizedSegment> data, Protocol protocol,
                        const FoldCallback& on_fold) {
    const auto folds = protocol == Protocol::UserDependent ? make_user_dependent_folds(data)
                                                           : make_user_independent_folds(data);
    return run_folds(settings, data, folds, on_fold);
}

namespace {

json opt_json(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

json rates_json(const BinaryRates& r) {
    return json{{"reminder_rate", opt_json(r.reminder)},
                {"silence_rate", opt_json(r.silence)},
                {"reminder_defined", r.reminder.has_value()},
                {"silence_defined", r.silence.has_value()}};
}

BinaryRates rates_from(const json& j) { return {opt_from(j.at("reminder_rate")), opt_from(j.at("silence_rate"))}; }

} // namespace

void to_json(json& j, const EvalReport& r) {
    json folds = json::array();
    for (const auto& f : r.folds) {
        folds.push_back({{"fold_index", f.fold_index},
                         {"held_out", f.held_out},
                         {"n_train", f.n_train},
                         {"n_test", f.n_test},
                         {"accuracy", f.accuracy},
                         {"reminder_rate", opt_json(f.reminder_rate)},
                         {"silence_rate", opt_json(f.silence_rate)},
                         {"epochs_run", f.epochs_run},
                         {"final_train_loss", f.final_train_loss}});
    }
    json confusion = json::array();
    for (std::size_t t = 0; t < r.confusion.classes(); ++t) {
        json row = json::array();
        for (std::size_t p = 0; p < r.confusion.classes(); ++p) row.push_back(r.confusion.at(t, p));
        confusion.push_back(std::move(row));
    }
    j = json{{"schema_version", 1},
             {"protocol", std::string(to_string(r.protocol))},
             {"accuracy", r.accuracy},
             {"micro", rates_json(r.micro)},
             {"macro_by_subject", rates_json(r.macro_by_subject)},
             {"folds", std::move(folds)},
             {"confusion", std::move(confusion)},
             {"per_subject_accuracy", r.per_subject_accuracy},
             {"per_hand_accuracy", r.per_hand_accuracy}};
}

void from_json(const json& j, EvalReport& r) {
    r.protocol = parse_protocol(j.at("protocol").get<std::string>());
    r.accuracy = j.at("accuracy").get<double>();
    r.micro = rates_from(j.at("micro"));
    r.macro_by_subject = rates_from(j.at("macro_by_subject"));
    r.folds.clear();
    for (const auto& f : j.at("folds")) {
        r.folds.push_back({f.at("fold_index").get<std::size_t>(), f.at("held_out").get<std::string>(),
                           f.at("n_train").get<std::size_t>(), f.at("n_test").get<std::size_t>(),
                           f.at("accuracy").get<double>(), opt_from(f.at("reminder_rate")),
                           opt_from(f.at("silence_rate")), f.at("epochs_run").get<std::size_t>(),
                           f.at("final_train_loss").get<double>()});
    }
    const auto& rows = j.at("confusion");
    r.confusion = ConfusionMatrix(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
        for (std::size_t p = 0; p < rows[t].size(); ++p) r.confusion.add(t, p, rows[t][p].get<std::size_t>());
    }
    r.per_subject_accuracy = j.at("per_subject_accuracy").get<std::map<std::string, double>>();
    r.per_hand_accuracy = j.at("per_hand_accuracy").get<std::map<std::string, double>>();
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "report.json", std::ios::trunc);
        out << json(report).dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "confusion.csv", std::ios::trunc);
        out << "true\\pred";
        for (std::size_t p = 0; p < report.confusion.classes(); ++p) out << ',' << p + 1;
        out << '\n';
        for (std::size_t t = 0; t < report.confusion.classes(); ++t) {
            out << t + 1;
            for (std::size_t p = 0; p < report.confusion.classes(); ++p) out << ',' << report.confusion.at(t, p);
            out << '\n';
        }
    }
    {
        std::ofstream out(dir / "folds.csv", std::ios::trunc);
        out.precision(17);
        out << "fold_index,held_out,n_train,n_test,accuracy,reminder_rate,silence_rate,epochs_run,final_train_loss\n";
        for (const auto& f : report.folds) {
            out << f.fold_index << ',' << f.held_out << ',' << f.n_train << ',' << f.n_test << ',' << f.accuracy
                << ',';
            if (f.reminder_rate) out << *f.reminder_rate;
            out << ',';
            if (f.silence_rate) out << *f.silence_rate;
            out << ',' << f.epochs_run << ',' << f.final_train_loss << '\n';
        }
    }
}

} // namespace maskmix
