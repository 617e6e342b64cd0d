#include "maskmix/data.hpp"

#include "maskmix/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <tuple>

namespace maskmix {

using nlohmann::json;

std::string_view to_string(Hand hand) { return hand == Hand::Left ? "left" : "right"; }

Hand parse_hand(std::string_view text) {
    if (text == "left") return Hand::Left;
    if (text == "right") return Hand::Right;
    throw SchemaError("hand must be \"left\" or \"right\", got \"" + std::string(text) + "\"");
}

std::string_view to_string(Protocol p) { return p == Protocol::UserDependent ? "user-dependent" : "user-independent"; }

Protocol parse_protocol(std::string_view text) {
    if (text == "user-dependent") return Protocol::UserDependent;
    if (text == "user-independent") return Protocol::UserIndependent;
    throw ConfigError("protocol must be user-dependent or user-independent, got \"" + std::string(text) + "\"");
}

std::vector<NormalizedSegment> normalize_length(const Segment& seg) {
    std::vector<NormalizedSegment> out;
    const std::size_t len = seg.length();
    for (std::size_t start = 0, chunk = 0; start < len; start += kWindowLen, ++chunk) {
        const std::size_t take = std::min(kWindowLen, len - start);
        if (take < kMinSegmentLen) break;
        NormalizedSegment n;
        n.parent_id = seg.id;
        n.chunk_index = chunk;
        n.valid_length = take;
        n.subject_id = seg.subject_id;
        n.action_id = seg.action_id;
        n.hand = seg.hand;
        n.sample_rate = seg.sample_rate;
        n.repeat_index = seg.repeat_index;
        n.order_stamp = seg.order_stamp;
        n.acc = Tensor({kWindowLen, 3});
        n.gyro = Tensor({kWindowLen, 3});
        std::copy_n(seg.acc.raw() + start * 3, take * 3, n.acc.raw());
        std::copy_n(seg.gyro.raw() + start * 3, take * 3, n.gyro.raw());
        out.push_back(std::move(n));
    }
    return out;
}

namespace {

Tensor parse_triplets(const json& arr, const char* field, std::size_t line_no) {
    if (!arr.is_array() || arr.empty()) {
        throw SchemaError("line " + std::to_string(line_no) + ": field \"" + field + "\" must be a non-empty array");
    }
    std::vector<double> data;
    data.reserve(arr.size() * 3);
    for (const auto& row : arr) {
        if (!row.is_array() || row.size() != 3) {
            throw SchemaError("line " + std::to_string(line_no) + ": every \"" + field + "\" sample must be [x, y, z]");
        }
        for (const auto& v : row) {
            if (!v.is_number()) {
                throw SchemaError("line " + std::to_string(line_no) + ": non-numeric value in \"" + field + "\"");
            }
            data.push_back(v.get<double>());
        }
    }
    return Tensor({arr.size(), 3}, std::move(data));
}

const json& required(const json& j, const char* key, std::size_t line_no) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw SchemaError("line " + std::to_string(line_no) + ": missing required field \"" + key + "\"");
    }
    return *it;
}

json triplets_to_json(const Tensor& t) {
    json arr = json::array();
    for (std::size_t i = 0; i < t.dim(0); ++i) arr.push_back({t.at(i, 0), t.at(i, 1), t.at(i, 2)});
    return arr;
}

} // namespace

Segment parse_segment(std::string_view line, std::size_t line_no) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw SchemaError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw SchemaError("line " + std::to_string(line_no) + ": record must be a JSON object");
    try {
        Segment s;
        s.subject_id = required(j, "subject_id", line_no).get<std::string>();
        s.action_id = required(j, "action_id", line_no).get<int>();
        if (s.action_id < 1 || s.action_id > kNumActions) {
            throw SchemaError("line " + std::to_string(line_no) + ": action_id " + std::to_string(s.action_id) +
                              " outside 1..18");
        }
        s.hand = parse_hand(required(j, "hand", line_no).get<std::string>());
        s.acc = parse_triplets(required(j, "acc", line_no), "acc", line_no);
        s.gyro = parse_triplets(required(j, "gyro", line_no), "gyro", line_no);
        if (s.acc.dim(0) != s.gyro.dim(0)) {
            throw SchemaError("line " + std::to_string(line_no) + ": acc has " + std::to_string(s.acc.dim(0)) +
                              " samples but gyro has " + std::to_string(s.gyro.dim(0)));
        }
        s.sample_rate = j.value("sample_rate", 50.0);
        s.repeat_index = j.value("repeat_index", 0);
        s.order_stamp = j.value("order_stamp", std::int64_t(line_no));
        s.id = j.value("id", s.subject_id + "/a" + std::to_string(s.action_id) + "/" + std::string(to_string(s.hand)) +
                                 "/r" + std::to_string(s.repeat_index) + "/l" + std::to_string(line_no));
        return s;
    } catch (const json::exception& e) {
        throw SchemaError("line " + std::to_string(line_no) + ": wrong field type: " + e.what());
    }
}

json segment_to_json(const Segment& seg) {
    json j;
    j["id"] = seg.id;
    j["subject_id"] = seg.subject_id;
    j["action_id"] = seg.action_id;
    j["hand"] = std::string(to_string(seg.hand));
    j["sample_rate"] = seg.sample_rate;
    j["repeat_index"] = seg.repeat_index;
    j["order_stamp"] = seg.order_stamp;
    j["acc"] = triplets_to_json(seg.acc);
    j["gyro"] = triplets_to_json(seg.gyro);
    return j;
}

std::vector<NormalizedSegment> normalize_all(std::span<const Segment> segments, IngestStats& stats) {
    std::vector<NormalizedSegment> out;
    for (const auto& seg : segments) {
        ++stats.raw_segments;
        ++stats.per_subject[seg.subject_id];
        ++stats.per_action[seg.action_id];
        ++stats.per_hand[std::string(to_string(seg.hand))];
        auto chunks = normalize_length(seg);
        const std::size_t attempted = (seg.length() + kWindowLen - 1) / kWindowLen;
        stats.discarded_chunks += attempted - chunks.size();
        if (chunks.empty()) ++stats.discarded_segments;
        for (auto& c : chunks) out.push_back(std::move(c));
    }
    stats.normalized_segments += out.size();
    return out;
}

IngestResult ingest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open segment file " + path.string());
    IngestResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        result.segments.push_back(parse_segment(line, line_no));
    }
    result.normalized = normalize_all(result.segments, result.stats);
    return result;
}

void write_segments(const std::filesystem::path& path, std::span<const Segment> segments) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& s : segments) out << segment_to_json(s).dump() << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void to_json(json& j, const IngestStats& s) {
    json actions = json::object();
    for (const auto& [k, v] : s.per_action) actions[std::to_string(k)] = v;
    j = json{{"raw_segments", s.raw_segments},
             {"discarded_segments", s.discarded_segments},
             {"discarded_chunks", s.discarded_chunks},
             {"normalized_segments", s.normalized_segments},
             {"per_subject", s.per_subject},
             {"per_action", actions},
             {"per_hand", s.per_hand}};
}

void from_json(const json& j, IngestStats& s) {
    s.raw_segments = j.at("raw_segments").get<std::size_t>();
    s.discarded_segments = j.at("discarded_segments").get<std::size_t>();
    s.discarded_chunks = j.at("discarded_chunks").get<std::size_t>();
    s.normalized_segments = j.at("normalized_segments").get<std::size_t>();
    s.per_subject = j.at("per_subject").get<std::map<std::string, std::size_t>>();
    s.per_action.clear();
    for (const auto& [k, v] : j.at("per_action").items()) s.per_action[std::stoi(k)] = v.get<std::size_t>();
    s.per_hand = j.at("per_hand").get<std::map<std::string, std::size_t>>();
}

Batch make_batch(std::span<const NormalizedSegment> data, std::span<const std::size_t> indices) {
    const std::size_t b = indices.size();
    Batch batch{Tensor({b, kWindowLen, 3}), Tensor({b, kWindowLen, 3}), {}};
    batch.labels.reserve(b);
    const std::size_t stride = kWindowLen * 3;
    for (std::size_t i = 0; i < b; ++i) {
        const NormalizedSegment& s = data[indices[i]];
        std::copy_n(s.acc.raw(), stride, batch.acc.raw() + i * stride);
        std::copy_n(s.gyro.raw(), stride, batch.gyro.raw() + i * stride);
        batch.labels.push_back(s.action_id - 1);
    }
    return batch;
}

void to_json(json& j, const FoldSpec& f) {
    j = json{{"protocol", std::string(to_string(f.protocol))},
             {"fold_index", f.fold_index},
             {"held_out", f.held_out},
             {"train", f.train},
             {"test", f.test}};
}

void from_json(const json& j, FoldSpec& f) {
    f.protocol = parse_protocol(j.at("protocol").get<std::string>());
    f.fold_index = j.at("fold_index").get<std::size_t>();
    f.held_out = j.at("held_out").get<std::string>();
    f.train = j.at("train").get<std::vector<std::size_t>>();
    f.test = j.at("test").get<std::vector<std::size_t>>();
}

std::vector<FoldSpec> make_user_dependent_folds(std::span<const NormalizedSegment> data) {
    // Parents per (subject, action), keyed by their temporal order.
    std::map<std::pair<std::string, int>, std::set<std::pair<std::int64_t, std::string>>> parents;
    for (const auto& s : data) parents[{s.subject_id, s.action_id}].insert({s.order_stamp, s.parent_id});

    std::map<std::string, std::size_t> group_of;
    for (const auto& [key, ordered] : parents) {
        const std::size_t n = ordered.size();
        const std::size_t base = n / kUserDependentGroups;
        const std::size_t extra = n % kUserDependentGroups;
        auto it = ordered.begin();
        for (std::size_t g = 0; g < kUserDependentGroups; ++g) {
            const std::size_t size = base + (g < extra ? 1 : 0);
            for (std::size_t i = 0; i < size; ++i, ++it) group_of[it->second] = g;
        }
    }

    std::vector<FoldSpec> folds(kUserDependentGroups);
    for (std::size_t k = 0; k < folds.size(); ++k) {
        folds[k].protocol = Protocol::UserDependent;
        folds[k].fold_index = k;
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t g = group_of.at(data[i].parent_id);
        for (std::size_t k = 0; k < folds.size(); ++k) (k == g ? folds[k].test : folds[k].train).push_back(i);
    }
    return folds;
}

std::vector<FoldSpec> make_user_independent_folds(std::span<const NormalizedSegment> data) {
    std::set<std::string> subjects;
    for (const auto& s : data) subjects.insert(s.subject_id);
    if (subjects.size() < 2) {
        throw ProtocolError("user-independent protocol needs at least 2 subjects, found " +
                            std::to_string(subjects.size()));
    }
    std::vector<FoldSpec> folds;
    for (const auto& subject : subjects) {
        FoldSpec f;
        f.protocol = Protocol::UserIndependent;
        f.fold_index = folds.size();
        f.held_out = subject;
        for (std::size_t i = 0; i < data.size(); ++i) (data[i].subject_id == subject ? f.test : f.train).push_back(i);
        folds.push_back(std::move(f));
    }
    return folds;
}

double synth_class_frequency(int action_id) { return 0.6 + 0.3 * double(action_id - 1); }

namespace {

// Fixed per-class structure, independent of the caller's seed.
struct ClassShape {
    double freq_hz;
    double envelope_hz;
    std::array<double, 6> gain;
    std::array<double, 6> phase;
};

std::vector<ClassShape> class_shapes() {
    std::vector<ClassShape> shapes;
    std::mt19937_64 rng(0x5eed'c1a5'5e5full);
    std::uniform_real_distribution<double> mag(0.4, 1.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::bernoulli_distribution sign(0.5);
    for (int k = 1; k <= kNumActions; ++k) {
        ClassShape s{};
        s.freq_hz = synth_class_frequency(k);
        s.envelope_hz = 0.15 + 0.02 * double(k);
        for (std::size_t ch = 0; ch < 6; ++ch) {
            s.gain[ch] = mag(rng) * (sign(rng) ? 1.0 : -1.0);
            s.phase[ch] = angle(rng);
        }
        shapes.push_back(s);
    }
    return shapes;
}

} // namespace

std::vector<Segment> synth_generate(std::size_t num_subjects, std::size_t per_class, std::uint64_t seed,
                                    const SynthOptions& options) {
    if (per_class == 0) throw ConfigError("synth_generate: per_class must be >= 1");
    if (options.min_length == 0 || options.min_length > options.max_length) {
        throw ConfigError("synth_generate: invalid length range");
    }
    const auto shapes = class_shapes();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(0.8, 1.2);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> jitter(0.97, 1.03);
    std::uniform_int_distribution<std::size_t> length(options.min_length, options.max_length);
    std::normal_distribution<double> noise(0.0, options.noise_std);

    std::vector<Segment> out;
    std::int64_t stamp = 0;
    for (std::size_t subj = 0; subj < num_subjects; ++subj) {
        char name[32];
        std::snprintf(name, sizeof name, "S%02zu", subj + 1);
        const double subj_amp = amp(rng);
        const double subj_phase = angle(rng);
        const double subj_freq = jitter(rng);
        for (int action = 1; action <= kNumActions; ++action) {
            const ClassShape& shape = shapes[std::size_t(action - 1)];
            for (std::size_t rep = 0; rep < per_class; ++rep) {
                Segment s;
                s.subject_id = name;
                s.action_id = action;
                s.hand = rep % 2 == 0 ? Hand::Right : Hand::Left;
                s.repeat_index = int(rep);
                s.order_stamp = stamp++;
                s.id = s.subject_id + "/a" + std::to_string(action) + "/r" + std::to_string(rep);
                const std::size_t len = length(rng);
                const double rep_phase = angle(rng);
                s.acc = Tensor({len, 3});
                s.gyro = Tensor({len, 3});
                const double w = 2.0 * std::numbers::pi * shape.freq_hz * subj_freq;
                const double we = 2.0 * std::numbers::pi * shape.envelope_hz;
                for (std::size_t t = 0; t < len; ++t) {
                    const double sec = double(t) / s.sample_rate;
                    const double env = 1.0 + 0.4 * std::sin(we * sec + rep_phase);
                    for (std::size_t ch = 0; ch < 6; ++ch) {
                        const double v = subj_amp * shape.gain[ch] * env *
                                             std::sin(w * sec + shape.phase[ch] + subj_phase + rep_phase) +
                                         noise(rng);
                        (ch < 3 ? s.acc.at(t, ch) : s.gyro.at(t, ch - 3)) = v;
                    }
                }
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

} // namespace maskmix
