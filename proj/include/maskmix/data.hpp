#pragma once

#include "maskmix/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace maskmix {

inline constexpr std::size_t kWindowLen = 128;
inline constexpr std::size_t kMinSegmentLen = 50;
inline constexpr int kNumActions = 18;
/// Actions 1..6 are mask-related; 7..18 are interfering actions.
inline constexpr int kLastMaskAction = 6;

inline bool is_mask_action(int action_id) { return action_id >= 1 && action_id <= kLastMaskAction; }

enum class Hand { Left, Right };

std::string_view to_string(Hand hand);
Hand parse_hand(std::string_view text);

/// One labeled IMU recording; acc and gyro are [L x 3].
struct Segment {
    std::string id;
    std::string subject_id;
    int action_id = 1;
    Hand hand = Hand::Right;
    double sample_rate = 50.0;
    Tensor acc;
    Tensor gyro;
    int repeat_index = 0;
    std::int64_t order_stamp = 0;

    std::size_t length() const { return acc.rank() ? acc.dim(0) : 0; }
};

/// A 128-sample window cut from a Segment, zero-padded at the tail.
struct NormalizedSegment {
    std::string parent_id;
    std::size_t chunk_index = 0;
    /// Samples taken from the parent; indices >= valid_length are padding.
    std::size_t valid_length = 0;
    std::string subject_id;
    int action_id = 1;
    Hand hand = Hand::Right;
    double sample_rate = 50.0;
    Tensor acc;
    Tensor gyro;
    int repeat_index = 0;
    std::int64_t order_stamp = 0;
};

/// Splits into non-overlapping 128-sample chunks; a chunk shorter than 50 is
/// dropped, a chunk of 50..128 samples is zero-padded to 128.
std::vector<NormalizedSegment> normalize_length(const Segment& seg);

struct IngestStats {
    std::size_t raw_segments = 0;
    /// Raw segments that yielded no window at all.
    std::size_t discarded_segments = 0;
    /// Chunks under the minimum length, including whole short segments.
    std::size_t discarded_chunks = 0;
    std::size_t normalized_segments = 0;
    std::map<std::string, std::size_t> per_subject;
    std::map<int, std::size_t> per_action;
    std::map<std::string, std::size_t> per_hand;

    bool operator==(const IngestStats&) const = default;
};

struct IngestResult {
    std::vector<Segment> segments;
    std::vector<NormalizedSegment> normalized;
    IngestStats stats;
};

/// Parses one JSON-lines record. `line_no` is 1-based and used in errors.
Segment parse_segment(std::string_view line, std::size_t line_no);
nlohmann::json segment_to_json(const Segment& seg);

/// Reads a JSON-lines segment file and normalizes every segment.
IngestResult ingest(const std::filesystem::path& path);
/// Normalizes already-parsed segments, filling `stats`.
std::vector<NormalizedSegment> normalize_all(std::span<const Segment> segments, IngestStats& stats);
void write_segments(const std::filesystem::path& path, std::span<const Segment> segments);

void to_json(nlohmann::json& j, const IngestStats& s);
void from_json(const nlohmann::json& j, IngestStats& s);

/// Batched model inputs for a selection of windows.
struct Batch {
    Tensor acc;  // [B x 128 x 3]
    Tensor gyro; // [B x 128 x 3]
    std::vector<int> labels; // zero-based
};

Batch make_batch(std::span<const NormalizedSegment> data, std::span<const std::size_t> indices);

enum class Protocol { UserDependent, UserIndependent };

std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view text);

/// Train/test split over indices into a normalized dataset.
struct FoldSpec {
    Protocol protocol = Protocol::UserDependent;
    std::size_t fold_index = 0;
    /// Held-out subject for user-independent folds, empty otherwise.
    std::string held_out;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;

    bool operator==(const FoldSpec&) const = default;
};

void to_json(nlohmann::json& j, const FoldSpec& f);
void from_json(const nlohmann::json& j, FoldSpec& f);

inline constexpr std::size_t kUserDependentGroups = 5;

/// Per (subject, action), parents are ordered by order_stamp and split into
/// five consecutive groups; fold k tests on group k. Chunks follow their
/// parent's group.
std::vector<FoldSpec> make_user_dependent_folds(std::span<const NormalizedSegment> data);
/// Leave-one-subject-out; subjects in lexicographic order.
std::vector<FoldSpec> make_user_independent_folds(std::span<const NormalizedSegment> data);

struct SynthOptions {
    std::size_t min_length = 60;
    std::size_t max_length = 300;
    double noise_std = 0.15;
};

/// Desk-scale stand-in for recorded data: 18 classes of six-channel signals.
///
/// Class k oscillates at 0.6 + 0.3k Hz with a fixed per-class channel gain
/// pattern and a slow amplitude envelope; subjects scale amplitude, shift
/// phase and jitter frequency; every repeat adds Gaussian noise. Subjects
/// alternate hands between repeats.
std::vector<Segment> synth_generate(std::size_t num_subjects, std::size_t per_class, std::uint64_t seed,
                                    const SynthOptions& options = {});

/// Base frequency of synthetic class `action_id` in Hz.
double synth_class_frequency(int action_id);

} // namespace maskmix
