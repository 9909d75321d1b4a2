#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace gar {

// COCO-17 keypoint layout.
//
//   0 nose         5 left_shoulder   10 right_wrist   15 left_ankle
//   1 left_eye     6 right_shoulder  11 left_hip      16 right_ankle
//   2 right_eye    7 left_elbow      12 right_hip
//   3 left_ear     8 right_elbow     13 left_knee
//   4 right_ear    9 left_wrist      14 right_knee
inline constexpr std::size_t kJointCount = 17;

namespace joint {
inline constexpr std::size_t kNose = 0;
inline constexpr std::size_t kLeftEye = 1;
inline constexpr std::size_t kRightEye = 2;
inline constexpr std::size_t kLeftEar = 3;
inline constexpr std::size_t kRightEar = 4;
inline constexpr std::size_t kLeftShoulder = 5;
inline constexpr std::size_t kRightShoulder = 6;
inline constexpr std::size_t kLeftElbow = 7;
inline constexpr std::size_t kRightElbow = 8;
inline constexpr std::size_t kLeftWrist = 9;
inline constexpr std::size_t kRightWrist = 10;
inline constexpr std::size_t kLeftHip = 11;
inline constexpr std::size_t kRightHip = 12;
inline constexpr std::size_t kLeftKnee = 13;
inline constexpr std::size_t kRightKnee = 14;
inline constexpr std::size_t kLeftAnkle = 15;
inline constexpr std::size_t kRightAnkle = 16;
}  // namespace joint

inline constexpr double kDefaultFps = 30.0;

// A missing keypoint has valid == false and x == y == 0.
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  bool valid = false;

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct Skeleton {
  std::array<Keypoint, kJointCount> joints{};
  int detection_id = 0;

  std::size_t valid_count() const;

  friend bool operator==(const Skeleton&, const Skeleton&) = default;
};

struct PoseFrame {
  std::int64_t frame_index = 0;
  std::vector<Skeleton> skeletons;

  friend bool operator==(const PoseFrame&, const PoseFrame&) = default;
};

enum class BehaviorCategory {
  kRestrictedRepetitive,
  kSelfInjurious,
  kDisruptive,
  kAggressive,
  kElopement,
  kOutOfSeat,
};

inline constexpr std::array<BehaviorCategory, 6> kAllCategories = {
    BehaviorCategory::kRestrictedRepetitive, BehaviorCategory::kSelfInjurious,
    BehaviorCategory::kDisruptive,           BehaviorCategory::kAggressive,
    BehaviorCategory::kElopement,            BehaviorCategory::kOutOfSeat,
};

using CategorySet = std::set<BehaviorCategory>;

// Canonical snake_case name, e.g. "restricted_repetitive".
std::string_view category_name(BehaviorCategory category);

// Case-insensitive parse of the canonical name. Throws FormatError listing
// the valid names on failure.
BehaviorCategory parse_category(std::string_view name);

// Closed interval [onset_frame, offset_frame].
struct AnnotationEpisode {
  std::string video_id;
  std::int64_t onset_frame = 0;
  std::int64_t offset_frame = 0;
  BehaviorCategory category = BehaviorCategory::kRestrictedRepetitive;
  std::optional<std::string> subject_id;

  friend bool operator==(const AnnotationEpisode&,
                         const AnnotationEpisode&) = default;
};

struct FrameLabel {
  bool is_target = false;
  CategorySet categories;
};

FrameLabel frame_label(std::int64_t frame_index,
                       std::span<const AnnotationEpisode> episodes);

struct StreamMeta {
  std::string video_id;
  double fps = kDefaultFps;
};

// Skeletons with fewer than two valid joints are dropped while reading.
struct IngestStats {
  std::size_t frames = 0;
  std::size_t skeletons = 0;
  std::size_t dropped_degenerate = 0;
};

std::vector<PoseFrame> read_pose_stream(const std::filesystem::path& path,
                                        IngestStats* stats = nullptr);
std::vector<PoseFrame> parse_pose_stream(std::string_view text,
                                         IngestStats* stats = nullptr);
void write_pose_stream(const std::filesystem::path& path,
                       std::span<const PoseFrame> frames);
std::string format_pose_stream(std::span<const PoseFrame> frames);

std::vector<AnnotationEpisode> read_annotations(
    const std::filesystem::path& path);
std::vector<AnnotationEpisode> parse_annotations(std::string_view text);
void write_annotations(const std::filesystem::path& path,
                       std::span<const AnnotationEpisode> episodes);
std::string format_annotations(std::span<const AnnotationEpisode> episodes);

// Sidecar next to a pose stream: "<stem>.meta.json".
std::filesystem::path stream_meta_path(const std::filesystem::path& stream);
StreamMeta read_stream_meta(const std::filesystem::path& path);
void write_stream_meta(const std::filesystem::path& path,
                       const StreamMeta& meta);

// Joint array encoding shared by pose streams and track files:
// [[x, y, valid01] x 17].
nlohmann::json joints_to_json(const Skeleton& skeleton);
// Throws FormatError on a malformed array; invalid joints are zeroed.
Skeleton joints_from_json(const nlohmann::json& joints);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace gar
