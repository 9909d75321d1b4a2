#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gar/core_types.hpp"
#include "gar/tracking.hpp"

namespace gar {

enum class LabelTask { kDetect, kPredict };

std::string_view task_name(LabelTask task);
LabelTask parse_task(std::string_view name);

struct WindowConfig {
  double window_seconds = 4.0;
  std::int64_t stride_frames = 30;
  LabelTask task = LabelTask::kDetect;
  double horizon_seconds = 180.0;
  // Minimum fraction of the window a track must cover to enter it.
  double min_coverage = 0.25;
};

// Frames per window; throws ConfigError below two frames.
std::size_t window_frames(const WindowConfig& cfg, double fps);

// Tracks of one video plus the frame extent of its pose stream.
struct VideoTracks {
  std::string video_id;
  double fps = kDefaultFps;
  std::int64_t stream_first_frame = 0;
  std::int64_t stream_last_frame = -1;
  std::vector<Track> tracks;
};

struct WindowSample {
  std::string video_id;
  std::int64_t end_frame = 0;
  std::size_t frames = 0;  // T
  // K persons ordered by track id; each holds T x 17 x 2 normalized
  // coordinates and the per-frame presence mask.
  std::vector<NormalizedTrack> persons;
  bool label = false;
  CategorySet categories;
  // Frame whose annotation produced the label (end_frame, or shifted by the
  // prediction horizon).
  std::int64_t label_frame = 0;
  std::optional<int> actor_track_id;

  std::size_t person_count() const { return persons.size(); }
  std::vector<int> track_ids() const;
  FrameSpan span() const;
};

struct WindowStats {
  std::size_t emitted = 0;
  std::size_t dropped_no_person = 0;
  std::size_t dropped_beyond_stream = 0;
};

std::vector<WindowSample> make_windows(
    const VideoTracks& video, std::span<const AnnotationEpisode> episodes,
    const WindowConfig& cfg, WindowStats* stats = nullptr);

// Builds one window for an explicit end frame and person list (used when
// windows are re-materialized from a manifest).
WindowSample build_window(const VideoTracks& video, std::int64_t end_frame,
                          std::span<const int> track_ids, std::size_t frames);

enum class SplitRole : unsigned char { kTrain, kVal, kTest };

std::string_view split_name(SplitRole role);

struct FoldPlan {
  std::size_t fold_count = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> block_of;          // per window
  std::vector<std::vector<SplitRole>> roles;  // [fold][window]

  std::vector<std::size_t> indices(std::size_t fold, SplitRole role) const;
  std::size_t block_count() const;
};

inline constexpr double kTrainFraction = 0.5;
inline constexpr double kValFraction = 0.2;
inline constexpr double kTestFraction = 0.3;

// Groups windows whose end frames (same video) are less than one window
// apart into blocks, shuffles the blocks by seed and deals them to
// test/val/train per fold with a per-fold rotation.
FoldPlan plan_folds(std::span<const WindowSample> windows,
                    std::size_t fold_count, std::uint64_t seed);

// Pairs of windows from the same video, closer than one window span, placed in
// different splits of the same fold. Exhaustive O(n^2) scan.
std::size_t count_adjacency_violations(std::span<const WindowSample> windows,
                                       const FoldPlan& plan);

nlohmann::json fold_plan_to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const nlohmann::json& j);

struct WindowSource {
  std::string video_id;
  std::string track_file;
  std::string track_hash;
  std::string annotations_file;
  std::string annotations_hash;
};

struct WindowRef {
  std::string video_id;
  std::int64_t end_frame = 0;
  std::int64_t label_frame = 0;
  bool label = false;
  CategorySet categories;
  std::vector<int> track_ids;
  std::optional<int> actor_track_id;
};

// Window manifest: metadata only; coordinates are rebuilt from track files.
struct WindowManifest {
  WindowConfig config;
  std::size_t frames = 0;
  std::vector<WindowSource> sources;
  std::vector<WindowRef> windows;
  std::optional<FoldPlan> folds;
  WindowStats stats;
  nlohmann::json run_config;
};

WindowRef window_ref(const WindowSample& w);

nlohmann::json manifest_to_json(const WindowManifest& m);
WindowManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const std::filesystem::path& path, const WindowManifest& m);
WindowManifest read_manifest(const std::filesystem::path& path);

// Rebuilds WindowSamples from the track files the manifest references
// (relative paths resolve against base_dir). Verifies track file hashes
// unless force is set; throws StaleInputError on mismatch.
std::vector<WindowSample> materialize_windows(
    const WindowManifest& m, const std::filesystem::path& base_dir,
    bool force = false);

}  // namespace gar
