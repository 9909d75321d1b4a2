#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gar/core_types.hpp"

namespace gar {

// Pairwise pose distances between the skeletons of two consecutive frames.
// Pairs without any mutually valid joint are marked incomparable and carry a
// large finite penalty cost.
class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const {
    return cost_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return cost_[r * cols_ + c];
  }
  bool comparable(std::size_t r, std::size_t c) const {
    return comparable_[r * cols_ + c] != 0;
  }
  void set_comparable(std::size_t r, std::size_t c, bool value) {
    comparable_[r * cols_ + c] = value ? 1 : 0;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> cost_;
  std::vector<unsigned char> comparable_;
};

inline constexpr double kAllPenaltyCost = 1e6;

// L2 distance over the joints valid in both skeletons.
double pose_distance(const Skeleton& a, const Skeleton& b,
                     bool* comparable = nullptr);

CostMatrix build_cost_matrix(const PoseFrame& frame_t,
                             const PoseFrame& frame_t1);

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> matches;  // sorted by row
  std::vector<std::size_t> unmatched_rows;
  std::vector<std::size_t> unmatched_cols;

  double total_cost(const CostMatrix& costs) const;
};

// Minimum-cost maximum matching (Kuhn-Munkres with potentials). Rectangular
// inputs behave as if padded with zero-cost dummy rows or columns.
Assignment hungarian_assign(const CostMatrix& costs);

struct Track {
  int track_id = 0;
  std::int64_t start_frame = 0;
  std::vector<Skeleton> poses;  // one per frame, contiguous
  std::optional<std::string> subject_id;

  std::int64_t end_frame() const {
    return start_frame + static_cast<std::int64_t>(poses.size()) - 1;
  }
  // Most frequent detection id along the track, lowest id on ties.
  int dominant_detection_id() const;
};

// 1920x1080 frame diagonal.
inline constexpr double kDefaultImageDiagonal = 2202.9071700822983;

struct TrackingConfig {
  double gate = 0.5 * kDefaultImageDiagonal;
};

// Frame-to-frame chaining without the ghost filter. Every input skeleton
// lands in exactly one track. A frame-index gap ends all open tracks.
std::vector<Track> chain_tracks(std::span<const PoseFrame> frames, double gate);

std::size_t min_track_frames(double fps);
std::vector<Track> filter_ghost_tracks(std::vector<Track> tracks, double fps);

std::vector<Track> assemble_tracks(std::span<const PoseFrame> frames,
                                   double fps, double gate);

struct FrameSpan {
  std::int64_t first = 0;
  std::int64_t last = 0;  // inclusive

  std::int64_t length() const { return last - first + 1; }
};

// One person's pose sequence over a window, hip-centered per frame and divided
// by a single scale for the whole window. Frames outside the track's coverage
// hold the nearest observed pose and are marked not present.
struct NormalizedTrack {
  int track_id = 0;
  std::int64_t start_frame = 0;
  std::size_t frames = 0;
  std::vector<double> coords;       // frames x 17 x 2
  std::vector<unsigned char> valid;  // frames x 17
  std::vector<unsigned char> present;  // frames
  std::vector<double> hip_center;   // frames x 2, in input coordinates
  double scale = 1.0;
  bool degenerate_scale = false;

  double x(std::size_t t, std::size_t j) const { return coords[(t * kJointCount + j) * 2]; }
  double y(std::size_t t, std::size_t j) const { return coords[(t * kJointCount + j) * 2 + 1]; }
  bool is_valid(std::size_t t, std::size_t j) const { return valid[t * kJointCount + j] != 0; }
  // Undo the normalization for a valid joint.
  std::pair<double, double> pixel(std::size_t t, std::size_t j) const;
};

inline constexpr double kMinNormalizationScale = 1e-6;

NormalizedTrack normalize_track(const Track& track, FrameSpan window_span);

// Frames of the span covered by the track.
std::int64_t coverage(const Track& track, FrameSpan span);

struct TrackFileHeader {
  std::string video_id;
  double fps = kDefaultFps;
  std::int64_t stream_first_frame = 0;
  std::int64_t stream_last_frame = -1;
  double gate = 0.0;
  std::map<std::string, std::string> input_hashes;
};

// JSON-lines: a header line {"header": {...}} followed by one line per track
// {"track_id", "start_frame", "subject_id", "joints": [[[x,y,v] x 17] ...]}.
std::string format_track_file(const TrackFileHeader& header,
                              std::span<const Track> tracks);
void write_track_file(const std::filesystem::path& path,
                      const TrackFileHeader& header,
                      std::span<const Track> tracks);
std::vector<Track> parse_track_file(std::string_view text,
                                    TrackFileHeader* header = nullptr);
std::vector<Track> read_track_file(const std::filesystem::path& path,
                                   TrackFileHeader* header = nullptr);

}  // namespace gar
