#include "gar/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gar/errors.hpp"

namespace gar {

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows),
      cols_(cols),
      cost_(rows * cols, fill),
      comparable_(rows * cols, 1) {}

double pose_distance(const Skeleton& a, const Skeleton& b, bool* comparable) {
  double sum = 0.0;
  bool any = false;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const Keypoint& p = a.joints[j];
    const Keypoint& q = b.joints[j];
    if (!p.valid || !q.valid) continue;
    any = true;
    const double dx = p.x - q.x;
    const double dy = p.y - q.y;
    sum += dx * dx + dy * dy;
  }
  if (comparable) *comparable = any;
  return std::sqrt(sum);
}

CostMatrix build_cost_matrix(const PoseFrame& frame_t,
                             const PoseFrame& frame_t1) {
  const std::size_t rows = frame_t.skeletons.size();
  const std::size_t cols = frame_t1.skeletons.size();
  CostMatrix costs(rows, cols);
  double max_finite = -1.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      bool ok = false;
      const double d =
          pose_distance(frame_t.skeletons[r], frame_t1.skeletons[c], &ok);
      costs(r, c) = d;
      costs.set_comparable(r, c, ok);
      if (ok) max_finite = std::max(max_finite, d);
    }
  }
  // A zero maximum would make the penalty free, so it falls back as well.
  const double penalty = max_finite > 0.0 ? 2.0 * max_finite : kAllPenaltyCost;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!costs.comparable(r, c)) costs(r, c) = penalty;
    }
  }
  return costs;
}

double Assignment::total_cost(const CostMatrix& costs) const {
  double total = 0.0;
  for (auto [r, c] : matches) total += costs(r, c);
  return total;
}

namespace {

// Shortest augmenting path with row/column potentials; requires n <= m.
// Returns the column matched to each row.
std::vector<std::size_t> solve_rows_le_cols(std::size_t n, std::size_t m,
                                            const auto& cost) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based indexing; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

Assignment hungarian_assign(const CostMatrix& costs) {
  const std::size_t rows = costs.rows();
  const std::size_t cols = costs.cols();
  Assignment result;
  if (rows == 0 || cols == 0) {
    for (std::size_t r = 0; r < rows; ++r) result.unmatched_rows.push_back(r);
    for (std::size_t c = 0; c < cols; ++c) result.unmatched_cols.push_back(c);
    return result;
  }
  std::vector<char> row_used(rows, 0), col_used(cols, 0);
  if (rows <= cols) {
    auto cost = [&](std::size_t r, std::size_t c) { return costs(r, c); };
    const auto row_to_col = solve_rows_le_cols(rows, cols, cost);
    for (std::size_t r = 0; r < rows; ++r) {
      result.matches.emplace_back(r, row_to_col[r]);
    }
  } else {
    auto cost = [&](std::size_t c, std::size_t r) { return costs(r, c); };
    const auto col_to_row = solve_rows_le_cols(cols, rows, cost);
    for (std::size_t c = 0; c < cols; ++c) {
      result.matches.emplace_back(col_to_row[c], c);
    }
    std::sort(result.matches.begin(), result.matches.end());
  }
  for (auto [r, c] : result.matches) {
    row_used[r] = 1;
    col_used[c] = 1;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (!row_used[r]) result.unmatched_rows.push_back(r);
  }
  for (std::size_t c = 0; c < cols; ++c) {
    if (!col_used[c]) result.unmatched_cols.push_back(c);
  }
  return result;
}

int Track::dominant_detection_id() const {
  std::map<int, std::size_t> counts;
  for (const Skeleton& s : poses) ++counts[s.detection_id];
  int best = 0;
  std::size_t best_count = 0;
  for (auto [id, n] : counts) {
    if (n > best_count) {
      best = id;
      best_count = n;
    }
  }
  return best;
}

std::vector<Track> chain_tracks(std::span<const PoseFrame> frames,
                                double gate) {
  std::vector<Track> tracks;
  // Track index for each skeleton of the previous frame.
  std::vector<std::size_t> open;
  const PoseFrame* prev = nullptr;
  for (const PoseFrame& frame : frames) {
    std::vector<std::size_t> next(frame.skeletons.size(),
                                  std::numeric_limits<std::size_t>::max());
    if (prev && frame.frame_index == prev->frame_index + 1) {
      const CostMatrix costs = build_cost_matrix(*prev, frame);
      const Assignment assignment = hungarian_assign(costs);
      for (auto [r, c] : assignment.matches) {
        if (!costs.comparable(r, c) || costs(r, c) > gate) continue;
        next[c] = open[r];
        tracks[open[r]].poses.push_back(frame.skeletons[c]);
      }
    }
    for (std::size_t c = 0; c < next.size(); ++c) {
      if (next[c] != std::numeric_limits<std::size_t>::max()) continue;
      Track t;
      t.track_id = static_cast<int>(tracks.size());
      t.start_frame = frame.frame_index;
      t.poses.push_back(frame.skeletons[c]);
      next[c] = tracks.size();
      tracks.push_back(std::move(t));
    }
    open = std::move(next);
    prev = &frame;
  }
  return tracks;
}

std::size_t min_track_frames(double fps) {
  return static_cast<std::size_t>(std::ceil(fps * 1.0 - 1e-9));
}

std::vector<Track> filter_ghost_tracks(std::vector<Track> tracks, double fps) {
  const std::size_t min_len = min_track_frames(fps);
  std::erase_if(tracks,
                [&](const Track& t) { return t.poses.size() < min_len; });
  return tracks;
}

std::vector<Track> assemble_tracks(std::span<const PoseFrame> frames,
                                   double fps, double gate) {
  return filter_ghost_tracks(chain_tracks(frames, gate), fps);
}

std::int64_t coverage(const Track& track, FrameSpan span) {
  const std::int64_t lo = std::max(track.start_frame, span.first);
  const std::int64_t hi = std::min(track.end_frame(), span.last);
  return std::max<std::int64_t>(0, hi - lo + 1);
}

std::pair<double, double> NormalizedTrack::pixel(std::size_t t,
                                                 std::size_t j) const {
  return {x(t, j) * scale + hip_center[2 * t],
          y(t, j) * scale + hip_center[2 * t + 1]};
}

NormalizedTrack normalize_track(const Track& track, FrameSpan window_span) {
  if (track.poses.empty() || coverage(track, window_span) == 0) {
    throw std::invalid_argument("normalize_track: track " +
                                std::to_string(track.track_id) +
                                " does not overlap the window");
  }
  const auto frames = static_cast<std::size_t>(window_span.length());
  NormalizedTrack out;
  out.track_id = track.track_id;
  out.start_frame = window_span.first;
  out.frames = frames;
  out.coords.assign(frames * kJointCount * 2, 0.0);
  out.valid.assign(frames * kJointCount, 0);
  out.present.assign(frames, 0);
  out.hip_center.assign(frames * 2, 0.0);

  const auto last = static_cast<std::int64_t>(track.poses.size()) - 1;
  bool any_valid = false;
  double max_norm = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    const std::int64_t frame = window_span.first + static_cast<std::int64_t>(t);
    const std::int64_t offset = frame - track.start_frame;
    out.present[t] = (offset >= 0 && offset <= last) ? 1 : 0;
    const Skeleton& pose =
        track.poses[static_cast<std::size_t>(std::clamp<std::int64_t>(offset, 0, last))];

    const Keypoint& lh = pose.joints[joint::kLeftHip];
    const Keypoint& rh = pose.joints[joint::kRightHip];
    double cx = 0.0, cy = 0.0;
    std::size_t n = 0;
    if (lh.valid || rh.valid) {
      for (const Keypoint* k : {&lh, &rh}) {
        if (!k->valid) continue;
        cx += k->x;
        cy += k->y;
        ++n;
      }
    } else {
      for (const Keypoint& k : pose.joints) {
        if (!k.valid) continue;
        cx += k.x;
        cy += k.y;
        ++n;
      }
    }
    if (n == 0) continue;
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    out.hip_center[2 * t] = cx;
    out.hip_center[2 * t + 1] = cy;
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const Keypoint& k = pose.joints[j];
      if (!k.valid) continue;
      any_valid = true;
      const double dx = k.x - cx;
      const double dy = k.y - cy;
      out.valid[t * kJointCount + j] = 1;
      out.coords[(t * kJointCount + j) * 2] = dx;
      out.coords[(t * kJointCount + j) * 2 + 1] = dy;
      max_norm = std::max(max_norm, std::hypot(dx, dy));
    }
  }
  if (!any_valid) {
    throw FormatError("normalize_track: track " +
                      std::to_string(track.track_id) + " has no valid joints");
  }
  if (max_norm < kMinNormalizationScale) {
    out.scale = 1.0;
    out.degenerate_scale = true;
  } else {
    out.scale = max_norm;
  }
  for (double& c : out.coords) c /= out.scale;
  return out;
}

std::string format_track_file(const TrackFileHeader& header,
                              std::span<const Track> tracks) {
  nlohmann::json h;
  h["video_id"] = header.video_id;
  h["fps"] = header.fps;
  h["stream_first_frame"] = header.stream_first_frame;
  h["stream_last_frame"] = header.stream_last_frame;
  h["gate"] = header.gate;
  h["inputs"] = header.input_hashes;
  std::string out = nlohmann::json{{"header", h}}.dump() + "\n";
  for (const Track& t : tracks) {
    nlohmann::json line;
    line["track_id"] = t.track_id;
    line["start_frame"] = t.start_frame;
    line["subject_id"] =
        t.subject_id ? nlohmann::json(*t.subject_id) : nlohmann::json();
    nlohmann::json joints = nlohmann::json::array();
    nlohmann::json ids = nlohmann::json::array();
    for (const Skeleton& s : t.poses) {
      joints.push_back(joints_to_json(s));
      ids.push_back(s.detection_id);
    }
    line["joints"] = std::move(joints);
    line["detection_ids"] = std::move(ids);
    out += line.dump();
    out += '\n';
  }
  return out;
}

void write_track_file(const std::filesystem::path& path,
                      const TrackFileHeader& header,
                      std::span<const Track> tracks) {
  write_text_file(path, format_track_file(header, tracks));
}

std::vector<Track> parse_track_file(std::string_view text,
                                    TrackFileHeader* header) {
  std::vector<Track> tracks;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "track file line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": parse error: " + e.what());
    }
    if (j.contains("header")) {
      if (header) {
        const auto& h = j["header"];
        header->video_id = h.value("video_id", "");
        header->fps = h.value("fps", kDefaultFps);
        header->stream_first_frame = h.value("stream_first_frame", 0LL);
        header->stream_last_frame = h.value("stream_last_frame", -1LL);
        header->gate = h.value("gate", 0.0);
        header->input_hashes =
            h.value("inputs", std::map<std::string, std::string>{});
      }
      continue;
    }
    try {
      Track t;
      t.track_id = j.at("track_id").get<int>();
      t.start_frame = j.at("start_frame").get<std::int64_t>();
      if (j.contains("subject_id") && j["subject_id"].is_string()) {
        t.subject_id = j["subject_id"].get<std::string>();
      }
      const auto& joints = j.at("joints");
      for (std::size_t f = 0; f < joints.size(); ++f) {
        Skeleton s = joints_from_json(joints[f]);
        if (j.contains("detection_ids")) {
          s.detection_id = j["detection_ids"].at(f).get<int>();
        }
        t.poses.push_back(s);
      }
      if (t.poses.empty()) throw FormatError("track has no poses");
      tracks.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return tracks;
}

std::vector<Track> read_track_file(const std::filesystem::path& path,
                                   TrackFileHeader* header) {
  return parse_track_file(read_text_file(path), header);
}

}  // namespace gar
