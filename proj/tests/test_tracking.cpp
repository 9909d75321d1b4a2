#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "gar/errors.hpp"
#include "gar/rng.hpp"
#include "gar/tracking.hpp"

using namespace gar;

namespace {

Skeleton single_joint(double x, double y, std::size_t j = 0) {
  Skeleton s;
  s.joints[j] = {x, y, true};
  return s;
}

Skeleton full_body(double cx, double cy, int id = 0) {
  Skeleton s;
  s.detection_id = id;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    s.joints[j] = {cx + 3.0 * static_cast<double>(j % 5),
                   cy + 10.0 * static_cast<double>(j / 5), true};
  }
  return s;
}

double brute_force_min(const CostMatrix& c) {
  // Square case only: try every permutation.
  std::vector<std::size_t> perm(c.cols());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < c.rows(); ++r) total += c(r, perm[r]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("pose distance of a 3-4-5 pair") {
  PoseFrame a{0, {single_joint(0, 0)}};
  PoseFrame b{1, {single_joint(3, 4)}};
  const CostMatrix c = build_cost_matrix(a, b);
  REQUIRE(c.rows() == 1);
  REQUIRE(c.cols() == 1);
  CHECK(c(0, 0) == doctest::Approx(5.0));
  CHECK(c.comparable(0, 0));
}

TEST_CASE("cost matrix matches an elementwise oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    PoseFrame a{0, {}}, b{1, {}};
    auto random_skel = [&] {
      Skeleton s;
      for (auto& k : s.joints) {
        if (rng.uniform() < 0.6) k = {rng.uniform(0, 500), rng.uniform(0, 500), true};
      }
      return s;
    };
    for (std::size_t i = 1 + rng.below(4); i > 0; --i) a.skeletons.push_back(random_skel());
    for (std::size_t i = 1 + rng.below(4); i > 0; --i) b.skeletons.push_back(random_skel());
    const CostMatrix c = build_cost_matrix(a, b);
    double max_finite = -1.0;
    for (std::size_t r = 0; r < c.rows(); ++r) {
      for (std::size_t q = 0; q < c.cols(); ++q) {
        double sum = 0.0;
        bool any = false;
        for (std::size_t j = 0; j < kJointCount; ++j) {
          const Keypoint& p = a.skeletons[r].joints[j];
          const Keypoint& s = b.skeletons[q].joints[j];
          if (p.valid && s.valid) {
            any = true;
            sum += (p.x - s.x) * (p.x - s.x) + (p.y - s.y) * (p.y - s.y);
          }
        }
        CHECK(c.comparable(r, q) == any);
        if (any) {
          CHECK(c(r, q) == doctest::Approx(std::sqrt(sum)));
          max_finite = std::max(max_finite, std::sqrt(sum));
        }
      }
    }
    for (std::size_t r = 0; r < c.rows(); ++r) {
      for (std::size_t q = 0; q < c.cols(); ++q) {
        if (!c.comparable(r, q)) {
          CHECK(c(r, q) == doctest::Approx(max_finite > 0 ? 2 * max_finite : kAllPenaltyCost));
        }
      }
    }
  }
}

TEST_CASE("incomparable pairs get a finite penalty") {
  PoseFrame a{0, {single_joint(0, 0, 0), single_joint(1, 1, 3)}};
  PoseFrame b{1, {single_joint(10, 0, 0)}};
  const CostMatrix c = build_cost_matrix(a, b);
  CHECK(c(0, 0) == doctest::Approx(10.0));
  CHECK_FALSE(c.comparable(1, 0));
  CHECK(c(1, 0) == doctest::Approx(20.0));

  PoseFrame d{1, {single_joint(5, 5, 7)}};
  const CostMatrix all = build_cost_matrix(a, d);
  CHECK(all(0, 0) == kAllPenaltyCost);
  CHECK(std::isfinite(all(1, 0)));
}

TEST_CASE("hungarian on a 2x2 example") {
  CostMatrix c(2, 2);
  c(0, 0) = 4;
  c(0, 1) = 1;
  c(1, 0) = 2;
  c(1, 1) = 8;
  const Assignment a = hungarian_assign(c);
  REQUIRE(a.matches.size() == 2);
  CHECK(a.total_cost(c) == doctest::Approx(3.0));
  CHECK(a.matches[0] == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK(a.matches[1] == std::pair<std::size_t, std::size_t>{1, 0});
}

TEST_CASE("hungarian equals the permutation oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    CostMatrix c(n, n);
    for (std::size_t r = 0; r < n; ++r) {
      // Integer costs produce plenty of ties.
      for (std::size_t q = 0; q < n; ++q) c(r, q) = static_cast<double>(rng.below(10));
    }
    const Assignment a = hungarian_assign(c);
    CHECK(a.matches.size() == n);
    CHECK(a.total_cost(c) == doctest::Approx(brute_force_min(c)));
    std::vector<bool> used(n, false);
    for (auto [r, q] : a.matches) {
      CHECK_FALSE(used[q]);
      used[q] = true;
    }
  }
}

TEST_CASE("hungarian on rectangular inputs") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.below(5);
    const std::size_t cols = 1 + rng.below(5);
    CostMatrix c(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t q = 0; q < cols; ++q) c(r, q) = rng.uniform(0, 10);
    }
    const Assignment a = hungarian_assign(c);
    CHECK(a.matches.size() == std::min(rows, cols));
    CHECK(a.unmatched_rows.size() == rows - a.matches.size());
    CHECK(a.unmatched_cols.size() == cols - a.matches.size());
    // Oracle: pad to square with zero-cost dummies.
    const std::size_t n = std::max(rows, cols);
    CostMatrix padded(n, n, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t q = 0; q < cols; ++q) padded(r, q) = c(r, q);
    }
    CHECK(a.total_cost(c) == doctest::Approx(brute_force_min(padded)));
  }
}

TEST_CASE("hungarian with empty sides") {
  const Assignment a = hungarian_assign(CostMatrix(0, 3));
  CHECK(a.matches.empty());
  CHECK(a.unmatched_cols.size() == 3);
}

TEST_CASE("a stationary person for 120 frames is one track") {
  std::vector<PoseFrame> frames;
  for (std::int64_t f = 0; f < 120; ++f) frames.push_back({f, {full_body(500, 300)}});
  const auto tracks = assemble_tracks(frames, 30.0, TrackingConfig{}.gate);
  REQUIRE(tracks.size() == 1);
  CHECK(tracks[0].poses.size() == 120);
  CHECK(tracks[0].start_frame == 0);
  CHECK(tracks[0].end_frame() == 119);
}

TEST_CASE("a 20-frame track is dropped as a ghost at 30 fps") {
  std::vector<PoseFrame> frames;
  for (std::int64_t f = 0; f < 20; ++f) frames.push_back({f, {full_body(500, 300)}});
  CHECK(chain_tracks(frames, 1000.0).size() == 1);
  CHECK(assemble_tracks(frames, 30.0, 1000.0).empty());
  CHECK(min_track_frames(30.0) == 30);
}

TEST_CASE("two walkers keep their identities") {
  // A walks right along y=200, B walks left along y=600; they pass each other
  // horizontally with a large vertical gap.
  std::vector<PoseFrame> frames;
  for (std::int64_t f = 0; f < 60; ++f) {
    const double x = 100.0 + 10.0 * static_cast<double>(f);
    PoseFrame frame{f, {}};
    // Alternate the listing order so identity cannot come from position in
    // the frame.
    if (f % 2 == 0) {
      frame.skeletons = {full_body(x, 200, 0), full_body(800 - (x - 100), 600, 1)};
    } else {
      frame.skeletons = {full_body(800 - (x - 100), 600, 1), full_body(x, 200, 0)};
    }
    frames.push_back(frame);
  }
  const auto tracks = assemble_tracks(frames, 30.0, TrackingConfig{}.gate);
  REQUIRE(tracks.size() == 2);
  for (const Track& t : tracks) {
    CHECK(t.poses.size() == 60);
    const int id = t.poses.front().detection_id;
    for (const Skeleton& s : t.poses) CHECK(s.detection_id == id);
  }
}

TEST_CASE("chaining covers every skeleton exactly once") {
  Rng rng(17);
  std::vector<PoseFrame> frames;
  std::size_t total = 0;
  for (std::int64_t f = 0; f < 80; ++f) {
    PoseFrame frame{f + (f > 40 ? 5 : 0), {}};
    for (std::size_t p = rng.below(5); p > 0; --p) {
      frame.skeletons.push_back(full_body(rng.uniform(0, 1800), rng.uniform(0, 1000)));
    }
    total += frame.skeletons.size();
    frames.push_back(frame);
  }
  const auto tracks = chain_tracks(frames, 300.0);
  std::size_t covered = 0;
  for (const Track& t : tracks) {
    covered += t.poses.size();
    // The frame gap ends all tracks.
    CHECK_FALSE((t.start_frame <= 40 && t.end_frame() >= 46));
  }
  CHECK(covered == total);
}

TEST_CASE("gate splits a track on a large jump") {
  std::vector<PoseFrame> frames;
  for (std::int64_t f = 0; f < 10; ++f) {
    frames.push_back({f, {full_body(f < 5 ? 100 : 1500, 300)}});
  }
  CHECK(chain_tracks(frames, 100.0).size() == 2);
}

TEST_CASE("normalization of a three-joint skeleton") {
  Skeleton s;
  s.joints[joint::kLeftHip] = {100, 200, true};
  s.joints[joint::kRightHip] = {102, 200, true};
  s.joints[joint::kNose] = {101, 180, true};
  const Track t{0, 10, {s}, std::nullopt};
  const NormalizedTrack n = normalize_track(t, {10, 10});
  CHECK(n.scale == doctest::Approx(20.0));
  CHECK(n.x(0, joint::kNose) == doctest::Approx(0.0));
  CHECK(n.y(0, joint::kNose) == doctest::Approx(-1.0));
  CHECK(n.x(0, joint::kLeftHip) == doctest::Approx(-0.05));
  CHECK(n.x(0, joint::kRightHip) == doctest::Approx(0.05));
  CHECK(n.y(0, joint::kRightHip) == doctest::Approx(0.0));
  CHECK_FALSE(n.is_valid(0, joint::kLeftWrist));
  CHECK(n.x(0, joint::kLeftWrist) == 0.0);
  const auto [px, py] = n.pixel(0, joint::kNose);
  CHECK(px == doctest::Approx(101.0));
  CHECK(py == doctest::Approx(180.0));
}

TEST_CASE("normalization is translation invariant") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Track a{0, 0, {}, std::nullopt};
    for (int f = 0; f < 15; ++f) a.poses.push_back(full_body(rng.uniform(0, 900), rng.uniform(0, 500)));
    for (auto& p : a.poses) {
      for (auto& k : p.joints) k.x += rng.uniform(-5, 5);
    }
    Track b = a;
    const double dx = rng.uniform(-300, 300), dy = rng.uniform(-300, 300);
    for (auto& p : b.poses) {
      for (auto& k : p.joints) {
        k.x += dx;
        k.y += dy;
      }
    }
    const NormalizedTrack na = normalize_track(a, {0, 14});
    const NormalizedTrack nb = normalize_track(b, {0, 14});
    CHECK(na.scale == doctest::Approx(nb.scale));
    for (std::size_t i = 0; i < na.coords.size(); ++i) {
      CHECK(na.coords[i] == doctest::Approx(nb.coords[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("normalized coordinates lie in the unit disc") {
  Rng rng(12);
  Track t{3, 0, {}, std::nullopt};
  for (int f = 0; f < 30; ++f) {
    Skeleton s;
    for (auto& k : s.joints) {
      if (rng.uniform() < 0.7) k = {rng.uniform(0, 1920), rng.uniform(0, 1080), true};
    }
    s.joints[0] = {rng.uniform(0, 1920), rng.uniform(0, 1080), true};
    t.poses.push_back(s);
  }
  const NormalizedTrack n = normalize_track(t, {0, 29});
  double max_norm = 0.0;
  for (std::size_t f = 0; f < 30; ++f) {
    for (std::size_t j = 0; j < kJointCount; ++j) {
      max_norm = std::max(max_norm, std::hypot(n.x(f, j), n.y(f, j)));
    }
  }
  CHECK(max_norm == doctest::Approx(1.0));
}

TEST_CASE("coincident joints give a degenerate scale") {
  Skeleton s;
  s.joints[joint::kLeftHip] = {50, 50, true};
  s.joints[joint::kRightHip] = {50, 50, true};
  const NormalizedTrack n = normalize_track(Track{0, 0, {s, s}, std::nullopt}, {0, 1});
  CHECK(n.degenerate_scale);
  CHECK(n.scale == 1.0);
  for (double c : n.coords) CHECK(std::isfinite(c));
}

TEST_CASE("frames outside coverage repeat the nearest pose and are not present") {
  Track t{0, 5, {full_body(100, 100), full_body(200, 100)}, std::nullopt};
  const NormalizedTrack n = normalize_track(t, {3, 8});
  CHECK(n.frames == 6);
  CHECK(n.present == std::vector<unsigned char>{0, 0, 1, 1, 0, 0});
  CHECK(n.hip_center[0] == doctest::Approx(n.hip_center[4]));
  CHECK(n.hip_center[10] == doctest::Approx(n.hip_center[6]));
  CHECK(coverage(t, {3, 8}) == 2);
  CHECK_THROWS(normalize_track(t, {20, 30}));
}

TEST_CASE("track file round trip") {
  Track a{0, 3, {full_body(1, 2, 4), full_body(2, 3, 4)}, std::string("S1")};
  Track b{1, 0, {full_body(10, 20, 7)}, std::nullopt};
  TrackFileHeader h;
  h.video_id = "vid";
  h.fps = 25;
  h.stream_last_frame = 99;
  h.gate = 123.5;
  h.input_hashes["s.jsonl"] = "abc";
  const std::vector<Track> tracks{a, b};
  TrackFileHeader back;
  const auto parsed = parse_track_file(format_track_file(h, tracks), &back);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].poses == a.poses);
  CHECK(parsed[0].subject_id == a.subject_id);
  CHECK(parsed[1].start_frame == 0);
  CHECK_FALSE(parsed[1].subject_id.has_value());
  CHECK(back.video_id == "vid");
  CHECK(back.fps == 25.0);
  CHECK(back.stream_last_frame == 99);
  CHECK(back.input_hashes == h.input_hashes);
  CHECK(a.dominant_detection_id() == 4);
}
