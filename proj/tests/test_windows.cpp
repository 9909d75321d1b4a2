#include <filesystem>

#include "doctest.h"
#include "gar/errors.hpp"
#include "gar/hashing.hpp"
#include "gar/windows.hpp"

using namespace gar;

namespace {

Skeleton body(double cx, double cy) {
  Skeleton s;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    s.joints[j] = {cx + 2.0 * static_cast<double>(j % 4), cy + 9.0 * static_cast<double>(j / 4),
                   true};
  }
  return s;
}

Track steady_track(int id, std::int64_t start, std::int64_t frames, double x = 300) {
  Track t{id, start, {}, std::nullopt};
  for (std::int64_t f = 0; f < frames; ++f) t.poses.push_back(body(x + 0.5 * f, 400));
  return t;
}

VideoTracks video(const std::string& id, std::int64_t frames, std::size_t people = 2) {
  VideoTracks v;
  v.video_id = id;
  v.fps = 30.0;
  v.stream_first_frame = 0;
  v.stream_last_frame = frames - 1;
  for (std::size_t p = 0; p < people; ++p) {
    v.tracks.push_back(steady_track(static_cast<int>(p), 0, frames, 100.0 + 200.0 * p));
  }
  return v;
}

std::vector<WindowSample> many_windows(std::size_t videos, std::int64_t frames,
                                       std::int64_t stride) {
  WindowConfig cfg;
  cfg.window_seconds = 1.0;
  cfg.stride_frames = stride;
  std::vector<WindowSample> all;
  for (std::size_t v = 0; v < videos; ++v) {
    auto w = make_windows(video("v" + std::to_string(v), frames, 1), {}, cfg);
    all.insert(all.end(), w.begin(), w.end());
  }
  return all;
}

}  // namespace

TEST_CASE("window length follows fps") {
  CHECK(window_frames(WindowConfig{}, 30.0) == 120);
  CHECK(window_frames(WindowConfig{}, 25.0) == 100);
  WindowConfig tiny;
  tiny.window_seconds = 0.01;
  CHECK_THROWS_AS(window_frames(tiny, 30.0), ConfigError);
}

TEST_CASE("detection labels use the end frame") {
  const std::vector<AnnotationEpisode> eps = {
      {"v", 100, 250, BehaviorCategory::kRestrictedRepetitive, std::nullopt}};
  WindowConfig cfg;
  cfg.window_seconds = 1.0;
  cfg.stride_frames = 1;
  const auto windows = make_windows(video("v", 400), eps, cfg);
  REQUIRE(windows.size() == 400 - 29);
  for (const WindowSample& w : windows) {
    CHECK(w.frames == 30);
    CHECK(w.label_frame == w.end_frame);
    CHECK(w.label == (w.end_frame >= 100 && w.end_frame <= 250));
    CHECK(w.person_count() == 2);
  }
  const auto at = [&](std::int64_t end) {
    return *std::find_if(windows.begin(), windows.end(),
                         [&](const WindowSample& w) { return w.end_frame == end; });
  };
  CHECK(at(100).label);
  CHECK(at(100).categories == CategorySet{BehaviorCategory::kRestrictedRepetitive});
  CHECK_FALSE(at(99).label);
  CHECK(at(99).categories.empty());
}

TEST_CASE("episodes of other videos are ignored") {
  const std::vector<AnnotationEpisode> eps = {
      {"other", 0, 1000, BehaviorCategory::kAggressive, std::nullopt}};
  WindowConfig cfg;
  cfg.window_seconds = 1.0;
  for (const auto& w : make_windows(video("v", 300), eps, cfg)) CHECK_FALSE(w.label);
}

TEST_CASE("prediction labels look one horizon ahead") {
  const std::vector<AnnotationEpisode> eps = {
      {"v", 5500, 5500, BehaviorCategory::kDisruptive, std::nullopt}};
  WindowConfig cfg;
  cfg.window_seconds = 1.0;
  cfg.stride_frames = 1;
  cfg.task = LabelTask::kPredict;
  cfg.horizon_seconds = 180.0;
  WindowStats stats;
  const auto windows = make_windows(video("v", 6000), eps, cfg, &stats);
  std::size_t positives = 0;
  for (const WindowSample& w : windows) {
    CHECK(w.label_frame == w.end_frame + 5400);
    if (w.label) {
      ++positives;
      CHECK(w.end_frame == 100);
    }
  }
  CHECK(positives == 1);
  // End frames whose target falls past the stream are dropped.
  CHECK(windows.back().label_frame <= 5999);
  CHECK(stats.dropped_beyond_stream == 5400);
  CHECK(stats.emitted == windows.size());
}

TEST_CASE("persons are ordered by track id and filtered by coverage") {
  VideoTracks v = video("v", 200, 0);
  v.tracks.push_back(steady_track(7, 0, 200));
  v.tracks.push_back(steady_track(2, 0, 200, 600));
  v.tracks.push_back(steady_track(4, 150, 5, 900));  // 5 of 30 frames
  WindowConfig cfg;
  cfg.window_seconds = 1.0;
  cfg.stride_frames = 1;
  for (const auto& w : make_windows(v, {}, cfg)) {
    CHECK(w.track_ids() == std::vector<int>{2, 7});
  }
}

TEST_CASE("windows without persons are dropped") {
  VideoTracks v = video("v", 200, 0);
  v.tracks.push_back(steady_track(0, 100, 100));
  WindowConfig cfg;
  cfg.window_seconds = 1.0;
  cfg.stride_frames = 10;
  WindowStats stats;
  const auto windows = make_windows(v, {}, cfg, &stats);
  CHECK(stats.dropped_no_person > 0);
  for (const auto& w : windows) CHECK(w.person_count() == 1);
}

TEST_CASE("fold plans honor ratios and never split adjacent windows") {
  const auto windows = many_windows(12, 900, 30);
  const FoldPlan plan = plan_folds(windows, 5, 42);
  REQUIRE(plan.roles.size() == 5);
  CHECK(count_adjacency_violations(windows, plan) == 0);
  const double n = static_cast<double>(windows.size());
  for (std::size_t f = 0; f < 5; ++f) {
    const double tr = static_cast<double>(plan.indices(f, SplitRole::kTrain).size()) / n;
    const double va = static_cast<double>(plan.indices(f, SplitRole::kVal).size()) / n;
    const double te = static_cast<double>(plan.indices(f, SplitRole::kTest).size()) / n;
    CHECK(tr + va + te == doctest::Approx(1.0));
    CHECK(tr == doctest::Approx(0.5).epsilon(0.1));
    CHECK(va == doctest::Approx(0.2).epsilon(0.3));
    CHECK(te == doctest::Approx(0.3).epsilon(0.2));
  }
  // Windows one span apart (stride 30 == window) are separate blocks.
  CHECK(plan.block_count() == windows.size());
}

TEST_CASE("overlapping windows stay in one block") {
  const auto windows = many_windows(8, 300, 10);
  const FoldPlan plan = plan_folds(windows, 3, 1);
  CHECK(plan.block_count() == 8);
  CHECK(count_adjacency_violations(windows, plan) == 0);
}

TEST_CASE("fold plans are deterministic per seed") {
  const auto windows = many_windows(10, 600, 30);
  const FoldPlan a = plan_folds(windows, 5, 7);
  const FoldPlan b = plan_folds(windows, 5, 7);
  CHECK(a.roles == b.roles);
  const FoldPlan c = plan_folds(windows, 5, 8);
  CHECK(a.roles != c.roles);
  const FoldPlan back = fold_plan_from_json(fold_plan_to_json(a));
  CHECK(back.roles == a.roles);
  CHECK(back.block_of == a.block_of);
}

TEST_CASE("fold plan errors") {
  const auto windows = many_windows(4, 300, 30);
  CHECK_THROWS_AS(plan_folds(windows, 1, 0), ConfigError);
  CHECK_THROWS_AS(plan_folds(many_windows(2, 300, 5), 2, 0), ConfigError);
}

TEST_CASE("adjacency scanner counts a planted violation") {
  const auto windows = many_windows(6, 300, 10);
  FoldPlan plan = plan_folds(windows, 2, 3);
  // windows[0] and windows[1] are 10 frames apart in the same video.
  plan.roles[0][0] = plan.roles[0][1] == SplitRole::kTest ? SplitRole::kTrain : SplitRole::kTest;
  CHECK(count_adjacency_violations(windows, plan) > 0);
}

TEST_CASE("manifest round trip rebuilds identical windows") {
  const auto dir = std::filesystem::temp_directory_path() / "gar_windows_manifest";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  VideoTracks v = video("v", 240);
  TrackFileHeader h;
  h.video_id = "v";
  h.fps = 30;
  h.stream_last_frame = 239;
  write_track_file(dir / "v.tracks.jsonl", h, v.tracks);

  WindowConfig cfg;
  cfg.window_seconds = 1.0;
  cfg.stride_frames = 30;
  const auto windows = make_windows(v, {}, cfg);
  WindowManifest m;
  m.config = cfg;
  m.frames = 30;
  m.sources.push_back({"v", "v.tracks.jsonl",
                       content_hash(read_text_file(dir / "v.tracks.jsonl")), "", ""});
  for (const auto& w : windows) m.windows.push_back(window_ref(w));
  m.folds = plan_folds(windows, 2, 0);
  write_manifest(dir / "m.json", m);

  const WindowManifest back = read_manifest(dir / "m.json");
  CHECK(back.windows.size() == windows.size());
  CHECK(back.folds->roles == m.folds->roles);
  const auto rebuilt = materialize_windows(back, dir);
  REQUIRE(rebuilt.size() == windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    CHECK(rebuilt[i].end_frame == windows[i].end_frame);
    REQUIRE(rebuilt[i].persons.size() == windows[i].persons.size());
    CHECK(rebuilt[i].persons[0].coords == windows[i].persons[0].coords);
  }

  write_text_file(dir / "v.tracks.jsonl", read_text_file(dir / "v.tracks.jsonl") + "\n");
  CHECK_THROWS_AS(materialize_windows(back, dir), StaleInputError);
  CHECK_NOTHROW(materialize_windows(back, dir, true));
}
