#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gar/errors.hpp"
#include "gar/synth.hpp"
#include "gar/tracking.hpp"

using namespace gar;

namespace {

const Skeleton& person_in(const PoseFrame& f, int id) {
  for (const Skeleton& s : f.skeletons) {
    if (s.detection_id == id) return s;
  }
  throw std::runtime_error("person missing");
}

// Frequency (Hz) of the largest non-DC DFT bin.
double dominant_hz(const std::vector<double>& x, double fps) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  std::size_t best = 1;
  double best_power = -1.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n);
      re += (x[t] - mean) * std::cos(a);
      im -= (x[t] - mean) * std::sin(a);
    }
    const double power = re * re + im * im;
    if (power > best_power) {
      best_power = power;
      best = k;
    }
  }
  return static_cast<double>(best) * fps / static_cast<double>(n);
}

SynthSceneSpec base_spec() {
  SynthSceneSpec spec;
  spec.video_id = "s";
  spec.person_count = 4;
  spec.duration_frames = 600;
  spec.noise_std = 0.0;
  spec.seed = 5;
  return spec;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  SynthSceneSpec spec = base_spec();
  spec.noise_std = 1.5;
  spec.motif_schedule = {{1, MotifKind::kJump, 100, 300, std::nullopt}};
  const SynthScene a = generate_synthetic_scene(spec);
  const SynthScene b = generate_synthetic_scene(spec);
  CHECK(a.stream == b.stream);
  CHECK(a.annotations == b.annotations);
  spec.seed = 6;
  CHECK_FALSE(generate_synthetic_scene(spec).stream == a.stream);
}

TEST_CASE("no motifs means no positive frames") {
  const SynthScene s = generate_synthetic_scene(base_spec());
  CHECK(s.annotations.empty());
  CHECK(s.actors.empty());
  for (std::int64_t f = 0; f < 600; ++f) CHECK_FALSE(frame_label(f, s.annotations).is_target);
  for (const PoseFrame& frame : s.stream) CHECK(frame.skeletons.size() == 4);
}

TEST_CASE("annotations mirror the motif schedule") {
  SynthSceneSpec spec = base_spec();
  spec.motif_schedule = {{2, MotifKind::kHeadShake, 50, 80, std::nullopt},
                         {0, MotifKind::kJump, 10, 20, BehaviorCategory::kAggressive}};
  const SynthScene s = generate_synthetic_scene(spec);
  REQUIRE(s.annotations.size() == 2);
  CHECK(s.annotations[0].onset_frame == 10);
  CHECK(s.annotations[0].category == BehaviorCategory::kAggressive);
  CHECK(s.annotations[1].category == BehaviorCategory::kDisruptive);
  CHECK(s.annotations[1].subject_id == std::optional<std::string>("P2"));
  CHECK(s.actors[0].detection_id == 2);
}

TEST_CASE("jump motif oscillates at its nominal frequency") {
  SynthSceneSpec spec = base_spec();
  spec.motif_schedule = {{0, MotifKind::kJump, 100, 399, std::nullopt}};
  const SynthScene s = generate_synthetic_scene(spec);
  std::vector<double> nose_y, wrist_rel;
  for (std::int64_t f = 100; f <= 399; ++f) {
    const Skeleton& p = person_in(s.stream[static_cast<std::size_t>(f)], 0);
    nose_y.push_back(p.joints[joint::kNose].y);
    wrist_rel.push_back(p.joints[joint::kLeftWrist].y - p.joints[joint::kLeftHip].y);
  }
  CHECK(dominant_hz(nose_y, 30.0) == doctest::Approx(kJumpHz));
  // Hip-relative motion survives normalization.
  CHECK(dominant_hz(wrist_rel, 30.0) == doctest::Approx(kJumpHz));
}

TEST_CASE("head shake moves only the head at its frequency") {
  SynthSceneSpec spec = base_spec();
  spec.motif_schedule = {{3, MotifKind::kHeadShake, 0, 299, std::nullopt}};
  const SynthScene s = generate_synthetic_scene(spec);
  std::vector<double> nose_x;
  const Skeleton& first = person_in(s.stream[0], 3);
  for (std::int64_t f = 0; f < 300; ++f) {
    const Skeleton& p = person_in(s.stream[static_cast<std::size_t>(f)], 3);
    nose_x.push_back(p.joints[joint::kNose].x);
    CHECK(p.joints[joint::kLeftHip].x == first.joints[joint::kLeftHip].x);
  }
  CHECK(dominant_hz(nose_x, 30.0) == doctest::Approx(kHeadShakeHz));
}

TEST_CASE("without noise, non-actors are perfectly still") {
  SynthSceneSpec spec = base_spec();
  spec.motif_schedule = {{1, MotifKind::kJump, 100, 300, std::nullopt}};
  const SynthScene s = generate_synthetic_scene(spec);
  for (int id : {0, 2, 3}) {
    const Skeleton& ref = person_in(s.stream[0], id);
    for (const PoseFrame& f : s.stream) CHECK(person_in(f, id) == ref);
  }
  CHECK_FALSE(person_in(s.stream[0], 1) == person_in(s.stream[150], 1));
}

TEST_CASE("leave seat walks off and disappears") {
  SynthSceneSpec spec = base_spec();
  spec.motif_schedule = {{0, MotifKind::kLeaveSeat, 100, 199, std::nullopt}};
  const SynthScene s = generate_synthetic_scene(spec);
  CHECK(s.stream[120].skeletons.size() == 4);
  CHECK(s.stream[160].skeletons.size() == 3);
  CHECK(s.stream[250].skeletons.size() == 4);
  CHECK(s.annotations[0].category == BehaviorCategory::kOutOfSeat);
}

TEST_CASE("invalid specs are rejected") {
  SynthSceneSpec spec = base_spec();
  spec.motif_schedule = {{9, MotifKind::kJump, 0, 10, std::nullopt}};
  CHECK_THROWS_AS(generate_synthetic_scene(spec), ConfigError);
  spec.motif_schedule = {{0, MotifKind::kJump, 0, 600, std::nullopt}};
  CHECK_THROWS_AS(generate_synthetic_scene(spec), ConfigError);
  spec.motif_schedule = {{0, MotifKind::kJump, 0, 50, std::nullopt},
                         {0, MotifKind::kHeadShake, 40, 60, std::nullopt}};
  CHECK_THROWS_AS(generate_synthetic_scene(spec), ConfigError);
  CHECK_THROWS_AS(parse_motif("wave"), ConfigError);
}

TEST_CASE("random schedules fit their slots") {
  Rng rng(1);
  ScheduleOptions o;
  o.motif_count = 4;
  o.min_seconds = 10;
  o.max_seconds = 20;
  const auto events = random_schedule(4, 9000, 30.0, o, rng);
  REQUIRE(events.size() == 4);
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(events[i].onset >= static_cast<std::int64_t>(i * 2250 + 150));
    CHECK(events[i].offset < static_cast<std::int64_t>((i + 1) * 2250 - 150) + 1);
    CHECK(events[i].offset - events[i].onset + 1 >= 299);
    CHECK(events[i].offset - events[i].onset + 1 <= 600);
    if (i > 0) CHECK(events[i].onset > events[i - 1].offset);
  }
}

TEST_CASE("scene spec json round trip") {
  SynthSceneSpec spec = base_spec();
  spec.motif_schedule = {{1, MotifKind::kHeadShake, 3, 9, BehaviorCategory::kElopement}};
  spec.random_schedule = ScheduleOptions{};
  const SynthSceneSpec back = scene_spec_from_json(scene_spec_to_json(spec));
  CHECK(back.person_count == spec.person_count);
  CHECK(back.motif_schedule.size() == 1);
  CHECK(back.motif_schedule[0].category == spec.motif_schedule[0].category);
  CHECK(back.random_schedule.has_value());
  CHECK(scene_spec_to_json(back) == scene_spec_to_json(spec));
}

TEST_CASE("actor tracks are assigned to positive windows") {
  SynthSceneSpec spec = base_spec();
  spec.noise_std = 1.0;
  spec.motif_schedule = {{2, MotifKind::kJump, 200, 450, std::nullopt}};
  const SynthScene s = generate_synthetic_scene(spec);
  const auto tracks = assemble_tracks(s.stream, 30.0, TrackingConfig{}.gate);
  REQUIRE(tracks.size() == 4);
  VideoTracks v{"s", 30.0, 0, 599, tracks};
  WindowConfig cfg;
  cfg.stride_frames = 30;
  auto windows = make_windows(v, s.annotations, cfg);
  assign_actor_tracks(windows, tracks, s.actors);
  std::size_t positives = 0;
  for (const WindowSample& w : windows) {
    if (!w.label) {
      CHECK_FALSE(w.actor_track_id.has_value());
      continue;
    }
    ++positives;
    REQUIRE(w.actor_track_id.has_value());
    const auto it = std::find_if(tracks.begin(), tracks.end(),
                                 [&](const Track& t) { return t.track_id == *w.actor_track_id; });
    CHECK(it->dominant_detection_id() == 2);
  }
  CHECK(positives > 0);
}
