#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gar/core_types.hpp"
#include "gar/rng.hpp"
#include "gar/tracking.hpp"
#include "gar/windows.hpp"

namespace gar {

enum class MotifKind { kJump, kHeadShake, kLeaveSeat };

std::string_view motif_name(MotifKind kind);
MotifKind parse_motif(std::string_view name);
// jump -> restricted_repetitive, head_shake -> disruptive,
// leave_seat -> out_of_seat.
BehaviorCategory default_category(MotifKind kind);

// Motif parameters, in multiples of the person's torso length / head width.
inline constexpr double kJumpAmplitude = 0.8;   // x torso length
inline constexpr double kJumpHz = 1.5;
inline constexpr double kArmPumpAmplitude = 0.5;  // x jump amplitude
inline constexpr double kHeadShakeAmplitude = 0.5;  // x head width
inline constexpr double kHeadShakeHz = 2.5;
inline constexpr double kGaitHz = 1.0;

struct MotifEvent {
  std::size_t person = 0;
  MotifKind kind = MotifKind::kJump;
  std::int64_t onset = 0;
  std::int64_t offset = 0;  // inclusive
  std::optional<BehaviorCategory> category;  // overrides the default mapping
};

struct ScheduleOptions {
  std::size_t motif_count = 2;
  double min_seconds = 60.0;
  double max_seconds = 90.0;
  double margin_seconds = 5.0;
  std::vector<MotifKind> kinds{MotifKind::kJump, MotifKind::kHeadShake};
};

struct SynthSceneSpec {
  std::string video_id = "synth";
  std::size_t person_count = 4;
  std::int64_t duration_frames = 900;
  double fps = kDefaultFps;
  std::vector<MotifEvent> motif_schedule;
  double noise_std = 1.0;  // pixels
  std::uint64_t seed = 0;
  double canvas_width = 1920.0;
  double canvas_height = 1080.0;
  double torso_length = 80.0;  // pixels
  // When set, motif_schedule is drawn from the seed instead.
  std::optional<ScheduleOptions> random_schedule;
};

// Ground truth: which synthetic person performed which motif. Synthetic
// streams use the person index as detection id.
struct ActorRecord {
  std::size_t person = 0;
  int detection_id = 0;
  std::string subject_id;
  BehaviorCategory category = BehaviorCategory::kRestrictedRepetitive;
  MotifKind motif = MotifKind::kJump;
  std::int64_t onset = 0;
  std::int64_t offset = 0;
};

struct SynthScene {
  StreamMeta meta;
  std::vector<PoseFrame> stream;
  std::vector<AnnotationEpisode> annotations;
  std::vector<ActorRecord> actors;
};

// Non-overlapping (in time) motif intervals, one per equal slot of the scene.
std::vector<MotifEvent> random_schedule(std::size_t person_count,
                                        std::int64_t duration_frames,
                                        double fps,
                                        const ScheduleOptions& options,
                                        Rng& rng);

// Throws ConfigError on out-of-range or same-person overlapping motifs.
SynthScene generate_synthetic_scene(const SynthSceneSpec& spec);

SynthSceneSpec scene_spec_from_json(const nlohmann::json& j);
nlohmann::json scene_spec_to_json(const SynthSceneSpec& spec);

nlohmann::json actors_to_json(const std::string& video_id,
                              std::span<const ActorRecord> actors);
std::vector<ActorRecord> actors_from_json(const nlohmann::json& j);

// Sets actor_track_id on each positive window: the window person whose
// dominant detection id belongs to an actor whose motif covers the label
// frame.
void assign_actor_tracks(std::vector<WindowSample>& windows,
                         std::span<const Track> tracks,
                         std::span<const ActorRecord> actors);

}  // namespace gar
