#include "gar/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gar/errors.hpp"

namespace gar {
namespace {

// Standing pose in torso units, hip center at the origin, y pointing down.
constexpr std::array<std::array<double, 2>, kJointCount> kTemplate = {{
    {0.00, -1.45},   // nose
    {-0.08, -1.52},  // left eye
    {0.08, -1.52},   // right eye
    {-0.18, -1.48},  // left ear
    {0.18, -1.48},   // right ear
    {-0.35, -1.00},  // left shoulder
    {0.35, -1.00},   // right shoulder
    {-0.45, -0.50},  // left elbow
    {0.45, -0.50},   // right elbow
    {-0.50, -0.05},  // left wrist
    {0.50, -0.05},   // right wrist
    {-0.20, 0.00},   // left hip
    {0.20, 0.00},    // right hip
    {-0.22, 0.90},   // left knee
    {0.22, 0.90},    // right knee
    {-0.22, 1.80},   // left ankle
    {0.22, 1.80},    // right ankle
}};

constexpr double kHeadWidth = 0.36;  // ear to ear, torso units

struct Person {
  double anchor_x = 0.0;
  double anchor_y = 0.0;
  double torso = 0.0;
  double exit_dx = 0.0;  // leave_seat displacement, pixels
};

void validate(const SynthSceneSpec& spec) {
  if (spec.person_count == 0) throw ConfigError("person_count must be >= 1");
  if (spec.duration_frames < 1) throw ConfigError("duration_frames must be >= 1");
  if (!(spec.fps > 0.0)) throw ConfigError("fps must be > 0");
  if (spec.noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  for (const MotifEvent& e : spec.motif_schedule) {
    if (e.person >= spec.person_count) {
      throw ConfigError("motif actor " + std::to_string(e.person) +
                        " >= person_count " +
                        std::to_string(spec.person_count));
    }
    if (e.onset < 0 || e.offset >= spec.duration_frames || e.onset > e.offset) {
      throw ConfigError("motif interval [" + std::to_string(e.onset) + "," +
                        std::to_string(e.offset) +
                        "] outside the scene duration");
    }
  }
  for (std::size_t a = 0; a < spec.motif_schedule.size(); ++a) {
    for (std::size_t b = a + 1; b < spec.motif_schedule.size(); ++b) {
      const MotifEvent& x = spec.motif_schedule[a];
      const MotifEvent& y = spec.motif_schedule[b];
      if (x.person == y.person && x.onset <= y.offset && y.onset <= x.offset) {
        throw ConfigError("overlapping motifs on person " +
                          std::to_string(x.person));
      }
    }
  }
}

}  // namespace

std::string_view motif_name(MotifKind kind) {
  switch (kind) {
    case MotifKind::kJump:
      return "jump";
    case MotifKind::kHeadShake:
      return "head_shake";
    case MotifKind::kLeaveSeat:
      return "leave_seat";
  }
  return "?";
}

MotifKind parse_motif(std::string_view name) {
  if (name == "jump") return MotifKind::kJump;
  if (name == "head_shake") return MotifKind::kHeadShake;
  if (name == "leave_seat") return MotifKind::kLeaveSeat;
  throw ConfigError("unknown motif '" + std::string(name) +
                    "' (expected jump, head_shake or leave_seat)");
}

BehaviorCategory default_category(MotifKind kind) {
  switch (kind) {
    case MotifKind::kJump:
      return BehaviorCategory::kRestrictedRepetitive;
    case MotifKind::kHeadShake:
      return BehaviorCategory::kDisruptive;
    case MotifKind::kLeaveSeat:
      return BehaviorCategory::kOutOfSeat;
  }
  return BehaviorCategory::kRestrictedRepetitive;
}

std::vector<MotifEvent> random_schedule(std::size_t person_count,
                                        std::int64_t duration_frames,
                                        double fps,
                                        const ScheduleOptions& options,
                                        Rng& rng) {
  std::vector<MotifEvent> events;
  if (options.motif_count == 0 || options.kinds.empty()) return events;
  const double slot =
      static_cast<double>(duration_frames) / static_cast<double>(options.motif_count);
  const double margin = options.margin_seconds * fps;
  for (std::size_t i = 0; i < options.motif_count; ++i) {
    const double room = slot - 2.0 * margin;
    if (room < 1.0) throw ConfigError("scene too short for the motif schedule");
    double length = rng.uniform(options.min_seconds, options.max_seconds) * fps;
    length = std::min(length, room);
    const double start =
        static_cast<double>(i) * slot + margin + rng.uniform() * (room - length);
    MotifEvent e;
    e.person = rng.below(person_count);
    e.kind = options.kinds[i % options.kinds.size()];
    e.onset = static_cast<std::int64_t>(std::floor(start));
    e.offset = std::min<std::int64_t>(
        duration_frames - 1,
        e.onset + static_cast<std::int64_t>(std::floor(length)) - 1);
    events.push_back(e);
  }
  return events;
}

SynthScene generate_synthetic_scene(const SynthSceneSpec& input) {
  SynthSceneSpec spec = input;
  Rng rng(spec.seed);
  if (spec.random_schedule) {
    spec.motif_schedule = random_schedule(spec.person_count,
                                          spec.duration_frames, spec.fps,
                                          *spec.random_schedule, rng);
  }
  validate(spec);

  const std::size_t n = spec.person_count;
  const auto cols = static_cast<std::size_t>(
      std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  std::vector<Person> persons(n);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t r = p / cols;
    const std::size_t c = p % cols;
    Person& person = persons[p];
    person.anchor_x = (static_cast<double>(c) + 0.5) /
                      static_cast<double>(cols) * spec.canvas_width;
    person.anchor_y = (static_cast<double>(r) + 0.5) /
                      static_cast<double>(rows) * spec.canvas_height;
    person.torso = spec.torso_length * rng.uniform(0.9, 1.1);
    person.exit_dx = person.anchor_x < 0.5 * spec.canvas_width
                         ? -(person.anchor_x + 2.0 * person.torso)
                         : spec.canvas_width - person.anchor_x + 2.0 * person.torso;
  }

  SynthScene scene;
  scene.meta = {spec.video_id, spec.fps};
  for (const MotifEvent& e : spec.motif_schedule) {
    const BehaviorCategory cat = e.category.value_or(default_category(e.kind));
    const std::string subject = "P" + std::to_string(e.person);
    scene.annotations.push_back(
        {spec.video_id, e.onset, e.offset, cat, subject});
    scene.actors.push_back({e.person, static_cast<int>(e.person), subject, cat,
                            e.kind, e.onset, e.offset});
  }
  std::sort(scene.annotations.begin(), scene.annotations.end(),
            [](const AnnotationEpisode& a, const AnnotationEpisode& b) {
              return a.onset_frame < b.onset_frame;
            });

  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  scene.stream.reserve(static_cast<std::size_t>(spec.duration_frames));
  for (std::int64_t f = 0; f < spec.duration_frames; ++f) {
    PoseFrame frame;
    frame.frame_index = f;
    for (std::size_t p = 0; p < n; ++p) {
      const Person& person = persons[p];
      const MotifEvent* active = nullptr;
      for (const MotifEvent& e : spec.motif_schedule) {
        if (e.person == p && f >= e.onset && f <= e.offset) active = &e;
      }
      std::array<std::array<double, 2>, kJointCount> offsets{};
      double shift_x = 0.0;
      bool absent = false;
      if (active) {
        const double tau = static_cast<double>(f - active->onset) / spec.fps;
        switch (active->kind) {
          case MotifKind::kJump: {
            const double lift = -kJumpAmplitude * person.torso *
                                std::sin(kTwoPi * kJumpHz * tau);
            for (auto& o : offsets) o[1] += lift;
            // Arms pump with the jump, so the motion survives hip-centering.
            offsets[joint::kLeftElbow][1] += 0.5 * kArmPumpAmplitude * lift;
            offsets[joint::kRightElbow][1] += 0.5 * kArmPumpAmplitude * lift;
            offsets[joint::kLeftWrist][1] += kArmPumpAmplitude * lift;
            offsets[joint::kRightWrist][1] += kArmPumpAmplitude * lift;
            break;
          }
          case MotifKind::kHeadShake: {
            const double dx = kHeadShakeAmplitude * kHeadWidth * person.torso *
                              std::sin(kTwoPi * kHeadShakeHz * tau);
            for (std::size_t j = joint::kNose; j <= joint::kRightEar; ++j) {
              offsets[j][0] += dx;
            }
            break;
          }
          case MotifKind::kLeaveSeat: {
            const double walk_frames =
                0.5 * static_cast<double>(active->offset - active->onset + 1);
            const double elapsed = static_cast<double>(f - active->onset);
            if (elapsed >= walk_frames) {
              absent = true;
            } else {
              shift_x = person.exit_dx * elapsed / walk_frames;
              const double swing = 0.3 * person.torso *
                                   std::sin(kTwoPi * kGaitHz * tau);
              offsets[joint::kLeftKnee][0] += 0.5 * swing;
              offsets[joint::kRightKnee][0] -= 0.5 * swing;
              offsets[joint::kLeftAnkle][0] += swing;
              offsets[joint::kRightAnkle][0] -= swing;
            }
            break;
          }
        }
      }
      // Noise is drawn for every person and joint so that the random stream
      // does not depend on the motif schedule.
      Skeleton s;
      s.detection_id = static_cast<int>(p);
      for (std::size_t j = 0; j < kJointCount; ++j) {
        const double nx = spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0;
        const double ny = spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0;
        s.joints[j] = {person.anchor_x + shift_x +
                           kTemplate[j][0] * person.torso + offsets[j][0] + nx,
                       person.anchor_y + kTemplate[j][1] * person.torso +
                           offsets[j][1] + ny,
                       true};
      }
      if (!absent) frame.skeletons.push_back(s);
    }
    rng.shuffle(frame.skeletons);
    scene.stream.push_back(std::move(frame));
  }
  return scene;
}

SynthSceneSpec scene_spec_from_json(const nlohmann::json& j) {
  try {
    SynthSceneSpec spec;
    spec.video_id = j.value("video_id", spec.video_id);
    spec.person_count = j.value("person_count", spec.person_count);
    spec.duration_frames = j.value("duration_frames", spec.duration_frames);
    spec.fps = j.value("fps", spec.fps);
    spec.noise_std = j.value("noise_std", spec.noise_std);
    spec.seed = j.value("seed", spec.seed);
    spec.torso_length = j.value("torso_length", spec.torso_length);
    if (j.contains("canvas")) {
      spec.canvas_width = j["canvas"].at(0).get<double>();
      spec.canvas_height = j["canvas"].at(1).get<double>();
    }
    for (const auto& m : j.value("motif_schedule", nlohmann::json::array())) {
      MotifEvent e;
      e.person = m.at("person").get<std::size_t>();
      e.kind = parse_motif(m.at("motif").get<std::string>());
      e.onset = m.at("onset").get<std::int64_t>();
      e.offset = m.at("offset").get<std::int64_t>();
      if (m.contains("category")) {
        e.category = parse_category(m["category"].get<std::string>());
      }
      spec.motif_schedule.push_back(e);
    }
    if (j.contains("random_schedule") && !j["random_schedule"].is_null()) {
      const auto& r = j["random_schedule"];
      ScheduleOptions o;
      o.motif_count = r.value("motif_count", o.motif_count);
      o.min_seconds = r.value("min_seconds", o.min_seconds);
      o.max_seconds = r.value("max_seconds", o.max_seconds);
      o.margin_seconds = r.value("margin_seconds", o.margin_seconds);
      if (r.contains("kinds")) {
        o.kinds.clear();
        for (const auto& k : r["kinds"]) {
          o.kinds.push_back(parse_motif(k.get<std::string>()));
        }
      }
      spec.random_schedule = o;
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
}

nlohmann::json scene_spec_to_json(const SynthSceneSpec& spec) {
  nlohmann::json j;
  j["video_id"] = spec.video_id;
  j["person_count"] = spec.person_count;
  j["duration_frames"] = spec.duration_frames;
  j["fps"] = spec.fps;
  j["noise_std"] = spec.noise_std;
  j["seed"] = spec.seed;
  j["torso_length"] = spec.torso_length;
  j["canvas"] = {spec.canvas_width, spec.canvas_height};
  nlohmann::json motifs = nlohmann::json::array();
  for (const MotifEvent& e : spec.motif_schedule) {
    nlohmann::json m = {{"person", e.person},
                        {"motif", motif_name(e.kind)},
                        {"onset", e.onset},
                        {"offset", e.offset}};
    if (e.category) m["category"] = category_name(*e.category);
    motifs.push_back(m);
  }
  j["motif_schedule"] = motifs;
  if (spec.random_schedule) {
    const ScheduleOptions& o = *spec.random_schedule;
    nlohmann::json kinds = nlohmann::json::array();
    for (MotifKind k : o.kinds) kinds.push_back(motif_name(k));
    j["random_schedule"] = {{"motif_count", o.motif_count},
                            {"min_seconds", o.min_seconds},
                            {"max_seconds", o.max_seconds},
                            {"margin_seconds", o.margin_seconds},
                            {"kinds", kinds}};
  }
  return j;
}

nlohmann::json actors_to_json(const std::string& video_id,
                              std::span<const ActorRecord> actors) {
  nlohmann::json list = nlohmann::json::array();
  for (const ActorRecord& a : actors) {
    list.push_back({{"person", a.person},
                    {"detection_id", a.detection_id},
                    {"subject_id", a.subject_id},
                    {"category", category_name(a.category)},
                    {"motif", motif_name(a.motif)},
                    {"onset", a.onset},
                    {"offset", a.offset}});
  }
  return {{"video_id", video_id}, {"actors", list}};
}

std::vector<ActorRecord> actors_from_json(const nlohmann::json& j) {
  std::vector<ActorRecord> out;
  try {
    for (const auto& a : j.at("actors")) {
      ActorRecord r;
      r.person = a.at("person").get<std::size_t>();
      r.detection_id = a.at("detection_id").get<int>();
      r.subject_id = a.value("subject_id", "");
      r.category = parse_category(a.at("category").get<std::string>());
      r.motif = parse_motif(a.at("motif").get<std::string>());
      r.onset = a.at("onset").get<std::int64_t>();
      r.offset = a.at("offset").get<std::int64_t>();
      out.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("actor map: ") + e.what());
  }
  return out;
}

void assign_actor_tracks(std::vector<WindowSample>& windows,
                         std::span<const Track> tracks,
                         std::span<const ActorRecord> actors) {
  std::map<int, int> dominant;
  for (const Track& t : tracks) dominant[t.track_id] = t.dominant_detection_id();
  for (WindowSample& w : windows) {
    w.actor_track_id.reset();
    if (!w.label) continue;
    for (const ActorRecord& a : actors) {
      if (w.label_frame < a.onset || w.label_frame > a.offset) continue;
      for (const NormalizedTrack& p : w.persons) {
        auto it = dominant.find(p.track_id);
        if (it != dominant.end() && it->second == a.detection_id) {
          w.actor_track_id = p.track_id;
          break;
        }
      }
      if (w.actor_track_id) break;
    }
  }
}

}  // namespace gar
