#include "gar/windows.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "gar/errors.hpp"
#include "gar/hashing.hpp"
#include "gar/rng.hpp"

namespace gar {

std::string_view task_name(LabelTask task) {
  return task == LabelTask::kDetect ? "detect" : "predict";
}

LabelTask parse_task(std::string_view name) {
  if (name == "detect") return LabelTask::kDetect;
  if (name == "predict") return LabelTask::kPredict;
  throw ConfigError("unknown task '" + std::string(name) +
                    "' (expected detect or predict)");
}

std::size_t window_frames(const WindowConfig& cfg, double fps) {
  const double frames = std::round(cfg.window_seconds * fps);
  if (!(frames >= 2.0)) {
    throw ConfigError("window of " + std::to_string(cfg.window_seconds) +
                      " s at " + std::to_string(fps) +
                      " fps is shorter than 2 frames");
  }
  return static_cast<std::size_t>(frames);
}

std::vector<int> WindowSample::track_ids() const {
  std::vector<int> ids;
  ids.reserve(persons.size());
  for (const NormalizedTrack& p : persons) ids.push_back(p.track_id);
  return ids;
}

FrameSpan WindowSample::span() const {
  return {end_frame - static_cast<std::int64_t>(frames) + 1, end_frame};
}

WindowSample build_window(const VideoTracks& video, std::int64_t end_frame,
                          std::span<const int> track_ids, std::size_t frames) {
  WindowSample w;
  w.video_id = video.video_id;
  w.end_frame = end_frame;
  w.frames = frames;
  w.label_frame = end_frame;
  const FrameSpan span = w.span();
  for (int id : track_ids) {
    auto it = std::find_if(video.tracks.begin(), video.tracks.end(),
                           [id](const Track& t) { return t.track_id == id; });
    if (it == video.tracks.end()) {
      throw FormatError("video " + video.video_id + " has no track " +
                        std::to_string(id));
    }
    w.persons.push_back(normalize_track(*it, span));
  }
  return w;
}

std::vector<WindowSample> make_windows(
    const VideoTracks& video, std::span<const AnnotationEpisode> episodes,
    const WindowConfig& cfg, WindowStats* stats) {
  if (cfg.stride_frames < 1) throw ConfigError("stride_frames must be >= 1");
  if (cfg.task == LabelTask::kPredict && cfg.horizon_seconds < 0.0) {
    throw ConfigError("horizon_seconds must be >= 0");
  }
  const std::size_t frames = window_frames(cfg, video.fps);
  const auto min_cover = static_cast<std::int64_t>(
      std::ceil(cfg.min_coverage * static_cast<double>(frames) - 1e-9));
  const auto horizon = static_cast<std::int64_t>(
      std::llround(cfg.horizon_seconds * video.fps));

  std::vector<AnnotationEpisode> own;
  for (const AnnotationEpisode& e : episodes) {
    if (e.video_id == video.video_id) own.push_back(e);
  }
  std::vector<const Track*> ordered;
  for (const Track& t : video.tracks) ordered.push_back(&t);
  std::sort(ordered.begin(), ordered.end(),
            [](const Track* a, const Track* b) {
              return a->track_id < b->track_id;
            });

  WindowStats local;
  std::vector<WindowSample> out;
  for (std::int64_t end =
           video.stream_first_frame + static_cast<std::int64_t>(frames) - 1;
       end <= video.stream_last_frame; end += cfg.stride_frames) {
    const std::int64_t target =
        cfg.task == LabelTask::kDetect ? end : end + horizon;
    if (target > video.stream_last_frame) {
      ++local.dropped_beyond_stream;
      continue;
    }
    const FrameSpan span{end - static_cast<std::int64_t>(frames) + 1, end};
    WindowSample w;
    w.video_id = video.video_id;
    w.end_frame = end;
    w.frames = frames;
    w.label_frame = target;
    for (const Track* t : ordered) {
      if (coverage(*t, span) >= min_cover) {
        w.persons.push_back(normalize_track(*t, span));
      }
    }
    if (w.persons.empty()) {
      ++local.dropped_no_person;
      continue;
    }
    FrameLabel label = frame_label(target, own);
    w.label = label.is_target;
    w.categories = std::move(label.categories);
    out.push_back(std::move(w));
  }
  local.emitted = out.size();
  if (stats) *stats = local;
  return out;
}

std::string_view split_name(SplitRole role) {
  switch (role) {
    case SplitRole::kTrain:
      return "train";
    case SplitRole::kVal:
      return "val";
    case SplitRole::kTest:
      return "test";
  }
  return "?";
}

std::vector<std::size_t> FoldPlan::indices(std::size_t fold,
                                           SplitRole role) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < roles.at(fold).size(); ++i) {
    if (roles[fold][i] == role) out.push_back(i);
  }
  return out;
}

std::size_t FoldPlan::block_count() const {
  if (block_of.empty()) return 0;
  return *std::max_element(block_of.begin(), block_of.end()) + 1;
}

FoldPlan plan_folds(std::span<const WindowSample> windows,
                    std::size_t fold_count, std::uint64_t seed) {
  if (fold_count < 2) {
    throw ConfigError(
        "fold_count must be >= 2 to form train/val/test splits per fold");
  }
  if (windows.size() < fold_count) {
    throw ConfigError("need at least " + std::to_string(fold_count) +
                      " windows, have " + std::to_string(windows.size()));
  }
  const std::size_t n = windows.size();

  // Blocks: connected runs of same-video windows less than one span apart.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (windows[a].video_id != windows[b].video_id) {
      return windows[a].video_id < windows[b].video_id;
    }
    if (windows[a].end_frame != windows[b].end_frame) {
      return windows[a].end_frame < windows[b].end_frame;
    }
    return a < b;
  });
  FoldPlan plan;
  plan.fold_count = fold_count;
  plan.seed = seed;
  plan.block_of.assign(n, 0);
  std::vector<std::vector<std::size_t>> blocks;
  for (std::size_t k = 0; k < n; ++k) {
    const WindowSample& w = windows[order[k]];
    bool join = false;
    if (k > 0) {
      const WindowSample& prev = windows[order[k - 1]];
      join = prev.video_id == w.video_id &&
             w.end_frame - prev.end_frame <
                 static_cast<std::int64_t>(std::max(w.frames, prev.frames));
    }
    if (!join) blocks.emplace_back();
    blocks.back().push_back(order[k]);
    plan.block_of[order[k]] = blocks.size() - 1;
  }
  if (blocks.size() < 3) {
    throw ConfigError(
        "only " + std::to_string(blocks.size()) +
        " independent window blocks; adjacent windows cannot be split into "
        "train/val/test (add videos or increase the stride)");
  }

  std::vector<std::size_t> shuffled(blocks.size());
  std::iota(shuffled.begin(), shuffled.end(), 0);
  Rng rng(seed);
  rng.shuffle(shuffled);

  const double total = static_cast<double>(n);
  plan.roles.assign(fold_count, std::vector<SplitRole>(n, SplitRole::kTrain));
  for (std::size_t f = 0; f < fold_count; ++f) {
    const std::size_t offset = f * blocks.size() / fold_count;
    std::array<std::size_t, 3> counts{};
    double cumulative = 0.0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      const auto& block = blocks[shuffled[(k + offset) % blocks.size()]];
      const double mid = cumulative + 0.5 * static_cast<double>(block.size());
      SplitRole role = SplitRole::kTrain;
      if (mid < kTestFraction * total) {
        role = SplitRole::kTest;
      } else if (mid < (kTestFraction + kValFraction) * total) {
        role = SplitRole::kVal;
      }
      for (std::size_t i : block) plan.roles[f][i] = role;
      counts[static_cast<std::size_t>(role)] += block.size();
      cumulative += static_cast<double>(block.size());
    }
    if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0) {
      throw ConfigError(
          "fold " + std::to_string(f) +
          " has an empty split: window blocks are too large to honor the "
          "50/20/30 ratio (add videos or increase the stride)");
    }
  }
  return plan;
}

std::size_t count_adjacency_violations(std::span<const WindowSample> windows,
                                       const FoldPlan& plan) {
  std::size_t violations = 0;
  for (std::size_t f = 0; f < plan.fold_count; ++f) {
    for (std::size_t i = 0; i < windows.size(); ++i) {
      for (std::size_t j = i + 1; j < windows.size(); ++j) {
        if (windows[i].video_id != windows[j].video_id) continue;
        const std::int64_t gap =
            std::llabs(windows[i].end_frame - windows[j].end_frame);
        if (gap < static_cast<std::int64_t>(windows[i].frames) &&
            plan.roles[f][i] != plan.roles[f][j]) {
          ++violations;
        }
      }
    }
  }
  return violations;
}

nlohmann::json fold_plan_to_json(const FoldPlan& plan) {
  nlohmann::json j;
  j["fold_count"] = plan.fold_count;
  j["seed"] = plan.seed;
  j["split_policy"] = "block rotation per fold, 50/20/30 train/val/test";
  j["block_of"] = plan.block_of;
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& roles : plan.roles) {
    std::string s;
    s.reserve(roles.size());
    for (SplitRole r : roles) s += split_name(r)[1];  // 'r', 'a', 'e'
    folds.push_back(s);
  }
  j["roles"] = folds;
  return j;
}

FoldPlan fold_plan_from_json(const nlohmann::json& j) {
  FoldPlan plan;
  plan.fold_count = j.at("fold_count").get<std::size_t>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.block_of = j.at("block_of").get<std::vector<std::size_t>>();
  for (const auto& s : j.at("roles")) {
    std::vector<SplitRole> roles;
    for (char c : s.get<std::string>()) {
      switch (c) {
        case 'r':
          roles.push_back(SplitRole::kTrain);
          break;
        case 'a':
          roles.push_back(SplitRole::kVal);
          break;
        case 'e':
          roles.push_back(SplitRole::kTest);
          break;
        default:
          throw FormatError("fold plan: bad role code");
      }
    }
    plan.roles.push_back(std::move(roles));
  }
  if (plan.roles.size() != plan.fold_count) {
    throw FormatError("fold plan: role table does not match fold_count");
  }
  return plan;
}

WindowRef window_ref(const WindowSample& w) {
  WindowRef r;
  r.video_id = w.video_id;
  r.end_frame = w.end_frame;
  r.label_frame = w.label_frame;
  r.label = w.label;
  r.categories = w.categories;
  r.track_ids = w.track_ids();
  r.actor_track_id = w.actor_track_id;
  return r;
}

namespace {

nlohmann::json categories_to_json(const CategorySet& cats) {
  nlohmann::json a = nlohmann::json::array();
  for (BehaviorCategory c : cats) a.push_back(category_name(c));
  return a;
}

}  // namespace

nlohmann::json manifest_to_json(const WindowManifest& m) {
  nlohmann::json j;
  j["format"] = "gar-windows";
  j["version"] = 1;
  j["config"] = {{"window_seconds", m.config.window_seconds},
                 {"stride_frames", m.config.stride_frames},
                 {"task", task_name(m.config.task)},
                 {"horizon_seconds", m.config.horizon_seconds},
                 {"min_coverage", m.config.min_coverage}};
  j["frames"] = m.frames;
  nlohmann::json sources = nlohmann::json::array();
  for (const WindowSource& s : m.sources) {
    sources.push_back({{"video_id", s.video_id},
                       {"track_file", s.track_file},
                       {"track_hash", s.track_hash},
                       {"annotations_file", s.annotations_file},
                       {"annotations_hash", s.annotations_hash}});
  }
  j["sources"] = sources;
  nlohmann::json windows = nlohmann::json::array();
  for (const WindowRef& w : m.windows) {
    nlohmann::json e;
    e["video_id"] = w.video_id;
    e["end_frame"] = w.end_frame;
    e["label_frame"] = w.label_frame;
    e["label"] = w.label;
    e["categories"] = categories_to_json(w.categories);
    e["track_ids"] = w.track_ids;
    e["actor_track_id"] =
        w.actor_track_id ? nlohmann::json(*w.actor_track_id) : nlohmann::json();
    windows.push_back(std::move(e));
  }
  j["windows"] = windows;
  j["folds"] = m.folds ? fold_plan_to_json(*m.folds) : nlohmann::json();
  j["stats"] = {{"emitted", m.stats.emitted},
                {"dropped_no_person", m.stats.dropped_no_person},
                {"dropped_beyond_stream", m.stats.dropped_beyond_stream}};
  j["run_config"] = m.run_config;
  return j;
}

WindowManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "gar-windows") {
      throw FormatError("not a window manifest");
    }
    WindowManifest m;
    const auto& c = j.at("config");
    m.config.window_seconds = c.at("window_seconds").get<double>();
    m.config.stride_frames = c.at("stride_frames").get<std::int64_t>();
    m.config.task = parse_task(c.at("task").get<std::string>());
    m.config.horizon_seconds = c.at("horizon_seconds").get<double>();
    m.config.min_coverage = c.value("min_coverage", 0.25);
    m.frames = j.at("frames").get<std::size_t>();
    for (const auto& s : j.at("sources")) {
      m.sources.push_back({s.at("video_id").get<std::string>(),
                           s.at("track_file").get<std::string>(),
                           s.at("track_hash").get<std::string>(),
                           s.value("annotations_file", ""),
                           s.value("annotations_hash", "")});
    }
    for (const auto& e : j.at("windows")) {
      WindowRef w;
      w.video_id = e.at("video_id").get<std::string>();
      w.end_frame = e.at("end_frame").get<std::int64_t>();
      w.label_frame = e.value("label_frame", w.end_frame);
      w.label = e.at("label").get<bool>();
      for (const auto& name : e.at("categories")) {
        w.categories.insert(parse_category(name.get<std::string>()));
      }
      w.track_ids = e.at("track_ids").get<std::vector<int>>();
      if (e.contains("actor_track_id") && !e["actor_track_id"].is_null()) {
        w.actor_track_id = e["actor_track_id"].get<int>();
      }
      m.windows.push_back(std::move(w));
    }
    if (j.contains("folds") && !j["folds"].is_null()) {
      m.folds = fold_plan_from_json(j["folds"]);
    }
    if (j.contains("stats")) {
      m.stats.emitted = j["stats"].value("emitted", std::size_t{0});
      m.stats.dropped_no_person =
          j["stats"].value("dropped_no_person", std::size_t{0});
      m.stats.dropped_beyond_stream =
          j["stats"].value("dropped_beyond_stream", std::size_t{0});
    }
    m.run_config = j.value("run_config", nlohmann::json::object());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("window manifest: ") + e.what());
  }
}

void write_manifest(const std::filesystem::path& path,
                    const WindowManifest& m) {
  write_text_file(path, manifest_to_json(m).dump(1) + "\n");
}

WindowManifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

std::vector<WindowSample> materialize_windows(
    const WindowManifest& m, const std::filesystem::path& base_dir,
    bool force) {
  std::map<std::string, VideoTracks> videos;
  for (const WindowSource& s : m.sources) {
    std::filesystem::path p = s.track_file;
    if (p.is_relative()) p = base_dir / p;
    const std::string text = read_text_file(p);
    if (!force && content_hash(text) != s.track_hash) {
      throw StaleInputError("track file " + p.string() +
                            " changed since the manifest was written "
                            "(rerun windows or pass --force)");
    }
    TrackFileHeader header;
    VideoTracks v;
    v.tracks = parse_track_file(text, &header);
    v.video_id = s.video_id;
    v.fps = header.fps;
    v.stream_first_frame = header.stream_first_frame;
    v.stream_last_frame = header.stream_last_frame;
    videos.emplace(s.video_id, std::move(v));
  }
  std::vector<WindowSample> out;
  out.reserve(m.windows.size());
  for (const WindowRef& r : m.windows) {
    auto it = videos.find(r.video_id);
    if (it == videos.end()) {
      throw FormatError("manifest window references unknown video " +
                        r.video_id);
    }
    WindowSample w = build_window(it->second, r.end_frame, r.track_ids, m.frames);
    w.label = r.label;
    w.categories = r.categories;
    w.label_frame = r.label_frame;
    w.actor_track_id = r.actor_track_id;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace gar
