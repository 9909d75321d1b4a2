#include "gar/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "gar/checkpoint.hpp"
#include "gar/core_types.hpp"
#include "gar/errors.hpp"
#include "gar/hashing.hpp"
#include "gar/model.hpp"
#include "gar/phenotypes.hpp"
#include "gar/svg.hpp"
#include "gar/synth.hpp"
#include "gar/tracking.hpp"
#include "gar/train_eval.hpp"
#include "gar/windows.hpp"
#include "json.hpp"

namespace gar {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kTrainManifestName = "train_manifest.json";

// Values given on the command line win; otherwise the config file section;
// otherwise the compiled default already stored in the variable.
class Resolver {
 public:
  Resolver(const CLI::App* app, const json* section)
      : app_(app), section_(section) {}

  template <typename T>
  void apply(const std::string& flag, const std::string& key, T& value) {
    if (app_->count(flag) == 0 && section_ && section_->contains(key)) {
      try {
        value = section_->at(key).get<T>();
      } catch (const json::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
    }
    resolved_[key] = value;
  }

  const json& resolved() const { return resolved_; }

 private:
  const CLI::App* app_;
  const json* section_;
  json resolved_ = json::object();
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    json j = json::parse(read_text_file(path));
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
}

const json* section(const json& config, const std::string& name) {
  auto it = config.find(name);
  return it == config.end() ? nullptr : &*it;
}

// Path of `p` relative to directory `base`, so manifests do not depend on
// where the pipeline was run from.
std::string relative_to(const fs::path& p, const fs::path& base) {
  const fs::path abs_p = fs::weakly_canonical(fs::absolute(p));
  const fs::path abs_b =
      fs::weakly_canonical(fs::absolute(base.empty() ? fs::path(".") : base));
  fs::path rel = abs_p.lexically_relative(abs_b);
  return rel.empty() ? abs_p.generic_string() : rel.generic_string();
}

fs::path parent_dir(const fs::path& p) {
  return p.has_parent_path() ? p.parent_path() : fs::path(".");
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) {
    throw MissingFileError(what + " not found: " + p.generic_string());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

struct Context {
  std::ostream& out;
  std::ostream& err;
};

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out_dir = ".";
  int scenes = 1;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a, const json& run_config, Context& ctx) {
  require_file(a.spec, "scene spec");
  const std::string spec_text = read_text_file(a.spec);
  json spec_json;
  try {
    spec_json = json::parse(spec_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("scene spec " + a.spec + ": " + e.what());
  }
  SynthSceneSpec base = scene_spec_from_json(spec_json);
  if (a.seed) base.seed = *a.seed;
  if (a.scenes < 1) throw ConfigError("--scenes must be >= 1");
  const fs::path out_dir = a.out_dir;
  json files = json::array();
  for (int i = 0; i < a.scenes; ++i) {
    SynthSceneSpec spec = base;
    if (a.scenes > 1) {
      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "_%03d", i);
      spec.video_id += suffix;
      spec.seed = base.seed + static_cast<std::uint64_t>(i);
    }
    const SynthScene scene = generate_synthetic_scene(spec);
    const fs::path stream = out_dir / (spec.video_id + ".poses.jsonl");
    const fs::path annotations = out_dir / (spec.video_id + ".annotations.csv");
    const fs::path actors = out_dir / (spec.video_id + ".actors.json");
    write_pose_stream(stream, scene.stream);
    write_stream_meta(stream_meta_path(stream), scene.meta);
    write_annotations(annotations, scene.annotations);
    write_text_file(actors, dump(actors_to_json(spec.video_id, scene.actors)));
    files.push_back({{"video_id", spec.video_id},
                     {"seed", spec.seed},
                     {"stream", relative_to(stream, out_dir)},
                     {"stream_hash", file_hash(stream)},
                     {"annotations", relative_to(annotations, out_dir)},
                     {"annotations_hash", file_hash(annotations)},
                     {"actors", relative_to(actors, out_dir)}});
    ctx.err << "synth: " << spec.video_id << " " << scene.stream.size()
            << " frames, " << scene.annotations.size() << " episodes\n";
  }
  json manifest = {{"command", "synth"},
                   {"config", run_config},
                   {"spec_hash", content_hash(spec_text)},
                   {"scenes", files}};
  write_text_file(out_dir / "synth_manifest.json", dump(manifest));
  return kExitOk;
}

// ---- track ----------------------------------------------------------------

struct TrackArgs {
  std::string stream;
  std::string out;
  double gate = 0.5 * kDefaultImageDiagonal;
  std::optional<double> fps;
};

int cmd_track(const TrackArgs& a, Context& ctx) {
  require_file(a.stream, "pose stream");
  const std::string text = read_text_file(a.stream);
  IngestStats stats;
  const std::vector<PoseFrame> frames = parse_pose_stream(text, &stats);
  StreamMeta meta;
  meta.video_id = fs::path(a.stream).stem().stem().string();
  const fs::path meta_path = stream_meta_path(a.stream);
  if (fs::is_regular_file(meta_path)) meta = read_stream_meta(meta_path);
  if (a.fps) meta.fps = *a.fps;
  if (!(meta.fps > 0.0)) throw ConfigError("--fps must be > 0");
  if (!(a.gate > 0.0)) throw ConfigError("--gate must be > 0");

  const std::vector<Track> tracks = assemble_tracks(frames, meta.fps, a.gate);
  TrackFileHeader header;
  header.video_id = meta.video_id;
  header.fps = meta.fps;
  header.gate = a.gate;
  if (!frames.empty()) {
    header.stream_first_frame = frames.front().frame_index;
    header.stream_last_frame = frames.back().frame_index;
  }
  const fs::path out = a.out;
  header.input_hashes[relative_to(a.stream, parent_dir(out))] = content_hash(text);
  write_track_file(out, header, tracks);
  ctx.err << "track: " << meta.video_id << " " << tracks.size() << " tracks from "
          << stats.skeletons << " skeletons (" << stats.dropped_degenerate
          << " degenerate dropped)\n";
  return kExitOk;
}

// ---- windows --------------------------------------------------------------

struct WindowsArgs {
  std::vector<std::string> tracks;
  std::vector<std::string> annotations;
  std::vector<std::string> actors;
  std::string out;
  std::string task = "detect";
  double window_seconds = 4.0;
  std::int64_t stride_frames = 30;
  double horizon_seconds = 180.0;
  int folds = 5;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_windows(const WindowsArgs& a, const json& run_config, Context& ctx) {
  WindowConfig cfg;
  cfg.task = parse_task(a.task);
  cfg.window_seconds = a.window_seconds;
  cfg.stride_frames = a.stride_frames;
  cfg.horizon_seconds = a.horizon_seconds;
  if (!(cfg.window_seconds > 0.0)) throw ConfigError("--window-seconds must be > 0");
  if (cfg.stride_frames < 1) throw ConfigError("--stride-frames must be >= 1");
  if (cfg.horizon_seconds < 0.0) throw ConfigError("--horizon-seconds must be >= 0");
  if (a.folds < 2) throw ConfigError("--folds must be >= 2");

  const fs::path out = a.out;
  const fs::path out_dir = parent_dir(out);
  std::vector<AnnotationEpisode> episodes;
  std::map<std::string, std::string> annotation_file, annotation_hash;
  for (const std::string& path : a.annotations) {
    require_file(path, "annotations");
    const std::string text = read_text_file(path);
    const auto eps = parse_annotations(text);
    for (const auto& e : eps) {
      annotation_file.emplace(e.video_id, relative_to(path, out_dir));
      annotation_hash.emplace(e.video_id, content_hash(text));
    }
    episodes.insert(episodes.end(), eps.begin(), eps.end());
  }
  std::map<std::string, std::vector<ActorRecord>> actors;
  for (const std::string& path : a.actors) {
    require_file(path, "actor map");
    const json j = json::parse(read_text_file(path));
    actors[j.at("video_id").get<std::string>()] = actors_from_json(j);
  }

  WindowManifest manifest;
  manifest.config = cfg;
  std::vector<WindowSample> all;
  double fps = -1.0;
  for (const std::string& path : a.tracks) {
    require_file(path, "track file");
    const std::string text = read_text_file(path);
    TrackFileHeader header;
    VideoTracks video;
    video.tracks = parse_track_file(text, &header);
    for (const auto& [input, hash] : header.input_hashes) {
      const fs::path src = parent_dir(path) / input;
      if (fs::is_regular_file(src) && file_hash(src) != hash && !a.force) {
        throw StaleInputError("track file " + path + " is older than its stream " +
                              src.generic_string() + " (rerun track or pass --force)");
      }
    }
    video.video_id = header.video_id;
    video.fps = header.fps;
    video.stream_first_frame = header.stream_first_frame;
    video.stream_last_frame = header.stream_last_frame;
    if (fps < 0.0) fps = video.fps;
    if (video.fps != fps) {
      throw ConfigError("track files disagree on fps (" + std::to_string(fps) +
                        " vs " + std::to_string(video.fps) + ")");
    }
    WindowStats stats;
    std::vector<WindowSample> ws = make_windows(video, episodes, cfg, &stats);
    if (auto it = actors.find(video.video_id); it != actors.end()) {
      assign_actor_tracks(ws, video.tracks, it->second);
    }
    manifest.stats.emitted += stats.emitted;
    manifest.stats.dropped_no_person += stats.dropped_no_person;
    manifest.stats.dropped_beyond_stream += stats.dropped_beyond_stream;
    WindowSource src;
    src.video_id = video.video_id;
    src.track_file = relative_to(path, out_dir);
    src.track_hash = content_hash(text);
    if (auto it = annotation_file.find(video.video_id); it != annotation_file.end()) {
      src.annotations_file = it->second;
      src.annotations_hash = annotation_hash.at(video.video_id);
    }
    manifest.sources.push_back(src);
    for (auto& w : ws) all.push_back(std::move(w));
  }
  if (all.empty()) throw ConfigError("no windows could be formed from the inputs");
  manifest.frames = window_frames(cfg, fps);
  for (const WindowSample& w : all) manifest.windows.push_back(window_ref(w));
  manifest.folds = plan_folds(all, static_cast<std::size_t>(a.folds), a.seed);
  manifest.run_config = run_config;
  write_manifest(out, manifest);
  const auto positives = std::count_if(all.begin(), all.end(),
                                       [](const WindowSample& w) { return w.label; });
  ctx.err << "windows: " << all.size() << " windows (" << positives
          << " positive), " << manifest.folds->block_count() << " blocks\n";
  return kExitOk;
}

// ---- shared loading -------------------------------------------------------

struct LoadedWindows {
  WindowManifest manifest;
  std::vector<WindowSample> windows;
  std::string hash;
};

LoadedWindows load_windows(const std::string& path, bool force) {
  require_file(path, "window manifest");
  LoadedWindows lw;
  const std::string text = read_text_file(path);
  lw.hash = content_hash(text);
  try {
    lw.manifest = manifest_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw FormatError("window manifest " + path + ": " + e.what());
  }
  lw.windows = materialize_windows(lw.manifest, parent_dir(path), force);
  return lw;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string windows;
  std::string out = "checkpoints";
  std::string variant = "PAtt";
  int folds = 5;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::size_t batch = 16;
  std::size_t patience = 5;
  std::size_t max_epochs = 200;
  double positive_weight = 1.0;
  int jobs = 1;
  bool force = false;
};

int cmd_train(const TrainArgs& a, const json& run_config, const json* model_section,
              Context& ctx) {
  LoadedWindows lw = load_windows(a.windows, a.force);
  ModelConfig model = model_section ? model_config_from_json(*model_section)
                                    : ModelConfig{};
  model.variant = parse_variant(a.variant);
  model.frames = lw.manifest.frames;
  validate(model);
  TrainConfig tc;
  tc.lr = a.lr;
  tc.batch_size = a.batch;
  tc.patience = a.patience;
  tc.max_epochs = a.max_epochs;
  tc.positive_weight = a.positive_weight;
  tc.seed = a.seed;
  validate(tc);
  if (a.folds < 2) throw ConfigError("--folds must be >= 2");
  if (a.jobs < 1) throw ConfigError("--jobs must be >= 1");

  FoldPlan plan;
  if (lw.manifest.folds &&
      lw.manifest.folds->fold_count == static_cast<std::size_t>(a.folds)) {
    plan = *lw.manifest.folds;
  } else {
    plan = plan_folds(lw.windows, static_cast<std::size_t>(a.folds), a.seed);
  }
  const std::string plan_hash = content_hash(fold_plan_to_json(plan).dump());

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  const std::size_t folds = plan.fold_count;
  std::vector<std::optional<TrainResult>> results(folds);
  std::vector<std::exception_ptr> errors(folds);
  std::mutex log_mutex;
  auto run_fold = [&](std::size_t f) {
    try {
      TrainConfig fold_cfg = tc;
      fold_cfg.seed = tc.seed + f;
      results[f] = train_fold(lw.windows, plan, f, model, fold_cfg,
                              [&](const EpochLog& e) {
                                std::lock_guard<std::mutex> lock(log_mutex);
                                ctx.err << "train: fold " << f << " epoch " << e.epoch
                                        << " train_loss " << e.train_loss
                                        << " val_loss " << e.val_loss
                                        << (e.improved ? " *" : "") << "\n";
                              });
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t f;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= folds) return;
        f = next++;
      }
      run_fold(f);
    }
  };
  const std::size_t threads = std::min<std::size_t>(folds, static_cast<std::size_t>(a.jobs));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  json fold_entries = json::array();
  for (std::size_t f = 0; f < folds; ++f) {
    const TrainResult& r = *results[f];
    for (const auto& w : r.warnings) ctx.err << "warning: fold " << f << ": " << w << "\n";
    Checkpoint ckpt;
    ckpt.params = r.params;
    ckpt.card.config = model;
    ckpt.card.seed = tc.seed + f;
    ckpt.card.parameter_count = parameter_count(r.params);
    ckpt.card.manifest_hash = lw.hash;
    ckpt.card.training = {{"fold", f},
                          {"train_config", train_config_to_json(tc)},
                          {"best_epoch", r.best_epoch},
                          {"best_val_loss", r.best_val_loss},
                          {"epochs_run", r.log.size()}};
    const std::string name = "fold_" + std::to_string(f) + ".ckpt";
    const fs::path path = out_dir / name;
    save_checkpoint(path, ckpt);
    fold_entries.push_back({{"fold", f},
                            {"checkpoint", name},
                            {"checkpoint_hash", file_hash(path)},
                            {"seed", tc.seed + f},
                            {"train_windows", plan.indices(f, SplitRole::kTrain).size()},
                            {"val_windows", plan.indices(f, SplitRole::kVal).size()},
                            {"test_windows", plan.indices(f, SplitRole::kTest).size()},
                            {"training", train_result_summary(r)}});
  }
  json manifest = {{"command", "train"},
                   {"config", run_config},
                   {"variant", variant_name(model.variant)},
                   {"model", model_config_to_json(model)},
                   {"train", train_config_to_json(tc)},
                   {"windows_manifest", relative_to(a.windows, out_dir)},
                   {"windows_manifest_hash", lw.hash},
                   {"fold_plan_hash", plan_hash},
                   {"fold_plan", fold_plan_to_json(plan)},
                   {"folds", fold_entries}};
  write_text_file(out_dir / kTrainManifestName, dump(manifest));
  ctx.err << "train: wrote " << folds << " checkpoints to " << out_dir.generic_string()
          << "\n";
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoints;
  std::string windows;
  std::string out;
  double threshold = 0.5;
  bool bootstrap = false;
  std::size_t bootstrap_resamples = kBootstrapResamples;
  std::uint64_t seed = 0;
  std::size_t bench_runs = 0;
  bool force = false;
};

std::vector<std::vector<WindowSample>> clips_by_video(
    const std::vector<WindowSample>& windows, std::span<const std::size_t> idx,
    std::size_t max_clips) {
  std::vector<std::vector<WindowSample>> clips;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i : idx) {
    const WindowSample& w = windows[i];
    auto it = slot.find(w.video_id);
    if (it == slot.end()) {
      if (clips.size() >= max_clips) continue;
      it = slot.emplace(w.video_id, clips.size()).first;
      clips.emplace_back();
    }
    clips[it->second].push_back(w);
  }
  return clips;
}

int cmd_eval(const EvalArgs& a, Context& ctx) {
  const fs::path dir = a.checkpoints;
  const fs::path manifest_path = dir / kTrainManifestName;
  if (!fs::is_regular_file(manifest_path)) {
    throw MissingFileError("no trained checkpoints: " + manifest_path.generic_string() +
                           " not found (run train first)");
  }
  const json tm = json::parse(read_text_file(manifest_path));
  std::string windows_path = a.windows;
  if (windows_path.empty()) {
    windows_path = (dir / tm.at("windows_manifest").get<std::string>()).string();
  }
  LoadedWindows lw = load_windows(windows_path, a.force);
  if (lw.hash != tm.at("windows_manifest_hash").get<std::string>() && !a.force) {
    throw StaleInputError("window manifest " + windows_path +
                          " differs from the one used for training (pass --force)");
  }
  const FoldPlan plan = fold_plan_from_json(tm.at("fold_plan"));
  if (plan.block_of.size() != lw.windows.size()) {
    throw ConfigError("fold plan does not match the window manifest");
  }

  EvalReport report;
  report.variant = tm.at("variant").get<std::string>();
  report.task = std::string(task_name(lw.manifest.config.task));
  report.threshold = a.threshold;
  report.inputs = {{"windows_manifest_hash", lw.hash}, {"checkpoints", json::array()}};
  std::vector<WindowPrediction> pooled;
  std::vector<double> f1s;
  std::optional<Checkpoint> first;
  for (const json& entry : tm.at("folds")) {
    const std::size_t f = entry.at("fold").get<std::size_t>();
    const fs::path ckpt_path = dir / entry.at("checkpoint").get<std::string>();
    if (!fs::is_regular_file(ckpt_path)) {
      throw MissingFileError("checkpoint not found: " + ckpt_path.generic_string());
    }
    const std::string hash = file_hash(ckpt_path);
    if (hash != entry.at("checkpoint_hash").get<std::string>() && !a.force) {
      throw StaleInputError("checkpoint " + ckpt_path.generic_string() +
                            " does not match the training manifest (pass --force)");
    }
    report.inputs["checkpoints"].push_back(
        {{"fold", f}, {"file", entry.at("checkpoint")}, {"hash", hash}});
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    const auto test = plan.indices(f, SplitRole::kTest);
    auto preds = predict_windows(ckpt.params, ckpt.card.config, lw.windows, test,
                                 a.threshold);
    const FoldMetrics m = metrics_from_predictions(preds);
    report.folds.push_back(m);
    f1s.push_back(m.f1);
    pooled.insert(pooled.end(), preds.begin(), preds.end());
    if (!first) first = std::move(ckpt);
  }
  report.summary = aggregate_cv(f1s);
  report.tpr = tpr_per_category(pooled);
  if (a.bootstrap) {
    report.bootstrap = bootstrap_f1(pooled, a.bootstrap_resamples, a.seed);
    report.ci_method = "fold_normal+bootstrap";
  }
  if (a.bench_runs > 0 && first) {
    const auto test = plan.indices(0, SplitRole::kTest);
    const auto clips = clips_by_video(lw.windows, test, 14);
    report.runtime = benchmark_inference(first->params, first->card.config, clips,
                                         a.bench_runs);
  }
  const fs::path out = a.out.empty() ? dir / "eval_report.json" : fs::path(a.out);
  write_text_file(out, dump(eval_report_to_json(report)));
  ctx.out << format_results_table(report);
  return kExitOk;
}

// ---- phenotype ------------------------------------------------------------

struct PhenotypeArgs {
  std::string checkpoint;
  std::string windows;
  std::string category = "restricted_repetitive";
  std::size_t k = 5;
  double floor = 0.8;
  std::uint64_t seed = 0;
  std::size_t max_iters = kDefaultKMedoidsIters;
  bool silhouette = false;
  std::string out = "phenotypes";
  bool force = false;
};

int cmd_phenotype(const PhenotypeArgs& a, const json& run_config, Context& ctx) {
  require_file(a.checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  LoadedWindows lw = load_windows(a.windows, a.force);
  if (lw.hash != ckpt.card.manifest_hash && !a.force) {
    throw StaleInputError("window manifest " + a.windows +
                          " differs from the checkpoint's training manifest "
                          "(pass --force)");
  }
  const BehaviorCategory category = parse_category(a.category);
  PhenotypeOptions opts;
  opts.k = a.k;
  opts.floor = a.floor;
  opts.seed = a.seed;
  opts.max_iters = a.max_iters;
  opts.silhouette_sweep = a.silhouette;
  const PhenotypeResult r =
      extract_phenotype(ckpt.params, ckpt.card.config, lw.windows, category, opts);
  const fs::path out_dir = a.out;
  const std::string stem = "phenotype_" + std::string(category_name(category));
  json j = phenotype_to_json(r);
  const WindowSample& rep = lw.windows[r.representative_window];
  j["representative"]["video_id"] = rep.video_id;
  j["representative"]["end_frame"] = rep.end_frame;
  j["inputs"] = {{"checkpoint_hash", file_hash(a.checkpoint)},
                 {"windows_manifest_hash", lw.hash}};
  j["config"] = run_config;
  const std::string svg = render_phenotype_svg(rep, r.representative_track_id, r.boxes);
  j["svg"] = stem + ".svg";
  write_text_file(out_dir / (stem + ".svg"), svg);
  write_text_file(out_dir / (stem + ".json"), dump(j));
  ctx.out << "phenotype " << category_name(category) << ": " << r.qualifying
          << " qualifying windows, representative " << rep.video_id << "@"
          << rep.end_frame << " track " << r.representative_track_id << "\n";
  if (r.caveat) ctx.out << "caveat: " << *r.caveat << "\n";
  return kExitOk;
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint;
  std::string windows;
  std::size_t runs = 50;
  std::size_t clips = 14;
  std::string out;
  bool force = false;
};

int cmd_bench(const BenchArgs& a, Context& ctx) {
  require_file(a.checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  LoadedWindows lw = load_windows(a.windows, a.force);
  std::vector<std::size_t> all(lw.windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto clips = clips_by_video(lw.windows, all, a.clips);
  const RuntimeStats s =
      benchmark_inference(ckpt.params, ckpt.card.config, clips, a.runs);
  json j = runtime_stats_to_json(s);
  j["variant"] = variant_name(ckpt.card.config.variant);
  if (!a.out.empty()) write_text_file(a.out, dump(j));
  ctx.out << j.dump() << "\n";
  return kExitOk;
}

// ---- dispatch -------------------------------------------------------------

std::string json_error(const std::string& kind, int code, const std::string& message) {
  return json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump();
}

int dispatch(const std::vector<std::string>& args, Context& ctx) {
  CLI::App app{"Group activity recognition on 2D pose streams", "gar"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON config file; sections per subcommand plus \"model\"; "
                 "flags override file values");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate synthetic scenes");
  synth->add_option("--spec", sa.spec, "Scene spec JSON")->required();
  synth->add_option("--out", sa.out_dir, "Output directory")->capture_default_str();
  synth->add_option("--scenes", sa.scenes,
                    "Number of scenes; scene i uses seed+i and id suffix _iii")
      ->capture_default_str();
  auto* synth_seed = synth->add_option("--seed", "Override the spec seed");

  TrackArgs ta;
  auto* track = app.add_subcommand("track", "Link per-frame skeletons into tracks");
  track->add_option("--stream", ta.stream, "Pose stream (JSON lines)")->required();
  track->add_option("--out", ta.out, "Track file to write")->required();
  track->add_option("--gate", ta.gate,
                    "Largest accepted matching cost in pixels (default half the "
                    "1920x1080 diagonal)")
      ->capture_default_str();
  auto* track_fps = track->add_option("--fps", "Frame rate (default from the "
                                               "stream sidecar, else 30)");

  WindowsArgs wa;
  auto* windows = app.add_subcommand("windows", "Cut labeled windows and plan folds");
  windows->add_option("--tracks", wa.tracks, "Track files")->required();
  windows->add_option("--annotations", wa.annotations, "Annotation CSV files")
      ->required();
  windows->add_option("--actors", wa.actors, "Synthetic actor maps (optional)");
  windows->add_option("--out", wa.out, "Window manifest to write")->required();
  windows->add_option("--task", wa.task, "detect or predict")->capture_default_str();
  windows->add_option("--window-seconds", wa.window_seconds, "Window length (s)")
      ->capture_default_str();
  windows->add_option("--stride-frames", wa.stride_frames, "Window stride (frames)")
      ->capture_default_str();
  windows->add_option("--horizon-seconds", wa.horizon_seconds,
                      "Prediction horizon (s), predict task only")
      ->capture_default_str();
  windows->add_option("--folds", wa.folds, "Cross-validation folds")
      ->capture_default_str();
  windows->add_option("--seed", wa.seed, "Fold plan seed")->capture_default_str();
  windows->add_flag("--force", wa.force, "Accept inputs whose hashes changed");

  TrainArgs tra;
  auto* train = app.add_subcommand("train", "Cross-validated training");
  train->add_option("--windows", tra.windows, "Window manifest")->required();
  train->add_option("--out", tra.out, "Checkpoint directory")->capture_default_str();
  train->add_option("--variant", tra.variant, "TCN, PAtt, PTAtt or PTJAtt")
      ->capture_default_str();
  train->add_option("--folds", tra.folds, "Cross-validation folds")
      ->capture_default_str();
  train->add_option("--seed", tra.seed, "Initialization/shuffle seed (fold f uses seed+f)")
      ->capture_default_str();
  train->add_option("--lr", tra.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--batch", tra.batch, "Batch size")->capture_default_str();
  train->add_option("--patience", tra.patience,
                    "Epochs without validation improvement before stopping")
      ->capture_default_str();
  train->add_option("--max-epochs", tra.max_epochs, "Epoch cap")->capture_default_str();
  train->add_option("--positive-weight", tra.positive_weight,
                    "Loss weight of positive windows")
      ->capture_default_str();
  train->add_option("--jobs", tra.jobs, "Folds trained in parallel")
      ->capture_default_str();
  train->add_flag("--force", tra.force, "Accept inputs whose hashes changed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate fold checkpoints on their test splits");
  eval->add_option("--checkpoints", ea.checkpoints, "Checkpoint directory")->required();
  eval->add_option("--windows", ea.windows,
                   "Window manifest (default: the one used for training)");
  eval->add_option("--out", ea.out, "Report JSON (default <checkpoints>/eval_report.json)");
  eval->add_option("--threshold", ea.threshold, "Decision threshold")
      ->capture_default_str();
  eval->add_flag("--bootstrap", ea.bootstrap,
                 "Also report a bootstrap CI over pooled test windows");
  eval->add_option("--bootstrap-resamples", ea.bootstrap_resamples, "Bootstrap resamples")
      ->capture_default_str();
  eval->add_option("--seed", ea.seed, "Bootstrap seed")->capture_default_str();
  eval->add_option("--bench-runs", ea.bench_runs,
                   "Include an inference timing with this many runs (0 = off)")
      ->capture_default_str();
  eval->add_flag("--force", ea.force, "Accept inputs whose hashes changed");

  PhenotypeArgs pa;
  auto* pheno = app.add_subcommand("phenotype", "Cluster attended persons per category");
  pheno->add_option("--checkpoint", pa.checkpoint, "Checkpoint file")->required();
  pheno->add_option("--windows", pa.windows, "Window manifest")->required();
  pheno->add_option("--category", pa.category, "Behavior category")
      ->capture_default_str();
  pheno->add_option("--k", pa.k, "Number of medoids")->capture_default_str();
  pheno->add_option("--floor", pa.floor, "Minimum predicted probability")
      ->capture_default_str();
  pheno->add_option("--seed", pa.seed, "Clustering seed")->capture_default_str();
  pheno->add_option("--max-iters", pa.max_iters, "Swap iteration cap")
      ->capture_default_str();
  pheno->add_flag("--silhouette", pa.silhouette, "Report a silhouette sweep over k = 2..10");
  pheno->add_option("--out", pa.out, "Output directory")->capture_default_str();
  pheno->add_flag("--force", pa.force, "Accept inputs whose hashes changed");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time inference");
  bench->add_option("--checkpoint", ba.checkpoint, "Checkpoint file")->required();
  bench->add_option("--windows", ba.windows, "Window manifest")->required();
  bench->add_option("--runs", ba.runs, "Timed runs (2 warmups excluded)")
      ->capture_default_str();
  bench->add_option("--clips", ba.clips, "Number of clips (one per video)")
      ->capture_default_str();
  bench->add_option("--out", ba.out, "Stats JSON (optional)");
  bench->add_flag("--force", ba.force, "Accept inputs whose hashes changed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    ctx.out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    ctx.out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  const json config = load_config(config_path);
  if (synth->parsed()) {
    Resolver r(synth, section(config, "synth"));
    r.apply("--spec", "spec", sa.spec);
    r.apply("--out", "out", sa.out_dir);
    r.apply("--scenes", "scenes", sa.scenes);
    if (synth_seed->count()) sa.seed = synth_seed->as<std::uint64_t>();
    json resolved = r.resolved();
    if (sa.seed) resolved["seed"] = *sa.seed;
    return cmd_synth(sa, resolved, ctx);
  }
  if (track->parsed()) {
    Resolver r(track, section(config, "track"));
    r.apply("--gate", "gate", ta.gate);
    if (track_fps->count()) ta.fps = track_fps->as<double>();
    return cmd_track(ta, ctx);
  }
  if (windows->parsed()) {
    Resolver r(windows, section(config, "windows"));
    r.apply("--task", "task", wa.task);
    r.apply("--window-seconds", "window_seconds", wa.window_seconds);
    r.apply("--stride-frames", "stride_frames", wa.stride_frames);
    r.apply("--horizon-seconds", "horizon_seconds", wa.horizon_seconds);
    r.apply("--folds", "folds", wa.folds);
    r.apply("--seed", "seed", wa.seed);
    return cmd_windows(wa, r.resolved(), ctx);
  }
  if (train->parsed()) {
    Resolver r(train, section(config, "train"));
    r.apply("--variant", "variant", tra.variant);
    r.apply("--folds", "folds", tra.folds);
    r.apply("--seed", "seed", tra.seed);
    r.apply("--lr", "lr", tra.lr);
    r.apply("--batch", "batch", tra.batch);
    r.apply("--patience", "patience", tra.patience);
    r.apply("--max-epochs", "max_epochs", tra.max_epochs);
    r.apply("--positive-weight", "positive_weight", tra.positive_weight);
    r.apply("--jobs", "jobs", tra.jobs);
    json resolved = r.resolved();
    // Parallelism does not change results; keep it out of the manifest.
    resolved.erase("jobs");
    const json* model = section(config, "model");
    if (model) resolved["model"] = *model;
    return cmd_train(tra, resolved, model, ctx);
  }
  if (eval->parsed()) {
    Resolver r(eval, section(config, "eval"));
    r.apply("--threshold", "threshold", ea.threshold);
    r.apply("--bootstrap-resamples", "bootstrap_resamples", ea.bootstrap_resamples);
    r.apply("--seed", "seed", ea.seed);
    r.apply("--bench-runs", "bench_runs", ea.bench_runs);
    if (eval->count("--bootstrap") == 0) {
      if (const json* s = section(config, "eval"); s && s->contains("bootstrap")) {
        ea.bootstrap = s->at("bootstrap").get<bool>();
      }
    }
    return cmd_eval(ea, ctx);
  }
  if (pheno->parsed()) {
    Resolver r(pheno, section(config, "phenotype"));
    r.apply("--category", "category", pa.category);
    r.apply("--k", "k", pa.k);
    r.apply("--floor", "floor", pa.floor);
    r.apply("--seed", "seed", pa.seed);
    r.apply("--max-iters", "max_iters", pa.max_iters);
    return cmd_phenotype(pa, r.resolved(), ctx);
  }
  if (bench->parsed()) {
    Resolver r(bench, section(config, "bench"));
    r.apply("--runs", "runs", ba.runs);
    r.apply("--clips", "clips", ba.clips);
    return cmd_bench(ba, ctx);
  }
  throw ConfigError("no subcommand given");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  try {
    return dispatch(args, ctx);
  } catch (const MissingFileError& e) {
    err << json_error("missing_file", kExitMissingFile, e.what()) << "\n";
    return kExitMissingFile;
  } catch (const ConfigError& e) {
    err << json_error("config", kExitConfig, e.what()) << "\n";
    return kExitConfig;
  } catch (const NumericFault& e) {
    err << json_error("numeric_fault", kExitNumeric, e.what()) << "\n";
    return kExitNumeric;
  } catch (const StaleInputError& e) {
    err << json_error("stale_input", kExitFailure, e.what()) << "\n";
    return kExitFailure;
  } catch (const FormatError& e) {
    err << json_error("format", kExitFailure, e.what()) << "\n";
    return kExitFailure;
  } catch (const nlohmann::json::exception& e) {
    err << json_error("format", kExitFailure, e.what()) << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << json_error("internal", kExitFailure, e.what()) << "\n";
    return kExitFailure;
  }
}

}  // namespace gar
