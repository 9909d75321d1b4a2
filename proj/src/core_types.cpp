#include "gar/core_types.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "gar/errors.hpp"

namespace gar {
namespace {

constexpr std::string_view kAnnotationHeader =
    "video_id,onset_frame,offset_frame,category,subject_id";

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::int64_t parse_int(std::string_view field, std::size_t row,
                       std::string_view column) {
  field = trim(field);
  std::int64_t value = 0;
  auto [ptr, ec] =
      std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw FormatError("annotations row " + std::to_string(row) + ": " +
                      std::string(column) + " '" + std::string(field) +
                      "' is not an integer");
  }
  return value;
}

}  // namespace

std::size_t Skeleton::valid_count() const {
  return static_cast<std::size_t>(std::count_if(
      joints.begin(), joints.end(), [](const Keypoint& k) { return k.valid; }));
}

std::string_view category_name(BehaviorCategory category) {
  switch (category) {
    case BehaviorCategory::kRestrictedRepetitive:
      return "restricted_repetitive";
    case BehaviorCategory::kSelfInjurious:
      return "self_injurious";
    case BehaviorCategory::kDisruptive:
      return "disruptive";
    case BehaviorCategory::kAggressive:
      return "aggressive";
    case BehaviorCategory::kElopement:
      return "elopement";
    case BehaviorCategory::kOutOfSeat:
      return "out_of_seat";
  }
  return "unknown";
}

BehaviorCategory parse_category(std::string_view name) {
  const std::string key = lower(trim(name));
  for (BehaviorCategory c : kAllCategories) {
    if (key == category_name(c)) return c;
  }
  std::string valid;
  for (BehaviorCategory c : kAllCategories) {
    if (!valid.empty()) valid += ", ";
    valid += category_name(c);
  }
  throw FormatError("unknown behavior category '" + std::string(name) +
                    "' (valid: " + valid + ")");
}

FrameLabel frame_label(std::int64_t frame_index,
                       std::span<const AnnotationEpisode> episodes) {
  FrameLabel label;
  for (const AnnotationEpisode& e : episodes) {
    if (frame_index >= e.onset_frame && frame_index <= e.offset_frame) {
      label.is_target = true;
      label.categories.insert(e.category);
    }
  }
  return label;
}

nlohmann::json joints_to_json(const Skeleton& skeleton) {
  nlohmann::json joints = nlohmann::json::array();
  for (const Keypoint& k : skeleton.joints) {
    joints.push_back({k.x, k.y, k.valid ? 1 : 0});
  }
  return joints;
}

Skeleton joints_from_json(const nlohmann::json& joints) {
  if (!joints.is_array()) throw FormatError("joints must be an array");
  if (joints.size() != kJointCount) {
    throw FormatError("skeleton has " + std::to_string(joints.size()) +
                      " joints, expected 17");
  }
  Skeleton s;
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const nlohmann::json& triple = joints[j];
    if (!triple.is_array() || triple.size() != 3 || !triple[0].is_number() ||
        !triple[1].is_number() || !triple[2].is_number_integer()) {
      throw FormatError("joint " + std::to_string(j) +
                        " must be [x, y, valid01]");
    }
    const auto flag = triple[2].get<std::int64_t>();
    if (flag != 0 && flag != 1) {
      throw FormatError("joint " + std::to_string(j) +
                        " validity flag must be 0 or 1");
    }
    if (flag == 1) {
      s.joints[j] = {triple[0].get<double>(), triple[1].get<double>(), true};
    }
  }
  return s;
}

std::vector<PoseFrame> parse_pose_stream(std::string_view text,
                                         IngestStats* stats) {
  IngestStats local;
  std::vector<PoseFrame> frames;
  std::size_t line_no = 0;
  for (std::string_view line : split_lines(text)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "pose stream line " + std::to_string(line_no);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": parse error: " + e.what());
    }
    if (!record.is_object() || !record.contains("frame") ||
        !record["frame"].is_number_integer() ||
        !record.contains("skeletons") || !record["skeletons"].is_array()) {
      throw FormatError(where +
                        ": expected {\"frame\": int, \"skeletons\": [...]}");
    }
    PoseFrame frame;
    frame.frame_index = record["frame"].get<std::int64_t>();
    if (frame.frame_index < 0) {
      throw FormatError(where + ": negative frame index");
    }
    std::unordered_set<int> ids;
    for (const nlohmann::json& sk : record["skeletons"]) {
      if (!sk.is_object() || !sk.contains("id") ||
          !sk["id"].is_number_integer() || !sk.contains("joints")) {
        throw FormatError(where + ": skeleton needs integer id and joints");
      }
      Skeleton s;
      try {
        s = joints_from_json(sk["joints"]);
      } catch (const FormatError& e) {
        throw FormatError(where + ": " + e.what());
      }
      s.detection_id = sk["id"].get<int>();
      if (!ids.insert(s.detection_id).second) {
        throw FormatError(where + ": duplicate detection id " +
                          std::to_string(s.detection_id));
      }
      ++local.skeletons;
      if (s.valid_count() < 2) {
        ++local.dropped_degenerate;
        continue;
      }
      frame.skeletons.push_back(s);
    }
    frames.push_back(std::move(frame));
  }
  std::stable_sort(frames.begin(), frames.end(),
                   [](const PoseFrame& a, const PoseFrame& b) {
                     return a.frame_index < b.frame_index;
                   });
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].frame_index == frames[i - 1].frame_index) {
      throw FormatError("pose stream: duplicate frame index " +
                        std::to_string(frames[i].frame_index));
    }
  }
  local.frames = frames.size();
  if (stats) *stats = local;
  return frames;
}

std::vector<PoseFrame> read_pose_stream(const std::filesystem::path& path,
                                        IngestStats* stats) {
  return parse_pose_stream(read_text_file(path), stats);
}

std::string format_pose_stream(std::span<const PoseFrame> frames) {
  std::string out;
  for (const PoseFrame& f : frames) {
    nlohmann::json skeletons = nlohmann::json::array();
    for (const Skeleton& s : f.skeletons) {
      nlohmann::json sk;
      sk["id"] = s.detection_id;
      sk["joints"] = joints_to_json(s);
      skeletons.push_back(std::move(sk));
    }
    nlohmann::json record;
    record["frame"] = f.frame_index;
    record["skeletons"] = std::move(skeletons);
    out += record.dump();
    out += '\n';
  }
  return out;
}

void write_pose_stream(const std::filesystem::path& path,
                       std::span<const PoseFrame> frames) {
  write_text_file(path, format_pose_stream(frames));
}

std::vector<AnnotationEpisode> parse_annotations(std::string_view text) {
  std::vector<std::string_view> lines = split_lines(text);
  if (lines.empty() || trim(lines.front()) != kAnnotationHeader) {
    throw FormatError("annotations: header must be '" +
                      std::string(kAnnotationHeader) + "'");
  }
  std::vector<AnnotationEpisode> episodes;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t row = i + 1;
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest = lines[i];
    while (true) {
      const std::size_t comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 5) {
      throw FormatError("annotations row " + std::to_string(row) +
                        ": expected 5 fields, got " +
                        std::to_string(fields.size()));
    }
    AnnotationEpisode e;
    e.video_id = std::string(trim(fields[0]));
    e.onset_frame = parse_int(fields[1], row, "onset_frame");
    e.offset_frame = parse_int(fields[2], row, "offset_frame");
    try {
      e.category = parse_category(fields[3]);
    } catch (const FormatError& err) {
      throw FormatError("annotations row " + std::to_string(row) + ": " +
                        err.what());
    }
    const std::string_view subject = trim(fields[4]);
    if (!subject.empty()) e.subject_id = std::string(subject);
    if (e.onset_frame > e.offset_frame) {
      throw FormatError("annotations row " + std::to_string(row) +
                        ": onset_frame > offset_frame");
    }
    episodes.push_back(std::move(e));
  }
  return episodes;
}

std::vector<AnnotationEpisode> read_annotations(
    const std::filesystem::path& path) {
  return parse_annotations(read_text_file(path));
}

std::string format_annotations(std::span<const AnnotationEpisode> episodes) {
  std::ostringstream out;
  out << kAnnotationHeader << '\n';
  for (const AnnotationEpisode& e : episodes) {
    out << e.video_id << ',' << e.onset_frame << ',' << e.offset_frame << ','
        << category_name(e.category) << ',' << e.subject_id.value_or("")
        << '\n';
  }
  return out.str();
}

void write_annotations(const std::filesystem::path& path,
                       std::span<const AnnotationEpisode> episodes) {
  write_text_file(path, format_annotations(episodes));
}

std::filesystem::path stream_meta_path(const std::filesystem::path& stream) {
  std::filesystem::path p = stream;
  p.replace_extension(".meta.json");
  return p;
}

StreamMeta read_stream_meta(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  StreamMeta meta;
  if (j.contains("video_id")) meta.video_id = j["video_id"].get<std::string>();
  if (j.contains("fps") && !j["fps"].is_null()) {
    meta.fps = j["fps"].get<double>();
    if (!(meta.fps > 0.0)) throw FormatError(path.string() + ": fps must be > 0");
  }
  return meta;
}

void write_stream_meta(const std::filesystem::path& path,
                       const StreamMeta& meta) {
  nlohmann::json j;
  j["video_id"] = meta.video_id;
  j["fps"] = meta.fps;
  write_text_file(path, j.dump(2) + "\n");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingFileError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace gar
