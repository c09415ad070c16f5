#pragma once

// JSON schema for sequences, detections and tracks, plus JSONL frame results.
//
// Sequence file (schema version 1):
//   {
//     "version": 1, "sequence_id": "...", "fps": 25.0, "num_keypoints": 15,
//     "frames": [
//       { "frame": 0, "image_size": [w, h],
//         "detections": [
//           { "box": [x_min, y_min, x_max, y_max], "score": 0.9,
//             "keypoints": [[x, y, confidence, visible], ...],
//             "identity": 3,              // optional ground truth
//             "duplicate": true,          // optional, injected duplicate
//             "appearance": [...],        // optional, length d
//             "heatmaps": {"channels": K, "height": H, "width": W,
//                          "kernel_width": s, "data": [...]},   // optional
//             "crop": {"height": H, "width": W, "data": [...]}  // optional, 3 x H x W
//           } ] } ] }

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsat/core_types.hpp"
#include "dsat/tracker.hpp"

namespace dsat::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct FormatError : Error {
  enum class Kind { malformed_json, schema_version, inconsistent_keypoints, non_monotone_frames, invalid_field };
  Kind kind;
  FormatError(Kind k, const std::string& what) : Error(what), kind(k) {}
};

struct Frame {
  int index = 0;
  int image_width = 0;
  int image_height = 0;
  std::vector<Detection> detections;

  bool operator==(const Frame&) const = default;
};

struct SequenceFile {
  int version = kSchemaVersion;
  std::string sequence_id;
  double fps = 25.0;
  int num_keypoints = 0;
  std::vector<Frame> frames;

  bool operator==(const SequenceFile&) const = default;
};

// ---------------------------------------------------------------------------
// Encoding

inline json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json mat_to_json(const Mat& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

inline json to_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

inline json to_json(const Pose& p) {
  json kps = json::array();
  for (const auto& k : p.keypoints) kps.push_back({k.x, k.y, k.confidence, k.visible ? 1 : 0});
  return kps;
}

inline json to_json(const Detection& d) {
  json j;
  j["box"] = to_json(d.box);
  j["score"] = d.score;
  j["keypoints"] = to_json(d.pose);
  if (d.identity) j["identity"] = *d.identity;
  if (d.duplicate) j["duplicate"] = true;
  if (d.appearance) j["appearance"] = vec_to_json(*d.appearance);
  if (d.heatmaps) {
    const auto& h = *d.heatmaps;
    j["heatmaps"] = {{"channels", h.channels}, {"height", h.height}, {"width", h.width},
                     {"kernel_width", h.kernel_width}, {"data", mat_to_json(h.grid)}};
  }
  if (d.crop)
    j["crop"] = {{"height", d.crop->height}, {"width", d.crop->width},
                 {"data", mat_to_json(d.crop->pixels)}};
  return j;
}

inline json to_json(const Track& t) {
  return {{"id", t.id},
          {"embedding", vec_to_json(t.embedding)},
          {"last_pose", to_json(t.last_pose)},
          {"last_box", to_json(t.last_box)},
          {"frames_since_match", t.frames_since_match},
          {"active", t.active}};
}

inline json to_json(const SequenceFile& s) {
  json frames = json::array();
  for (const auto& f : s.frames) {
    json dets = json::array();
    for (const auto& d : f.detections) dets.push_back(to_json(d));
    frames.push_back({{"frame", f.index},
                      {"image_size", {f.image_width, f.image_height}},
                      {"detections", dets}});
  }
  return {{"version", s.version},      {"sequence_id", s.sequence_id},
          {"fps", s.fps},              {"num_keypoints", s.num_keypoints},
          {"frames", frames}};
}

inline json to_json(const FrameResult& r) {
  json assignments = json::array(), fresh = json::array();
  for (auto [d, id] : r.assignments) assignments.push_back({d, id});
  for (auto [d, id] : r.new_tracks) fresh.push_back({d, id});
  return {{"frame", r.frame},
          {"assignments", assignments},
          {"duplicates", r.duplicates},
          {"new_tracks", fresh},
          {"closed_tracks", r.closed_tracks}};
}

// ---------------------------------------------------------------------------
// Decoding

namespace detail {

inline FormatError invalid(const std::string& what) {
  return FormatError(FormatError::Kind::invalid_field, what);
}

template <typename T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) throw invalid(std::string("missing field \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw invalid(std::string("bad field \"") + key + "\": " + e.what());
  }
}

inline Mat mat_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != rows * cols)
    throw invalid(std::string(what) + ": payload size does not match its shape");
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

inline void note_unknown(const json& j, std::initializer_list<const char*> known,
                         const std::string& where, std::vector<std::string>* warnings) {
  if (!warnings || !j.is_object()) return;
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) warnings->push_back("ignoring unknown field \"" + key + "\" in " + where);
  }
}

}  // namespace detail

inline Box box_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw detail::invalid("box must have 4 entries");
  return {v[0], v[1], v[2], v[3]};
}

inline Pose pose_from_json(const json& j) {
  Pose p;
  for (const auto& k : j) {
    const auto v = k.get<std::vector<double>>();
    if (v.size() < 3 || v.size() > 4) throw detail::invalid("keypoint must be [x, y, c(, v)]");
    p.keypoints.push_back({v[0], v[1], v[2], v.size() == 4 && v[3] != 0.0});
  }
  return p;
}

inline Detection detection_from_json(const json& j, std::vector<std::string>* warnings = nullptr,
                                     const std::string& where = "detection") {
  detail::note_unknown(j, {"box", "score", "keypoints", "identity", "duplicate", "appearance", "heatmaps", "crop"},
                       where, warnings);
  Detection d;
  try {
    d.box = box_from_json(j.at("box"));
    d.pose = pose_from_json(j.at("keypoints"));
    d.score = j.value("score", 1.0);
    if (j.contains("identity")) d.identity = j.at("identity").get<int>();
    d.duplicate = j.value("duplicate", false);
    if (j.contains("appearance")) {
      const auto v = j.at("appearance").get<std::vector<double>>();
      d.appearance = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (j.contains("heatmaps")) {
      const auto& h = j.at("heatmaps");
      HeatmapSet hs;
      hs.channels = detail::get<int>(h, "channels");
      hs.height = detail::get<int>(h, "height");
      hs.width = detail::get<int>(h, "width");
      hs.kernel_width = h.value("kernel_width", 0.0);
      hs.grid = detail::mat_from_json(h.at("data"), hs.channels,
                                      static_cast<Eigen::Index>(hs.height) * hs.width, "heatmaps");
      d.heatmaps = std::move(hs);
    }
    if (j.contains("crop")) {
      const auto& c = j.at("crop");
      Crop cr;
      cr.height = detail::get<int>(c, "height");
      cr.width = detail::get<int>(c, "width");
      cr.pixels = detail::mat_from_json(c.at("data"), 3, static_cast<Eigen::Index>(cr.height) * cr.width,
                                        "crop");
      d.crop = std::move(cr);
    }
  } catch (const json::exception& e) {
    throw detail::invalid(where + ": " + e.what());
  }
  if (!d.box.valid()) throw detail::invalid(where + ": box must satisfy min < max");
  return d;
}

inline Track track_from_json(const json& j) {
  Track t;
  try {
    t.id = j.at("id").get<std::int64_t>();
    const auto e = j.at("embedding").get<std::vector<double>>();
    t.embedding = Eigen::Map<const Vec>(e.data(), static_cast<Eigen::Index>(e.size()));
    t.last_pose = pose_from_json(j.at("last_pose"));
    t.last_box = box_from_json(j.at("last_box"));
    t.frames_since_match = j.at("frames_since_match").get<int>();
    t.active = j.at("active").get<bool>();
  } catch (const json::exception& e) {
    throw detail::invalid(std::string("track: ") + e.what());
  }
  return t;
}

/// Validates and decodes a sequence. `expected_keypoints` (> 0) is used when
/// the file does not state its own keypoint count.
inline SequenceFile sequence_from_json(const json& j, int expected_keypoints = 0,
                                       std::vector<std::string>* warnings = nullptr) {
  if (!j.is_object()) throw detail::invalid("sequence must be a JSON object");
  detail::note_unknown(j, {"version", "sequence_id", "fps", "num_keypoints", "frames"}, "sequence",
                       warnings);
  SequenceFile s;
  s.version = j.value("version", kSchemaVersion);
  if (s.version != kSchemaVersion)
    throw FormatError(FormatError::Kind::schema_version,
                      "unsupported schema version " + std::to_string(s.version));
  s.sequence_id = j.value("sequence_id", std::string{});
  s.fps = j.value("fps", 25.0);
  s.num_keypoints = j.value("num_keypoints", expected_keypoints);
  if (!j.contains("frames") || !j.at("frames").is_array()) throw detail::invalid("missing frames array");
  int prev = -1;
  for (const auto& fj : j.at("frames")) {
    detail::note_unknown(fj, {"frame", "image_size", "detections"}, "frame", warnings);
    Frame f;
    f.index = detail::get<int>(fj, "frame");
    if (f.index <= prev)
      throw FormatError(FormatError::Kind::non_monotone_frames,
                        "non-monotone frame index " + std::to_string(f.index) + " after " +
                            std::to_string(prev));
    prev = f.index;
    if (fj.contains("image_size")) {
      const auto sz = fj.at("image_size").get<std::vector<int>>();
      if (sz.size() != 2) throw detail::invalid("image_size must be [w, h]");
      f.image_width = sz[0];
      f.image_height = sz[1];
    }
    const std::string where = "frame " + std::to_string(f.index);
    for (const auto& dj : fj.value("detections", json::array())) {
      Detection d = detection_from_json(dj, warnings, where);
      const int k = static_cast<int>(d.pose.size());
      if (s.num_keypoints <= 0) s.num_keypoints = k;
      if (k != s.num_keypoints)
        throw FormatError(FormatError::Kind::inconsistent_keypoints,
                          "inconsistent keypoint count in " + where + ": " + std::to_string(k) +
                              " vs " + std::to_string(s.num_keypoints));
      f.detections.push_back(std::move(d));
    }
    s.frames.push_back(std::move(f));
  }
  return s;
}

inline SequenceFile parse_sequence(const std::string& text, int expected_keypoints = 0,
                                   std::vector<std::string>* warnings = nullptr) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(FormatError::Kind::malformed_json, std::string("malformed JSON: ") + e.what());
  }
  return sequence_from_json(j, expected_keypoints, warnings);
}

inline std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open for writing: " + path);
  os << text;
}

inline SequenceFile load_sequence(const std::string& path, int expected_keypoints = 0,
                                  std::vector<std::string>* warnings = nullptr) {
  return parse_sequence(read_text(path), expected_keypoints, warnings);
}

inline void save_sequence(const std::string& path, const SequenceFile& s) {
  write_text(path, to_json(s).dump() + "\n");
}

inline FrameResult frame_result_from_json(const json& j) {
  FrameResult r;
  try {
    r.frame = j.at("frame").get<int>();
    for (const auto& a : j.at("assignments")) r.assignments.emplace_back(a.at(0).get<int>(), a.at(1).get<std::int64_t>());
    r.duplicates = j.at("duplicates").get<std::vector<int>>();
    for (const auto& a : j.at("new_tracks")) r.new_tracks.emplace_back(a.at(0).get<int>(), a.at(1).get<std::int64_t>());
    r.closed_tracks = j.at("closed_tracks").get<std::vector<std::int64_t>>();
  } catch (const json::exception& e) {
    throw detail::invalid(std::string("frame result: ") + e.what());
  }
  return r;
}

inline std::string to_jsonl(const std::vector<FrameResult>& results) {
  std::string out;
  for (const auto& r : results) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<FrameResult> parse_jsonl(const std::string& text) {
  std::vector<FrameResult> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(frame_result_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw FormatError(FormatError::Kind::malformed_json, std::string("malformed JSON: ") + e.what());
    }
  }
  return out;
}

}  // namespace dsat::io
