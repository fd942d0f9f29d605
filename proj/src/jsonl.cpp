#include "scribeid/jsonl.hpp"

#include <fstream>
#include <string>

#include "scribeid/errors.hpp"

namespace scribeid {

using nlohmann::json;

json to_json(const RawTrajectory& raw) {
  json points = json::array();
  for (const Point& p : raw.points) {
    points.push_back(json::array({p.x, p.y, p.t ? json(*p.t) : json(nullptr)}));
  }
  json strokes = json::array();
  for (const StrokeRange& s : raw.strokes) strokes.push_back(json::array({s.start, s.end}));
  json j;
  j["writer_id"] = raw.writer_id;
  j["letter"] = std::string(1, raw.letter);
  j["points"] = std::move(points);
  j["strokes"] = std::move(strokes);
  j["device"] = raw.device ? json(*raw.device) : json(nullptr);
  return j;
}

RawTrajectory trajectory_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("record is not an object");
  auto require = [&](const char* key) -> const json& {
    auto it = j.find(key);
    if (it == j.end()) throw SchemaError(std::string("missing field '") + key + "'");
    return *it;
  };
  RawTrajectory raw;
  const json& writer = require("writer_id");
  if (!writer.is_string()) throw SchemaError("'writer_id' must be a string");
  raw.writer_id = writer.get<std::string>();
  const json& letter = require("letter");
  if (!letter.is_string() || letter.get<std::string>().size() != 1) {
    throw SchemaError("'letter' must be a one-character string");
  }
  raw.letter = letter.get<std::string>()[0];
  const json& points = require("points");
  if (!points.is_array()) throw SchemaError("'points' must be an array");
  raw.points.reserve(points.size());
  for (const json& p : points) {
    if (!p.is_array() || p.size() < 2 || p.size() > 3 || !p[0].is_number() || !p[1].is_number()) {
      throw SchemaError("each point must be [x, y] or [x, y, t|null]");
    }
    Point pt{p[0].get<double>(), p[1].get<double>(), std::nullopt};
    if (p.size() == 3 && !p[2].is_null()) {
      if (!p[2].is_number()) throw SchemaError("point timestamp must be a number or null");
      pt.t = p[2].get<double>();
    }
    raw.points.push_back(pt);
  }
  if (auto it = j.find("strokes"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw SchemaError("'strokes' must be an array");
    for (const json& s : *it) {
      if (!s.is_array() || s.size() != 2 || !s[0].is_number_integer() || !s[1].is_number_integer()) {
        throw SchemaError("each stroke must be [start, end]");
      }
      raw.strokes.push_back({s[0].get<int>(), s[1].get<int>()});
    }
  }
  if (auto it = j.find("device"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw SchemaError("'device' must be a string or null");
    raw.device = it->get<std::string>();
  }
  return raw;
}

std::vector<RawTrajectory> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<RawTrajectory> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      out.push_back(trajectory_from_json(j));
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<RawTrajectory>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const RawTrajectory& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace scribeid
