#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "scribeid/trajectory.hpp"

namespace scribeid {

// {"writer_id": str, "letter": str(1), "points": [[x, y, t|null], ...],
//  "strokes": [[start, end], ...], "device": str|null}
nlohmann::json to_json(const RawTrajectory& raw);
// Throws SchemaError on missing or mistyped fields.
RawTrajectory trajectory_from_json(const nlohmann::json& j);

// Throws ParseError naming the 1-based line for malformed JSON, SchemaError
// (also with the line) for records that do not match the schema.
std::vector<RawTrajectory> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<RawTrajectory>& records);

}  // namespace scribeid
