#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

namespace kinact {

/// Reads one JSON value per non-blank line. Throws kIo / kParse with the
/// offending line number.
std::vector<nlohmann::json> read_ndjson(const std::filesystem::path& path);

void write_ndjson_line(std::ostream& os, const nlohmann::json& value);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& value,
                     int indent = 1);

}  // namespace kinact
