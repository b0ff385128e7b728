#include "kinact/ndjson.hpp"

#include <fstream>
#include <string>

#include "kinact/error.hpp"

namespace kinact {

std::vector<nlohmann::json> read_ndjson(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_ndjson_line(std::ostream& os, const nlohmann::json& value) {
  os << value.dump() << '\n';
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& value, int indent) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::kIo, "cannot write " + path.string());
  os << value.dump(indent) << '\n';
}

}  // namespace kinact
