#pragma once

/**
 * Small file helpers: JSONL streams, whole-file reads, directory setup.
 * All writers emit deterministic bytes (nlohmann::json orders object keys).
 */

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpo/common.hpp"

namespace rpo {

using Json = nlohmann::json;

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_json(const std::filesystem::path& path, const Json& value) {
  write_text(path, value.dump(2) + "\n");
}

inline Json read_json(const std::filesystem::path& path) {
  return Json::parse(read_text(path));
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::string buffer;
  for (const auto& row : rows) {
    buffer += row.dump();
    buffer += '\n';
  }
  write_text(path, buffer);
}

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(Json::parse(line));
  }
  return rows;
}

inline bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b) {
  return read_text(a) == read_text(b);
}

}  // namespace rpo
