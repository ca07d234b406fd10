#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fundus/error.hpp"

namespace fundus::detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::NotFound, "cannot open '" + path.string() + "'");
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::Io, "cannot write '" + path.string() + "'");
  return out;
}

}  // namespace fundus::detail
