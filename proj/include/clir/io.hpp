#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <unistd.h>

#include <fmt/format.h>

#include "clir/embedding_store.hpp"
#include "clir/error.hpp"

namespace clir {

struct Topic {
  std::string id;
  std::string title;
  std::string description;

  /// Query text: title and description joined by a space.
  std::string text() const { return description.empty() ? title : title + " " + description; }
};

/// Tab-separated `query_id<TAB>title<TAB>description`; description may be omitted.
inline std::vector<Topic> read_topics(std::istream& in) {
  std::vector<Topic> topics;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = detail::trim_line(raw);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 2 || cols.size() > 3 || cols[0].empty()) {
      throw FormatError(fmt::format("topics line {}: expected query_id<TAB>title<TAB>description", line_no));
    }
    topics.push_back({std::string(cols[0]), std::string(cols[1]), cols.size() == 3 ? std::string(cols[2]) : ""});
  }
  return topics;
}

inline std::vector<Topic> read_topics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open topics file '{}'", path));
  return read_topics(in);
}

/// Writes `content` to a sibling temp file, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += fmt::format(".tmp{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write '{}'", tmp.string()));
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw FormatError(fmt::format("write to '{}' failed", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw FormatError(fmt::format("cannot move output into '{}': {}", path.string(), ec.message()));
  }
}

}  // namespace clir
