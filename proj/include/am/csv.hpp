#pragma once

// Minimal RFC-4180 style CSV reading/writing. Header row required by all
// callers in this project; empty cells denote NA.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace am::csv {

using Row = std::vector<std::string>;

struct Table {
  Row header;
  std::vector<Row> rows;
};

inline Row parse_line(const std::string& line) {
  Row out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(std::move(cell));
  return out;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() && in.eof()) break;
    Row r = parse_line(line);
    if (first) {
      t.header = std::move(r);
      first = false;
    } else {
      if (r.size() != t.header.size())
        throw std::runtime_error("csv: row " + std::to_string(t.rows.size() + 2) +
                                 " has " + std::to_string(r.size()) +
                                 " cells, expected " + std::to_string(t.header.size()) +
                                 " in " + path);
      t.rows.push_back(std::move(r));
    }
  }
  if (first) throw std::runtime_error("csv: empty file " + path);
  return t;
}

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_file(const std::string& path, const Table& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  auto emit = [&out](const Row& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out << ',';
      const std::string& c = r[i];
      if (c.find_first_of(",\"\n") != std::string::npos) {
        out << '"';
        for (char ch : c) {
          if (ch == '"') out << "\"\"";
          else out << ch;
        }
        out << '"';
      } else {
        out << c;
      }
    }
    out << '\n';
  };
  emit(t.header);
  for (const Row& r : t.rows) emit(r);
  if (!out) throw std::runtime_error("csv: write failed for " + path);
}

}  // namespace am::csv
