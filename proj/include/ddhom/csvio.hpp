#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ddhom/common.hpp"

namespace ddhom {

// Numbers are serialized with 17 significant digits so float64 values
// round-trip exactly through the text format.
inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw Error("cannot open for writing: " + path);
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << "\n";
    ncols_ = header.size();
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != ncols_) throw Error("csv row width mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::size_t ncols_ = 0;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw SchemaError("csv column not found: " + name);
  }
  bool has_col(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
  double num(std::size_t r, int c) const {
    const std::string& s = rows[r][static_cast<std::size_t>(c)];
    try {
      return std::stod(s);
    } catch (...) {
      throw SchemaError("csv cell is not numeric: '" + s + "'");
    }
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open for reading: " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (first) {
      t.header = cells;
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw SchemaError("csv row width mismatch in " + path);
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

}  // namespace ddhom
