#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ecoroute/errors.hpp"
#include "ecoroute/util.hpp"

namespace ecoroute {

// Minimal strict CSV: UTF-8, comma separator, '.' decimal point, no quoting.
// All file formats in this project are plain enough that quoting never occurs.

class CsvReader {
 public:
  /// Free-form header; callers locate columns by name.
  explicit CsvReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw IoError("cannot open: " + path);
    std::string header;
    if (!std::getline(in_, header)) throw ParseError(path, 1, "missing header");
    strip_cr(header);
    split(header, columns_);
    line_no_ = 1;
  }

  CsvReader(const std::string& path, const std::vector<std::string>& required_columns,
            std::size_t min_required = 0)
      : path_(path), in_(path) {
    if (!in_) throw IoError("cannot open: " + path);
    std::string header;
    if (!std::getline(in_, header)) throw ParseError(path, 1, "missing header");
    strip_cr(header);
    split(header, columns_);
    const std::size_t need = min_required == 0 ? required_columns.size() : min_required;
    for (std::size_t i = 0; i < need; ++i) {
      if (i >= columns_.size() || columns_[i] != required_columns[i])
        throw ParseError(path_, 1,
                         "expected column '" + required_columns[i] + "' at position " +
                             std::to_string(i + 1) + ", got '" +
                             (i < columns_.size() ? columns_[i] : "") + "'");
    }
    // Optional trailing columns must still match the documented names.
    for (std::size_t i = need; i < required_columns.size() && i < columns_.size(); ++i) {
      if (columns_[i] != required_columns[i])
        throw ParseError(path_, 1, "unexpected column '" + columns_[i] + "'");
    }
    line_no_ = 1;
  }

  /// Reads the next row into fields; returns false at EOF. Blank lines skipped.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      strip_cr(line);
      if (line.empty()) continue;
      split(line, fields);
      if (fields.size() != columns_.size())
        throw ParseError(path_, line_no_,
                         "expected " + std::to_string(columns_.size()) + " fields, got " +
                             std::to_string(fields.size()));
      return true;
    }
    return false;
  }

  std::size_t line() const { return line_no_; }
  const std::string& path() const { return path_; }
  const std::vector<std::string>& columns() const { return columns_; }

  double field_double(const std::vector<std::string>& fields, std::size_t i) const {
    bool ok = false;
    double v = parse_double(fields[i], &ok);
    if (!ok)
      throw ParseError(path_, line_no_, "column '" + columns_[i] + "': not a number: '" + fields[i] + "'");
    return v;
  }

  long long field_long(const std::vector<std::string>& fields, std::size_t i) const {
    bool ok = false;
    long long v = parse_long(fields[i], &ok);
    if (!ok)
      throw ParseError(path_, line_no_, "column '" + columns_[i] + "': not an integer: '" + fields[i] + "'");
    return v;
  }

 private:
  static void strip_cr(std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
  }
  static void split(const std::string& line, std::vector<std::string>& out) {
    out.clear();
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        out.emplace_back(line.substr(start));
        return;
      }
      out.emplace_back(line.substr(start, comma - start));
      start = comma + 1;
    }
  }

  std::string path_;
  std::ifstream in_;
  std::vector<std::string> columns_;
  std::size_t line_no_ = 0;
};

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns) : out_(path) {
    if (!out_) throw IoError("cannot open for write: " + path);
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << ',';
      out_ << columns[i];
    }
    out_ << '\n';
    width_ = columns.size();
  }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw ValidationError("csv row width mismatch");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
  std::size_t width_ = 0;
};

}  // namespace ecoroute
