#pragma once

#include <cstddef>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retain {

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Header-aware CSV reader. Handles quoted fields; reports errors with file,
/// line and column so malformed ingests are diagnosable.
class CsvReader {
 public:
  CsvReader(const std::string& path);

  const std::vector<std::string>& header() const { return header_; }
  /// Index of a header column; throws CsvError if absent.
  std::size_t column(const std::string& name) const;
  /// Throws CsvError unless the header matches exactly, naming the file and
  /// the expected schema.
  void require_header(std::initializer_list<std::string> expected) const;

  /// Reads the next record into `out`. Returns false at end of file.
  bool next(std::vector<std::string>& out);

  std::size_t line() const { return line_; }
  const std::string& path() const { return path_; }

 private:
  bool read_record(std::vector<std::string>& out);

  std::ifstream in_;
  std::string path_;
  std::vector<std::string> header_;
  std::size_t line_ = 0;
};

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);

  void write_row(std::span<const std::string> fields);
  void write_row(std::initializer_list<std::string> fields) {
    write_row(std::span<const std::string>(fields.begin(), fields.size()));
  }

 private:
  std::ofstream out_;
  std::string path_;
};

/// Fixed, locale-independent formatting so identical values always
/// serialize to identical bytes.
std::string format_double(double v);

}  // namespace retain
