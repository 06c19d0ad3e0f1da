#include "retain/csv.hpp"

#include <cmath>
#include <cstdio>

namespace retain {

CsvReader::CsvReader(const std::string& path) : in_(path), path_(path) {
  if (!in_) throw CsvError("cannot open file: " + path);
  if (!read_record(header_)) throw CsvError(path + ": empty file, expected a header row");
}

std::size_t CsvReader::column(const std::string& name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return i;
  throw CsvError(path_ + ": missing required column '" + name + "'");
}

void CsvReader::require_header(std::initializer_list<std::string> expected) const {
  bool ok = header_.size() == expected.size();
  if (ok) {
    std::size_t i = 0;
    for (const std::string& e : expected) ok = ok && header_[i++] == e;
  }
  if (!ok) {
    std::string want;
    for (const std::string& e : expected) {
      if (!want.empty()) want += ',';
      want += e;
    }
    throw CsvError(path_ + ": unexpected header, expected exactly: " + want);
  }
}

bool CsvReader::next(std::vector<std::string>& out) { return read_record(out); }

bool CsvReader::read_record(std::vector<std::string>& out) {
  std::string raw;
  if (!std::getline(in_, raw)) return false;
  ++line_;
  if (!raw.empty() && raw.back() == '\r') raw.pop_back();

  out.clear();
  std::string field;
  bool in_quotes = false;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    char c = raw[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < raw.size() && raw[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty()) {
      in_quotes = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (in_quotes)
    throw CsvError(path_ + ":" + std::to_string(line_) + ": unterminated quoted field");
  out.push_back(std::move(field));
  return true;
}

CsvWriter::CsvWriter(const std::string& path) : out_(path), path_(path) {
  if (!out_) throw CsvError("cannot open file for writing: " + path);
}

void CsvWriter::write_row(std::span<const std::string> fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n") != std::string::npos) {
      out_ << '"';
      for (char c : f) {
        if (c == '"') out_ << '"';
        out_ << c;
      }
      out_ << '"';
    } else {
      out_ << f;
    }
  }
  out_ << '\n';
  if (!out_) throw CsvError("write failed: " + path_);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (v == static_cast<long long>(v) && std::fabs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace retain
