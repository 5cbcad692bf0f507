#include "iofhmm/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "iofhmm/errors.hpp"

namespace iofhmm::io {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_number(const std::string& cell, const std::string& where) {
  const std::string s = trim(cell);
  if (s.empty()) throw DataError(where + ": empty value");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw DataError(where + ": not a number: '" + s + "'");
  return v;
}

Index parse_index(const std::string& cell, const std::string& where) {
  const std::string s = trim(cell);
  Index v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < 0)
    throw DataError(where + ": not a non-negative integer: '" + s + "'");
  return v;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_matrix(const MatrixXd& m) {
  std::string out = std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "\n";
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

MatrixXd parse_matrix(const std::string& text, const std::string& source) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw DataError(source + ": missing header line 'rows,cols'");
  const auto header = split(lines[0], ',');
  if (header.size() != 2) throw DataError(source + ":1: header must be 'rows,cols'");
  const Index rows = parse_index(header[0], source + ":1");
  const Index cols = parse_index(header[1], source + ":1");
  if (static_cast<Index>(lines.size()) - 1 != rows)
    throw DataError(source + ": header declares " + std::to_string(rows) + " rows, found " +
                    std::to_string(lines.size() - 1));
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const std::string where = source + ":" + std::to_string(r + 2);
    const auto cells = cols == 0 && trim(lines[static_cast<std::size_t>(r + 1)]).empty()
                           ? std::vector<std::string>{}
                           : split(lines[static_cast<std::size_t>(r + 1)], ',');
    if (static_cast<Index>(cells.size()) != cols)
      throw DataError(where + ": expected " + std::to_string(cols) + " values, found " + std::to_string(cells.size()));
    for (Index c = 0; c < cols; ++c) m(r, c) = parse_number(cells[static_cast<std::size_t>(c)], where);
  }
  return m;
}

void write_matrix(const fs::path& path, const MatrixXd& m) { write_text_atomic(path, format_matrix(m)); }

MatrixXd read_matrix(const fs::path& path) { return parse_matrix(read_text(path), path.string()); }

void write_structure(const fs::path& path, const SparsePattern& p) {
  std::string out = std::to_string(p.rows()) + "," + std::to_string(p.cols()) + "," + std::to_string(p.nnz()) + "\n";
  for (const auto& [r, c] : p.entries()) out += std::to_string(r) + "," + std::to_string(c) + "\n";
  write_text_atomic(path, out);
}

void write_triplets(const fs::path& path, const SparseMatrix& m) {
  const SparsePattern& p = m.pattern;
  std::string out = std::to_string(p.rows()) + "," + std::to_string(p.cols()) + "," + std::to_string(p.nnz()) + "\n";
  const auto entries = p.entries();
  for (std::size_t k = 0; k < entries.size(); ++k)
    out += std::to_string(entries[k].first) + "," + std::to_string(entries[k].second) + "," +
           format_double(m.values[static_cast<Index>(k)]) + "\n";
  write_text_atomic(path, out);
}

SparseMatrix read_triplets(const fs::path& path) {
  const std::string source = path.string();
  const auto lines = lines_of(read_text(path));
  if (lines.empty()) throw DataError(source + ": missing header line 'rows,cols,nnz'");
  const auto header = split(lines[0], ',');
  if (header.size() != 3) throw DataError(source + ":1: header must be 'rows,cols,nnz'");
  const Index rows = parse_index(header[0], source + ":1");
  const Index cols = parse_index(header[1], source + ":1");
  const Index nnz = parse_index(header[2], source + ":1");
  if (static_cast<Index>(lines.size()) - 1 != nnz)
    throw DataError(source + ": header declares " + std::to_string(nnz) + " entries, found " +
                    std::to_string(lines.size() - 1));
  std::map<std::pair<Index, Index>, double> entries;
  for (Index k = 0; k < nnz; ++k) {
    const std::string where = source + ":" + std::to_string(k + 2);
    const auto cells = split(lines[static_cast<std::size_t>(k + 1)], ',');
    if (cells.size() != 2 && cells.size() != 3) throw DataError(where + ": expected row,col[,value]");
    const Index r = parse_index(cells[0], where);
    const Index c = parse_index(cells[1], where);
    if (r >= rows || c >= cols) throw DataError(where + ": entry outside the declared shape");
    const double v = cells.size() == 3 ? parse_number(cells[2], where) : 0.0;
    if (!entries.emplace(std::make_pair(r, c), v).second) throw DataError(where + ": duplicate entry");
  }
  std::vector<std::pair<Index, Index>> keys;
  keys.reserve(entries.size());
  for (const auto& kv : entries) keys.push_back(kv.first);
  SparseMatrix m = SparseMatrix::zeros(SparsePattern(rows, cols, keys));
  Index k = 0;
  for (const auto& kv : entries) m.values[k++] = kv.second;
  return m;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

}  // namespace iofhmm::io
