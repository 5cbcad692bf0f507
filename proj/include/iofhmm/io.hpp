#pragma once

#include <filesystem>
#include <string>

#include "iofhmm/model.hpp"

namespace iofhmm::io {

namespace fs = std::filesystem;

// Writes to a temporary sibling and renames it into place.
void write_text_atomic(const fs::path& path, const std::string& content);
std::string read_text(const fs::path& path);

// Dense matrices: header "rows,cols", then one comma-separated line per row (17 significant digits).
std::string format_matrix(const MatrixXd& m);
MatrixXd parse_matrix(const std::string& text, const std::string& source);
void write_matrix(const fs::path& path, const MatrixXd& m);
MatrixXd read_matrix(const fs::path& path);

// Sparse data: header "rows,cols,nnz", then "row,col[,value]" per entry.
void write_structure(const fs::path& path, const SparsePattern& pattern);
void write_triplets(const fs::path& path, const SparseMatrix& m);
SparseMatrix read_triplets(const fs::path& path);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);

std::string format_double(double v);

}  // namespace iofhmm::io
