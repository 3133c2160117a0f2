#pragma once

// Compressed sparse row storage for feature matrices.

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "harmless/error.hpp"

namespace harmless {

// Non-owning view of one sparse row. Column indices are strictly increasing.
struct SparseRow {
  std::span<const std::uint32_t> indices;
  std::span<const double> values;

  std::size_t nnz() const noexcept { return indices.size(); }

  double squared_norm() const noexcept {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s;
  }

  double dot(std::span<const double> dense) const noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) s += dense[indices[k]] * values[k];
    return s;
  }
};

class CsrMatrix {
 public:
  CsrMatrix() = default;
  explicit CsrMatrix(std::size_t cols) : cols_(cols) {}

  // Builds from dense rows, dropping exact zeros.
  static CsrMatrix from_dense(const std::vector<std::vector<double>>& rows, std::size_t cols) {
    CsrMatrix m(cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw ArgumentError("from_dense: row width does not match column count");
      std::vector<std::pair<std::uint32_t, double>> entries;
      for (std::size_t c = 0; c < r.size(); ++c)
        if (r[c] != 0.0) entries.emplace_back(static_cast<std::uint32_t>(c), r[c]);
      m.append_row(entries);
    }
    return m;
  }

  // Appends a row given as (column, value) pairs sorted by column.
  void append_row(std::span<const std::pair<std::uint32_t, double>> entries) {
    for (const auto& [c, v] : entries) {
      if (c >= cols_) throw ArgumentError("append_row: column index out of range");
      if (!indices_.empty() && row_ptr_.back() != indices_.size() && indices_.back() >= c)
        throw ArgumentError("append_row: columns must be strictly increasing");
      indices_.push_back(c);
      values_.push_back(v);
    }
    row_ptr_.push_back(indices_.size());
  }

  std::size_t rows() const noexcept { return row_ptr_.size() - 1; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return indices_.size(); }

  SparseRow row(std::size_t i) const {
    const auto begin = row_ptr_[i];
    const auto len = row_ptr_[i + 1] - begin;
    return {std::span<const std::uint32_t>(indices_).subspan(begin, len),
            std::span<const double>(values_).subspan(begin, len)};
  }

  std::vector<double> dense_row(std::size_t i) const {
    std::vector<double> out(cols_, 0.0);
    auto r = row(i);
    for (std::size_t k = 0; k < r.nnz(); ++k) out[r.indices[k]] = r.values[k];
    return out;
  }

  bool operator==(const CsrMatrix&) const = default;

 private:
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> indices_;
  std::vector<double> values_;
};

}  // namespace harmless
