#pragma once

#include <span>
#include <string>
#include <vector>

#include "mechxfer/tensor.hpp"

namespace mechxfer {

// Labeled sample from one domain: n rows of D values, the first D-1 columns
// are features and the last column is the label.
struct DomainDataset {
    std::string id;
    std::vector<std::string> columns;
    Matrix rows;

    std::size_t size() const noexcept { return std::size_t(rows.rows()); }
    std::size_t dim() const noexcept { return std::size_t(rows.cols()); }

    Matrix features() const { return rows.leftCols(rows.cols() - 1); }
    Vector labels() const { return rows.col(rows.cols() - 1); }

    // Throws unless n >= 1, D >= 2, entries finite and column names match D
    // (when given).
    void validate() const;
};

// Stacks the rows of several datasets (same D) in order.
Matrix pool_rows(std::span<const DomainDataset> domains);

}  // namespace mechxfer
